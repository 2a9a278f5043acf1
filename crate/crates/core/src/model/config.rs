use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::AgentType;

/// How neighbour information is summarised per agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationKind {
    /// No social term; the aggregation vector is zero.
    None,
    /// Relative-position embedding, MLP and max over all other agents.
    Pool,
    /// Soft attention over the `N` nearest agents.
    Attention,
    /// Hidden states of the `N` nearest agents, concatenated.
    #[default]
    Concat,
}

impl AggregationKind {
    pub const ALL: [AggregationKind; 4] = [
        AggregationKind::None,
        AggregationKind::Pool,
        AggregationKind::Attention,
        AggregationKind::Concat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationKind::None => "none",
            AggregationKind::Pool => "pool",
            AggregationKind::Attention => "attention",
            AggregationKind::Concat => "concat",
        }
    }
}

/// Architecture of the generator and discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsgConfig {
    pub obs_len: usize,
    pub pred_len: usize,
    pub vocabulary: Vec<AgentType>,
    pub aggregation: AggregationKind,
    /// Neighbours considered by attention and concatenation.
    pub neighbors: usize,
    pub embedding_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub speed_hidden: usize,
    pub noise_dim: usize,
    pub aggregation_dim: usize,
    /// Width of relative-position embeddings used by pooling and attention.
    pub social_dim: usize,
    /// Hidden width of every multi-layer FC block.
    pub mlp_hidden: usize,
    pub discriminator_embedding: usize,
    pub discriminator_hidden: usize,
}

impl Default for CsgConfig {
    fn default() -> Self {
        Self {
            obs_len: 8,
            pred_len: 12,
            vocabulary: vec![AgentType::Pedestrian],
            aggregation: AggregationKind::Concat,
            neighbors: 2,
            embedding_dim: 16,
            encoder_hidden: 32,
            decoder_hidden: 32,
            speed_hidden: 32,
            noise_dim: 8,
            aggregation_dim: 32,
            social_dim: 16,
            mlp_hidden: 64,
            discriminator_embedding: 16,
            discriminator_hidden: 32,
        }
    }
}

impl CsgConfig {
    /// Per-step input width: displacement (2), speed (1), one-hot label.
    pub fn step_input_dim(&self) -> usize {
        3 + self.vocabulary.len()
    }

    /// Width of the compressed joint vector before noise is appended.
    pub fn latent_dim(&self) -> usize {
        self.decoder_hidden - self.noise_dim
    }

    pub fn total_len(&self) -> usize {
        self.obs_len + self.pred_len
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.obs_len < 2 {
            return err("obs_len must be at least 2");
        }
        if self.pred_len < 1 {
            return err("pred_len must be at least 1");
        }
        if self.vocabulary.is_empty() {
            return err("label vocabulary is empty");
        }
        let mut v = self.vocabulary.clone();
        v.sort();
        v.dedup();
        if v.len() != self.vocabulary.len() {
            return err("label vocabulary has duplicates");
        }
        if self.decoder_hidden <= self.noise_dim {
            return err("decoder_hidden must exceed noise_dim");
        }
        if self.aggregation != AggregationKind::None && self.neighbors == 0 {
            return err("neighbors must be at least 1 when aggregation is enabled");
        }
        let dims = [
            self.embedding_dim,
            self.encoder_hidden,
            self.speed_hidden,
            self.aggregation_dim,
            self.social_dim,
            self.mlp_hidden,
            self.discriminator_embedding,
            self.discriminator_hidden,
        ];
        if dims.contains(&0) {
            return err("layer dimensions must be positive");
        }
        Ok(())
    }

    /// Small dimensions for gradient checks and fast tests.
    pub fn tiny(aggregation: AggregationKind) -> Self {
        Self {
            obs_len: 3,
            pred_len: 2,
            aggregation,
            neighbors: 2,
            embedding_dim: 4,
            encoder_hidden: 5,
            decoder_hidden: 6,
            speed_hidden: 4,
            noise_dim: 2,
            aggregation_dim: 3,
            social_dim: 3,
            mlp_hidden: 5,
            discriminator_embedding: 4,
            discriminator_hidden: 5,
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_chains() {
        let c = CsgConfig::default();
        c.validate().unwrap();
        assert_eq!(c.latent_dim() + c.noise_dim, c.decoder_hidden);
    }

    #[test]
    fn invalid_configs() {
        let c = CsgConfig {
            noise_dim: 32,
            ..CsgConfig::default()
        };
        assert!(c.validate().is_err());
        let c = CsgConfig {
            neighbors: 0,
            ..CsgConfig::default()
        };
        assert!(c.validate().is_err());
        let c = CsgConfig {
            neighbors: 0,
            aggregation: AggregationKind::None,
            ..CsgConfig::default()
        };
        assert!(c.validate().is_ok());
    }
}
