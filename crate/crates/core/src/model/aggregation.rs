use rand::Rng;

use super::{AggregationKind, CsgConfig, ModelError};
use crate::data::{nearest_neighbors, Point};
use crate::nn::{Activation, LinearLayer, MlpStack, Module, NnError};
use crate::tensor::{concat, Param, Real, Tape, Tensor, Var};

/// Neighbour summary `[n × aggregation_dim]` computed from encoder states
/// and last observed positions.
#[derive(Clone, Debug)]
pub enum Aggregator<T: Real> {
    None,
    Pool {
        rel_embed: LinearLayer<T>,
        mlp: MlpStack<T>,
    },
    Attention {
        neighbors: usize,
        rel_embed: LinearLayer<T>,
        score: MlpStack<T>,
        value: LinearLayer<T>,
    },
    Concat {
        neighbors: usize,
        mlp: MlpStack<T>,
    },
}

/// Side information from one aggregation pass, for inspection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AggregationTrace {
    /// Neighbour indices used per agent, nearest first. Empty for pooling,
    /// which uses every other agent.
    pub neighbors: Vec<Vec<usize>>,
    /// Attention weights per agent, aligned with `neighbors`.
    pub attention: Vec<Vec<f64>>,
}

impl<T: Real> Aggregator<T> {
    pub fn new<R: Rng + ?Sized>(config: &CsgConfig, rng: &mut R) -> Result<Self, NnError> {
        let h = config.encoder_hidden;
        let out = config.aggregation_dim;
        Ok(match config.aggregation {
            AggregationKind::None => Aggregator::None,
            AggregationKind::Pool => Aggregator::Pool {
                rel_embed: LinearLayer::new("generator.pool.rel_embed", 2, config.social_dim, Activation::None, rng)?,
                mlp: MlpStack::new(
                    "generator.pool.mlp",
                    &[h + config.social_dim, config.mlp_hidden, out],
                    Activation::Relu,
                    rng,
                )?,
            },
            AggregationKind::Attention => Aggregator::Attention {
                neighbors: config.neighbors,
                rel_embed: LinearLayer::new("generator.attn.rel_embed", 2, config.social_dim, Activation::None, rng)?,
                score: MlpStack::new(
                    "generator.attn.score",
                    &[h + config.social_dim, config.mlp_hidden, 1],
                    Activation::None,
                    rng,
                )?,
                value: LinearLayer::new(
                    "generator.attn.value",
                    h + config.social_dim,
                    out,
                    Activation::None,
                    rng,
                )?,
            },
            AggregationKind::Concat => Aggregator::Concat {
                neighbors: config.neighbors,
                mlp: MlpStack::new(
                    "generator.concat.mlp",
                    &[h * (config.neighbors + 1), config.mlp_hidden, out],
                    Activation::Relu,
                    rng,
                )?,
            },
        })
    }

    /// Width of the output, zero for [`Aggregator::None`].
    pub fn output_dim(&self) -> usize {
        match self {
            Aggregator::None => 0,
            Aggregator::Pool { mlp, .. } | Aggregator::Concat { mlp, .. } => mlp.output_dim(),
            Aggregator::Attention { value, .. } => value.output_dim(),
        }
    }

    /// `None` when the aggregation is disabled.
    pub fn aggregate<'t>(
        &self,
        hidden: Var<'t, T>,
        positions: &[Point],
        ids: &[u64],
    ) -> Result<Option<Var<'t, T>>, ModelError> {
        Ok(self.aggregate_traced(hidden, positions, ids)?.map(|(v, _)| v))
    }

    pub fn aggregate_traced<'t>(
        &self,
        hidden: Var<'t, T>,
        positions: &[Point],
        ids: &[u64],
    ) -> Result<Option<(Var<'t, T>, AggregationTrace)>, ModelError> {
        let tape = hidden.tape();
        let n = positions.len();
        let mut trace = AggregationTrace::default();
        let out = match self {
            Aggregator::None => return Ok(None),
            Aggregator::Pool { rel_embed, mlp } => {
                let dim = mlp.output_dim();
                if n == 1 {
                    tape.constant(Tensor::zeros(&[1, dim]))
                } else {
                    // Rows grouped by agent: (i, j) for every j != i.
                    let mut own = Vec::with_capacity(n * (n - 1));
                    let mut rel = Vec::with_capacity(2 * n * (n - 1));
                    for i in 0..n {
                        for j in (0..n).filter(|&j| j != i) {
                            own.push(i);
                            rel.extend(relative(positions[i], positions[j]));
                        }
                    }
                    let f = rel_embed.forward(tape, rel_tensor(tape, rel))?;
                    let y = mlp.forward(tape, concat(&[hidden.select_rows(&own)?, f], 1)?)?;
                    let rows = (0..n)
                        .map(|i| y.narrow(0, i * (n - 1), n - 1)?.reduce_max(0)?.reshape(&[1, dim]))
                        .collect::<Result<Vec<_>, _>>()?;
                    concat(&rows, 0)?
                }
            }
            Aggregator::Attention {
                neighbors,
                rel_embed,
                score,
                value,
            } => {
                let dim = value.output_dim();
                trace.neighbors = neighbor_lists(positions, ids, *neighbors);
                let (mut own, mut other, mut rel) = (Vec::new(), Vec::new(), Vec::new());
                for (i, nb) in trace.neighbors.iter().enumerate() {
                    for &j in nb {
                        own.push(i);
                        other.push(j);
                        rel.extend(relative(positions[i], positions[j]));
                    }
                }
                if own.is_empty() {
                    trace.attention = vec![Vec::new(); n];
                    tape.constant(Tensor::zeros(&[n, dim]))
                } else {
                    let f = rel_embed.forward(tape, rel_tensor(tape, rel))?;
                    let scores = score.forward(tape, concat(&[hidden.select_rows(&own)?, f], 1)?)?;
                    let values = value.forward(tape, concat(&[hidden.select_rows(&other)?, f], 1)?)?;
                    let mut rows = Vec::with_capacity(n);
                    let mut offset = 0;
                    for nb in &trace.neighbors {
                        let m = nb.len();
                        if m == 0 {
                            rows.push(tape.constant(Tensor::zeros(&[1, dim])));
                            trace.attention.push(Vec::new());
                            continue;
                        }
                        let w = scores.narrow(0, offset, m)?.reshape(&[1, m])?.softmax(1)?;
                        trace
                            .attention
                            .push(w.value().data().iter().map(|x| x.as_f64()).collect());
                        rows.push(w.matmul(values.narrow(0, offset, m)?)?);
                        offset += m;
                    }
                    concat(&rows, 0)?
                }
            }
            Aggregator::Concat { neighbors, mlp } => {
                trace.neighbors = neighbor_lists(positions, ids, *neighbors);
                let x = concat_layout(hidden, &trace.neighbors, *neighbors)?;
                mlp.forward(tape, x)?
            }
        };
        Ok(Some((out, trace)))
    }
}

/// `[n × H(N+1)]`: own hidden state followed by the neighbours' states,
/// nearest first, zero-filled where fewer than `slots` neighbours exist.
pub fn concat_layout<'t, T: Real>(
    hidden: Var<'t, T>,
    neighbors: &[Vec<usize>],
    slots: usize,
) -> Result<Var<'t, T>, ModelError> {
    let tape = hidden.tape();
    let n = neighbors.len();
    let h = hidden.shape()[1];
    // Row `n` of the padded matrix is the zero filler.
    let padded = concat(&[hidden, tape.constant(Tensor::zeros(&[1, h]))], 0)?;
    let mut blocks = vec![padded.select_rows(&(0..n).collect::<Vec<_>>())?];
    for s in 0..slots {
        let idx: Vec<usize> = neighbors.iter().map(|nb| nb.get(s).copied().unwrap_or(n)).collect();
        blocks.push(padded.select_rows(&idx)?);
    }
    Ok(concat(&blocks, 1)?)
}

fn neighbor_lists(positions: &[Point], ids: &[u64], n: usize) -> Vec<Vec<usize>> {
    (0..positions.len())
        .map(|i| nearest_neighbors(positions, ids, i, n))
        .collect()
}

fn relative(from: Point, to: Point) -> [f64; 2] {
    [to[0] - from[0], to[1] - from[1]]
}

fn rel_tensor<T: Real>(tape: &Tape<T>, rel: Vec<f64>) -> Var<'_, T> {
    let rows = rel.len() / 2;
    tape.constant(Tensor::new(vec![rows, 2], rel.into_iter().map(T::lit).collect()).expect("pairs of coordinates"))
}

impl<T: Real> Module<T> for Aggregator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        match self {
            Aggregator::None => Vec::new(),
            Aggregator::Pool { rel_embed, mlp } => [rel_embed.params(), mlp.params()].concat(),
            Aggregator::Attention {
                rel_embed,
                score,
                value,
                ..
            } => [rel_embed.params(), score.params(), value.params()].concat(),
            Aggregator::Concat { mlp, .. } => mlp.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Aggregator::None => Vec::new(),
            Aggregator::Pool { rel_embed, mlp } => {
                let mut p = rel_embed.params_mut();
                p.extend(mlp.params_mut());
                p
            }
            Aggregator::Attention {
                rel_embed,
                score,
                value,
                ..
            } => {
                let mut p = rel_embed.params_mut();
                p.extend(score.params_mut());
                p.extend(value.params_mut());
                p
            }
            Aggregator::Concat { mlp, .. } => mlp.params_mut(),
        }
    }
}
