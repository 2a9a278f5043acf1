use rand::Rng;

use super::{check_dims, xavier_uniform, Activation, Module, NnError};
use crate::tensor::{Param, Real, Tape, Tensor, TensorError, Var};

/// `activation(x · Wᵀ + b)` with `W: [out × in]`, `b: [out]`.
#[derive(Clone, Debug)]
pub struct LinearLayer<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub activation: Activation,
}

impl<T: Real> LinearLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        check_dims(name, &[input, output])?;
        Ok(Self {
            weight: Param::new(format!("{name}.weight"), xavier_uniform(output, input, rng)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[output])),
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Result<BoundLinear<'t, T>, TensorError> {
        Ok(BoundLinear {
            weight_t: tape.param(&self.weight).transpose()?,
            bias: tape.param(&self.bias),
            activation: self.activation,
        })
    }

    /// One-shot forward for `x: [n × in]`.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.bind(tape)?.apply(x)
    }
}

impl<T: Real> Module<T> for LinearLayer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear<'t, T: Real> {
    weight_t: Var<'t, T>,
    bias: Var<'t, T>,
    activation: Activation,
}

impl<'t, T: Real> BoundLinear<'t, T> {
    pub fn apply(&self, x: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let rows = x.shape().first().copied().unwrap_or(1);
        let z = x.matmul(self.weight_t)?.add(self.bias.expand_rows(rows)?)?;
        self.activation.apply(z)
    }
}

/// Fully connected stack with ReLU between layers. The last layer uses the
/// activation given at construction.
#[derive(Clone, Debug)]
pub struct MlpStack<T: Real> {
    pub layers: Vec<LinearLayer<T>>,
}

impl<T: Real> MlpStack<T> {
    /// `dims = [in, hidden..., out]`, at least two entries.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        dims: &[usize],
        final_activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::NonPositiveDim {
                layer: name.to_string(),
                dims: dims.to_vec(),
            });
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { final_activation } else { Activation::Relu };
                LinearLayer::new(&format!("{name}.{i}"), w[0], w[1], act, rng)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn last_mut(&mut self) -> &mut LinearLayer<T> {
        self.layers.last_mut().expect("non-empty")
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Result<BoundMlp<'t, T>, TensorError> {
        Ok(BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect::<Result<_, _>>()?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.bind(tape)?.apply(x)
    }
}

impl<T: Real> Module<T> for MlpStack<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp<'t, T: Real> {
    layers: Vec<BoundLinear<'t, T>>,
}

impl<'t, T: Real> BoundMlp<'t, T> {
    pub fn apply(&self, x: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.layers.iter().try_fold(x, |h, l| l.apply(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn zero_layer_outputs_zero() {
        let mut layer = LinearLayer::<f64>::new("l", 3, 2, Activation::None, &mut rng()).unwrap();
        layer.weight.value = Tensor::zeros(&[2, 3]);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1., 2., 3.], vec![-1., 0., 4.]]).unwrap());
        let y = layer.forward(&tape, x).unwrap().value();
        assert_eq!(y.data(), &[0.; 4]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut layer = LinearLayer::<f64>::new("l", 2, 2, Activation::None, &mut rng()).unwrap();
        layer.weight.value = Tensor::eye(2);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.5, -2.0]]).unwrap());
        assert_eq!(layer.forward(&tape, x).unwrap().value(), x.value());
    }

    #[test]
    fn xavier_bounds_and_zero_bias() {
        let layer = LinearLayer::<f64>::new("l", 10, 6, Activation::Relu, &mut rng()).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(layer.weight.value.data().iter().all(|w| w.abs() <= limit));
        assert!(layer.bias.value.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = MlpStack::<f64>::new("m", &[4, 8, 2], Activation::None, &mut rng()).unwrap();
        let b = MlpStack::<f64>::new("m", &[4, 8, 2], Activation::None, &mut rng()).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(matches!(
            LinearLayer::<f64>::new("l", 0, 2, Activation::None, &mut rng()),
            Err(NnError::NonPositiveDim { .. })
        ));
    }

    #[test]
    fn mlp_with_zero_final_layer_is_zero() {
        let mut mlp = MlpStack::<f64>::new("m", &[3, 5, 4], Activation::None, &mut rng()).unwrap();
        mlp.last_mut().weight.value = Tensor::zeros(&[4, 5]);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.3, -9.0, 2.0]]).unwrap());
        assert_eq!(mlp.forward(&tape, x).unwrap().value().data(), &[0.; 4]);
    }
}
