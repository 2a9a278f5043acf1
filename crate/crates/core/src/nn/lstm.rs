use rand::Rng;

use super::{check_dims, xavier_uniform, Module, NnError};
use crate::tensor::{Param, Real, Tape, Tensor, TensorError, Var};

/// Single-layer LSTM cell, gate order input, forget, cell, output.
///
/// `c' = f ∘ c + i ∘ g`, `h' = o ∘ tanh(c')`.
#[derive(Clone, Debug)]
pub struct LstmCell<T: Real> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> LstmCell<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self, NnError> {
        check_dims(name, &[input, hidden])?;
        let mut bias = Tensor::zeros(&[4 * hidden]);
        for b in &mut bias.data_mut()[hidden..2 * hidden] {
            *b = T::one();
        }
        Ok(Self {
            w_ih: Param::new(format!("{name}.w_ih"), xavier_uniform(4 * hidden, input, rng)),
            w_hh: Param::new(format!("{name}.w_hh"), xavier_uniform(4 * hidden, hidden, rng)),
            bias: Param::new(format!("{name}.bias"), bias),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.value.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.value.shape()[1]
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Result<BoundLstm<'t, T>, TensorError> {
        Ok(BoundLstm {
            w_ih_t: tape.param(&self.w_ih).transpose()?,
            w_hh_t: tape.param(&self.w_hh).transpose()?,
            bias: tape.param(&self.bias),
            hidden: self.hidden_dim(),
        })
    }
}

impl<T: Real> Module<T> for LstmCell<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState<'t, T: Real> {
    pub h: Var<'t, T>,
    pub c: Var<'t, T>,
}

impl<'t, T: Real> LstmState<'t, T> {
    pub fn zeros(tape: &'t Tape<T>, rows: usize, hidden: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(&[rows, hidden])),
            c: tape.constant(Tensor::zeros(&[rows, hidden])),
        }
    }

    /// Hidden state `h`, zero cell.
    pub fn from_hidden(h: Var<'t, T>) -> Self {
        let shape = h.shape();
        Self {
            h,
            c: h.tape().constant(Tensor::zeros(&shape)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm<'t, T: Real> {
    w_ih_t: Var<'t, T>,
    w_hh_t: Var<'t, T>,
    bias: Var<'t, T>,
    hidden: usize,
}

impl<'t, T: Real> BoundLstm<'t, T> {
    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    /// Advances `rows` independent sequences by one step; `x: [rows × in]`.
    pub fn step(&self, x: Var<'t, T>, state: LstmState<'t, T>) -> Result<LstmState<'t, T>, TensorError> {
        let rows = x.shape()[0];
        let h = self.hidden;
        let gates = x
            .matmul(self.w_ih_t)?
            .add(state.h.matmul(self.w_hh_t)?)?
            .add(self.bias.expand_rows(rows)?)?;
        let i = gates.narrow(1, 0, h)?.sigmoid()?;
        let f = gates.narrow(1, h, h)?.sigmoid()?;
        let g = gates.narrow(1, 2 * h, h)?.tanh()?;
        let o = gates.narrow(1, 3 * h, h)?.sigmoid()?;
        let c = f.mul(state.c)?.add(i.mul(g)?)?;
        let h = o.mul(c.tanh()?)?;
        Ok(LstmState { h, c })
    }

    /// Runs a whole sequence from `state`, returning the final state.
    pub fn run(&self, inputs: &[Var<'t, T>], state: LstmState<'t, T>) -> Result<LstmState<'t, T>, TensorError> {
        inputs.iter().try_fold(state, |s, &x| self.step(x, s))
    }
}
