use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{split_axis, Real, Tensor, TensorError};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(0);

/// Process-unique identity of a trainable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named trainable tensor.
///
/// Cloning keeps the identity, so a clone is a snapshot of the same
/// parameter rather than a new one.
#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    id: ParamId,
    name: String,
    pub value: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            id: ParamId::fresh(),
            name: name.into(),
            value,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Abs(usize),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Narrow {
        input: usize,
        axis: usize,
        start: usize,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    /// `argmax` holds the flat input index chosen for each output element.
    ReduceMax {
        input: usize,
        argmax: Vec<usize>,
    },
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    SelectRows {
        input: usize,
        indices: Vec<usize>,
    },
    ExpandRows(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for one forward pass and replays them backwards.
///
/// A tape is single-use: after [`Var::backward`] the gradients can be read
/// but a second backward pass is rejected. Tapes are not `Sync`; run
/// independent forward passes on independent tapes.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
    frozen: RefCell<HashSet<ParamId>>,
    grads: RefCell<Option<Vec<Option<Vec<T>>>>>,
    backward_done: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("backward_done", &self.backward_done.get())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            frozen: RefCell::new(HashSet::new()),
            grads: RefCell::new(None),
            backward_done: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Excludes the given parameters from differentiation on this tape.
    /// Must be called before the parameters are first bound.
    pub fn freeze(&self, ids: impl IntoIterator<Item = ParamId>) {
        self.frozen.borrow_mut().extend(ids);
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// Binds a parameter. Repeated binds of one parameter on the same tape
    /// return the same node, so gradients from every use accumulate.
    pub fn param(&self, param: &Param<T>) -> Var<'_, T> {
        if let Some(&id) = self.params.borrow().get(&param.id) {
            return Var { tape: self, id };
        }
        let trainable = !self.frozen.borrow().contains(&param.id);
        let var = self.push_unchecked(param.value.clone(), Op::Leaf, trainable);
        self.params.borrow_mut().insert(param.id, var.id);
        var
    }

    /// Gradient of the last backward pass with respect to `var`.
    pub fn grad(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        let grads = self.grads.borrow();
        let g = grads.as_ref()?.get(var.id)?.as_ref()?;
        let shape = self.nodes.borrow()[var.id].value.shape.clone();
        Some(Tensor { shape, data: g.clone() })
    }

    /// Gradient with respect to a bound, trainable parameter.
    pub fn param_grad(&self, param: &Param<T>) -> Option<Tensor<T>> {
        let id = *self.params.borrow().get(&param.id)?;
        self.grad(Var { tape: self, id })
    }

    fn push_unchecked(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(
        &self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[usize],
    ) -> Result<Var<'_, T>, TensorError> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }
}

fn check_same_shape<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), TensorError> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}

fn matrix_dims<T>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize), TensorError> {
    match t.shape[..] {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::Rank {
            op,
            expected: 2,
            shape: t.shape.clone(),
        }),
    }
}

// `add`, `mul` and friends are fallible (shape checks), so they cannot be the
// operator traits.
#[allow(clippy::should_implement_trait)]
impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape.clone()
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id).clone()
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> Option<T> {
        self.tape.value(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, name: &'static str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Self, TensorError> {
        let out = self.tape.value(self.id).map(f);
        self.tape.push(name, out, op, &[self.id])
    }

    fn binary(self, other: Self, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Self, TensorError> {
        let out = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            check_same_shape(name, &a, &b)?;
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
            }
        };
        self.tape.push(name, out, op, &[self.id, other.id])
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(self, other: Self) -> Result<Self, TensorError> {
        let out = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            let (m, k) = matrix_dims("matmul", &a)?;
            let (k2, n) = matrix_dims("matmul", &b)?;
            if k != k2 {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    left: a.shape.clone(),
                    right: b.shape.clone(),
                });
            }
            let mut data = vec![T::zero(); m * n];
            matmul_acc(&a.data, &b.data, &mut data, m, k, n);
            Tensor {
                shape: vec![m, n],
                data,
            }
        };
        self.tape
            .push("matmul", out, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn transpose(self) -> Result<Self, TensorError> {
        let out = {
            let a = self.tape.value(self.id);
            let (r, c) = matrix_dims("transpose", &a)?;
            Tensor {
                shape: vec![c, r],
                data: kernels::transpose(&a.data, r, c),
            }
        };
        self.tape.push("transpose", out, Op::Transpose(self.id), &[self.id])
    }

    pub fn add(self, other: Self) -> Result<Self, TensorError> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Self) -> Result<Self, TensorError> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Self) -> Result<Self, TensorError> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, s: T) -> Result<Self, TensorError> {
        self.unary("scale", |x| x * s, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: T) -> Result<Self, TensorError> {
        self.unary("add_scalar", |x| x + s, Op::AddScalar(self.id))
    }

    pub fn neg(self) -> Result<Self, TensorError> {
        self.scale(-T::one())
    }

    pub fn square(self) -> Result<Self, TensorError> {
        self.mul(self)
    }

    pub fn sigmoid(self) -> Result<Self, TensorError> {
        self.unary("sigmoid", kernels::sigmoid, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Result<Self, TensorError> {
        self.unary("tanh", T::tanh, Op::Tanh(self.id))
    }

    pub fn relu(self) -> Result<Self, TensorError> {
        self.unary("relu", |x| x.max(T::zero()), Op::Relu(self.id))
    }

    /// `ln(1 + eˣ)`; `softplus(-x) = -ln σ(x)` gives a stable BCE.
    pub fn softplus(self) -> Result<Self, TensorError> {
        self.unary("softplus", kernels::softplus, Op::Softplus(self.id))
    }

    pub fn abs(self) -> Result<Self, TensorError> {
        self.unary("abs", T::abs, Op::Abs(self.id))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Self, TensorError> {
        let out = {
            let a = self.tape.value(self.id);
            let (outer, n, inner) = split_axis("narrow", &a.shape, axis)?;
            if start + len > n {
                return Err(TensorError::IndexOutOfBounds {
                    op: "narrow",
                    index: start + len,
                    len: n,
                });
            }
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * n * inner + start * inner;
                data.extend_from_slice(&a.data[base..base + len * inner]);
            }
            let mut shape = a.shape.clone();
            shape[axis] = len;
            Tensor { shape, data }
        };
        self.tape.push(
            "narrow",
            out,
            Op::Narrow {
                input: self.id,
                axis,
                start,
            },
            &[self.id],
        )
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Self, TensorError> {
        let out = {
            let a = self.tape.value(self.id);
            let (outer, n, inner) = split_axis("softmax", &a.shape, axis)?;
            let mut data = a.data.clone();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| o * n * inner + j * inner + i;
                    let max = (0..n).map(|j| a.data[idx(j)]).fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for j in 0..n {
                        let e = (a.data[idx(j)] - max).exp();
                        data[idx(j)] = e;
                        total += e;
                    }
                    for j in 0..n {
                        data[idx(j)] = data[idx(j)] / total;
                    }
                }
            }
            Tensor {
                shape: a.shape.clone(),
                data,
            }
        };
        self.tape
            .push("softmax", out, Op::Softmax { input: self.id, axis }, &[self.id])
    }

    /// Maximum along `axis`, which is removed from the shape. Ties go to
    /// the lowest index.
    pub fn reduce_max(self, axis: usize) -> Result<Self, TensorError> {
        let (out, argmax) = {
            let a = self.tape.value(self.id);
            let (outer, n, inner) = split_axis("reduce_max", &a.shape, axis)?;
            if n == 0 {
                return Err(TensorError::EmptyAxis { op: "reduce_max", axis });
            }
            let mut data = Vec::with_capacity(outer * inner);
            let mut argmax = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| o * n * inner + j * inner + i;
                    let mut best = 0;
                    for j in 1..n {
                        if a.data[idx(j)] > a.data[idx(best)] {
                            best = j;
                        }
                    }
                    data.push(a.data[idx(best)]);
                    argmax.push(idx(best));
                }
            }
            let mut shape = a.shape.clone();
            shape.remove(axis);
            (Tensor { shape, data }, argmax)
        };
        self.tape
            .push("reduce_max", out, Op::ReduceMax { input: self.id, argmax }, &[self.id])
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Result<Self, TensorError> {
        let total = self.tape.value(self.id).data.iter().copied().sum();
        self.tape
            .push("sum", Tensor::scalar(total), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Self, TensorError> {
        let out = {
            let a = self.tape.value(self.id);
            let total: T = a.data.iter().copied().sum();
            Tensor::scalar(total / T::lit(a.data.len() as f64))
        };
        self.tape.push("mean", out, Op::Mean(self.id), &[self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        let out = self.tape.value(self.id).reshape(shape)?;
        self.tape.push("reshape", out, Op::Reshape(self.id), &[self.id])
    }

    /// Gathers rows (axis 0) by index; indices may repeat.
    pub fn select_rows(self, indices: &[usize]) -> Result<Self, TensorError> {
        let out = {
            let a = self.tape.value(self.id);
            if a.shape.is_empty() {
                return Err(TensorError::Rank {
                    op: "select_rows",
                    expected: 1,
                    shape: a.shape.clone(),
                });
            }
            let rows = a.shape[0];
            let width = a.data.len() / rows.max(1);
            let mut data = Vec::with_capacity(indices.len() * width);
            for &r in indices {
                if r >= rows {
                    return Err(TensorError::IndexOutOfBounds {
                        op: "select_rows",
                        index: r,
                        len: rows,
                    });
                }
                data.extend_from_slice(&a.data[r * width..(r + 1) * width]);
            }
            let mut shape = a.shape.clone();
            shape[0] = indices.len();
            Tensor { shape, data }
        };
        self.tape.push(
            "select_rows",
            out,
            Op::SelectRows {
                input: self.id,
                indices: indices.to_vec(),
            },
            &[self.id],
        )
    }

    /// Repeats a `[d]` or `[1×d]` row into an `[n×d]` matrix. This is the
    /// only broadcast the core supports and it is always explicit.
    pub fn expand_rows(self, n: usize) -> Result<Self, TensorError> {
        let out = {
            let a = self.tape.value(self.id);
            let d = match a.shape[..] {
                [d] | [1, d] => d,
                _ => {
                    return Err(TensorError::ShapeMismatch {
                        op: "expand_rows",
                        left: a.shape.clone(),
                        right: vec![1, a.len()],
                    })
                }
            };
            let mut data = Vec::with_capacity(n * d);
            for _ in 0..n {
                data.extend_from_slice(&a.data);
            }
            Tensor {
                shape: vec![n, d],
                data,
            }
        };
        self.tape.push("expand_rows", out, Op::ExpandRows(self.id), &[self.id])
    }

    /// Runs the backward pass from this scalar, populating gradients for
    /// every differentiable node that reaches it.
    pub fn backward(self) -> Result<(), TensorError> {
        let tape = self.tape;
        if tape.backward_done.get() {
            return Err(TensorError::BackwardAlreadyRun);
        }
        let nodes = tape.nodes.borrow();
        if nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        if nodes[self.id].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(nodes[self.id].value.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(vec![T::one()]);

        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for (g, n) in grads.iter_mut().zip(nodes.iter()) {
            if !n.requires_grad {
                *g = None;
            }
        }
        drop(nodes);
        *tape.grads.borrow_mut() = Some(grads);
        tape.backward_done.set(true);
        Ok(())
    }
}

/// Concatenates along `axis`; every other dimension must agree.
pub fn concat<'t, T: Real>(vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>, TensorError> {
    let first = vars.first().ok_or(TensorError::EmptyConcat)?;
    let tape = first.tape;
    if vars.len() == 1 {
        return Ok(*first);
    }
    let out = {
        let nodes = tape.nodes.borrow();
        let base = &nodes[first.id].value.shape;
        split_axis("concat", base, axis)?;
        let mut total = 0;
        for v in vars {
            let s = &nodes[v.id].value.shape;
            let compatible =
                s.len() == base.len() && s.iter().zip(base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.clone(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in vars {
                let t = &nodes[v.id].value;
                let chunk = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        Tensor { shape, data }
    };
    let inputs: Vec<usize> = vars.iter().map(|v| v.id).collect();
    tape.push(
        "concat",
        out,
        Op::Concat {
            inputs: inputs.clone(),
            axis,
        },
        &inputs,
    )
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], id: usize, f: impl FnOnce(&mut [T])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![T::zero(); nodes[id].value.len()]);
    f(slot);
}

fn backprop<T: Real>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = (nodes[a].value.shape[0], nodes[a].value.shape[1]);
            let n = nodes[b].value.shape[1];
            let bv = &nodes[b].value.data;
            accumulate(grads, nodes, a, |ga| matmul_nt_acc(g, bv, ga, m, k, n));
            let av = &nodes[a].value.data;
            accumulate(grads, nodes, b, |gb| matmul_tn_acc(av, g, gb, m, k, n));
        }
        &Op::Transpose(a) => {
            let (r, c) = (nodes[a].value.shape[0], nodes[a].value.shape[1]);
            let gt = kernels::transpose(g, c, r);
            accumulate(grads, nodes, a, |ga| add_into(ga, &gt));
        }
        &Op::Add(a, b) => {
            accumulate(grads, nodes, a, |ga| add_into(ga, g));
            accumulate(grads, nodes, b, |gb| add_into(gb, g));
        }
        &Op::Sub(a, b) => {
            accumulate(grads, nodes, a, |ga| add_into(ga, g));
            accumulate(grads, nodes, b, |gb| {
                for (x, &y) in gb.iter_mut().zip(g) {
                    *x -= y;
                }
            });
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a].value.data, &nodes[b].value.data);
            accumulate(grads, nodes, a, |ga| {
                for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                    *x += gi * bi;
                }
            });
            accumulate(grads, nodes, b, |gb| {
                for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                    *x += gi * ai;
                }
            });
        }
        &Op::Scale(a, s) => accumulate(grads, nodes, a, |ga| {
            for (x, &gi) in ga.iter_mut().zip(g) {
                *x += gi * s;
            }
        }),
        &Op::AddScalar(a) | &Op::Reshape(a) => accumulate(grads, nodes, a, |ga| add_into(ga, g)),
        &Op::Sigmoid(a) => accumulate(grads, nodes, a, |ga| {
            for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(&out.data) {
                *x += gi * y * (T::one() - y);
            }
        }),
        &Op::Tanh(a) => accumulate(grads, nodes, a, |ga| {
            for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(&out.data) {
                *x += gi * (T::one() - y * y);
            }
        }),
        &Op::Relu(a) => {
            let av = &nodes[a].value.data;
            accumulate(grads, nodes, a, |ga| {
                for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(av) {
                    if xi > T::zero() {
                        *x += gi;
                    }
                }
            })
        }
        &Op::Softplus(a) => {
            let av = &nodes[a].value.data;
            accumulate(grads, nodes, a, |ga| {
                for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(av) {
                    *x += gi * kernels::sigmoid(xi);
                }
            })
        }
        &Op::Abs(a) => {
            let av = &nodes[a].value.data;
            accumulate(grads, nodes, a, |ga| {
                for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(av) {
                    if xi > T::zero() {
                        *x += gi;
                    } else if xi < T::zero() {
                        *x -= gi;
                    }
                }
            })
        }
        Op::Concat { inputs, axis } => {
            let axis = *axis;
            let outer: usize = out.shape[..axis].iter().product();
            let inner: usize = out.shape[axis + 1..].iter().product();
            let row = out.shape[axis] * inner;
            let mut offset = 0;
            for &input in inputs {
                let chunk = nodes[input].value.shape[axis] * inner;
                accumulate(grads, nodes, input, |gi| {
                    for o in 0..outer {
                        let src = &g[o * row + offset..o * row + offset + chunk];
                        add_into(&mut gi[o * chunk..(o + 1) * chunk], src);
                    }
                });
                offset += chunk;
            }
        }
        &Op::Narrow { input, axis, start } => {
            let in_shape = &nodes[input].value.shape;
            let outer: usize = in_shape[..axis].iter().product();
            let inner: usize = in_shape[axis + 1..].iter().product();
            let n = in_shape[axis];
            let len = out.shape[axis];
            accumulate(grads, nodes, input, |gi| {
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    add_into(&mut gi[dst..dst + len * inner], &g[src..src + len * inner]);
                }
            });
        }
        &Op::Softmax { input, axis } => {
            let (outer, n, inner) = split_axis("softmax", &out.shape, axis).expect("validated in forward");
            let y = &out.data;
            accumulate(grads, nodes, input, |gi| {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| o * n * inner + j * inner + i;
                        let dot: T = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gi[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            });
        }
        Op::ReduceMax { input, argmax, .. } => accumulate(grads, nodes, *input, |gi| {
            for (&src, &gv) in argmax.iter().zip(g) {
                gi[src] += gv;
            }
        }),
        &Op::Sum(a) => accumulate(grads, nodes, a, |ga| {
            for x in ga.iter_mut() {
                *x += g[0];
            }
        }),
        &Op::Mean(a) => {
            let scale = g[0] / T::lit(nodes[a].value.len() as f64);
            accumulate(grads, nodes, a, |ga| {
                for x in ga.iter_mut() {
                    *x += scale;
                }
            })
        }
        Op::SelectRows { input, indices } => {
            let width = out.shape[1..].iter().product::<usize>();
            accumulate(grads, nodes, *input, |gi| {
                for (r, &src) in indices.iter().enumerate() {
                    add_into(&mut gi[src * width..(src + 1) * width], &g[r * width..(r + 1) * width]);
                }
            });
        }
        &Op::ExpandRows(a) => {
            let d = out.shape[1];
            accumulate(grads, nodes, a, |ga| {
                for row in g.chunks(d) {
                    add_into(ga, row);
                }
            });
        }
    }
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        assert_eq!(i.matmul(m).unwrap().value().data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn row_times_column() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1, 2], &[1., 2.]));
        let b = tape.constant(t(&[2, 1], &[3., 4.]));
        let c = a.matmul(b).unwrap().value();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[2., 3.]));
        let y = tape.constant(t(&[2], &[4., 5.]));
        assert_eq!(x.mul(y).unwrap().value().data(), &[8., 15.]);
        assert_eq!(x.add_scalar(0.0).unwrap().value(), x.value());
        assert_eq!(x.sub(x).unwrap().value().data(), &[0., 0.]);
        let z = tape.constant(t(&[3], &[1., 2., 3.]));
        assert!(x.add(z).is_err());
    }

    #[test]
    fn activations() {
        let tape = Tape::new();
        let zero = tape.constant(Tensor::scalar(0.0));
        assert_eq!(zero.sigmoid().unwrap().item(), Some(0.5));
        let x = tape.constant(t(&[2], &[-1., 2.]));
        assert_eq!(x.relu().unwrap().value().data(), &[0., 2.]);
    }

    #[test]
    fn concat_layout_and_single_input() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 1], &[1., 2.]));
        let b = tape.constant(t(&[2, 1], &[3., 4.]));
        let c = concat(&[a, b], 1).unwrap().value();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[1., 3., 2., 4.]);
        assert_eq!(concat(&[a], 1).unwrap().value(), a.value());
        assert!(matches!(concat(&[a, b], 2), Err(TensorError::AxisOutOfRange { .. })));
        let wide = tape.constant(t(&[1, 2], &[0., 0.]));
        assert!(concat(&[a, wide], 1).is_err());
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[0., 0.]));
        assert_eq!(x.softmax(0).unwrap().value().data(), &[0.5, 0.5]);
        let big = tape.constant(t(&[2], &[1000., 1000.]));
        assert_eq!(big.softmax(0).unwrap().value().data(), &[0.5, 0.5]);
        let s = tape.constant(t(&[3], &[1., 2., 3.])).softmax(0).unwrap().value();
        assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reduce_max_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1., 5., 3., 2.]));
        let m = x.reduce_max(0).unwrap().value();
        assert_eq!(m.shape(), &[2]);
        assert_eq!(m.data(), &[3., 5.]);
        let single = tape.constant(t(&[1, 3], &[4., 5., 6.]));
        assert_eq!(single.reduce_max(0).unwrap().value().data(), &[4., 5., 6.]);
        let empty = tape.constant(Tensor::<f64>::zeros(&[0, 3]));
        assert!(matches!(empty.reduce_max(0), Err(TensorError::EmptyAxis { .. })));
    }

    #[test]
    fn reduce_max_ties_route_to_lowest_index() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[2., 2., 1.]));
        x.reduce_max(0).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1., 0., 0.]);
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1., 2., 3.]));
        x.sum().unwrap().backward().unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1., 1., 1.]);

        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        x.mul(x).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn backward_contract_errors() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        assert!(matches!(x.backward(), Err(TensorError::NonScalarLoss(_))));
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        assert!(matches!(loss.backward(), Err(TensorError::BackwardAlreadyRun)));
    }

    #[test]
    fn constants_and_frozen_params_get_no_grad() {
        let p = Param::new("w", t(&[2], &[1., 1.]));
        let q = Param::new("v", t(&[2], &[2., 2.]));
        let tape = Tape::new();
        tape.freeze([q.id()]);
        let c = tape.constant(t(&[2], &[3., 3.]));
        let pv = tape.param(&p);
        let qv = tape.param(&q);
        assert!(!qv.requires_grad());
        pv.mul(qv).unwrap().mul(c).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(tape.param_grad(&p).unwrap().data(), &[6., 6.]);
        assert!(tape.param_grad(&q).is_none());
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn repeated_param_binds_share_one_node() {
        let p = Param::new("w", t(&[1], &[3.]));
        let tape = Tape::new();
        let a = tape.param(&p);
        let b = tape.param(&p);
        a.mul(b).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(tape.param_grad(&p).unwrap().data(), &[6.]);
    }

    #[test]
    fn select_and_expand_rows() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let s = x.select_rows(&[2, 0, 2]).unwrap();
        assert_eq!(s.value().data(), &[5., 6., 1., 2., 5., 6.]);
        s.sum().unwrap().backward().unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1., 1., 0., 0., 2., 2.]);

        let tape = Tape::new();
        let b = tape.leaf(t(&[2], &[1., 2.]));
        let e = b.expand_rows(3).unwrap();
        assert_eq!(e.shape(), vec![3, 2]);
        e.sum().unwrap().backward().unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[3., 3.]);
    }

    #[cfg(debug_assertions)]
    #[test]
    fn non_finite_values_are_rejected() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1], &[f64::MAX]));
        assert!(matches!(x.scale(10.0), Err(TensorError::NonFinite { .. })));
    }
}
