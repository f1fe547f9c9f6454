//! Reverse-mode differentiation over a per-step computation graph.
//!
//! A [`Graph`] is an append-only arena of nodes. Node handles ([`Var`]) are
//! plain indices, and because a node can only reference nodes created before
//! it, index order is a topological order: the backward pass is a single
//! reverse sweep.

use serde::{Deserialize, Serialize};

use super::array::{gemm_acc, gemm_nt_acc, gemm_tn_acc, increment, numel, strides, Array};
use crate::error::{Error, Result};

const GELU_COEFF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
                let t = inner.tanh();
                let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Abs(Var),
    Sqrt(Var),
    Recip(Var),
    Exp(Var),
    Act(Var, Activation),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Reduce {
        input: Var,
        kind: Reduction,
        axes: Vec<usize>,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    ExpandAxis {
        input: Var,
        axis: usize,
        count: usize,
    },
    SoftmaxLast(Var),
    Magnitude(Var, Var),
}

struct Node {
    value: Array,
    grad: Option<Array>,
    op: Op,
    requires_grad: bool,
}

/// Computation graph. Rebuilt for every training step.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Array) -> Var {
        self.leaf(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Array) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Array, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, if `backward` has reached this node.
    pub fn grad(&self, v: Var) -> Option<&Array> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros of the right shape if none has flowed there.
    pub fn grad_or_zeros(&self, v: Var) -> Array {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(self.shape(v).to_vec()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op_name: &'static str, value: Array, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name));
        }
        let requires_grad = parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push("scale", v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        self.push("add_scalar", v, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push("square", v, Op::Square(a))
    }

    /// Absolute value; the backward pass uses subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::abs);
        self.push("abs", v, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::contract("sqrt of a negative value"));
        }
        let v = self.value(a).map(f64::sqrt);
        self.push("sqrt", v, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push("recip", v, Op::Recip(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        if kind == Activation::Identity {
            return Ok(a);
        }
        let v = self.value(a).map(|x| kind.apply(x));
        self.push("activation", v, Op::Act(a, kind))
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Array::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    /// Batched matrix product of `[p×m×k]` and `[p×k×n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let (p, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; p * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..p {
            gemm_acc(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.push("batch_matmul", Array::new(vec![p, m, n], out)?, Op::BatchMatMul(a, b))
    }

    /// Sum or mean over `axes`; reduced axes are removed from the shape.
    pub fn reduce(&mut self, a: Var, kind: Reduction, axes: &[usize]) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(&bad) = sorted.iter().find(|&&ax| ax >= in_shape.len()) {
            return Err(Error::InvalidAxis {
                op: "reduce",
                axis: bad,
                shape: in_shape,
            });
        }
        let out_shape: Vec<usize> = (0..in_shape.len())
            .filter(|i| !sorted.contains(i))
            .map(|i| in_shape[i])
            .collect();
        let map = reduce_index_map(&in_shape, &sorted);
        let mut out = vec![0.0; numel(&out_shape)];
        for (&x, &o) in self.value(a).data().iter().zip(&map) {
            out[o] += x;
        }
        if kind == Reduction::Mean {
            let count: usize = sorted.iter().map(|&ax| in_shape[ax]).product();
            let inv = 1.0 / count as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let value = Array::new(out_shape, out)?;
        self.push(
            "reduce",
            value,
            Op::Reduce {
                input: a,
                kind,
                axes: sorted,
            },
        )
    }

    pub fn sum(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(a, Reduction::Sum, axes)
    }

    pub fn mean(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(a, Reduction::Mean, axes)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(a, Reduction::Sum, &axes)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(a, Reduction::Mean, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape.to_vec())?;
        self.push("reshape", v, Op::Reshape(a))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(a).permute(axes)?;
        self.push("permute", v, Op::Permute(a, axes.to_vec()))
    }

    /// Inserts a new axis of extent `count` at `axis`, repeating the input
    /// along it. The backward pass sums over the inserted axis.
    pub fn expand_axis(&mut self, a: Var, axis: usize, count: usize) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        if axis > in_shape.len() {
            return Err(Error::InvalidAxis {
                op: "expand_axis",
                axis,
                shape: in_shape,
            });
        }
        let outer: usize = in_shape[..axis].iter().product();
        let inner: usize = in_shape[axis..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            let block = &src[o * inner..(o + 1) * inner];
            for _ in 0..count {
                out.extend_from_slice(block);
            }
        }
        let mut shape = in_shape;
        shape.insert(axis, count);
        self.push(
            "expand_axis",
            Array::new(shape, out)?,
            Op::ExpandAxis {
                input: a,
                axis,
                count,
            },
        )
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some(&width) = shape.last() else {
            return Err(Error::InvalidAxis {
                op: "softmax_last",
                axis: 0,
                shape,
            });
        };
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(width.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        self.push("softmax_last", Array::new(shape, out)?, Op::SoftmaxLast(a))
    }

    /// Elementwise `sqrt(re² + im²)`; the backward pass uses subgradient 0
    /// where the magnitude is 0.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Result<Var> {
        self.same_shape("magnitude", re, im)?;
        let v = self.value(re).zip_map(self.value(im), f64::hypot)?;
        self.push("magnitude", v, Op::Magnitude(re, im))
    }

    /// Convenience: `mean((a - b)²)` over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.mean_all(sq)
    }

    /// Propagates gradients from a single-element `loss` to every node that
    /// requires them. Gradients accumulate across calls until `zero_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss);
        if numel(loss_shape) != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {loss_shape:?}"
            )));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let contributions = self.local_backward(idx, &g)?;
            for (parent, pg) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut pending[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(Array::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn local_backward(&self, idx: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        let mapped = |v: Var, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            val(v).iter().zip(g).map(|(&x, &gi)| f(x, gi)).collect()
        };

        let res = match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let ga = val(*b).iter().zip(g).map(|(x, y)| x * y).collect();
                let gb = val(*a).iter().zip(g).map(|(x, y)| x * y).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|x| x * s).collect())],
            Op::AddScalar(a) => vec![(*a, g.to_vec())],
            Op::Square(a) => vec![(*a, mapped(*a, &|x, gi| 2.0 * x * gi))],
            Op::Abs(a) => vec![(*a, mapped(*a, &|x, gi| if x > 0.0 { gi } else if x < 0.0 { -gi } else { 0.0 }))],
            Op::Sqrt(a) => {
                let ga = out
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| if y > 0.0 { gi * 0.5 / y } else { 0.0 })
                    .collect();
                vec![(*a, ga)]
            }
            Op::Recip(a) => vec![(*a, out.iter().zip(g).map(|(&y, &gi)| -gi * y * y).collect())],
            Op::Exp(a) => vec![(*a, out.iter().zip(g).map(|(&y, &gi)| gi * y).collect())],
            Op::Act(a, kind) => vec![(*a, mapped(*a, &|x, gi| gi * kind.derivative(x)))],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                gemm_nt_acc(g, val(*b), &mut ga, m, n, k);
                gemm_tn_acc(val(*a), g, &mut gb, m, k, n);
                vec![(*a, ga), (*b, gb)]
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (p, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (av, bv) = (val(*a), val(*b));
                let mut ga = vec![0.0; p * m * k];
                let mut gb = vec![0.0; p * k * n];
                for i in 0..p {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    gemm_nt_acc(gi, &bv[i * k * n..(i + 1) * k * n], &mut ga[i * m * k..(i + 1) * m * k], m, n, k);
                    gemm_tn_acc(&av[i * m * k..(i + 1) * m * k], gi, &mut gb[i * k * n..(i + 1) * k * n], m, k, n);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Reduce { input, kind, axes } => {
                let in_shape = self.shape(*input);
                let map = reduce_index_map(in_shape, axes);
                let scale = match kind {
                    Reduction::Sum => 1.0,
                    Reduction::Mean => {
                        1.0 / axes.iter().map(|&ax| in_shape[ax]).product::<usize>() as f64
                    }
                };
                vec![(*input, map.iter().map(|&o| g[o] * scale).collect())]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Permute(a, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let garr = Array::new(node.value.shape().to_vec(), g.to_vec())?;
                vec![(*a, garr.permute(&inverse)?.into_data())]
            }
            Op::ExpandAxis { input, axis, count } => {
                let in_shape = self.shape(*input);
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis..].iter().product();
                let mut ga = vec![0.0; outer * inner];
                for o in 0..outer {
                    let dst = &mut ga[o * inner..(o + 1) * inner];
                    for c in 0..*count {
                        let start = (o * count + c) * inner;
                        dst.iter_mut()
                            .zip(&g[start..start + inner])
                            .for_each(|(d, s)| *d += s);
                    }
                }
                vec![(*input, ga)]
            }
            Op::SoftmaxLast(a) => {
                let width = *node.value.shape().last().unwrap_or(&1);
                let mut ga = vec![0.0; out.len()];
                for ((y, gi), dst) in out
                    .chunks(width.max(1))
                    .zip(g.chunks(width.max(1)))
                    .zip(ga.chunks_mut(width.max(1)))
                {
                    let dot: f64 = y.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dst.iter_mut().zip(y).zip(gi) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![(*a, ga)]
            }
            Op::Magnitude(re, im) => {
                let (rv, iv) = (val(*re), val(*im));
                let mut gr = vec![0.0; out.len()];
                let mut gi = vec![0.0; out.len()];
                for j in 0..out.len() {
                    if out[j] > 0.0 {
                        gr[j] = g[j] * rv[j] / out[j];
                        gi[j] = g[j] * iv[j] / out[j];
                    }
                }
                vec![(*re, gr), (*im, gi)]
            }
        };
        Ok(res)
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::BatchMatMul(a, b) | Op::Magnitude(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Square(a)
        | Op::Abs(a)
        | Op::Sqrt(a)
        | Op::Recip(a)
        | Op::Exp(a)
        | Op::Act(a, _)
        | Op::Reshape(a)
        | Op::Permute(a, _)
        | Op::SoftmaxLast(a) => vec![*a],
        Op::Reduce { input, .. } | Op::ExpandAxis { input, .. } => vec![*input],
    }
}

/// For every flat input index, the flat index of the reduced output cell it
/// contributes to.
fn reduce_index_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let out_shape: Vec<usize> = (0..in_shape.len())
        .filter(|i| !axes.contains(i))
        .map(|i| in_shape[i])
        .collect();
    let out_strides = strides(&out_shape);
    // stride of each input axis in the output (0 for reduced axes)
    let mut axis_stride = vec![0usize; in_shape.len()];
    let mut j = 0;
    for (i, s) in axis_stride.iter_mut().enumerate() {
        if !axes.contains(&i) {
            *s = out_strides[j];
            j += 1;
        }
    }
    let n = numel(in_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; in_shape.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&axis_stride).map(|(i, s)| i * s).sum());
        increment(&mut idx, in_shape);
    }
    map
}
