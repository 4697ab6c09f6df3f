//! Dense row-major tensors with reverse-mode gradient propagation.
//!
//! The computation graph is recorded dynamically: every operation on a
//! tensor that (transitively) requires gradients produces a node holding
//! its parents and a [`BackwardOp`] that knows how to push an upstream
//! cotangent back to them. [`Tensor::backward`] walks the graph once in
//! reverse topological order and accumulates `d(loss)/d(node)` into each
//! participating tensor. The graph is freed as soon as the last handle to
//! the loss (and any intermediates) is dropped.
//!
//! Tensors are immutable once created; the only interior mutability is
//! gradient accumulation. Handles are reference-counted and cheap to clone.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reverse-mode rule for one recorded operation: given the upstream
/// cotangent of the output, produce one optional cotangent per parent
/// (`None` for parents that do not require gradients).
pub trait BackwardOp<F: Scalar>: fmt::Debug {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>>;
}

struct Inner<F: Scalar> {
    shape: Vec<usize>,
    data: Rc<Vec<F>>,
    grad: RefCell<Option<Vec<F>>>,
    requires_grad: bool,
    parents: Vec<Tensor<F>>,
    op: Option<Box<dyn BackwardOp<F>>>,
}

/// Shared handle to an immutable n-dimensional array of scalars.
pub struct Tensor<F: Scalar> {
    inner: Rc<Inner<F>>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    /// Plain data tensor that does not participate in gradients.
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        Self::build(shape, data, false)
    }

    /// Learnable leaf: gradients accumulate here during `backward`.
    pub fn param(shape: &[usize], data: Vec<F>) -> Result<Self> {
        Self::build(shape, data, true)
    }

    fn build(shape: &[usize], data: Vec<F>, requires_grad: bool) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::Invalid(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape: shape.to_vec(),
                data: Rc::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                op: None,
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        Self::build(shape, vec![value; numel_of(shape)], false).expect("consistent by construction")
    }

    pub fn scalar(value: F) -> Self {
        Self::full(&[1], value)
    }

    /// Result of a recorded operation. Parents and the backward rule are
    /// kept only if some parent requires gradients; otherwise the output
    /// degenerates to a plain leaf and the graph is pruned here.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<F>,
        parents: Vec<Tensor<F>>,
        op: Box<dyn BackwardOp<F>>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, op) = if requires_grad {
            (parents, Some(op))
        } else {
            (Vec::new(), None)
        };
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: Rc::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                op,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, delta: &[F]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Same values, cut off from the graph. Shares storage.
    pub fn detach(&self) -> Tensor<F> {
        Tensor {
            inner: Rc::new(Inner {
                shape: self.inner.shape.clone(),
                data: Rc::clone(&self.inner.data),
                grad: RefCell::new(None),
                requires_grad: false,
                parents: Vec::new(),
                op: None,
            }),
        }
    }

    /// Elementwise map producing a detached leaf.
    pub fn detached_map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Self::build(&self.inner.shape, data, false).expect("same shape")
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode sweep from a scalar loss. Every tensor that requires
    /// gradients and participated in the recorded computation receives its
    /// accumulated `d(loss)/d(tensor)`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.numel()));
        }
        if !self.requires_grad() {
            return Err(Error::DetachedGraph);
        }

        // Iterative post-order DFS; parents land before their consumers,
        // so reversing gives a valid propagation order.
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<F>, usize)> = Vec::new();
        visited.insert(self.ptr_id());
        stack.push((self.clone(), 0));
        while let Some((node, idx)) = stack.pop() {
            if idx < node.inner.parents.len() {
                let parent = node.inner.parents[idx].clone();
                stack.push((node, idx + 1));
                if parent.requires_grad() && visited.insert(parent.ptr_id()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        self.accumulate_grad(&[F::one()]);
        for node in order.iter().rev() {
            let Some(op) = node.inner.op.as_ref() else {
                continue;
            };
            let upstream = node.inner.grad.borrow();
            let Some(upstream) = upstream.as_ref() else {
                continue;
            };
            let grads = op.vjp(&node.inner.parents, upstream);
            debug_assert_eq!(grads.len(), node.inner.parents.len());
            for (parent, grad) in node.inner.parents.iter().zip(grads) {
                if let Some(grad) = grad {
                    debug_assert_eq!(grad.len(), parent.numel());
                    parent.accumulate_grad(&grad);
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct AddOp;
impl<F: Scalar> BackwardOp<F> for AddOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        parents
            .iter()
            .map(|p| p.requires_grad().then(|| upstream.to_vec()))
            .collect()
    }
}

#[derive(Debug)]
struct SubOp;
impl<F: Scalar> BackwardOp<F> for SubOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        vec![
            parents[0].requires_grad().then(|| upstream.to_vec()),
            parents[1]
                .requires_grad()
                .then(|| upstream.iter().map(|&g| -g).collect()),
        ]
    }
}

#[derive(Debug)]
struct MulOp;
impl<F: Scalar> BackwardOp<F> for MulOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let a = parents[0].data();
        let b = parents[1].data();
        vec![
            parents[0]
                .requires_grad()
                .then(|| upstream.iter().zip(b).map(|(&g, &y)| g * y).collect()),
            parents[1]
                .requires_grad()
                .then(|| upstream.iter().zip(a).map(|(&g, &x)| g * x).collect()),
        ]
    }
}

#[derive(Debug)]
struct ScalarMulOp<F>(F);
impl<F: Scalar> BackwardOp<F> for ScalarMulOp<F> {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let c = self.0;
        vec![parents[0]
            .requires_grad()
            .then(|| upstream.iter().map(|&g| g * c).collect())]
    }
}

#[derive(Debug)]
struct ScalarDivOp<F>(F);
impl<F: Scalar> BackwardOp<F> for ScalarDivOp<F> {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let c = self.0;
        vec![parents[0]
            .requires_grad()
            .then(|| upstream.iter().map(|&g| g / c).collect())]
    }
}

#[derive(Debug)]
struct AddScalarOp;
impl<F: Scalar> BackwardOp<F> for AddScalarOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        vec![parents[0].requires_grad().then(|| upstream.to_vec())]
    }
}

#[derive(Debug)]
struct ReluOp;
impl<F: Scalar> BackwardOp<F> for ReluOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let x = parents[0].data();
        vec![parents[0].requires_grad().then(|| {
            upstream
                .iter()
                .zip(x)
                .map(|(&g, &v)| if v > F::zero() { g } else { F::zero() })
                .collect()
        })]
    }
}

// ---------------------------------------------------------------------------
// Linear algebra and shape operations
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct MatmulOp;
impl<F: Scalar> BackwardOp<F> for MatmulOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let a = parents[0].data();
        let b = parents[1].data();
        let (m, k) = (parents[0].shape()[0], parents[0].shape()[1]);
        let n = parents[1].shape()[1];

        // dA = G * B^T, dB = A^T * G; both loops stream rows contiguously.
        let da = parents[0].requires_grad().then(|| {
            let mut da = vec![F::zero(); m * k];
            for i in 0..m {
                let grow = &upstream[i * n..(i + 1) * n];
                for (kk, da_ik) in da[i * k..(i + 1) * k].iter_mut().enumerate() {
                    let brow = &b[kk * n..(kk + 1) * n];
                    let mut acc = F::zero();
                    for j in 0..n {
                        acc += grow[j] * brow[j];
                    }
                    *da_ik = acc;
                }
            }
            da
        });
        let db = parents[1].requires_grad().then(|| {
            let mut db = vec![F::zero(); k * n];
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                let grow = &upstream[i * n..(i + 1) * n];
                for (kk, &a_ik) in arow.iter().enumerate() {
                    let dst = &mut db[kk * n..(kk + 1) * n];
                    for j in 0..n {
                        dst[j] += a_ik * grow[j];
                    }
                }
            }
            db
        });
        vec![da, db]
    }
}

#[derive(Debug)]
struct TransposeOp;
impl<F: Scalar> BackwardOp<F> for TransposeOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let (m, n) = (parents[0].shape()[0], parents[0].shape()[1]);
        vec![parents[0].requires_grad().then(|| {
            // upstream has shape [n, m]
            let mut g = vec![F::zero(); m * n];
            for i in 0..m {
                for j in 0..n {
                    g[i * n + j] = upstream[j * m + i];
                }
            }
            g
        })]
    }
}

#[derive(Debug)]
struct ReshapeOp;
impl<F: Scalar> BackwardOp<F> for ReshapeOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        vec![parents[0].requires_grad().then(|| upstream.to_vec())]
    }
}

#[derive(Debug)]
struct SumAllOp;
impl<F: Scalar> BackwardOp<F> for SumAllOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let n = parents[0].numel();
        vec![parents[0].requires_grad().then(|| vec![upstream[0]; n])]
    }
}

#[derive(Debug)]
struct MeanAllOp;
impl<F: Scalar> BackwardOp<F> for MeanAllOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let n = parents[0].numel();
        let scale = upstream[0] / F::from_f64(n as f64);
        vec![parents[0].requires_grad().then(|| vec![scale; n])]
    }
}

#[derive(Debug)]
struct MeanLastOp;
impl<F: Scalar> BackwardOp<F> for MeanLastOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let shape = parents[0].shape();
        let t = *shape.last().unwrap();
        let inv = F::one() / F::from_f64(t as f64);
        vec![parents[0].requires_grad().then(|| {
            let mut g = vec![F::zero(); parents[0].numel()];
            for (row, &u) in upstream.iter().enumerate() {
                let v = u * inv;
                for gi in &mut g[row * t..(row + 1) * t] {
                    *gi = v;
                }
            }
            g
        })]
    }
}

#[derive(Debug)]
struct AvgPoolLastOp {
    window: usize,
}
impl<F: Scalar> BackwardOp<F> for AvgPoolLastOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let p = self.window;
        let inv = F::one() / F::from_f64(p as f64);
        vec![parents[0].requires_grad().then(|| {
            let mut g = vec![F::zero(); parents[0].numel()];
            for (j, &u) in upstream.iter().enumerate() {
                let v = u * inv;
                for gi in &mut g[j * p..(j + 1) * p] {
                    *gi = v;
                }
            }
            g
        })]
    }
}

#[derive(Debug)]
struct SliceDim1Op {
    start: usize,
    len: usize,
}
impl<F: Scalar> BackwardOp<F> for SliceDim1Op {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let shape = parents[0].shape();
        let (b, c, t) = (shape[0], shape[1], shape[2]);
        vec![parents[0].requires_grad().then(|| {
            let mut g = vec![F::zero(); b * c * t];
            for bi in 0..b {
                for ci in 0..self.len {
                    let src = (bi * self.len + ci) * t;
                    let dst = (bi * c + self.start + ci) * t;
                    g[dst..dst + t].copy_from_slice(&upstream[src..src + t]);
                }
            }
            g
        })]
    }
}

#[derive(Debug)]
struct ConcatDim1Op {
    channel_sizes: Vec<usize>,
}
impl<F: Scalar> BackwardOp<F> for ConcatDim1Op {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let b = parents[0].shape()[0];
        let t = parents[0].shape()[2];
        let c_total: usize = self.channel_sizes.iter().sum();
        let mut offset = 0;
        let mut out = Vec::with_capacity(parents.len());
        for (p, &c) in parents.iter().zip(&self.channel_sizes) {
            let piece = p.requires_grad().then(|| {
                let mut g = vec![F::zero(); b * c * t];
                for bi in 0..b {
                    for ci in 0..c {
                        let src = (bi * c_total + offset + ci) * t;
                        let dst = (bi * c + ci) * t;
                        g[dst..dst + t].copy_from_slice(&upstream[src..src + t]);
                    }
                }
                g
            });
            out.push(piece);
            offset += c;
        }
        out
    }
}

#[derive(Debug)]
struct ScaleChannelsOp;
impl<F: Scalar> BackwardOp<F> for ScaleChannelsOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let x = parents[0].data();
        let gate = parents[1].data();
        let shape = parents[0].shape();
        let (bc, t) = (shape[0] * shape[1], shape[2]);
        let dx = parents[0].requires_grad().then(|| {
            let mut g = vec![F::zero(); x.len()];
            for row in 0..bc {
                let w = gate[row];
                for i in row * t..(row + 1) * t {
                    g[i] = upstream[i] * w;
                }
            }
            g
        });
        let dgate = parents[1].requires_grad().then(|| {
            let mut g = vec![F::zero(); gate.len()];
            for (row, gr) in g.iter_mut().enumerate() {
                let mut acc = F::zero();
                for i in row * t..(row + 1) * t {
                    acc += upstream[i] * x[i];
                }
                *gr = acc;
            }
            g
        });
        vec![dx, dgate]
    }
}

#[derive(Debug)]
struct AddBiasRowsOp;
impl<F: Scalar> BackwardOp<F> for AddBiasRowsOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let (m, n) = (parents[0].shape()[0], parents[0].shape()[1]);
        let dx = parents[0].requires_grad().then(|| upstream.to_vec());
        let db = parents[1].requires_grad().then(|| {
            let mut g = vec![F::zero(); n];
            for i in 0..m {
                for j in 0..n {
                    g[j] += upstream[i * n + j];
                }
            }
            g
        });
        vec![dx, db]
    }
}

#[derive(Debug)]
struct DepthwiseCausalConvOp {
    dilation: usize,
}
impl<F: Scalar> BackwardOp<F> for DepthwiseCausalConvOp {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let x = parents[0].data();
        let w = parents[1].data();
        let xs = parents[0].shape();
        let (b, c, t) = (xs[0], xs[1], xs[2]);
        let k = parents[1].shape()[1];
        let d = self.dilation;

        let dx = parents[0].requires_grad().then(|| {
            let mut g = vec![F::zero(); x.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * t;
                    let wrow = &w[ci * k..(ci + 1) * k];
                    for ti in 0..t {
                        let u = upstream[base + ti];
                        for (i, &wi) in wrow.iter().enumerate() {
                            let shift = (k - 1 - i) * d;
                            if ti >= shift {
                                g[base + ti - shift] += u * wi;
                            }
                        }
                    }
                }
            }
            g
        });
        let dw = parents[1].requires_grad().then(|| {
            let mut g = vec![F::zero(); w.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * t;
                    for ti in 0..t {
                        let u = upstream[base + ti];
                        for i in 0..k {
                            let shift = (k - 1 - i) * d;
                            if ti >= shift {
                                g[ci * k + i] += u * x[base + ti - shift];
                            }
                        }
                    }
                }
            }
            g
        });
        let db = parents[2].requires_grad().then(|| {
            let mut g = vec![F::zero(); c];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * t;
                    for ti in 0..t {
                        g[ci] += upstream[base + ti];
                    }
                }
            }
            g
        });
        vec![dx, dw, db]
    }
}

// ---------------------------------------------------------------------------
// Forward implementations
// ---------------------------------------------------------------------------

impl<F: Scalar> Tensor<F> {
    fn check_same_shape(&self, other: &Tensor<F>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(AddOp),
        ))
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(SubOp),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_same_shape(other, "mul")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(MulOp),
        ))
    }

    pub fn scalar_mul(&self, c: F) -> Tensor<F> {
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(ScalarMulOp(c)),
        )
    }

    /// True division; unlike multiplying by a reciprocal this keeps exact
    /// bounds, e.g. a sum of n ones divided by n is exactly 1.
    pub fn scalar_div(&self, c: F) -> Tensor<F> {
        let data = self.data().iter().map(|&v| v / c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(ScalarDivOp(c)),
        )
    }

    pub fn add_scalar(&self, c: F) -> Tensor<F> {
        let data = self.data().iter().map(|&v| v + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(AddScalarOp),
        )
    }

    pub fn relu(&self) -> Tensor<F> {
        let data = self
            .data()
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(ReluOp),
        )
    }

    /// Matrix product of `[M, K]` by `[K, N]`. Gradients flow to both
    /// operands when requested.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if self.shape().len() != 2 || other.shape().len() != 2 || self.shape()[1] != other.shape()[0]
        {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let a = self.data();
        let b = other.data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut out[i * n..(i + 1) * n];
            for (kk, &a_ik) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for j in 0..n {
                    crow[j] += a_ik * brow[j];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(MatmulOp),
        ))
    }

    pub fn transpose2(&self) -> Result<Tensor<F>> {
        if self.shape().len() != 2 {
            return Err(Error::Invalid(format!(
                "transpose2 requires a rank-2 tensor, got shape {:?}",
                self.shape()
            )));
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        Ok(Tensor::from_op(
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(TransposeOp),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if numel_of(shape) != self.numel() {
            return Err(Error::Invalid(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape(),
                self.numel(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(ReshapeOp),
        ))
    }

    pub fn sum_all(&self) -> Tensor<F> {
        let s = self.data().iter().copied().fold(F::zero(), |a, b| a + b);
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], Box::new(SumAllOp))
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = F::from_f64(self.numel() as f64);
        let s = self.data().iter().copied().fold(F::zero(), |a, b| a + b) / n;
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], Box::new(MeanAllOp))
    }

    /// Mean over the trailing axis: `[.., T] -> [..]`.
    pub fn mean_last_axis(&self) -> Result<Tensor<F>> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(Error::Invalid("mean_last_axis on rank-0 tensor".into()));
        }
        let t = *shape.last().unwrap();
        let rows = self.numel() / t;
        let inv = F::one() / F::from_f64(t as f64);
        let x = self.data();
        let mut out = vec![F::zero(); rows];
        for (row, o) in out.iter_mut().enumerate() {
            let mut acc = F::zero();
            for &v in &x[row * t..(row + 1) * t] {
                acc += v;
            }
            *o = acc * inv;
        }
        Ok(Tensor::from_op(
            shape[..shape.len() - 1].to_vec(),
            out,
            vec![self.clone()],
            Box::new(MeanLastOp),
        ))
    }

    /// Non-overlapping mean pooling over the trailing axis with window `p`.
    pub fn avg_pool_last_axis(&self, p: usize) -> Result<Tensor<F>> {
        let shape = self.shape();
        let t = *shape
            .last()
            .ok_or_else(|| Error::Invalid("avg_pool on rank-0 tensor".into()))?;
        if p == 0 || t % p != 0 {
            return Err(Error::Config(format!(
                "pooling window {p} must divide the time axis length {t}"
            )));
        }
        let out_t = t / p;
        let rows = self.numel() / t;
        let inv = F::one() / F::from_f64(p as f64);
        let x = self.data();
        let mut out = vec![F::zero(); rows * out_t];
        for row in 0..rows {
            for j in 0..out_t {
                let mut acc = F::zero();
                let base = row * t + j * p;
                for &v in &x[base..base + p] {
                    acc += v;
                }
                out[row * out_t + j] = acc * inv;
            }
        }
        let mut new_shape = shape.to_vec();
        *new_shape.last_mut().unwrap() = out_t;
        Ok(Tensor::from_op(
            new_shape,
            out,
            vec![self.clone()],
            Box::new(AvgPoolLastOp { window: p }),
        ))
    }

    /// Contiguous channel block of a `[B, C, T]` tensor.
    pub fn slice_dim1(&self, start: usize, len: usize) -> Result<Tensor<F>> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(Error::Invalid(format!(
                "slice_dim1 requires rank 3, got {:?}",
                shape
            )));
        }
        let (b, c, t) = (shape[0], shape[1], shape[2]);
        if start + len > c {
            return Err(Error::Invalid(format!(
                "channel slice {start}..{} exceeds {c} channels",
                start + len
            )));
        }
        let x = self.data();
        let mut out = vec![F::zero(); b * len * t];
        for bi in 0..b {
            for ci in 0..len {
                let src = (bi * c + start + ci) * t;
                let dst = (bi * len + ci) * t;
                out[dst..dst + t].copy_from_slice(&x[src..src + t]);
            }
        }
        Ok(Tensor::from_op(
            vec![b, len, t],
            out,
            vec![self.clone()],
            Box::new(SliceDim1Op { start, len }),
        ))
    }

    /// Concatenate `[B, C_i, T]` blocks along the channel axis, preserving
    /// block order.
    pub fn concat_dim1(blocks: &[Tensor<F>]) -> Result<Tensor<F>> {
        if blocks.is_empty() {
            return Err(Error::Invalid("concat_dim1 of zero blocks".into()));
        }
        let b = blocks[0].shape()[0];
        let t = blocks[0].shape()[2];
        for blk in blocks {
            if blk.shape().len() != 3 || blk.shape()[0] != b || blk.shape()[2] != t {
                return Err(Error::ShapeMismatch {
                    op: "concat_dim1",
                    lhs: blocks[0].shape().to_vec(),
                    rhs: blk.shape().to_vec(),
                });
            }
        }
        let sizes: Vec<usize> = blocks.iter().map(|blk| blk.shape()[1]).collect();
        let c_total: usize = sizes.iter().sum();
        let mut out = vec![F::zero(); b * c_total * t];
        let mut offset = 0;
        for (blk, &c) in blocks.iter().zip(&sizes) {
            let x = blk.data();
            for bi in 0..b {
                for ci in 0..c {
                    let src = (bi * c + ci) * t;
                    let dst = (bi * c_total + offset + ci) * t;
                    out[dst..dst + t].copy_from_slice(&x[src..src + t]);
                }
            }
            offset += c;
        }
        Ok(Tensor::from_op(
            vec![b, c_total, t],
            out,
            blocks.to_vec(),
            Box::new(ConcatDim1Op {
                channel_sizes: sizes,
            }),
        ))
    }

    /// Multiply each time series of a `[B, C, T]` tensor by its `[B, C]`
    /// gate entry (broadcast along time).
    pub fn scale_channels(&self, gate: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = self.shape();
        if shape.len() != 3 || gate.shape() != &shape[..2] {
            return Err(Error::ShapeMismatch {
                op: "scale_channels",
                lhs: shape.to_vec(),
                rhs: gate.shape().to_vec(),
            });
        }
        let (bc, t) = (shape[0] * shape[1], shape[2]);
        let x = self.data();
        let g = gate.data();
        let mut out = vec![F::zero(); x.len()];
        for row in 0..bc {
            let w = g[row];
            for i in row * t..(row + 1) * t {
                out[i] = x[i] * w;
            }
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            vec![self.clone(), gate.clone()],
            Box::new(ScaleChannelsOp),
        ))
    }

    /// Broadcast-add a `[N]` bias to every row of an `[M, N]` tensor.
    pub fn add_bias_rows(&self, bias: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = self.shape();
        if shape.len() != 2 || bias.shape() != [shape[1]] {
            return Err(Error::ShapeMismatch {
                op: "add_bias_rows",
                lhs: shape.to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let x = self.data();
        let b = bias.data();
        let mut out = vec![F::zero(); x.len()];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = x[i * n + j] + b[j];
            }
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            vec![self.clone(), bias.clone()],
            Box::new(AddBiasRowsOp),
        ))
    }

    /// Per-channel causal dilated convolution on a `[B, C, T]` tensor with
    /// kernels `[C, k]` and biases `[C]`. The input is implicitly left-padded
    /// with `(k-1)*dilation` zeros, so the output keeps length `T` and entry
    /// `t` depends only on inputs at times `<= t`.
    pub fn depthwise_causal_conv(
        &self,
        kernels: &Tensor<F>,
        bias: &Tensor<F>,
        dilation: usize,
    ) -> Result<Tensor<F>> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(Error::Invalid(format!(
                "depthwise_causal_conv requires rank 3, got {:?}",
                shape
            )));
        }
        let (b, c, t) = (shape[0], shape[1], shape[2]);
        if kernels.shape().len() != 2 || kernels.shape()[0] != c || bias.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "depthwise_causal_conv",
                lhs: shape.to_vec(),
                rhs: kernels.shape().to_vec(),
            });
        }
        if dilation == 0 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        let k = kernels.shape()[1];
        let x = self.data();
        let w = kernels.data();
        let bb = bias.data();
        let mut out = vec![F::zero(); b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * t;
                let wrow = &w[ci * k..(ci + 1) * k];
                for ti in 0..t {
                    let mut acc = bb[ci];
                    for (i, &wi) in wrow.iter().enumerate() {
                        let shift = (k - 1 - i) * dilation;
                        if ti >= shift {
                            acc += wi * x[base + ti - shift];
                        }
                    }
                    out[base + ti] = acc;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, c, t],
            out,
            vec![self.clone(), kernels.clone(), bias.clone()],
            Box::new(DepthwiseCausalConvOp { dilation }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T64 = Tensor<f64>;

    #[test]
    fn matmul_identity_is_exact() {
        let a = T64::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = T64::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = a.matmul(&eye).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_row_times_column() {
        let a = T64::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = T64::new(&[4, 1], vec![0.25; 4]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = T64::zeros(&[2, 3]);
        let b = T64::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "message should name shapes: {msg}");
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let w = T64::param(&[3], vec![5.0, -1.0, 2.0]).unwrap();
        let loss = w.sum_all();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let w = T64::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = w.mul(&w).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let w = T64::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(w.backward(), Err(Error::NonScalarLoss(2))));
        let x = T64::new(&[1], vec![3.0]).unwrap();
        assert!(matches!(x.sum_all().backward(), Err(Error::DetachedGraph)));
    }

    #[test]
    fn grad_accumulates_across_shared_uses() {
        // loss = sum(w * w) computed via two separate graph paths on the
        // same leaf; contributions must add.
        let w = T64::param(&[2], vec![2.0, 3.0]).unwrap();
        let a = w.scalar_mul(2.0).sum_all();
        let b = w.scalar_mul(3.0).sum_all();
        let loss = a.add(&b).unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn slice_then_concat_round_trips() {
        let x = T64::new(&[1, 4, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let lo = x.slice_dim1(0, 2).unwrap();
        let hi = x.slice_dim1(2, 2).unwrap();
        let back = T64::concat_dim1(&[lo, hi]).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn avg_pool_window_means() {
        let x = T64::new(&[1, 1, 4], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let out = x.avg_pool_last_axis(2).unwrap();
        assert_eq!(out.data(), &[2.0, 6.0]);
        assert_eq!(out.shape(), &[1, 1, 2]);
    }

    #[test]
    fn conv_impulse_response_matches_hand_evaluation() {
        // kernel (1,1,1), dilation 2: out_t = x_{t-4} + x_{t-2} + x_t.
        let mut impulse = vec![0.0; 10];
        impulse[4] = 1.0;
        let x = T64::new(&[1, 1, 10], impulse).unwrap();
        let w = T64::new(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let b = T64::new(&[1], vec![0.0]).unwrap();
        let out = x.depthwise_causal_conv(&w, &b, 2).unwrap();
        let mut expect = vec![0.0; 10];
        expect[4] = 1.0;
        expect[6] = 1.0;
        expect[8] = 1.0;
        assert_eq!(out.data(), &expect[..]);
    }

    #[test]
    fn conv_zero_input_returns_bias() {
        let x = T64::zeros(&[1, 2, 5]);
        let w = T64::new(&[2, 3], vec![0.5; 6]).unwrap();
        let b = T64::new(&[2], vec![1.5, -2.0]).unwrap();
        let out = x.depthwise_causal_conv(&w, &b, 2).unwrap();
        assert_eq!(&out.data()[..5], &[1.5; 5]);
        assert_eq!(&out.data()[5..], &[-2.0; 5]);
    }

    #[test]
    fn works_at_f32_too() {
        let a: Tensor<f32> = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b: Tensor<f32> = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), a.data());
    }
}
