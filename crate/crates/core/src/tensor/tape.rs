use std::cell::{Cell, Ref, RefCell};

use super::kernels;
use super::{split_axis, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Record of a primitive and the data its backward pass needs.
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Transpose(usize),
    Reshape(usize),
    Slice {
        src: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        srcs: Vec<usize>,
        axis: usize,
    },
    Softmax {
        src: usize,
        axis: usize,
    },
    LayerNorm {
        src: usize,
        axis: usize,
        inv_std: Vec<T>,
    },
    Gelu(usize),
    Swish(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    DepthwiseConv1d {
        x: usize,
        w: usize,
    },
    Glu(usize),
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    Mean {
        src: usize,
        axis: usize,
    },
    Sum(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
    BceWithLogits {
        logits: usize,
        targets: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::Swish(_) => "swish",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::DepthwiseConv1d { .. } => "conv1d_depthwise",
            Op::Glu(_) => "glu",
            Op::Gather { .. } => "embedding_lookup",
            Op::Mean { .. } => "mean",
            Op::Sum(_) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Nodes are appended in execution order, which is already a topological
/// order; backward visits each node once from the output down.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    check_finite: bool,
    first_non_finite: Cell<Option<usize>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.value().shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            check_finite: false,
            first_non_finite: Cell::new(None),
        }
    }

    /// Tape that records the first primitive producing a NaN or infinity.
    pub fn with_finite_check() -> Self {
        Self {
            check_finite: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the first op whose output was non-finite (finite-check mode).
    pub fn first_non_finite(&self) -> Option<String> {
        self.first_non_finite.get().map(|id| {
            let nodes = self.nodes.borrow();
            format!("{} (node {})", nodes[id].op.name(), id)
        })
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.check_finite && self.first_non_finite.get().is_none() && !value.all_finite() {
            self.first_non_finite.set(Some(id));
        }
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor<T>> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let value = kernels::concat(&values, axis)?;
            let requires = parts.iter().any(|p| nodes[p.id].requires_grad);
            (value, requires)
        };
        let srcs = parts.iter().map(|p| p.id).collect();
        Ok(self.push(value, Op::Concat { srcs, axis }, requires))
    }

    /// Reverse-mode pass from a one-element output.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[output.id].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {:?}",
                nodes[output.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[output.id] = Some(vec![T::one()]);

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop(&nodes, id, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, zero-filled when no path reached it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize, f: impl FnOnce(&mut [T])) {
    let slot = grads[id].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}

fn backprop<T: Scalar>(
    nodes: &[Node<T>],
    id: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) -> Result<()> {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let req = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2()?;
            let (_, n) = val(*b).dims2()?;
            if req(*a) {
                let bv = val(*b).data();
                accumulate(grads, *a, m * k, |da| {
                    // dA += dC @ B^T
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, bv, 1, n as isize, T::one(), da, k as isize, 1);
                });
            }
            if req(*b) {
                let av = val(*a).data();
                accumulate(grads, *b, k * n, |db| {
                    // dB += A^T @ dC
                    T::gemm(k, m, n, T::one(), av, 1, k as isize, g, n as isize, 1, T::one(), db, n as isize, 1);
                });
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(nodes[id].op, Op::Sub(..)) { -T::one() } else { T::one() };
            if req(*a) {
                accumulate(grads, *a, g.len(), |da| {
                    da.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                });
            }
            if req(*b) {
                let blen = val(*b).len();
                accumulate(grads, *b, blen, |db| {
                    for chunk in g.chunks(blen) {
                        db.iter_mut().zip(chunk).for_each(|(d, &gi)| *d += sign * gi);
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let av = val(*a).data();
            let bv = val(*b).data();
            let blen = bv.len();
            if req(*a) {
                accumulate(grads, *a, g.len(), |da| {
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += g[i] * bv[i % blen];
                    }
                });
            }
            if req(*b) {
                accumulate(grads, *b, blen, |db| {
                    for (i, (&gi, &ai)) in g.iter().zip(av).enumerate() {
                        db[i % blen] += gi * ai;
                    }
                });
            }
        }
        Op::Scale(a, c) => {
            accumulate(grads, *a, g.len(), |da| {
                da.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * *c);
            });
        }
        Op::Transpose(a) => {
            let (r, c) = val(*a).dims2()?;
            accumulate(grads, *a, r * c, |da| {
                // out is c x r
                for i in 0..c {
                    for j in 0..r {
                        da[j * c + i] += g[i * r + j];
                    }
                }
            });
        }
        Op::Reshape(a) => {
            accumulate(grads, *a, g.len(), |da| {
                da.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
            });
        }
        Op::Slice { src, axis, start } => {
            let src_shape = val(*src).shape();
            let (outer, len, inner) = split_axis(src_shape, *axis)?;
            let take = out.shape()[*axis];
            accumulate(grads, *src, outer * len * inner, |ds| {
                for o in 0..outer {
                    for a in 0..take {
                        let s = (o * len + start + a) * inner;
                        let d = (o * take + a) * inner;
                        ds[s..s + inner]
                            .iter_mut()
                            .zip(&g[d..d + inner])
                            .for_each(|(x, &gi)| *x += gi);
                    }
                }
            });
        }
        Op::Concat { srcs, axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis)?;
            let mut offset = 0;
            for &s in srcs {
                let len = val(s).shape()[*axis];
                if req(s) {
                    accumulate(grads, s, outer * len * inner, |ds| {
                        for o in 0..outer {
                            let src_row = o * len * inner;
                            let dst_row = (o * total + offset) * inner;
                            ds[src_row..src_row + len * inner]
                                .iter_mut()
                                .zip(&g[dst_row..dst_row + len * inner])
                                .for_each(|(x, &gi)| *x += gi);
                        }
                    });
                }
                offset += len;
            }
        }
        Op::Softmax { src, axis } => {
            let (outer, len, inner) = split_axis(out.shape(), *axis)?;
            let y = out.data();
            accumulate(grads, *src, y.len(), |dx| {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot = (0..len).fold(T::zero(), |acc, a| acc + g[idx(a)] * y[idx(a)]);
                        for a in 0..len {
                            dx[idx(a)] += y[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
            });
        }
        Op::LayerNorm { src, axis, inv_std } => {
            let (outer, len, inner) = split_axis(out.shape(), *axis)?;
            let y = out.data();
            let n = T::of(len as f64);
            accumulate(grads, *src, y.len(), |dx| {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let s = inv_std[o * inner + i];
                        let mut sum_g = T::zero();
                        let mut sum_gy = T::zero();
                        for a in 0..len {
                            sum_g += g[idx(a)];
                            sum_gy += g[idx(a)] * y[idx(a)];
                        }
                        for a in 0..len {
                            dx[idx(a)] += s * (g[idx(a)] - sum_g / n - y[idx(a)] * sum_gy / n);
                        }
                    }
                }
            });
        }
        Op::Gelu(a) => unary_backward(grads, *a, g, val(*a).data(), kernels::gelu_grad),
        Op::Swish(a) => unary_backward(grads, *a, g, val(*a).data(), kernels::swish_grad),
        Op::Sigmoid(a) => {
            let y = out.data();
            accumulate(grads, *a, g.len(), |dx| {
                for i in 0..g.len() {
                    dx[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            });
        }
        Op::Tanh(a) => {
            let y = out.data();
            accumulate(grads, *a, g.len(), |dx| {
                for i in 0..g.len() {
                    dx[i] += g[i] * (T::one() - y[i] * y[i]);
                }
            });
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            accumulate(grads, *a, g.len(), |dx| {
                for i in 0..g.len() {
                    if x[i] > T::zero() {
                        dx[i] += g[i];
                    }
                }
            });
        }
        Op::DepthwiseConv1d { x, w } => {
            let xv = val(*x);
            let wv = val(*w);
            let (t_len, c) = xv.dims2()?;
            let (k, _) = wv.dims2()?;
            if req(*x) {
                accumulate(grads, *x, t_len * c, |dx| {
                    kernels::depthwise_conv1d_grad_input(g, wv.data(), t_len, c, k, dx)
                });
            }
            if req(*w) {
                accumulate(grads, *w, k * c, |dw| {
                    kernels::depthwise_conv1d_grad_weight(g, xv.data(), t_len, c, k, dw)
                });
            }
        }
        Op::Glu(a) => {
            let x = val(*a);
            let full = *x.shape().last().expect("glu on rank >= 1");
            let half = full / 2;
            let xd = x.data();
            accumulate(grads, *a, xd.len(), |dx| {
                for (r, gr) in g.chunks(half).enumerate() {
                    let row = &xd[r * full..(r + 1) * full];
                    for j in 0..half {
                        let s = kernels::sigmoid(row[half + j]);
                        dx[r * full + j] += gr[j] * s;
                        dx[r * full + half + j] += gr[j] * row[j] * s * (T::one() - s);
                    }
                }
            });
        }
        Op::Gather { table, ids } => {
            let tv = val(*table);
            let (rows, d) = tv.dims2()?;
            accumulate(grads, *table, rows * d, |dt| {
                for (r, &id) in ids.iter().enumerate() {
                    dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(x, &gi)| *x += gi);
                }
            });
        }
        Op::Mean { src, axis } => {
            let (outer, len, inner) = split_axis(val(*src).shape(), *axis)?;
            let scale = T::one() / T::of(len as f64);
            accumulate(grads, *src, outer * len * inner, |dx| {
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            dx[(o * len + a) * inner + i] += g[o * inner + i] * scale;
                        }
                    }
                }
            });
        }
        Op::Sum(a) => {
            let n = val(*a).len();
            accumulate(grads, *a, n, |dx| dx.iter_mut().for_each(|d| *d += g[0]));
        }
        Op::CrossEntropy {
            logits,
            targets,
            mask,
            probs,
            count,
        } => {
            let (n, c) = val(*logits).dims2()?;
            let scale = g[0] / T::of(*count as f64);
            accumulate(grads, *logits, n * c, |dx| {
                for r in 0..n {
                    if !mask[r] {
                        continue;
                    }
                    for j in 0..c {
                        dx[r * c + j] += probs[r * c + j] * scale;
                    }
                    dx[r * c + targets[r]] -= scale;
                }
            });
        }
        Op::BceWithLogits { logits, targets } => {
            let z = val(*logits).data();
            let scale = g[0] / T::of(z.len() as f64);
            accumulate(grads, *logits, z.len(), |dx| {
                for i in 0..z.len() {
                    dx[i] += (kernels::sigmoid(z[i]) - targets[i]) * scale;
                }
            });
        }
    }
    Ok(())
}

fn unary_backward<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    src: usize,
    g: &[T],
    x: &[T],
    dfdx: fn(T) -> T,
) {
    accumulate(grads, src, g.len(), |dx| {
        for i in 0..g.len() {
            dx[i] += g[i] * dfdx(x[i]);
        }
    });
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        self.tape.value_ref(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn unary(self, op: Op<T>, f: impl FnOnce(&Tensor<T>) -> Tensor<T>) -> Var<'t, T> {
        let value = f(&self.value());
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(
        self,
        other: Var<'t, T>,
        op: Op<T>,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Var<'t, T>> {
        let value = f(&self.value(), &other.value())?;
        let requires = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, op, requires))
    }

    /// 2-D matrix product.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::MatMul(self.id, other.id), kernels::matmul)
    }

    /// Elementwise sum; `other` may broadcast over leading dimensions.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| {
            kernels::broadcast_zip(a, b, |x, y| x + y)
        })
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| {
            kernels::broadcast_zip(a, b, |x, y| x - y)
        })
    }

    /// Elementwise product; `other` may broadcast over leading dimensions.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            kernels::broadcast_zip(a, b, |x, y| x * y)
        })
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.unary(Op::Scale(self.id, c), |a| kernels::map(a, |x| x * c))
    }

    pub fn transpose(self) -> Result<Var<'t, T>> {
        let value = kernels::transpose(&self.value())?;
        Ok(self.tape.push(value, Op::Transpose(self.id), self.requires_grad()))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().clone().reshaped(shape)?;
        Ok(self.tape.push(value, Op::Reshape(self.id), self.requires_grad()))
    }

    /// Sub-range `[start, end)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t, T>> {
        let value = kernels::slice(&self.value(), axis, start, end)?;
        Ok(self.tape.push(
            value,
            Op::Slice {
                src: self.id,
                axis,
                start,
            },
            self.requires_grad(),
        ))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let value = kernels::softmax(&self.value(), axis)?;
        Ok(self
            .tape
            .push(value, Op::Softmax { src: self.id, axis }, self.requires_grad()))
    }

    /// Normalize to zero mean and unit variance along `axis` (no affine).
    pub fn layer_norm(self, axis: usize, eps: T) -> Result<Var<'t, T>> {
        let (value, inv_std) = kernels::layer_norm(&self.value(), axis, eps)?;
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                src: self.id,
                axis,
                inv_std,
            },
            self.requires_grad(),
        ))
    }

    pub fn gelu(self) -> Var<'t, T> {
        self.unary(Op::Gelu(self.id), |a| kernels::map(a, kernels::gelu))
    }

    pub fn swish(self) -> Var<'t, T> {
        self.unary(Op::Swish(self.id), |a| kernels::map(a, kernels::swish))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(Op::Sigmoid(self.id), |a| kernels::map(a, kernels::sigmoid))
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(Op::Tanh(self.id), |a| kernels::map(a, |x| x.tanh()))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(Op::Relu(self.id), |a| kernels::map(a, |x| x.max(T::zero())))
    }

    /// Depthwise 1-D convolution over time with "same" zero padding.
    ///
    /// `self` is `T x C`, `weight` is `K x C` with odd `K`.
    pub fn conv1d_depthwise(self, weight: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(
            weight,
            Op::DepthwiseConv1d {
                x: self.id,
                w: weight.id,
            },
            kernels::depthwise_conv1d,
        )
    }

    /// Gated linear unit over the last axis: `a * sigmoid(b)` for halves `[a | b]`.
    pub fn glu(self) -> Result<Var<'t, T>> {
        let value = kernels::glu(&self.value())?;
        Ok(self.tape.push(value, Op::Glu(self.id), self.requires_grad()))
    }

    /// Rows of a `V x D` table selected by `ids`, giving `ids.len() x D`.
    pub fn embedding_lookup(self, ids: &[usize]) -> Result<Var<'t, T>> {
        let value = kernels::gather_rows(&self.value(), ids)?;
        Ok(self.tape.push(
            value,
            Op::Gather {
                table: self.id,
                ids: ids.to_vec(),
            },
            self.requires_grad(),
        ))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(self, axis: usize) -> Result<Var<'t, T>> {
        let value = kernels::mean_axis(&self.value(), axis)?;
        Ok(self
            .tape
            .push(value, Op::Mean { src: self.id, axis }, self.requires_grad()))
    }

    pub fn sum(self) -> Var<'t, T> {
        self.unary(Op::Sum(self.id), |a| {
            Tensor::scalar(a.data().iter().copied().sum())
        })
    }

    /// Softmax cross-entropy of `N x C` logits, averaged over rows where `mask` is set.
    pub fn cross_entropy(self, targets: &[usize], mask: &[bool]) -> Result<Var<'t, T>> {
        let (loss, probs, count) = kernels::cross_entropy(&self.value(), targets, mask)?;
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            self.requires_grad(),
        ))
    }

    /// Mean binary cross-entropy of logits against 0/1 targets of the same shape.
    pub fn bce_with_logits(self, targets: &[T]) -> Result<Var<'t, T>> {
        let loss = kernels::bce_with_logits(&self.value(), targets)?;
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits: self.id,
                targets: targets.to_vec(),
            },
            self.requires_grad(),
        ))
    }
}
