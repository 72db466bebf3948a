//! Reverse-mode differentiation over a linear operation tape.
//!
//! Every operation appends one node holding its computed value. Nodes are
//! only ever appended, so creation order is a topological order and the
//! backward pass is a single reverse sweep. [`Tape::backward`] consumes the
//! tape.

use std::sync::Arc;

use super::gemm::{gemm, Strides};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean mask over the last two axes of a softmax input; `true` keeps an entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::shape("mask", format!("{rows}x{cols} vs {}", keep.len())));
        }
        Ok(Mask { rows, cols, keep })
    }

    pub fn keep(&self, row: usize, col: usize) -> bool {
        self.keep[row * self.cols + col]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        dims: MatMulDims,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache,
    },
    NodeNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache,
    },
    OuterSum(Var, Var),
    SwapLeading(Var),
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Huber {
        pred: Var,
        target: Var,
        delta: f64,
    },
}

#[derive(Debug, Clone, Copy)]
struct MatMulDims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

/// Normalized values and per-group inverse scale, kept for the backward pass.
#[derive(Debug)]
struct NormCache {
    xhat: Vec<f64>,
    inv_sigma: Vec<f64>,
    floored: Vec<bool>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of tensor operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a consumed tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.grads[v.0].take() {
            Some(g) => Tensor::new(shape, g).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn pad3(shape: &[usize]) -> [usize; 3] {
    let mut out = [1; 3];
    let off = 3 - shape.len();
    out[off..].copy_from_slice(shape);
    out
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let (pa, pb) = (pad3(a), pad3(b));
    let mut out = Vec::with_capacity(nd);
    for ax in (3 - nd)..3 {
        let (x, y) = (pa[ax], pb[ax]);
        if x != y && x != 1 && y != 1 {
            return Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}")));
        }
        out.push(x.max(y));
    }
    Ok(out)
}

/// Flat input offsets for each output element under broadcasting.
fn broadcast_index(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let po = pad3(out);
    let pi = pad3(inp);
    let strides = [pi[1] * pi[2], pi[2], 1];
    let mut idx = Vec::with_capacity(po.iter().product());
    for i0 in 0..po[0] {
        let o0 = if pi[0] == 1 { 0 } else { i0 * strides[0] };
        for i1 in 0..po[1] {
            let o1 = if pi[1] == 1 { 0 } else { i1 * strides[1] };
            for i2 in 0..po[2] {
                let o2 = if pi[2] == 1 { 0 } else { i2 };
                idx.push(o0 + o1 + o2);
            }
        }
    }
    idx
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push_unchecked(value, op, needs))
    }

    /// Batched matrix product `op(a) * op(b)`, where `op` optionally swaps the
    /// last two axes. A 2-D operand is shared across the batch of a 3-D one,
    /// as is a 3-D operand with batch size one.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}: need >= 2 dims")));
        }
        let (ba, ra, ca) = split_batch(&sa);
        let (bb, rb, cb) = split_batch(&sb);
        let (m, ka) = if ta { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if tb { (cb, rb) } else { (rb, cb) };
        if ka != kb {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}: inner dims differ")));
        }
        if ba != bb && ba != 1 && bb != 1 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}: batch mismatch")));
        }
        let batch = ba.max(bb);
        let dims = MatMulDims {
            batch,
            a_batched: ba > 1,
            b_batched: bb > 1,
            m,
            k: ka,
            n,
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let stra = Strides::row_major(ca, ta);
            let strb = Strides::row_major(cb, tb);
            for bi in 0..batch {
                let ao = if dims.a_batched { bi * m * ka } else { 0 };
                let bo = if dims.b_batched { bi * ka * n } else { 0 };
                gemm(
                    m,
                    ka,
                    n,
                    &av[ao..],
                    stra,
                    &bv[bo..],
                    strb,
                    0.0,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    Strides::row_major(n, false),
                );
            }
        }
        let shape: Vec<usize> = if sa.len() == 3 || sb.len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let value = Tensor::new(&shape, out)?;
        self.push("matmul", value, Op::MatMul { a, b, ta, tb, dims }, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `x * w (+ bias)` with the bias broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => {
                let n = *self.shape(y).last().unwrap_or(&0);
                if self.shape(b) != [n] {
                    return Err(Error::shape(
                        "linear",
                        format!("bias {:?} for output width {n}", self.shape(b)),
                    ));
                }
                self.add(y, b)
            }
            None => Ok(y),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let value = if sa == sb {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            Tensor::new(&sa, av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect())?
        } else {
            let shape = broadcast_shape(name, &sa, &sb)?;
            let ia = broadcast_index(&shape, &sa);
            let ib = broadcast_index(&shape, &sb);
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let data = ia.iter().zip(&ib).map(|(&i, &j)| f(av[i], bv[j])).collect();
            Tensor::new(&shape, data)?
        };
        self.push(name, value, op, &[a, b])
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * c);
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", value, Op::LeakyRelu(a, slope), &[a])
    }

    /// Softmax over the last axis, after subtracting each row's maximum.
    ///
    /// Masked-out entries get probability zero; a row with every entry masked
    /// is an error.
    pub fn softmax(&mut self, a: Var, mask: Option<Arc<Mask>>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().ok_or_else(|| Error::Argument("softmax of a scalar".into()))?;
        if cols == 0 {
            return Err(Error::Argument("softmax of an empty vector".into()));
        }
        let rows_per_batch = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
        if let Some(m) = &mask {
            if m.cols != cols || m.rows != rows_per_batch {
                return Err(Error::shape(
                    "softmax",
                    format!("mask {}x{} for input {shape:?}", m.rows, m.cols),
                ));
            }
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for (r, (row, orow)) in x.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
            let mr = r % rows_per_batch;
            let keep = |c: usize| mask.as_ref().is_none_or(|m| m.keep(mr, c));
            let mut max = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if keep(c) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::Argument(format!("softmax row {r} has no unmasked entries")));
            }
            let mut total = 0.0;
            for (c, (&v, o)) in row.iter().zip(orow.iter_mut()).enumerate() {
                if keep(c) {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push("softmax", value, Op::Softmax(a), &[a])
    }

    /// Normalizes each last-axis slice to zero mean and unit population
    /// deviation (deviation floored at `eps`), then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let f = *shape.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if f == 0 || self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {shape:?}, gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let xv = self.value(x).data();
        let groups = xv.len() / f;
        let mut cache = NormCache {
            xhat: vec![0.0; xv.len()],
            inv_sigma: vec![0.0; groups],
            floored: vec![false; groups],
        };
        for (gi, row) in xv.chunks(f).enumerate() {
            let mu = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / f as f64;
            let sd = var.sqrt();
            let sigma = sd.max(eps);
            cache.floored[gi] = sd < eps;
            cache.inv_sigma[gi] = 1.0 / sigma;
            for (c, &v) in row.iter().enumerate() {
                cache.xhat[gi * f + c] = (v - mu) / sigma;
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let out = cache
            .xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| g[i % f] * h + b[i % f])
            .collect();
        let value = Tensor::new(&shape, out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
            &[x, gamma, beta],
        )
    }

    /// Per-node normalization of a `[time, nodes, features]` window.
    ///
    /// Each node's statistics are taken jointly over every time step and
    /// feature; `gamma[j]` and `beta[j]` rescale node `j` afterwards.
    pub fn node_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::shape("node_norm", format!("expected [time, nodes, features], got {shape:?}")));
        }
        let (t, n, f) = (shape[0], shape[1], shape[2]);
        if self.shape(gamma) != [n] || self.shape(beta) != [n] || t * f == 0 {
            return Err(Error::shape(
                "node_norm",
                format!("input {shape:?}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let xv = self.value(x).data();
        let count = (t * f) as f64;
        let mut cache = NormCache {
            xhat: vec![0.0; xv.len()],
            inv_sigma: vec![0.0; n],
            floored: vec![false; n],
        };
        for j in 0..n {
            let slice = |i: usize| &xv[(i * n + j) * f..(i * n + j + 1) * f];
            let mu = (0..t).map(|i| slice(i).iter().sum::<f64>()).sum::<f64>() / count;
            let var = (0..t)
                .map(|i| slice(i).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>())
                .sum::<f64>()
                / count;
            let sd = var.sqrt();
            let sigma = sd.max(eps);
            cache.floored[j] = sd < eps;
            cache.inv_sigma[j] = 1.0 / sigma;
            for i in 0..t {
                let base = (i * n + j) * f;
                for c in 0..f {
                    cache.xhat[base + c] = (xv[base + c] - mu) / sigma;
                }
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let out = cache
            .xhat
            .iter()
            .enumerate()
            .map(|(idx, &h)| {
                let j = (idx / f) % n;
                g[j] * h + b[j]
            })
            .collect();
        let value = Tensor::new(&shape, out)?;
        self.push(
            "node_norm",
            value,
            Op::NodeNorm {
                x,
                gamma,
                beta,
                cache,
            },
            &[x, gamma, beta],
        )
    }

    /// `out[b, i, j] = u[b, i] + v[b, j]`.
    pub fn outer_sum(&mut self, u: Var, v: Var) -> Result<Var> {
        let su = self.shape(u).to_vec();
        let sv = self.shape(v).to_vec();
        if su.len() != 2 || sv.len() != 2 || su[0] != sv[0] {
            return Err(Error::shape("outer_sum", format!("{su:?} and {sv:?}")));
        }
        let (b, n, m) = (su[0], su[1], sv[1]);
        let uv = self.value(u).data();
        let vv = self.value(v).data();
        let mut out = Vec::with_capacity(b * n * m);
        for bi in 0..b {
            for i in 0..n {
                let x = uv[bi * n + i];
                out.extend(vv[bi * m..(bi + 1) * m].iter().map(|&y| x + y));
            }
        }
        let value = Tensor::new(&[b, n, m], out)?;
        self.push("outer_sum", value, Op::OuterSum(u, v), &[u, v])
    }

    /// Swaps the first two axes of a 3-D tensor.
    pub fn swap_leading(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("swap_leading", format!("{s:?}")));
        }
        let value = Tensor::new(&[s[1], s[0], s[2]], swap01(self.value(a).data(), s[0], s[1], s[2]))?;
        self.push("swap_leading", value, Op::SwapLeading(a), &[a])
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape("narrow", format!("{s:?} axis {axis} [{start}, {})", start + len)));
        }
        let (outer, dim, inner) = axis_split(&s, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        let value = Tensor::new(&shape, out)?;
        self.push("narrow", value, Op::Narrow { a, axis, start }, &[a])
    }

    /// Joins tensors along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat of nothing".into()))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {s0:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == s0.len()
                && s.iter().zip(&s0).enumerate().all(|(ax, (x, y))| ax == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{s0:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&s0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let d = self.shape(p)[axis];
                let src = self.value(p).data();
                out.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        self.push(
            "concat",
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Argument("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", value, Op::Mean(a), &[a])
    }

    /// Mean Huber loss between equally shaped tensors.
    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(
                "huber",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let value = Tensor::scalar(super::huber_loss(self.value(pred), self.value(target), delta)?);
        self.push("huber", value, Op::Huber { pred, target, delta }, &[pred, target])
    }

    /// Reverse sweep from the scalar `root`, consuming the tape.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be a scalar, got {:?}", self.shape(root)),
            ));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if node.needs_grad {
                propagate(&nodes, &mut grads, node, &g);
            }
            grads[idx] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn split_batch(s: &[usize]) -> (usize, usize, usize) {
    match s.len() {
        2 => (1, s[0], s[1]),
        _ => (s[0], s[1], s[2]),
    }
}

fn axis_split(s: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = s[..axis].iter().product();
    let inner = s[axis + 1..].iter().product();
    (outer, s[axis], inner)
}

fn swap01(src: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..a {
        for j in 0..b {
            out[(j * a + i) * c..(j * a + i + 1) * c]
                .copy_from_slice(&src[(i * b + j) * c..(i * b + j + 1) * c]);
        }
    }
    out
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

/// Accumulates `g` (shaped like `out`) into an input that was broadcast to `out`.
fn accumulate_broadcast(dst: &mut [f64], g: &[f64], out: &[usize], inp: &[usize], f: impl Fn(usize, usize) -> f64) {
    if out == inp {
        for (i, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
            *d += gv * f(i, i);
        }
    } else {
        for (o, &i) in broadcast_index(out, inp).iter().enumerate() {
            dst[i] += g[o] * f(o, i);
        }
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| &nodes[v.0].value;
    let out_shape = node.value.shape();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, ta, tb, dims } => {
            let MatMulDims {
                batch,
                a_batched,
                b_batched,
                m,
                k,
                n,
            } = *dims;
            let (a_cols, b_cols) = (
                *val(*a).shape().last().unwrap(),
                *val(*b).shape().last().unwrap(),
            );
            let sa = Strides::row_major(a_cols, *ta);
            let sb = Strides::row_major(b_cols, *tb);
            let sg = Strides::row_major(n, false);
            if let Some(da) = slot(grads, nodes, *a) {
                let bv = val(*b).data();
                for bi in 0..batch {
                    let ao = if a_batched { bi * m * k } else { 0 };
                    let bo = if b_batched { bi * k * n } else { 0 };
                    // d op(a) = g * op(b)^T, written through op's strides.
                    gemm(m, n, k, &g[bi * m * n..], sg, &bv[bo..], sb.t(), 1.0, &mut da[ao..], sa);
                }
            }
            if let Some(db) = slot(grads, nodes, *b) {
                let av = val(*a).data();
                for bi in 0..batch {
                    let ao = if a_batched { bi * m * k } else { 0 };
                    let bo = if b_batched { bi * k * n } else { 0 };
                    gemm(k, m, n, &av[ao..], sa.t(), &g[bi * m * n..], sg, 1.0, &mut db[bo..], sb);
                }
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if let Some(da) = slot(grads, nodes, *a) {
                accumulate_broadcast(da, g, out_shape, val(*a).shape(), |_, _| 1.0);
            }
            if let Some(db) = slot(grads, nodes, *b) {
                accumulate_broadcast(db, g, out_shape, val(*b).shape(), |_, _| sign);
            }
        }
        Op::Mul(a, b) => {
            let (sa, sb) = (val(*a).shape(), val(*b).shape());
            let ia = (sa != out_shape).then(|| broadcast_index(out_shape, sa));
            let ib = (sb != out_shape).then(|| broadcast_index(out_shape, sb));
            let (av, bv) = (val(*a).data(), val(*b).data());
            let at = |o: usize| ia.as_ref().map_or(o, |ix| ix[o]);
            let bt = |o: usize| ib.as_ref().map_or(o, |ix| ix[o]);
            if let Some(da) = slot(grads, nodes, *a) {
                for (o, &gv) in g.iter().enumerate() {
                    da[at(o)] += gv * bv[bt(o)];
                }
            }
            if let Some(db) = slot(grads, nodes, *b) {
                for (o, &gv) in g.iter().enumerate() {
                    db[bt(o)] += gv * av[at(o)];
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(da) = slot(grads, nodes, *a) {
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d += gv * c;
                }
            }
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            if let Some(da) = slot(grads, nodes, *a) {
                for ((d, &gv), &xv) in da.iter_mut().zip(g).zip(x) {
                    if xv > 0.0 {
                        *d += gv;
                    }
                }
            }
        }
        Op::LeakyRelu(a, slope) => {
            let x = val(*a).data();
            if let Some(da) = slot(grads, nodes, *a) {
                for ((d, &gv), &xv) in da.iter_mut().zip(g).zip(x) {
                    *d += if xv > 0.0 { gv } else { gv * slope };
                }
            }
        }
        Op::Softmax(a) => {
            let y = node.value.data();
            let cols = *out_shape.last().unwrap();
            if let Some(da) = slot(grads, nodes, *a) {
                for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(da.chunks_mut(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d += yv * (gv - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            cache,
        } => {
            let f = *out_shape.last().unwrap();
            let gam = val(*gamma).data();
            if let Some(dg) = slot(grads, nodes, *gamma) {
                for (i, &gv) in g.iter().enumerate() {
                    dg[i % f] += gv * cache.xhat[i];
                }
            }
            if let Some(db) = slot(grads, nodes, *beta) {
                for (i, &gv) in g.iter().enumerate() {
                    db[i % f] += gv;
                }
            }
            if let Some(dx) = slot(grads, nodes, *x) {
                let mut gh = vec![0.0; f];
                let mut idx = Vec::with_capacity(f);
                for grp in 0..g.len() / f {
                    idx.clear();
                    idx.extend(grp * f..(grp + 1) * f);
                    for (c, &i) in idx.iter().enumerate() {
                        gh[c] = g[i] * gam[c];
                    }
                    norm_backward(dx, &gh, &idx, cache, grp);
                }
            }
        }
        Op::NodeNorm {
            x,
            gamma,
            beta,
            cache,
        } => {
            let (t, n, f) = (out_shape[0], out_shape[1], out_shape[2]);
            let node_of = |i: usize| (i / f) % n;
            if let Some(dg) = slot(grads, nodes, *gamma) {
                for (i, &gv) in g.iter().enumerate() {
                    dg[node_of(i)] += gv * cache.xhat[i];
                }
            }
            if let Some(db) = slot(grads, nodes, *beta) {
                for (i, &gv) in g.iter().enumerate() {
                    db[node_of(i)] += gv;
                }
            }
            let gam = val(*gamma).data();
            if let Some(dx) = slot(grads, nodes, *x) {
                let mut idx = Vec::with_capacity(t * f);
                let mut gh = Vec::with_capacity(t * f);
                for j in 0..n {
                    idx.clear();
                    gh.clear();
                    for i in 0..t {
                        let base = (i * n + j) * f;
                        idx.extend(base..base + f);
                    }
                    gh.extend(idx.iter().map(|&i| g[i] * gam[j]));
                    norm_backward(dx, &gh, &idx, cache, j);
                }
            }
        }
        Op::OuterSum(u, v) => {
            let s = out_shape;
            let (b, n, m) = (s[0], s[1], s[2]);
            if let Some(du) = slot(grads, nodes, *u) {
                for bi in 0..b {
                    for i in 0..n {
                        let row = &g[(bi * n + i) * m..(bi * n + i + 1) * m];
                        du[bi * n + i] += row.iter().sum::<f64>();
                    }
                }
            }
            if let Some(dv) = slot(grads, nodes, *v) {
                for bi in 0..b {
                    for i in 0..n {
                        let row = &g[(bi * n + i) * m..(bi * n + i + 1) * m];
                        for (d, &gv) in dv[bi * m..(bi + 1) * m].iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
        }
        Op::SwapLeading(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                let back = swap01(g, out_shape[0], out_shape[1], out_shape[2]);
                for (d, v) in da.iter_mut().zip(back) {
                    *d += v;
                }
            }
        }
        Op::Narrow { a, axis, start } => {
            let src_shape = val(*a).shape().to_vec();
            if let Some(da) = slot(grads, nodes, *a) {
                let (outer, dim, inner) = axis_split(&src_shape, *axis);
                let len = out_shape[*axis];
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    for (d, &gv) in da[base..base + len * inner].iter_mut().zip(src) {
                        *d += gv;
                    }
                }
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = axis_split(out_shape, *axis);
            let mut offset = 0;
            for &p in parts {
                let d = val(p).shape()[*axis];
                if let Some(dp) = slot(grads, nodes, p) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + d) * inner];
                        for (x, &gv) in dp[o * d * inner..(o + 1) * d * inner].iter_mut().zip(src) {
                            *x += gv;
                        }
                    }
                }
                offset += d;
            }
        }
        Op::Reshape(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        Op::Sum(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::Mean(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                let s = g[0] / da.len() as f64;
                for d in da.iter_mut() {
                    *d += s;
                }
            }
        }
        Op::Huber {
            pred,
            target,
            delta,
        } => {
            let (p, t) = (val(*pred).data(), val(*target).data());
            let scale = g[0] / p.len() as f64;
            let clipped = |i: usize| (p[i] - t[i]).clamp(-delta, *delta) * scale;
            if let Some(dp) = slot(grads, nodes, *pred) {
                for (i, d) in dp.iter_mut().enumerate() {
                    *d += clipped(i);
                }
            }
            if let Some(dt) = slot(grads, nodes, *target) {
                for (i, d) in dt.iter_mut().enumerate() {
                    *d -= clipped(i);
                }
            }
        }
    }
}

/// Backward of `xhat = (x - mu) / sigma` for one normalization group, given
/// `gh = dL/dxhat` over the group's flat indices.
fn norm_backward(dx: &mut [f64], gh: &[f64], idx: &[usize], cache: &NormCache, group: usize) {
    let count = idx.len() as f64;
    let inv = cache.inv_sigma[group];
    let mean_g = gh.iter().sum::<f64>() / count;
    if cache.floored[group] {
        // sigma is the constant floor here, so only the mean path remains.
        for (&i, &gv) in idx.iter().zip(gh) {
            dx[i] += (gv - mean_g) * inv;
        }
        return;
    }
    let mean_gx = idx
        .iter()
        .zip(gh)
        .map(|(&i, &gv)| gv * cache.xhat[i])
        .sum::<f64>()
        / count;
    for (&i, &gv) in idx.iter().zip(gh) {
        dx[i] += (gv - mean_g - cache.xhat[i] * mean_gx) * inv;
    }
}
