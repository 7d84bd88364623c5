//! Reverse-mode tape over dense tensors.
//!
//! Nodes are appended in evaluation order, so creation order is a valid
//! topological order and the backward pass is a single reverse sweep.
//! Every node keeps the inputs it needs for its own gradient.
//!
//! Reductions whose operands are indexed by an unordered set (softmax
//! denominators and attention-weighted sums) are accumulated in a canonical
//! order determined by the operand values, which makes attention layers
//! exactly equivariant to permutations of their tokens.

use std::cmp::Ordering;

use super::{NumericsError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddSuffix(Var, Var),
    MulSuffix(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax { x: Var, beta: f64 },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    BmmNt(Var, Var),
    Attend(Var, Var),
    Select { x: Var, axis: usize, index: usize },
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    tensor: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Variance floor inside [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A computation tape. One graph belongs to one training context.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NumericsError {
    NumericsError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl Graph {
    /// New tape. Non-finite checks are on in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var, NumericsError> {
        if self.check_finite && !tensor.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            tensor,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. Leaves flagged `requires_grad` receive gradients.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var, NumericsError> {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs, "leaf")
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, mut tensor: Tensor) -> Result<Var, NumericsError> {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    /// Records a copy of `tensor` as a trainable leaf.
    pub fn param(&mut self, tensor: &Tensor) -> Result<Var, NumericsError> {
        let mut t = Tensor::new(tensor.shape().to_vec(), tensor.values().to_vec())?;
        t.set_requires_grad(true);
        self.leaf(t)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad()
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.tensor.zero_grad();
        }
    }

    /// `x W + b` over the last axis of `x`; `b` is optional.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] {
            return Err(shape_err("affine", &xs, &ws));
        }
        let (inp, out) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(shape_err("affine(bias)", self.shape(b), &[out]));
            }
        }
        let rows = self.tensor(x).len() / inp;
        let mut y = vec![0.0; rows * out];
        matmul_into(self.value(x), self.value(w), &mut y, rows, inp, out);
        if let Some(b) = b {
            let bv = self.value(b);
            for row in y.chunks_exact_mut(out) {
                for (yi, bi) in row.iter_mut().zip(bv) {
                    *yi += bi;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = out;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::new(shape, y)?, Op::Affine { x, w, b }, needs, "affine")
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        self.affine(x, w, None)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_op(&mut self, a: Var, b: Var, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, NumericsError> {
        self.same_shape(name, a, b)?;
        let y: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| f(p, q)).collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, y)?, op, needs, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_op(a, b, "add", Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_op(a, b, "sub", Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_op(a, b, "mul", Op::Mul(a, b), |p, q| p * q)
    }

    fn suffix_len(&self, name: &'static str, a: Var, b: Var) -> Result<usize, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err(name, sa, sb));
        }
        Ok(self.tensor(b).len())
    }

    /// `a + b` with `b` broadcast over the leading axes of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let n = self.suffix_len("add_broadcast", a, b)?;
        let bv = self.value(b);
        let mut y = self.value(a).to_vec();
        for chunk in y.chunks_exact_mut(n) {
            for (yi, bi) in chunk.iter_mut().zip(bv) {
                *yi += bi;
            }
        }
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, y)?, Op::AddSuffix(a, b), needs, "add_broadcast")
    }

    /// `a ∘ b` with `b` broadcast over the leading axes of `a`.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let n = self.suffix_len("mul_broadcast", a, b)?;
        let bv = self.value(b);
        let mut y = self.value(a).to_vec();
        for chunk in y.chunks_exact_mut(n) {
            for (yi, bi) in chunk.iter_mut().zip(bv) {
                *yi *= bi;
            }
        }
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, y)?, Op::MulSuffix(a, b), needs, "mul_broadcast")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumericsError> {
        let y = self.value(a).iter().map(|v| v * c).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, y)?, Op::Scale(a, c), needs, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let y = self.value(a).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, y)?, Op::Relu(a), needs, "relu")
    }

    /// Temperature softmax over the last axis: `softmax(z / beta)`.
    pub fn softmax(&mut self, z: Var, beta: f64) -> Result<Var, NumericsError> {
        if !(beta > 0.0) {
            return Err(NumericsError::Invalid {
                op: "softmax",
                msg: format!("temperature must be positive, got {beta}"),
            });
        }
        let shape = self.shape(z).to_vec();
        let n = *shape.last().ok_or_else(|| NumericsError::Invalid {
            op: "softmax",
            msg: "scalar input".into(),
        })?;
        let mut y = self.value(z).to_vec();
        let mut scratch = Vec::with_capacity(n);
        for row in y.chunks_exact_mut(n) {
            softmax_row(row, beta, &mut scratch);
        }
        let needs = self.needs(z);
        self.push(Tensor::new(shape, y)?, Op::Softmax { x: z, beta }, needs, "softmax")
    }

    /// Layer normalization over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err("layer_norm", &shape, self.shape(gain)));
        }
        let rows = self.tensor(x).len() / d;
        let mut normed = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; rows * d];
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for k in 0..d {
                let nk = (row[k] - mean) * is;
                normed[r * d + k] = nk;
                y[r * d + k] = nk * gv[k] + bv[k];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normed,
            inv_std,
        };
        self.push(Tensor::new(shape, y)?, op, needs, "layer_norm")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.tensor(x).reshaped(shape.to_vec())?;
        let needs = self.needs(x);
        self.push(t, Op::Reshape(x), needs, "reshape")
    }

    /// Axis permutation: output axis `k` is input axis `axes[k]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err("permute", &shape, axes));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let y = permute_values(self.value(x), &shape, axes);
        let needs = self.needs(x);
        let op = Op::Permute {
            x,
            axes: axes.to_vec(),
        };
        self.push(Tensor::new(out_shape, y)?, op, needs, "permute")
    }

    /// Batched `a bᵀ`: `[B, n, k] × [B, m, k] → [B, n, m]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(shape_err("bmm_nt", &sa, &sb));
        }
        let (bsz, n, k, m) = (sa[0], sa[1], sa[2], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut y = vec![0.0; bsz * n * m];
        for bi in 0..bsz {
            for i in 0..n {
                let ar = &av[(bi * n + i) * k..(bi * n + i + 1) * k];
                for j in 0..m {
                    let br = &bv[(bi * m + j) * k..(bi * m + j + 1) * k];
                    y[(bi * n + i) * m + j] = dot(ar, br);
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![bsz, n, m], y)?, Op::BmmNt(a, b), needs, "bmm_nt")
    }

    /// Batched weighted sum `[B, n, m] × [B, m, k] → [B, n, k]`.
    ///
    /// Each output row accumulates its `m` terms in an order fixed by the
    /// weight and the value row, so permuting the `m` axis of both operands
    /// leaves every output bit-identical.
    pub fn attend(&mut self, weights: Var, values: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(weights).to_vec(), self.shape(values).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("attend", &sa, &sb));
        }
        let (bsz, n, m, k) = (sa[0], sa[1], sa[2], sb[2]);
        let (av, vv) = (self.value(weights), self.value(values));
        let mut y = vec![0.0; bsz * n * k];
        let mut order: Vec<usize> = Vec::with_capacity(m);
        for bi in 0..bsz {
            let vblock = &vv[bi * m * k..(bi + 1) * m * k];
            for i in 0..n {
                let arow = &av[(bi * n + i) * m..(bi * n + i + 1) * m];
                order.clear();
                order.extend(0..m);
                order.sort_by(|&p, &q| {
                    arow[p].total_cmp(&arow[q]).then_with(|| {
                        cmp_rows(&vblock[p * k..(p + 1) * k], &vblock[q * k..(q + 1) * k])
                    })
                });
                let out = &mut y[(bi * n + i) * k..(bi * n + i + 1) * k];
                for &j in &order {
                    let w = arow[j];
                    for (o, v) in out.iter_mut().zip(&vblock[j * k..(j + 1) * k]) {
                        *o += w * v;
                    }
                }
            }
        }
        let needs = self.needs(weights) || self.needs(values);
        self.push(Tensor::new(vec![bsz, n, k], y)?, Op::Attend(weights, values), needs, "attend")
    }

    /// Slice at `index` along `axis`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(NumericsError::Invalid {
                op: "select",
                msg: format!("index {index} on axis {axis} of shape {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let xv = self.value(x);
        let mut y = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * n + index) * inner;
            y.extend_from_slice(&xv[start..start + inner]);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let needs = self.needs(x);
        self.push(Tensor::new(out_shape, y)?, Op::Select { x, axis, index }, needs, "select")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let s = self.value(x).iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs, "sum")
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients are added into the `grad` slot of every leaf that requires
    /// one; calling twice without [`Graph::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.tensor(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(gy);
                continue;
            }
            self.backprop_node(idx, &gy, &mut grads);
        }
        for (idx, g) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[idx];
            if let (Some(g), Op::Leaf) = (g, &node.op) {
                if node.tensor.requires_grad() {
                    node.tensor.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.tensor.values();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[v.0].needs_grad {
                let len = self.nodes[v.0].tensor.len();
                let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                f(g);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let ws = self.shape(*w);
                let (inp, outd) = (ws[0], ws[1]);
                let xv = self.value(*x);
                let wv = self.value(*w);
                let rows = xv.len() / inp;
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let gyr = &gy[r * outd..(r + 1) * outd];
                        for k in 0..inp {
                            gx[r * inp + k] += dot(gyr, &wv[k * outd..(k + 1) * outd]);
                        }
                    }
                });
                acc(*w, &mut |gw| {
                    for r in 0..rows {
                        let gyr = &gy[r * outd..(r + 1) * outd];
                        for k in 0..inp {
                            let xk = xv[r * inp + k];
                            if xk != 0.0 {
                                axpy(xk, gyr, &mut gw[k * outd..(k + 1) * outd]);
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |gb| {
                        for row in gy.chunks_exact(outd) {
                            axpy(1.0, row, gb);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| axpy(1.0, gy, g));
                acc(*b, &mut |g| axpy(1.0, gy, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| axpy(1.0, gy, g));
                acc(*b, &mut |g| axpy(-1.0, gy, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |g| {
                    for ((gi, gyi), bi) in g.iter_mut().zip(gy).zip(bv) {
                        *gi += gyi * bi;
                    }
                });
                acc(*b, &mut |g| {
                    for ((gi, gyi), ai) in g.iter_mut().zip(gy).zip(av) {
                        *gi += gyi * ai;
                    }
                });
            }
            Op::AddSuffix(a, b) => {
                let n = self.tensor(*b).len();
                acc(*a, &mut |g| axpy(1.0, gy, g));
                acc(*b, &mut |g| {
                    for chunk in gy.chunks_exact(n) {
                        axpy(1.0, chunk, g);
                    }
                });
            }
            Op::MulSuffix(a, b) => {
                let n = self.tensor(*b).len();
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |g| {
                    for (gc, gyc) in g.chunks_exact_mut(n).zip(gy.chunks_exact(n)) {
                        for k in 0..n {
                            gc[k] += gyc[k] * bv[k];
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for (ac, gyc) in av.chunks_exact(n).zip(gy.chunks_exact(n)) {
                        for k in 0..n {
                            g[k] += gyc[k] * ac[k];
                        }
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |g| axpy(*c, gy, g)),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, &mut |g| {
                    for ((gi, gyi), ai) in g.iter_mut().zip(gy).zip(av) {
                        if *ai > 0.0 {
                            *gi += gyi;
                        }
                    }
                });
            }
            Op::Softmax { x, beta } => {
                let n = *node.tensor.shape().last().unwrap();
                acc(*x, &mut |g| {
                    for ((gr, yr), gyr) in g.chunks_exact_mut(n).zip(out.chunks_exact(n)).zip(gy.chunks_exact(n)) {
                        let s = dot(yr, gyr);
                        for k in 0..n {
                            gr[k] += yr[k] * (gyr[k] - s) / beta;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let d = self.tensor(*gain).len();
                let gv = self.value(*gain);
                acc(*x, &mut |g| {
                    let mut dn = vec![0.0; d];
                    for (r, is) in inv_std.iter().enumerate() {
                        let gyr = &gy[r * d..(r + 1) * d];
                        let nr = &normed[r * d..(r + 1) * d];
                        for k in 0..d {
                            dn[k] = gyr[k] * gv[k];
                        }
                        let mean_dn = dn.iter().sum::<f64>() / d as f64;
                        let mean_dn_n = dot(&dn, nr) / d as f64;
                        for k in 0..d {
                            g[r * d + k] += is * (dn[k] - mean_dn - nr[k] * mean_dn_n);
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for (gyr, nr) in gy.chunks_exact(d).zip(normed.chunks_exact(d)) {
                        for k in 0..d {
                            g[k] += gyr[k] * nr[k];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for gyr in gy.chunks_exact(d) {
                        axpy(1.0, gyr, g);
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |g| axpy(1.0, gy, g)),
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (k, &a) in axes.iter().enumerate() {
                    inverse[a] = k;
                }
                let back = permute_values(gy, node.tensor.shape(), &inverse);
                acc(*x, &mut |g| axpy(1.0, &back, g));
            }
            Op::BmmNt(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bsz, n, k, m) = (sa[0], sa[1], sa[2], sb[1]);
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |g| {
                    for bi in 0..bsz {
                        for i in 0..n {
                            let gr = &mut g[(bi * n + i) * k..(bi * n + i + 1) * k];
                            for j in 0..m {
                                let c = gy[(bi * n + i) * m + j];
                                axpy(c, &bv[(bi * m + j) * k..(bi * m + j + 1) * k], gr);
                            }
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for bi in 0..bsz {
                        for i in 0..n {
                            let ar = &av[(bi * n + i) * k..(bi * n + i + 1) * k];
                            for j in 0..m {
                                let c = gy[(bi * n + i) * m + j];
                                axpy(c, ar, &mut g[(bi * m + j) * k..(bi * m + j + 1) * k]);
                            }
                        }
                    }
                });
            }
            Op::Attend(a, v) => {
                let (sa, sv) = (self.shape(*a), self.shape(*v));
                let (bsz, n, m, k) = (sa[0], sa[1], sa[2], sv[2]);
                let (av, vv) = (self.value(*a), self.value(*v));
                acc(*a, &mut |g| {
                    for bi in 0..bsz {
                        for i in 0..n {
                            let gyr = &gy[(bi * n + i) * k..(bi * n + i + 1) * k];
                            for j in 0..m {
                                g[(bi * n + i) * m + j] += dot(gyr, &vv[(bi * m + j) * k..(bi * m + j + 1) * k]);
                            }
                        }
                    }
                });
                acc(*v, &mut |g| {
                    for bi in 0..bsz {
                        for i in 0..n {
                            let gyr = &gy[(bi * n + i) * k..(bi * n + i + 1) * k];
                            for j in 0..m {
                                let w = av[(bi * n + i) * m + j];
                                axpy(w, gyr, &mut g[(bi * m + j) * k..(bi * m + j + 1) * k]);
                            }
                        }
                    }
                });
            }
            Op::Select { x, axis, index } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let n = shape[*axis];
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        let start = (o * n + index) * inner;
                        axpy(1.0, &gy[o * inner..(o + 1) * inner], &mut g[start..start + inner]);
                    }
                });
            }
            Op::Sum(a) => {
                let c = gy[0];
                acc(*a, &mut |g| g.iter_mut().for_each(|gi| *gi += c));
            }
        }
    }
}

/// Max-stabilized temperature softmax of one row in place. The denominator
/// is summed in ascending order so the result does not depend on the
/// order of the row's entries.
pub(crate) fn softmax_row(row: &mut [f64], beta: f64, scratch: &mut Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in row.iter_mut() {
        *v = ((*v - max) / beta).exp();
    }
    scratch.clear();
    scratch.extend_from_slice(row);
    scratch.sort_by(f64::total_cmp);
    let denom: f64 = scratch.iter().sum();
    for v in row.iter_mut() {
        *v /= denom;
    }
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Four-lane dot product with a fixed summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            lanes[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

#[inline]
fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

fn matmul_into(x: &[f64], w: &[f64], y: &mut [f64], rows: usize, inp: usize, out: usize) {
    for r in 0..rows {
        let yr = &mut y[r * out..(r + 1) * out];
        for k in 0..inp {
            let xk = x[r * inp + k];
            if xk != 0.0 {
                axpy(xk, &w[k * out..(k + 1) * out], yr);
            }
        }
    }
}

fn permute_values(x: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let mut y = Vec::with_capacity(x.len());
    if rank > 1 && axes[rank - 1] == rank - 1 {
        // Innermost axis stays put: copy contiguous rows.
        let inner = shape[rank - 1];
        if inner == 0 {
            return y;
        }
        let mut idx = vec![0usize; rank - 1];
        let mut src = 0usize;
        for _ in 0..x.len() / inner {
            y.extend_from_slice(&x[src..src + inner]);
            for k in (0..rank - 1).rev() {
                idx[k] += 1;
                src += out_strides[k];
                if idx[k] < out_shape[k] {
                    break;
                }
                src -= out_strides[k] * out_shape[k];
                idx[k] = 0;
            }
        }
        return y;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..x.len() {
        y.push(x[src]);
        for k in (0..rank).rev() {
            idx[k] += 1;
            src += out_strides[k];
            if idx[k] < out_shape[k] {
                break;
            }
            src -= out_strides[k] * out_shape[k];
            idx[k] = 0;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, shape: &[usize], v: &[f64]) -> Var {
        g.leaf(Tensor::new(shape.to_vec(), v.to_vec()).unwrap().requiring_grad()).unwrap()
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2], &[1.0, -2.0]);
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2], &[1.0, -2.0]);
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward(l).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, -8.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn constant_loss_gives_no_gradient() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2], &[1.0, 2.0]);
        let c = g.constant(Tensor::vector(vec![3.0])).unwrap();
        let l = g.sum(c).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap_or(&[0.0, 0.0]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2], &[1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(NumericsError::NonScalarLoss(_))));
    }

    #[test]
    fn permute_matches_index_mapping() {
        let mut g = Graph::new();
        let v: Vec<f64> = (0..24).map(f64::from).collect();
        let x = g.constant(Tensor::new(vec![2, 3, 4], v).unwrap()).unwrap();
        let p = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(p), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(g.tensor(p).at(&[c, a, b]), g.tensor(x).at(&[a, b, c]));
                }
            }
        }
    }

    #[test]
    fn select_picks_slice() {
        let mut g = Graph::new();
        let v: Vec<f64> = (0..12).map(f64::from).collect();
        let x = g.constant(Tensor::new(vec![2, 3, 2], v).unwrap()).unwrap();
        let s = g.select(x, 1, 2).unwrap();
        assert_eq!(g.value(s), &[4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn nan_input_is_rejected_when_checking() {
        let mut g = Graph::new().with_finite_checks(true);
        let r = g.constant(Tensor::vector(vec![1.0, f64::NAN]));
        assert!(matches!(r, Err(NumericsError::NonFinite { .. })));
        let x = g.constant(Tensor::vector(vec![1e308, 1e308])).unwrap();
        assert!(g.scale(x, 10.0).is_err());
    }

    #[test]
    fn softmax_rejects_non_positive_temperature() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(g.softmax(x, 0.0).is_err());
        assert!(g.softmax(x, -1.0).is_err());
    }

    #[test]
    fn affine_shape_error_lists_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![3, 4])).unwrap();
        let w = g.constant(Tensor::zeros(vec![5, 2])).unwrap();
        let err = g.affine(x, w, None).unwrap_err().to_string();
        assert!(err.contains("[3, 4]") && err.contains("[5, 2]"), "{err}");
    }
}
