//! Minimal reverse-mode automatic differentiation over batched f64 tensors.
//!
//! A [`Tape`] records one forward computation as an append-only arena of
//! nodes; node order is topological by construction, so [`Tape::backward`]
//! is a single reverse sweep that accumulates each node's gradient exactly
//! once per use. The op set is exactly what the models need: affine layers,
//! ReLU, concatenation, addition, scaling, clamping, MSE, closed-form
//! Gaussian KL, the reparameterization trick, and a numerically stable
//! binary cross-entropy.
//!
//! Parameters live outside the tape (see [`AffineParams`]); each forward
//! pass leases them in as differentiable leaves and reads the gradients back
//! after `backward`. A tape is confined to one thread for its lifetime;
//! distinct tapes are independent.

pub mod adam;
pub mod gradcheck;
pub mod linalg;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use linalg::{matmul_nn, matmul_nt, matmul_tn};

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got {0:?}")]
    NonScalarLoss(Shape),
    #[error("backward has already run on this tape")]
    BackwardAlreadyRun,
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("binary label must be 0 or 1, got {0}")]
    BadLabel(f64),
}

/// Row-major 2-D shape; `rows` is the batch dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn scalar() -> Self {
        Self { rows: 1, cols: 1 }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Affine { w: NodeId, b: NodeId, x: NodeId },
    Relu { x: NodeId },
    Concat { xs: Vec<NodeId> },
    Add { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    SliceCols { x: NodeId, lo: usize, hi: usize },
    Mse { pred: NodeId, target: NodeId },
    GaussianKl { mu: NodeId, logvar: NodeId },
    Reparam { mu: NodeId, logvar: NodeId, eps: Vec<f64> },
    Bce { logit: NodeId, label: f64 },
}

struct Node {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>, // allocated iff the node requires gradients
    op: Op,
}

/// One recorded forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backward_done: false }
    }

    fn push(&mut self, shape: Shape, data: Vec<f64>, requires_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(data.len(), shape.len());
        let grad = requires_grad.then(|| vec![0.0; shape.len()]);
        self.nodes.push(Node { shape, data, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].grad.is_some()
    }

    /// Leases external data as a differentiable leaf.
    pub fn param(&mut self, data: &[f64], shape: Shape) -> NodeId {
        self.push(shape, data.to_vec(), true, Op::Leaf)
    }

    /// Leases external data as a non-differentiable leaf (inputs, targets,
    /// frozen weights).
    pub fn constant(&mut self, data: &[f64], shape: Shape) -> NodeId {
        self.push(shape, data.to_vec(), false, Op::Leaf)
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn value_scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].data[0]
    }

    /// Gradient of the last `backward` loss w.r.t. this node; `None` for
    /// non-differentiable nodes.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// `y = x W^T + b` with `w: [out x in]`, `b: [1 x out]`, `x: [batch x in]`.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId, AutodiffError> {
        let (ws, bs, xs) = (self.shape(w), self.shape(b), self.shape(x));
        if ws.cols != xs.cols || bs.rows != 1 || bs.cols != ws.rows {
            return Err(AutodiffError::ShapeMismatch(format!("affine w{ws:?} b{bs:?} x{xs:?}")));
        }
        let (batch, in_dim, out_dim) = (xs.rows, xs.cols, ws.rows);
        let mut y = vec![0.0; batch * out_dim];
        matmul_nt(&self.nodes[x.0].data, &self.nodes[w.0].data, &mut y, batch, in_dim, out_dim);
        let bias = &self.nodes[b.0].data;
        for row in y.chunks_mut(out_dim) {
            for (v, bv) in row.iter_mut().zip(bias.iter()) {
                *v += bv;
            }
        }
        let rg = self.requires_grad(w) || self.requires_grad(b) || self.requires_grad(x);
        Ok(self.push(Shape::new(batch, out_dim), y, rg, Op::Affine { w, b, x }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.max(0.0)).collect();
        let rg = self.requires_grad(x);
        self.push(self.shape(x), data, rg, Op::Relu { x })
    }

    /// Concatenates along the feature axis; all inputs share the batch size.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if xs.is_empty() {
            return Err(AutodiffError::ShapeMismatch("concat of nothing".into()));
        }
        let rows = self.shape(xs[0]).rows;
        if xs.iter().any(|&x| self.shape(x).rows != rows) {
            return Err(AutodiffError::ShapeMismatch("concat batch sizes differ".into()));
        }
        let cols: usize = xs.iter().map(|&x| self.shape(x).cols).sum();
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for &x in xs {
            let xc = self.shape(x).cols;
            for r in 0..rows {
                data[r * cols + offset..r * cols + offset + xc]
                    .copy_from_slice(&self.nodes[x.0].data[r * xc..(r + 1) * xc]);
            }
            offset += xc;
        }
        let rg = xs.iter().any(|&x| self.requires_grad(x));
        Ok(self.push(Shape::new(rows, cols), data, rg, Op::Concat { xs: xs.to_vec() }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "add {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(u, v)| u + v)
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(self.shape(a), data, rg, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| c * v).collect();
        let rg = self.requires_grad(x);
        self.push(self.shape(x), data, rg, Op::Scale { x, c })
    }

    /// Elementwise clamp; gradients pass where the input lies in `[lo, hi]`.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.clamp(lo, hi)).collect();
        let rg = self.requires_grad(x);
        self.push(self.shape(x), data, rg, Op::Clamp { x, lo, hi })
    }

    /// Takes feature columns `lo..hi` of every batch row.
    pub fn slice_cols(&mut self, x: NodeId, lo: usize, hi: usize) -> Result<NodeId, AutodiffError> {
        let s = self.shape(x);
        if lo >= hi || hi > s.cols {
            return Err(AutodiffError::ShapeMismatch(format!("slice {lo}..{hi} of {s:?}")));
        }
        let width = hi - lo;
        let mut data = vec![0.0; s.rows * width];
        for r in 0..s.rows {
            data[r * width..(r + 1) * width]
                .copy_from_slice(&self.nodes[x.0].data[r * s.cols + lo..r * s.cols + hi]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Shape::new(s.rows, width), data, rg, Op::SliceCols { x, lo, hi }))
    }

    /// Mean over all elements of the squared difference.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, AutodiffError> {
        if self.shape(pred) != self.shape(target) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "mse {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let n = self.shape(pred).len() as f64;
        let sum: f64 = self.nodes[pred.0]
            .data
            .iter()
            .zip(self.nodes[target.0].data.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.requires_grad(pred) || self.requires_grad(target);
        Ok(self.push(Shape::scalar(), vec![sum / n], rg, Op::Mse { pred, target }))
    }

    /// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over feature dimensions
    /// and averaged over the batch:
    /// `sum 0.5 * (mu^2 + exp(logvar) - 1 - logvar) / batch`.
    pub fn gaussian_kl(&mut self, mu: NodeId, logvar: NodeId) -> Result<NodeId, AutodiffError> {
        if self.shape(mu) != self.shape(logvar) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "gaussian_kl {:?} vs {:?}",
                self.shape(mu),
                self.shape(logvar)
            )));
        }
        let finite = |id: NodeId| self.nodes[id.0].data.iter().all(|v| v.is_finite());
        if !finite(mu) || !finite(logvar) {
            return Err(AutodiffError::NonFinite("gaussian_kl"));
        }
        let batch = self.shape(mu).rows as f64;
        let sum: f64 = self.nodes[mu.0]
            .data
            .iter()
            .zip(self.nodes[logvar.0].data.iter())
            .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum();
        let rg = self.requires_grad(mu) || self.requires_grad(logvar);
        Ok(self.push(Shape::scalar(), vec![sum / batch], rg, Op::GaussianKl { mu, logvar }))
    }

    /// `z = mu + exp(0.5 * logvar) * eps` with `eps ~ N(0, I)` drawn here;
    /// gradients flow to `mu` and `logvar`, not to `eps`.
    pub fn reparameterize(
        &mut self,
        mu: NodeId,
        logvar: NodeId,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId, AutodiffError> {
        if self.shape(mu) != self.shape(logvar) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "reparameterize {:?} vs {:?}",
                self.shape(mu),
                self.shape(logvar)
            )));
        }
        let eps: Vec<f64> = (0..self.shape(mu).len()).map(|_| rng.sample(StandardNormal)).collect();
        let data: Vec<f64> = self.nodes[mu.0]
            .data
            .iter()
            .zip(self.nodes[logvar.0].data.iter())
            .zip(eps.iter())
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        let rg = self.requires_grad(mu) || self.requires_grad(logvar);
        Ok(self.push(self.shape(mu), data, rg, Op::Reparam { mu, logvar, eps }))
    }

    /// Numerically stable sigmoid cross-entropy against a constant binary
    /// label, averaged over all elements.
    pub fn bce(&mut self, logit: NodeId, label: f64) -> Result<NodeId, AutodiffError> {
        if label != 0.0 && label != 1.0 {
            return Err(AutodiffError::BadLabel(label));
        }
        let n = self.shape(logit).len() as f64;
        let sum: f64 = self.nodes[logit.0]
            .data
            .iter()
            .map(|&x| x.max(0.0) - x * label + (-x.abs()).exp().ln_1p())
            .sum();
        let rg = self.requires_grad(logit);
        Ok(self.push(Shape::scalar(), vec![sum / n], rg, Op::Bce { logit, label }))
    }

    /// Propagates gradients from a scalar loss back through the tape. Each
    /// node's gradient is accumulated exactly once per downstream use. A
    /// second call on the same tape is an error; build a fresh tape per step.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        if self.shape(loss) != Shape::scalar() {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss)));
        }
        if self.backward_done {
            return Err(AutodiffError::BackwardAlreadyRun);
        }
        self.backward_done = true;
        match self.nodes[loss.0].grad.as_mut() {
            Some(g) => g[0] = 1.0,
            None => return Ok(()), // loss depends on no differentiable leaf
        }

        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() {
                continue;
            }
            // Take this node's gradient out so input gradients can be
            // mutated without aliasing it; restored at the end of the step.
            let gout = self.nodes[idx].grad.take().expect("checked above");
            self.backprop_one(idx, &gout);
            self.nodes[idx].grad = Some(gout);
        }
        Ok(())
    }

    fn backprop_one(&mut self, idx: usize, gout: &[f64]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::Affine { w, b, x } => {
                let batch = self.nodes[x.0].shape.rows;
                let in_dim = self.nodes[x.0].shape.cols;
                let out_dim = self.nodes[w.0].shape.rows;
                if self.requires_grad(x) {
                    let mut dx = vec![0.0; batch * in_dim];
                    matmul_nn(gout, &self.nodes[w.0].data, &mut dx, batch, out_dim, in_dim);
                    accumulate(self.nodes[x.0].grad.as_mut().unwrap(), &dx);
                }
                if self.requires_grad(w) {
                    let mut dw = vec![0.0; out_dim * in_dim];
                    matmul_tn(gout, &self.nodes[x.0].data, &mut dw, out_dim, batch, in_dim);
                    accumulate(self.nodes[w.0].grad.as_mut().unwrap(), &dw);
                }
                if self.requires_grad(b) {
                    let db = self.nodes[b.0].grad.as_mut().unwrap();
                    for row in gout.chunks(out_dim) {
                        for (g, r) in db.iter_mut().zip(row.iter()) {
                            *g += r;
                        }
                    }
                }
            }
            &Op::Relu { x } => {
                if self.requires_grad(x) {
                    let node = &mut self.nodes[x.0];
                    let Node { data, grad, .. } = node;
                    let gx = grad.as_mut().unwrap();
                    for (i, g) in gout.iter().enumerate() {
                        if data[i] > 0.0 {
                            gx[i] += g;
                        }
                    }
                }
            }
            Op::Concat { xs } => {
                let xs = xs.clone();
                let cols = self.nodes[idx].shape.cols;
                let rows = self.nodes[idx].shape.rows;
                let mut offset = 0;
                for x in xs {
                    let xc = self.nodes[x.0].shape.cols;
                    if self.requires_grad(x) {
                        let gx = self.nodes[x.0].grad.as_mut().unwrap();
                        for r in 0..rows {
                            for j in 0..xc {
                                gx[r * xc + j] += gout[r * cols + offset + j];
                            }
                        }
                    }
                    offset += xc;
                }
            }
            &Op::Add { a, b } => {
                if self.requires_grad(a) {
                    accumulate(self.nodes[a.0].grad.as_mut().unwrap(), gout);
                }
                if self.requires_grad(b) {
                    accumulate(self.nodes[b.0].grad.as_mut().unwrap(), gout);
                }
            }
            &Op::Scale { x, c } => {
                if self.requires_grad(x) {
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (g, go) in gx.iter_mut().zip(gout.iter()) {
                        *g += c * go;
                    }
                }
            }
            &Op::Clamp { x, lo, hi } => {
                if self.requires_grad(x) {
                    let node = &mut self.nodes[x.0];
                    let Node { data, grad, .. } = node;
                    let gx = grad.as_mut().unwrap();
                    for (i, g) in gout.iter().enumerate() {
                        if data[i] >= lo && data[i] <= hi {
                            gx[i] += g;
                        }
                    }
                }
            }
            &Op::SliceCols { x, lo, hi } => {
                if self.requires_grad(x) {
                    let cols = self.nodes[x.0].shape.cols;
                    let rows = self.nodes[x.0].shape.rows;
                    let width = hi - lo;
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for r in 0..rows {
                        for j in 0..width {
                            gx[r * cols + lo + j] += gout[r * width + j];
                        }
                    }
                }
            }
            &Op::Mse { pred, target } => {
                let n = self.nodes[pred.0].shape.len() as f64;
                let g0 = gout[0];
                for (node, sign) in [(pred, 1.0), (target, -1.0)] {
                    if self.requires_grad(node) {
                        let d: Vec<f64> = self.nodes[pred.0]
                            .data
                            .iter()
                            .zip(self.nodes[target.0].data.iter())
                            .map(|(p, t)| sign * g0 * 2.0 * (p - t) / n)
                            .collect();
                        accumulate(self.nodes[node.0].grad.as_mut().unwrap(), &d);
                    }
                }
            }
            &Op::GaussianKl { mu, logvar } => {
                let batch = self.nodes[mu.0].shape.rows as f64;
                let g0 = gout[0];
                if self.requires_grad(mu) {
                    let d: Vec<f64> =
                        self.nodes[mu.0].data.iter().map(|m| g0 * m / batch).collect();
                    accumulate(self.nodes[mu.0].grad.as_mut().unwrap(), &d);
                }
                if self.requires_grad(logvar) {
                    let d: Vec<f64> = self.nodes[logvar.0]
                        .data
                        .iter()
                        .map(|lv| g0 * 0.5 * (lv.exp() - 1.0) / batch)
                        .collect();
                    accumulate(self.nodes[logvar.0].grad.as_mut().unwrap(), &d);
                }
            }
            Op::Reparam { mu, logvar, eps } => {
                let (mu, logvar) = (*mu, *logvar);
                let eps = eps.clone();
                if self.requires_grad(mu) {
                    accumulate(self.nodes[mu.0].grad.as_mut().unwrap(), gout);
                }
                if self.requires_grad(logvar) {
                    let d: Vec<f64> = self.nodes[logvar.0]
                        .data
                        .iter()
                        .zip(eps.iter())
                        .zip(gout.iter())
                        .map(|((lv, e), g)| g * 0.5 * (0.5 * lv).exp() * e)
                        .collect();
                    accumulate(self.nodes[logvar.0].grad.as_mut().unwrap(), &d);
                }
            }
            &Op::Bce { logit, label } => {
                if self.requires_grad(logit) {
                    let n = self.nodes[logit.0].shape.len() as f64;
                    let g0 = gout[0];
                    let d: Vec<f64> = self.nodes[logit.0]
                        .data
                        .iter()
                        .map(|&x| g0 * (sigmoid(x) - label) / n)
                        .collect();
                    accumulate(self.nodes[logit.0].grad.as_mut().unwrap(), &d);
                }
            }
        }
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) }
}

/// Weights and bias of one fully connected layer, owned outside any tape.
/// Weights initialize uniform on `[-1/sqrt(in), 1/sqrt(in)]`, biases zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl AffineParams {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self { w, b: vec![0.0; out_dim], in_dim, out_dim }
    }

    /// Leases the layer onto a tape; `trainable` decides whether gradients
    /// are tracked (frozen layers participate in the forward and route
    /// gradients through, but accumulate none themselves).
    pub fn lease(&self, tape: &mut Tape, trainable: bool) -> (NodeId, NodeId) {
        let ws = Shape::new(self.out_dim, self.in_dim);
        let bs = Shape::new(1, self.out_dim);
        if trainable {
            (tape.param(&self.w, ws), tape.param(&self.b, bs))
        } else {
            (tape.constant(&self.w, ws), tape.constant(&self.b, bs))
        }
    }

    /// Tape-free forward for inference paths: `y = x W^T + b`.
    pub fn forward_infer(&self, x: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), batch * self.in_dim);
        let mut y = vec![0.0; batch * self.out_dim];
        matmul_nt(x, &self.w, &mut y, batch, self.in_dim, self.out_dim);
        for row in y.chunks_mut(self.out_dim) {
            for (v, bv) in row.iter_mut().zip(self.b.iter()) {
                *v += bv;
            }
        }
        y
    }
}

/// In-place ReLU for inference paths.
pub fn relu_infer(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(&[-1.0, 0.0, 2.0], Shape::new(1, 3));
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn affine_identity() {
        let mut tape = Tape::new();
        let w = tape.constant(&[1.0, 0.0, 0.0, 1.0], Shape::new(2, 2));
        let b = tape.constant(&[0.0, 0.0], Shape::new(1, 2));
        let x = tape.constant(&[3.0, -4.0, 5.0, 6.0], Shape::new(2, 2));
        let y = tape.affine(w, b, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn concat_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0, 2.0], Shape::new(1, 2));
        let b = tape.constant(&[3.0, 4.0, 5.0], Shape::new(1, 3));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), Shape::new(1, 5));
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let bad = tape.constant(&[0.0; 4], Shape::new(2, 2));
        assert!(tape.concat(&[a, bad]).is_err());
    }

    #[test]
    fn slice_cols_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Shape::new(2, 3));
        let s = tape.slice_cols(x, 1, 3).unwrap();
        assert_eq!(tape.value(s), &[2.0, 3.0, 5.0, 6.0]);
        assert!(tape.slice_cols(x, 2, 2).is_err());
        assert!(tape.slice_cols(x, 0, 4).is_err());
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(&[1.0, 2.0], Shape::new(1, 2));
        assert_eq!(tape.mse(p, p).map(|l| tape.value_scalar(l)), Ok(0.0));

        let q = tape.constant(&[2.0, 3.0], Shape::new(1, 2));
        let l = tape.mse(q, p).unwrap();
        assert_eq!(tape.value_scalar(l), 1.0);

        let pred = tape.constant(&[0.0, 0.0], Shape::new(1, 2));
        let target = tape.constant(&[3.0, 4.0], Shape::new(1, 2));
        let l = tape.mse(pred, target).unwrap();
        assert_eq!(tape.value_scalar(l), 12.5);

        let odd = tape.constant(&[0.0], Shape::new(1, 1));
        assert!(tape.mse(pred, odd).is_err());
    }

    #[test]
    fn gaussian_kl_examples() {
        let mut tape = Tape::new();
        let zero = tape.constant(&[0.0], Shape::new(1, 1));
        let kl = tape.gaussian_kl(zero, zero).unwrap();
        assert_eq!(tape.value_scalar(kl), 0.0);

        let one = tape.constant(&[1.0], Shape::new(1, 1));
        let kl = tape.gaussian_kl(one, zero).unwrap();
        assert!((tape.value_scalar(kl) - 0.5).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let mu: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lv: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = tape.constant(&mu, Shape::new(2, 3));
            let l = tape.constant(&lv, Shape::new(2, 3));
            let kl = tape.gaussian_kl(m, l).unwrap();
            assert!(tape.value_scalar(kl) >= 0.0);
        }

        let bad = tape.constant(&[f64::NAN], Shape::new(1, 1));
        assert_eq!(tape.gaussian_kl(bad, zero), Err(AutodiffError::NonFinite("gaussian_kl")));
    }

    #[test]
    fn reparameterize_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let (mu, logvar) = (1.5, -0.7);
        let mut tape = Tape::new();
        let m = tape.constant(&vec![mu; n], Shape::new(n, 1));
        let lv = tape.constant(&vec![logvar; n], Shape::new(n, 1));
        let z = tape.reparameterize(m, lv, &mut rng).unwrap();
        let vals = tape.value(z);
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sigma = (0.5f64 * logvar).exp();
        assert!((mean - mu).abs() < 0.01 * sigma, "mean {mean}");
        assert!((var - logvar.exp()).abs() < 0.03 * logvar.exp(), "var {var}");
    }

    #[test]
    fn reparameterize_zero_variance_returns_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let m = tape.constant(&[2.5, -1.0], Shape::new(1, 2));
        let lv = tape.constant(&[-800.0, -800.0], Shape::new(1, 2));
        let z = tape.reparameterize(m, lv, &mut rng).unwrap();
        assert_eq!(tape.value(z), tape.value(m));
    }

    #[test]
    fn bce_examples() {
        let mut tape = Tape::new();
        let zero = tape.constant(&[0.0], Shape::scalar());
        let l = tape.bce(zero, 1.0).unwrap();
        assert!((tape.value_scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);

        let big = tape.constant(&[40.0], Shape::scalar());
        let l = tape.bce(big, 1.0).unwrap();
        assert!(tape.value_scalar(l) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let z = rng.random_range(-5.0..5.0);
            let zi = tape.constant(&[z], Shape::scalar());
            let ni = tape.constant(&[-z], Shape::scalar());
            let a = tape.bce(zi, 1.0).unwrap();
            let b = tape.bce(ni, 0.0).unwrap();
            assert!((tape.value_scalar(a) - tape.value_scalar(b)).abs() < 1e-12);
        }

        assert_eq!(tape.bce(zero, 0.5), Err(AutodiffError::BadLabel(0.5)));
    }

    #[test]
    fn backward_contract() {
        let mut tape = Tape::new();
        let x = tape.param(&[1.0, 2.0], Shape::new(1, 2));
        let y = tape.relu(x);
        assert_eq!(tape.backward(y), Err(AutodiffError::NonScalarLoss(Shape::new(1, 2))));

        let t = tape.constant(&[0.0, 0.0], Shape::new(1, 2));
        let l = tape.mse(y, t).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.backward(l), Err(AutodiffError::BackwardAlreadyRun));
    }

    #[test]
    fn fanout_accumulates_k_contributions() {
        // y = x + x + x  =>  dy/dx = 3
        let mut tape = Tape::new();
        let x = tape.param(&[2.0], Shape::scalar());
        let s1 = tape.add(x, x).unwrap();
        let s2 = tape.add(s1, x).unwrap();
        tape.backward(s2).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0]);
    }

    #[test]
    fn frozen_layers_have_no_gradients_but_route_them() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = AffineParams::init(3, 2, &mut rng);
        let mut tape = Tape::new();
        let (w, b) = layer.lease(&mut tape, false);
        let x = tape.param(&[0.5, -0.2, 1.0], Shape::new(1, 3));
        let y = tape.affine(w, b, x).unwrap();
        let t = tape.constant(&[0.0, 0.0], Shape::new(1, 2));
        let l = tape.mse(y, t).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(w).is_none());
        assert!(tape.grad(b).is_none());
        assert!(tape.grad(x).unwrap().iter().any(|g| *g != 0.0));
    }

    #[test]
    fn infer_forward_matches_tape_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = AffineParams::init(5, 4, &mut rng);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let (w, b) = layer.lease(&mut tape, true);
        let xn = tape.constant(&x, Shape::new(2, 5));
        let y = tape.affine(w, b, xn).unwrap();
        assert_eq!(tape.value(y), layer.forward_infer(&x, 2).as_slice());
    }
}
