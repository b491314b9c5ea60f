//! A small reverse-mode tape over `ndarray` tensors.
//!
//! Each training step builds a fresh graph; nodes only reference earlier
//! nodes, so creation order is a topological order and backward is a single
//! reverse sweep. Convolutions keep their im2col buffer, batch norm its
//! normalized activations, and softmax losses their probabilities, so the
//! backward pass never recomputes a forward quantity.
//!
//! Determinism: matrix products go through a fixed single-threaded kernel and
//! the only parallel loops (im2col / col2im fills) write disjoint slices, so
//! gradients are bit-identical across runs and thread counts.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, Ix2, Ix4};
use rayon::prelude::*;

use super::scalar::Scalar;

/// Handle to a node in the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Value used to mask out excluded logits before a softmax.
const MASK_NEG: f64 = -1e30;

enum Op<T: Scalar> {
    Leaf,
    /// a [m,k] x b [k,n]
    MatMul { a: NodeId, b: NodeId },
    /// a [m,k] x b [n,k]^T
    MatMulNT { a: NodeId, b: NodeId },
    /// x [n,d] + bias [d]
    AddBias { x: NodeId, bias: NodeId },
    /// elementwise sum of same-shape tensors
    Add { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    Scale { x: NodeId, c: T },
    /// c1 * a + c2 * b for scalars (loss combination)
    AddWeighted { a: NodeId, b: NodeId, c1: T, c2: T },
    Conv2d {
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
        cols: Array2<T>,
        x_dim: (usize, usize, usize, usize),
        out_hw: (usize, usize),
    },
    MaxPool2 { x: NodeId, argmax: Vec<u32> },
    AvgPool2 { x: NodeId },
    GlobalAvgPool { x: NodeId },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        x_hat: Array4<T>,
        inv_std: Array1<T>,
        batch_stats: bool,
    },
    Flatten { x: NodeId, shape: Vec<usize> },
    ConcatChannels { a: NodeId, b: NodeId },
    L2NormalizeRows { x: NodeId, norms: Array1<T> },
    MaskDiagonal { x: NodeId },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Array2<T>,
    },
}

struct Node<T: Scalar> {
    value: ArrayD<T>,
    grad: Option<ArrayD<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: ArrayD<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, value: ArrayD<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&ArrayD<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn scalar_value(&self, id: NodeId) -> T {
        self.nodes[id.0].value[[]]
    }

    fn value2(&self, id: NodeId) -> ndarray::ArrayView2<'_, T> {
        self.nodes[id.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("expected rank-2 value")
    }

    fn value4(&self, id: NodeId) -> ndarray::ArrayView4<'_, T> {
        self.nodes[id.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("expected rank-4 value")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value2(a);
        let bv = self.value2(b);
        let mut out = Array2::zeros((av.nrows(), bv.ncols()));
        ndarray::linalg::general_mat_mul(T::one(), &av, &bv, T::zero(), &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(out.into_dyn(), Op::MatMul { a, b }, needs)
    }

    /// `a` [m,k] times `b` [n,k] transposed, producing [m,n].
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value2(a);
        let bv = self.value2(b);
        let mut out = Array2::zeros((av.nrows(), bv.nrows()));
        ndarray::linalg::general_mat_mul(T::one(), &av, &bv.t(), T::zero(), &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(out.into_dyn(), Op::MatMulNT { a, b }, needs)
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value2(x);
        let bv = self.nodes[bias.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("bias must be rank-1");
        let out = &xv + &bv;
        let needs = self.needs(x) || self.needs(bias);
        self.push(out.into_dyn(), Op::AddBias { x, bias }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Add { a, b }, needs)
    }

    pub fn add_weighted(&mut self, a: NodeId, b: NodeId, c1: T, c2: T) -> NodeId {
        let out = self.nodes[a.0].value.mapv(|v| v * c1) + self.nodes[b.0].value.mapv(|v| v * c2);
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::AddWeighted { a, b, c1, c2 }, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.mapv(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let out = self.nodes[x.0].value.mapv(|v| v * c);
        let needs = self.needs(x);
        self.push(out, Op::Scale { x, c }, needs)
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let shape: Vec<usize> = self.nodes[x.0].value.shape().to_vec();
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        let out = self.nodes[x.0]
            .value
            .clone()
            .into_shape_with_order((n, rest))
            .expect("flatten reshape");
        let needs = self.needs(x);
        self.push(out.into_dyn(), Op::Flatten { x, shape }, needs)
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value4(a);
        let bv = self.value4(b);
        let out = ndarray::concatenate(Axis(1), &[av, bv]).expect("concat shapes");
        let needs = self.needs(a) || self.needs(b);
        self.push(out.into_dyn(), Op::ConcatChannels { a, b }, needs)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, bias: NodeId, stride: usize, pad: usize) -> NodeId {
        let xv = self.value4(x);
        let wv = self.value4(w);
        let (n, c, h, width) = xv.dim();
        let (oc, wc, kh, kw) = wv.dim();
        assert_eq!(c, wc, "conv2d channel mismatch");
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (width + 2 * pad - kw) / stride + 1;
        let cols = im2col(&xv, kh, kw, stride, pad, oh, ow);
        let w2 = wv
            .to_shape((oc, wc * kh * kw))
            .expect("weight reshape")
            .to_owned();
        let mut out2 = Array2::zeros((oc, n * oh * ow));
        ndarray::linalg::general_mat_mul(T::one(), &w2, &cols, T::zero(), &mut out2);
        let bv = self.nodes[bias.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("conv bias rank-1");
        let mut out = Array4::zeros((n, oc, oh, ow));
        for ni in 0..n {
            for oci in 0..oc {
                let b = bv[oci];
                for yi in 0..oh {
                    for xi in 0..ow {
                        out[(ni, oci, yi, xi)] = out2[(oci, ni * oh * ow + yi * ow + xi)] + b;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(bias);
        self.push(
            out.into_dyn(),
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                pad,
                cols,
                x_dim: (n, c, h, width),
                out_hw: (oh, ow),
            },
            needs,
        )
    }

    pub fn max_pool2(&mut self, x: NodeId) -> NodeId {
        let xv = self.value4(x);
        let (n, c, h, w) = xv.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Array4::zeros((n, c, oh, ow));
        let mut argmax = vec![0u32; n * c * oh * ow];
        let mut flat = 0usize;
        for ni in 0..n {
            for ci in 0..c {
                for yi in 0..oh {
                    for xi in 0..ow {
                        let mut best = xv[(ni, ci, 2 * yi, 2 * xi)];
                        let mut best_idx = (2 * yi) * w + 2 * xi;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = xv[(ni, ci, 2 * yi + dy, 2 * xi + dx)];
                                if v > best {
                                    best = v;
                                    best_idx = (2 * yi + dy) * w + 2 * xi + dx;
                                }
                            }
                        }
                        out[(ni, ci, yi, xi)] = best;
                        argmax[flat] = best_idx as u32;
                        flat += 1;
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(out.into_dyn(), Op::MaxPool2 { x, argmax }, needs)
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> NodeId {
        let xv = self.value4(x);
        let (n, c, h, w) = xv.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let quarter = T::from_f64(0.25);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Array4::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for yi in 0..oh {
                    for xi in 0..ow {
                        let s = xv[(ni, ci, 2 * yi, 2 * xi)]
                            + xv[(ni, ci, 2 * yi, 2 * xi + 1)]
                            + xv[(ni, ci, 2 * yi + 1, 2 * xi)]
                            + xv[(ni, ci, 2 * yi + 1, 2 * xi + 1)];
                        out[(ni, ci, yi, xi)] = s * quarter;
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(out.into_dyn(), Op::AvgPool2 { x }, needs)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xv = self.value4(x);
        let (n, c, h, w) = xv.dim();
        let scale = T::from_f64(1.0 / (h * w) as f64);
        let mut out = Array2::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let mut s = T::zero();
                for yi in 0..h {
                    for xi in 0..w {
                        s = s + xv[(ni, ci, yi, xi)];
                    }
                }
                out[(ni, ci)] = s * scale;
            }
        }
        let needs = self.needs(x);
        self.push(out.into_dyn(), Op::GlobalAvgPool { x }, needs)
    }

    /// Batch normalization over (N, H, W) per channel.
    ///
    /// With `batch_stats` the batch mean/variance are used (training mode) and
    /// returned so the caller can fold them into running statistics; otherwise
    /// the provided running statistics are used.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: (&Array1<T>, &Array1<T>),
        eps: T,
        batch_stats: bool,
    ) -> (NodeId, Option<(Array1<T>, Array1<T>)>) {
        let xv = self.value4(x);
        let (n, c, h, w) = xv.dim();
        let m = T::from_f64((n * h * w) as f64);
        let (mean, var) = if batch_stats {
            let mut mean = Array1::zeros(c);
            let mut var = Array1::zeros(c);
            for ci in 0..c {
                let mut s = T::zero();
                for ni in 0..n {
                    for yi in 0..h {
                        for xi in 0..w {
                            s = s + xv[(ni, ci, yi, xi)];
                        }
                    }
                }
                let mu = s / m;
                mean[ci] = mu;
                let mut v = T::zero();
                for ni in 0..n {
                    for yi in 0..h {
                        for xi in 0..w {
                            let d = xv[(ni, ci, yi, xi)] - mu;
                            v = v + d * d;
                        }
                    }
                }
                var[ci] = v / m;
            }
            (mean, var)
        } else {
            (running.0.clone(), running.1.clone())
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let gv = self.nodes[gamma.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("gamma rank-1")
            .to_owned();
        let bv = self.nodes[beta.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("beta rank-1")
            .to_owned();
        let mut x_hat = Array4::zeros((n, c, h, w));
        let mut out = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let mu = mean[ci];
                let is = inv_std[ci];
                let g = gv[ci];
                let b = bv[ci];
                for yi in 0..h {
                    for xi in 0..w {
                        let xh = (xv[(ni, ci, yi, xi)] - mu) * is;
                        x_hat[(ni, ci, yi, xi)] = xh;
                        out[(ni, ci, yi, xi)] = g * xh + b;
                    }
                }
            }
        }
        let stats = batch_stats.then(|| (mean, var));
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let id = self.push(
            out.into_dyn(),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats,
            },
            needs,
        );
        (id, stats)
    }

    /// Normalize each row of a [n, d] matrix onto the unit sphere.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value2(x);
        let eps = T::from_f64(1e-12);
        let norms: Array1<T> = xv
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps))
            .collect();
        let mut out = xv.to_owned();
        for (mut row, &nrm) in out.rows_mut().into_iter().zip(norms.iter()) {
            row.mapv_inplace(|v| v / nrm);
        }
        let needs = self.needs(x);
        self.push(out.into_dyn(), Op::L2NormalizeRows { x, norms }, needs)
    }

    /// Replace the diagonal of a square matrix with a large negative value so
    /// softmax ignores self-similarities.
    pub fn mask_diagonal(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value2(x).to_owned();
        let k = out.nrows().min(out.ncols());
        for i in 0..k {
            out[(i, i)] = T::from_f64(MASK_NEG);
        }
        let needs = self.needs(x);
        self.push(out.into_dyn(), Op::MaskDiagonal { x }, needs)
    }

    /// Mean cross-entropy of `softmax(logits)` against integer labels.
    /// Produces a rank-0 node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> NodeId {
        let lv = self.value2(logits);
        let (n, _k) = lv.dim();
        assert_eq!(n, labels.len(), "label count mismatch");
        let mut probs = Array2::zeros(lv.dim());
        let mut total = T::zero();
        for (i, row) in lv.rows().into_iter().enumerate() {
            let max = row.iter().cloned().fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
            let mut denom = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[(i, j)] = e;
                denom = denom + e;
            }
            for j in 0..row.len() {
                probs[(i, j)] = probs[(i, j)] / denom;
            }
            let p = probs[(i, labels[i])].max(T::from_f64(1e-300));
            total = total - p.ln();
        }
        let mean = total / T::from_f64(n as f64);
        let needs = self.needs(logits);
        self.push(
            ndarray::arr0(mean).into_dyn(),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            },
            needs,
        )
    }

    fn accumulate(&mut self, id: NodeId, delta: ArrayD<T>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => *g += &delta,
            None => node.grad = Some(delta),
        }
    }

    /// Reverse sweep from a rank-0 loss node. Gradients of every node with
    /// `needs_grad` along the path become available through [`Graph::grad`].
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(
            self.nodes[loss.0].value.ndim(),
            0,
            "backward expects a scalar loss"
        );
        self.nodes[loss.0].grad = Some(ndarray::arr0(T::one()).into_dyn());
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            self.step_backward(NodeId(idx));
        }
    }

    fn step_backward(&mut self, id: NodeId) {
        let grad = self.nodes[id.0].grad.clone().expect("grad present");
        // take the op out of the node so arms holding saved forward buffers
        // (im2col, probs, x_hat) do not conflict with gradient accumulation
        let op = std::mem::replace(&mut self.nodes[id.0].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let g = grad.view().into_dimensionality::<Ix2>().unwrap();
                if self.needs(a) {
                    let bv = self.value2(b);
                    let mut da = Array2::zeros((g.nrows(), bv.nrows()));
                    ndarray::linalg::general_mat_mul(T::one(), &g, &bv.t(), T::zero(), &mut da);
                    self.accumulate(a, da.into_dyn());
                }
                if self.needs(b) {
                    let av = self.value2(a);
                    let mut db = Array2::zeros((av.ncols(), g.ncols()));
                    ndarray::linalg::general_mat_mul(T::one(), &av.t(), &g, T::zero(), &mut db);
                    self.accumulate(b, db.into_dyn());
                }
            }
            Op::MatMulNT { a, b } => {
                let (a, b) = (*a, *b);
                let g = grad.view().into_dimensionality::<Ix2>().unwrap();
                if self.needs(a) {
                    let bv = self.value2(b);
                    let mut da = Array2::zeros((g.nrows(), bv.ncols()));
                    ndarray::linalg::general_mat_mul(T::one(), &g, &bv, T::zero(), &mut da);
                    self.accumulate(a, da.into_dyn());
                }
                if self.needs(b) {
                    let av = self.value2(a);
                    let mut db = Array2::zeros((g.ncols(), av.ncols()));
                    ndarray::linalg::general_mat_mul(T::one(), &g.t(), &av, T::zero(), &mut db);
                    self.accumulate(b, db.into_dyn());
                }
            }
            Op::AddBias { x, bias } => {
                let (x, bias) = (*x, *bias);
                let g = grad.view().into_dimensionality::<Ix2>().unwrap();
                if self.needs(x) {
                    self.accumulate(x, g.to_owned().into_dyn());
                }
                if self.needs(bias) {
                    let db = g.sum_axis(Axis(0));
                    self.accumulate(bias, db.into_dyn());
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    self.accumulate(a, grad.clone());
                }
                if self.needs(b) {
                    self.accumulate(b, grad);
                }
            }
            Op::AddWeighted { a, b, c1, c2 } => {
                let (a, b, c1, c2) = (*a, *b, *c1, *c2);
                if self.needs(a) {
                    self.accumulate(a, grad.mapv(|v| v * c1));
                }
                if self.needs(b) {
                    self.accumulate(b, grad.mapv(|v| v * c2));
                }
            }
            Op::Relu { x } => {
                let x = *x;
                if self.needs(x) {
                    let mask = self.nodes[id.0].value.mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
                    self.accumulate(x, grad * mask);
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                if self.needs(x) {
                    self.accumulate(x, grad.mapv(|v| v * c));
                }
            }
            Op::Flatten { x, shape } => {
                let x = *x;
                let shape = shape.clone();
                if self.needs(x) {
                    let dx = grad.into_shape_with_order(shape.as_slice()).expect("unflatten");
                    self.accumulate(x, dx);
                }
            }
            Op::ConcatChannels { a, b } => {
                let (a, b) = (*a, *b);
                let ca = self.value4(a).dim().1;
                let g = grad.view().into_dimensionality::<Ix4>().unwrap();
                if self.needs(a) {
                    let da = g.slice(ndarray::s![.., ..ca, .., ..]).to_owned();
                    self.accumulate(a, da.into_dyn());
                }
                if self.needs(b) {
                    let db = g.slice(ndarray::s![.., ca.., .., ..]).to_owned();
                    self.accumulate(b, db.into_dyn());
                }
            }
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                pad,
                cols,
                x_dim,
                out_hw,
            } => {
                let (x, w, bias, stride, pad) = (*x, *w, *bias, *stride, *pad);
                let (n, c, h, width) = *x_dim;
                let (oh, ow) = *out_hw;
                let g = grad.view().into_dimensionality::<Ix4>().unwrap();
                let oc = g.dim().1;
                // gather dy into [oc, n*oh*ow] matching the im2col layout
                let mut dy2 = Array2::zeros((oc, n * oh * ow));
                for ni in 0..n {
                    for oci in 0..oc {
                        for yi in 0..oh {
                            for xi in 0..ow {
                                dy2[(oci, ni * oh * ow + yi * ow + xi)] = g[(ni, oci, yi, xi)];
                            }
                        }
                    }
                }
                if self.needs(bias) {
                    let db = dy2.sum_axis(Axis(1));
                    self.accumulate(bias, db.into_dyn());
                }
                if self.needs(w) {
                    let (_, wc, kh, kw) = self.value4(w).dim();
                    let mut dw2 = Array2::zeros((oc, cols.nrows()));
                    ndarray::linalg::general_mat_mul(T::one(), &dy2, &cols.t(), T::zero(), &mut dw2);
                    let dw = dw2
                        .into_shape_with_order((oc, wc, kh, kw))
                        .expect("dw reshape");
                    self.accumulate(w, dw.into_dyn());
                }
                if self.needs(x) {
                    let wv = self.value4(w);
                    let (oc2, wc, kh, kw) = wv.dim();
                    let w2 = wv
                        .to_shape((oc2, wc * kh * kw))
                        .expect("weight reshape")
                        .to_owned();
                    let mut dcols = Array2::zeros((wc * kh * kw, n * oh * ow));
                    ndarray::linalg::general_mat_mul(T::one(), &w2.t(), &dy2, T::zero(), &mut dcols);
                    let dx = col2im(&dcols, (n, c, h, width), kh, kw, stride, pad, oh, ow);
                    self.accumulate(x, dx.into_dyn());
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let x = *x;
                if self.needs(x) {
                    let g = grad.view().into_dimensionality::<Ix4>().unwrap();
                    let (n, c, oh, ow) = g.dim();
                    let (_, _, h, w) = self.value4(x).dim();
                    let mut dx = Array4::zeros((n, c, h, w));
                    let mut flat = 0usize;
                    for ni in 0..n {
                        for ci in 0..c {
                            for yi in 0..oh {
                                for xi in 0..ow {
                                    let idx = argmax[flat] as usize;
                                    dx[(ni, ci, idx / w, idx % w)] =
                                        dx[(ni, ci, idx / w, idx % w)] + g[(ni, ci, yi, xi)];
                                    flat += 1;
                                }
                            }
                        }
                    }
                    self.accumulate(x, dx.into_dyn());
                }
            }
            Op::AvgPool2 { x } => {
                let x = *x;
                if self.needs(x) {
                    let g = grad.view().into_dimensionality::<Ix4>().unwrap();
                    let (n, c, oh, ow) = g.dim();
                    let quarter = T::from_f64(0.25);
                    let mut dx = Array4::zeros((n, c, oh * 2, ow * 2));
                    for ni in 0..n {
                        for ci in 0..c {
                            for yi in 0..oh {
                                for xi in 0..ow {
                                    let v = g[(ni, ci, yi, xi)] * quarter;
                                    for dy in 0..2 {
                                        for dx_ in 0..2 {
                                            dx[(ni, ci, 2 * yi + dy, 2 * xi + dx_)] = v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(x, dx.into_dyn());
                }
            }
            Op::GlobalAvgPool { x } => {
                let x = *x;
                if self.needs(x) {
                    let g = grad.view().into_dimensionality::<Ix2>().unwrap();
                    let (_, _, h, w) = self.value4(x).dim();
                    let scale = T::from_f64(1.0 / (h * w) as f64);
                    let (n, c) = g.dim();
                    let mut dx = Array4::zeros((n, c, h, w));
                    for ni in 0..n {
                        for ci in 0..c {
                            let v = g[(ni, ci)] * scale;
                            for yi in 0..h {
                                for xi in 0..w {
                                    dx[(ni, ci, yi, xi)] = v;
                                }
                            }
                        }
                    }
                    self.accumulate(x, dx.into_dyn());
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats,
            } => {
                let (x, gamma, beta, batch_stats) = (*x, *gamma, *beta, *batch_stats);
                let g = grad.view().into_dimensionality::<Ix4>().unwrap();
                let (n, c, h, w) = g.dim();
                let m = T::from_f64((n * h * w) as f64);
                let x_hat = x_hat.clone();
                let inv_std = inv_std.clone();
                let gv = self.nodes[gamma.0]
                    .value
                    .view()
                    .into_dimensionality::<Ix1>()
                    .unwrap()
                    .to_owned();
                // per-channel reductions
                let mut sum_dy = Array1::<T>::zeros(c);
                let mut sum_dy_xhat = Array1::<T>::zeros(c);
                for ni in 0..n {
                    for ci in 0..c {
                        for yi in 0..h {
                            for xi in 0..w {
                                let dy = g[(ni, ci, yi, xi)];
                                sum_dy[ci] = sum_dy[ci] + dy;
                                sum_dy_xhat[ci] = sum_dy_xhat[ci] + dy * x_hat[(ni, ci, yi, xi)];
                            }
                        }
                    }
                }
                if self.needs(gamma) {
                    self.accumulate(gamma, sum_dy_xhat.clone().into_dyn());
                }
                if self.needs(beta) {
                    self.accumulate(beta, sum_dy.clone().into_dyn());
                }
                if self.needs(x) {
                    let mut dx = Array4::zeros((n, c, h, w));
                    for ni in 0..n {
                        for ci in 0..c {
                            let gscale = gv[ci] * inv_std[ci];
                            for yi in 0..h {
                                for xi in 0..w {
                                    let dy = g[(ni, ci, yi, xi)];
                                    let v = if batch_stats {
                                        (dy - sum_dy[ci] / m
                                            - x_hat[(ni, ci, yi, xi)] * sum_dy_xhat[ci] / m)
                                            * gscale
                                    } else {
                                        dy * gscale
                                    };
                                    dx[(ni, ci, yi, xi)] = v;
                                }
                            }
                        }
                    }
                    self.accumulate(x, dx.into_dyn());
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                let x = *x;
                let norms = norms.clone();
                if self.needs(x) {
                    let g = grad.view().into_dimensionality::<Ix2>().unwrap();
                    let z = self.value2(id);
                    let mut dx = Array2::zeros(g.dim());
                    for i in 0..g.nrows() {
                        let dot: T = g
                            .row(i)
                            .iter()
                            .zip(z.row(i).iter())
                            .map(|(&a, &b)| a * b)
                            .sum();
                        for j in 0..g.ncols() {
                            dx[(i, j)] = (g[(i, j)] - z[(i, j)] * dot) / norms[i];
                        }
                    }
                    self.accumulate(x, dx.into_dyn());
                }
            }
            Op::MaskDiagonal { x } => {
                let x = *x;
                if self.needs(x) {
                    let mut dx = grad.view().into_dimensionality::<Ix2>().unwrap().to_owned();
                    let k = dx.nrows().min(dx.ncols());
                    for i in 0..k {
                        dx[(i, i)] = T::zero();
                    }
                    self.accumulate(x, dx.into_dyn());
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let logits = *logits;
                if self.needs(logits) {
                    let gscalar = grad[[]];
                    let n = labels.len();
                    let scale = gscalar / T::from_f64(n as f64);
                    let mut dl = probs.clone();
                    for (i, &label) in labels.iter().enumerate() {
                        dl[(i, label)] = dl[(i, label)] - T::one();
                    }
                    dl.mapv_inplace(|v| v * scale);
                    self.accumulate(logits, dl.into_dyn());
                }
            }
        }
        self.nodes[id.0].op = op;
    }
}

fn im2col<T: Scalar>(
    x: &ndarray::ArrayView4<'_, T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * kh * kw, n * oh * ow));
    // parallel over rows of the col matrix: each (c, ky, kx) row is disjoint
    cols.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(row, mut out_row)| {
            let ci = row / (kh * kw);
            let ky = (row / kw) % kh;
            let kx = row % kw;
            for ni in 0..n {
                for yi in 0..oh {
                    let sy = yi * stride + ky;
                    for xi in 0..ow {
                        let sx = xi * stride + kx;
                        let v = if sy < pad || sx < pad || sy - pad >= h || sx - pad >= w {
                            T::zero()
                        } else {
                            x[(ni, ci, sy - pad, sx - pad)]
                        };
                        out_row[ni * oh * ow + yi * ow + xi] = v;
                    }
                }
            }
        });
    cols
}

fn col2im<T: Scalar>(
    dcols: &Array2<T>,
    x_dim: (usize, usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<T> {
    let (n, c, h, w) = x_dim;
    let mut dx = Array4::zeros((n, c, h, w));
    // parallel over channels: every written element has a fixed channel
    dx.axis_iter_mut(Axis(1))
        .into_par_iter()
        .enumerate()
        .for_each(|(ci, mut dxc)| {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = ci * kh * kw + ky * kw + kx;
                    for ni in 0..n {
                        for yi in 0..oh {
                            let sy = yi * stride + ky;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            for xi in 0..ow {
                                let sx = xi * stride + kx;
                                if sx < pad || sx - pad >= w {
                                    continue;
                                }
                                dxc[(ni, sy - pad, sx - pad)] = dxc[(ni, sy - pad, sx - pad)]
                                    + dcols[(row, ni * oh * ow + yi * ow + xi)];
                            }
                        }
                    }
                }
            }
        });
    dx
}
