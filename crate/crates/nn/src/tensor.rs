//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every op appends a node whose inputs are earlier
//! nodes, so reverse insertion order is a valid backward schedule. Tensors
//! used by the network are laid out `[batch, channel, d0, d1, d2]` with the
//! last axis fastest.

use brainmark_core::Scalar;
use rayon::prelude::*;

use crate::conv::{correlate, tap_offsets, weight_grad, Geometry};
use crate::error::{Error, Result};
use crate::heatmap::{mixed_loss_and_grad, HeatmapStack, LossValue};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n] }
    }

    pub fn scalar(x: T) -> Self {
        Self { shape: vec![1], data: vec![x] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn expect_5d(&self, what: &str) -> Result<[usize; 5]> {
        self.shape
            .as_slice()
            .try_into()
            .map_err(|_| Error::ShapeMismatch(format!("{what} must be 5-d, got {:?}", self.shape)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    Conv3d { x: NodeId, w: NodeId, b: NodeId, dilation: usize },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<T>, inv_std: Vec<f64> },
    ChannelAffine { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<f64>, inv_std: Vec<f64> },
    Relu { x: NodeId },
    Dropout { x: NodeId, mask: Vec<T> },
    Add { a: NodeId, b: NodeId },
    Sum { x: NodeId },
    Pick { x: NodeId, index: usize },
    MixedLoss { x: NodeId, grad: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Statistics of one train-mode batch normalization call.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the estimate folded into running statistics.
    pub var: Vec<f64>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    /// Inputs and parameters alike are leaves.
    pub fn leaf(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Same-padded 3D convolution with a cubic kernel of odd size.
    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId, dilation: usize) -> Result<NodeId> {
        let xs = self.value(x).expect_5d("conv input")?;
        let ws = self.value(w).expect_5d("conv weight")?;
        let [n, ci, d0, d1, d2] = xs;
        let [co, wci, k0, k1, k2] = ws;
        if wci != ci || k0 != k1 || k1 != k2 || k0 % 2 == 0 {
            return Err(Error::ShapeMismatch(format!("weight {ws:?} incompatible with input {xs:?}")));
        }
        if self.value(b).len() != co {
            return Err(Error::ShapeMismatch(format!("bias has {} entries, expected {co}", self.value(b).len())));
        }
        if dilation == 0 {
            return Err(Error::ShapeMismatch("dilation must be >= 1".into()));
        }
        let dims = [d0, d1, d2];
        let plane = d0 * d1 * d2;
        let taps = tap_offsets(k0, dilation);
        let nt = taps.len();
        let wv = self.value(w).data();
        // [ci][tap][co] so each input segment updates every output channel
        let mut wt = vec![T::zero(); wv.len()];
        for o in 0..co {
            for c in 0..ci {
                for t in 0..nt {
                    wt[(c * nt + t) * co + o] = wv[(o * ci + c) * nt + t];
                }
            }
        }
        let geo = Geometry { dims, taps: &taps, cin: ci, cout: co };
        let xv = self.value(x).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); n * co * plane];
        out.par_chunks_mut(co * plane).zip(xv.par_chunks(ci * plane)).for_each(|(o, xs)| {
            correlate(&geo, xs, &wt, Some(bv), o);
        });
        let value = Tensor { shape: vec![n, co, d0, d1, d2], data: out };
        Ok(self.push(value, Op::Conv3d { x, w, b, dilation }))
    }

    /// Train-mode batch normalization over batch and spatial axes.
    pub fn batchnorm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<(NodeId, BatchStats)> {
        let [n, c, d0, d1, d2] = self.value(x).expect_5d("batchnorm input")?;
        self.check_channel_params(gamma, beta, c)?;
        let plane = d0 * d1 * d2;
        let m = n * plane;
        if m < 2 {
            return Err(Error::DegenerateBatch(m));
        }
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for b in 0..n {
                s += xv[(b * c + ch) * plane..][..plane].iter().map(|v| v.f64()).sum::<f64>();
            }
            let mu = s / m as f64;
            let mut q = 0.0;
            for b in 0..n {
                q += xv[(b * c + ch) * plane..][..plane].iter().map(|v| (v.f64() - mu).powi(2)).sum::<f64>();
            }
            mean[ch] = mu;
            var[ch] = q / m as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let blocks = xhat.chunks_exact_mut(plane).zip(out.chunks_exact_mut(plane)).zip(xv.chunks_exact(plane));
        for (k, ((hs, os), xs)) in blocks.enumerate() {
            let ch = k % c;
            let (mu, is, ga, be) = (mean[ch], inv_std[ch], g[ch].f64(), bt[ch].f64());
            for ((h, o), v) in hs.iter_mut().zip(os.iter_mut()).zip(xs) {
                let xh = (v.f64() - mu) * is;
                *h = T::of(xh);
                *o = T::of(ga * xh + be);
            }
        }
        let unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
        let value = Tensor { shape: vec![n, c, d0, d1, d2], data: out };
        let id = self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std });
        Ok((id, BatchStats { mean, var: unbiased }))
    }

    /// Eval-mode batch normalization with fixed statistics.
    pub fn batchnorm_fixed(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let [n, c, d0, d1, d2] = self.value(x).expect_5d("batchnorm input")?;
        self.check_channel_params(gamma, beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::ShapeMismatch(format!("running statistics must have {c} channels")));
        }
        let plane = d0 * d1 * d2;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = Vec::with_capacity(self.value(x).len());
        for (k, xs) in self.value(x).data().chunks_exact(plane).enumerate() {
            let ch = k % c;
            let (mu, is, ga, be) = (mean[ch], inv_std[ch], g[ch].f64(), bt[ch].f64());
            out.extend(xs.iter().map(|v| T::of(ga * (v.f64() - mu) * is + be)));
        }
        let value = Tensor { shape: vec![n, c, d0, d1, d2], data: out };
        Ok(self.push(value, Op::ChannelAffine { x, gamma, beta, mean: mean.to_vec(), inv_std }))
    }

    fn check_channel_params(&self, gamma: NodeId, beta: NodeId, c: usize) -> Result<()> {
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::ShapeMismatch(format!("batchnorm affine parameters must have {c} entries")));
        }
        Ok(())
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let value = Tensor { shape: v.shape.clone(), data: v.data.iter().map(|&a| a.max(T::zero())).collect() };
        self.push(value, Op::Relu { x })
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut impl rand::Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::ShapeMismatch(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let v = self.value(x);
        let mask: Vec<T> =
            (0..v.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
        let value = Tensor { shape: v.shape.clone(), data: v.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect() };
        Ok(self.push(value, Op::Dropout { x, mask }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return Err(Error::ShapeMismatch(format!("add {:?} + {:?}", va.shape, vb.shape)));
        }
        let value = Tensor { shape: va.shape.clone(), data: va.data.iter().zip(&vb.data).map(|(&p, &q)| p + q).collect() };
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data.iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(T::of(s)), Op::Sum { x })
    }

    /// Scalar node holding element `index` of `x`.
    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(x);
        if index >= v.len() {
            return Err(Error::ShapeMismatch(format!("index {index} outside tensor of {} elements", v.len())));
        }
        let value = Tensor::scalar(v.data[index]);
        Ok(self.push(value, Op::Pick { x, index }))
    }

    /// Mean mixed loss over the batch of heatmap stacks in `x`
    /// (`[batch, K, d0, d1, d2]`); returns the node and per-sample components.
    pub fn mixed_loss(
        &mut self,
        x: NodeId,
        targets: &[HeatmapStack<T>],
        points: &[Vec<[f64; 3]>],
        alpha: f64,
    ) -> Result<(NodeId, Vec<LossValue>)> {
        let [n, k, d0, d1, d2] = self.value(x).expect_5d("loss input")?;
        if targets.len() != n || points.len() != n {
            return Err(Error::ShapeMismatch(format!("batch of {n} needs {n} targets and point sets")));
        }
        let per = k * d0 * d1 * d2;
        let xv = self.value(x).data();
        let mut grad = vec![T::zero(); xv.len()];
        let mut parts = Vec::with_capacity(n);
        let mut total = 0.0;
        for s in 0..n {
            let h_hat = HeatmapStack::new([d0, d1, d2], k, xv[s * per..(s + 1) * per].to_vec())?;
            let (lv, g) = mixed_loss_and_grad(&targets[s], &h_hat, &points[s], alpha, targets[s].mask())?;
            total += lv.total;
            let scale = 1.0 / n as f64;
            for (dst, src) in grad[s * per..(s + 1) * per].iter_mut().zip(g) {
                *dst = T::of(src * scale);
            }
            parts.push(lv);
        }
        let value = Tensor::scalar(T::of(total / n as f64));
        Ok((self.push(value, Op::MixedLoss { x, grad }), parts))
    }

    /// Replaces any gradients from an earlier call and fills in `d loss / d node`
    /// for every node that `loss` depends on.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let n = self.value(loss).len();
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, id: NodeId) -> &mut Vec<T> {
        let len = self.nodes[id.0].value.len();
        self.grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Ops with simple elementwise structure are handled inline; the
        // heavier ones take split borrows of `nodes` and `grads`.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Relu { x } => {
                let x = *x;
                let out: Vec<T> = self.nodes[i].value.data.iter().zip(g).map(|(&y, &d)| if y > T::zero() { d } else { T::zero() }).collect();
                add_into(self.acc(x), &out);
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                let out: Vec<T> = mask.iter().zip(g).map(|(&m, &d)| m * d).collect();
                add_into(self.acc(x), &out);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                add_into(self.acc(a), g);
                add_into(self.acc(b), g);
            }
            Op::Sum { x } => {
                let x = *x;
                let s = g[0];
                self.acc(x).iter_mut().for_each(|v| *v += s);
            }
            Op::Pick { x, index } => {
                let (x, index) = (*x, *index);
                self.acc(x)[index] += g[0];
            }
            Op::MixedLoss { x, grad } => {
                let x = *x;
                let out: Vec<T> = grad.iter().map(|&v| v * g[0]).collect();
                add_into(self.acc(x), &out);
            }
            Op::Conv3d { x, w, b, dilation } => {
                let (x, w, b, dilation) = (*x, *w, *b, *dilation);
                let (dx, dw, db) = conv_backward(self.value(x), self.value(w), g, dilation);
                add_into(self.acc(x), &dx);
                add_into(self.acc(w), &dw);
                add_into(self.acc(b), &db);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let shape = self.nodes[i].value.shape.clone();
                let (dx, dg, dbt) = bn_backward(&shape, xhat, inv_std, self.value(gamma).data(), g);
                add_into(self.acc(x), &dx);
                add_into(self.acc(gamma), &dg);
                add_into(self.acc(beta), &dbt);
            }
            Op::ChannelAffine { x, gamma, beta, mean, inv_std } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let shape = &self.nodes[i].value.shape;
                let (c, plane) = (shape[1], shape[2] * shape[3] * shape[4]);
                let gm = self.nodes[gamma.0].value.data();
                let xv = self.nodes[x.0].value.data();
                let mut dx = vec![T::zero(); g.len()];
                let mut dg = vec![0.0; c];
                let mut dbt = vec![0.0; c];
                for (idx, &d) in g.iter().enumerate() {
                    let ch = (idx / plane) % c;
                    let d = d.f64();
                    dx[idx] = T::of(d * gm[ch].f64() * inv_std[ch]);
                    dg[ch] += d * (xv[idx].f64() - mean[ch]) * inv_std[ch];
                    dbt[ch] += d;
                }
                add_into(self.acc(x), &dx);
                add_into(self.acc(gamma), &to_t::<T>(&dg));
                add_into(self.acc(beta), &to_t::<T>(&dbt));
            }
        }
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf)
    }
}

fn to_t<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn conv_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, g: &[T], dilation: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, ci, d0, d1, d2]: [usize; 5] = x.shape.as_slice().try_into().expect("checked in forward");
    let (co, ksize) = (w.shape[0], w.shape[2]);
    let dims = [d0, d1, d2];
    let plane = d0 * d1 * d2;
    let taps = tap_offsets(ksize, dilation);
    let nt = taps.len();

    // The input gradient correlates g with the mirrored kernel and the channel
    // roles swapped; co becomes the kernel's input axis.
    let mirrored: Vec<[isize; 3]> = taps.iter().map(|o| o.map(|v| -v)).collect();
    let mut wt = vec![T::zero(); w.data.len()];
    for o in 0..co {
        for c in 0..ci {
            for t in 0..nt {
                wt[(o * nt + t) * ci + c] = w.data[(o * ci + c) * nt + t];
            }
        }
    }
    let back = Geometry { dims, taps: &mirrored, cin: co, cout: ci };
    let mut dx = vec![T::zero(); x.data.len()];
    dx.par_chunks_mut(ci * plane).zip(g.par_chunks(co * plane)).for_each(|(d, gs)| {
        correlate(&back, gs, &wt, None, d);
    });

    let geo = Geometry { dims, taps: &taps, cin: ci, cout: co };
    let partials: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut acc = vec![0.0; co * ci * nt];
            weight_grad(&geo, &g[s * co * plane..][..co * plane], &x.data[s * ci * plane..][..ci * plane], &mut acc);
            acc
        })
        .collect();
    let mut dw = vec![0.0; co * ci * nt];
    for p in &partials {
        for (d, v) in dw.iter_mut().zip(p) {
            *d += v;
        }
    }

    let db = (0..co)
        .map(|oc| {
            let s: f64 = (0..n).map(|s| g[(s * co + oc) * plane..][..plane].iter().map(|v| v.f64()).sum::<f64>()).sum();
            T::of(s)
        })
        .collect();
    (dx, to_t(&dw), db)
}

fn bn_backward<T: Scalar>(shape: &[usize], xhat: &[T], inv_std: &[f64], gamma: &[T], g: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c) = (shape[0], shape[1]);
    let plane: usize = shape[2..].iter().product();
    let m = (n * plane) as f64;
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (k, (gs, hs)) in g.chunks_exact(plane).zip(xhat.chunks_exact(plane)).enumerate() {
        let ch = k % c;
        let (mut a, mut b) = (0.0, 0.0);
        for (&d, &h) in gs.iter().zip(hs) {
            a += d.f64();
            b += d.f64() * h.f64();
        }
        sum_g[ch] += a;
        sum_gx[ch] += b;
    }
    let mut dx = Vec::with_capacity(g.len());
    for (k, (gs, hs)) in g.chunks_exact(plane).zip(xhat.chunks_exact(plane)).enumerate() {
        let ch = k % c;
        let s = gamma[ch].f64() * inv_std[ch] / m;
        let (sg, sgx) = (sum_g[ch], sum_gx[ch]);
        dx.extend(gs.iter().zip(hs).map(|(&d, &h)| T::of(s * (m * d.f64() - sg - h.f64() * sgx))));
    }
    (dx, to_t(&sum_gx), to_t(&sum_g))
}
