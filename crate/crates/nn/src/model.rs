//! A scaled-down HighRes3DNet: a full-resolution stack of pre-activation
//! residual blocks with dilations 1, 2 and 4, ending in a 1x1x1 head that
//! emits one heatmap channel per landmark.

use brainmark_core::rng::{mix_seed, stream_rng};
use brainmark_core::{Scalar, Volume3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{spatial_softmax, HeatmapStack};
use crate::tensor::{BatchStats, Graph, NodeId, Tensor};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
pub const DILATIONS: [usize; 3] = [1, 2, 4];
/// Second convolution of the first block in the last dilation group.
pub const DEFAULT_HOOK: &str = "g3b1.conv2";

const INIT_SALT: u64 = 0x1417;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dims: [usize; 3],
    pub landmarks: usize,
    pub channels: usize,
    pub blocks: usize,
    pub dilations: [usize; 3],
    pub dropout: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            landmarks: 8,
            channels: 8,
            blocks: 1,
            dilations: DILATIONS,
            dropout: 0.1,
            sigma: 2.0,
            alpha: 0.4,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 2,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dims.contains(&0) {
            return bad(format!("dims {:?} must be positive", self.dims));
        }
        if self.landmarks == 0 || self.channels == 0 || self.blocks == 0 {
            return bad("landmarks, channels and blocks must be >= 1".into());
        }
        if self.dilations != DILATIONS {
            return bad(format!("dilations must be {DILATIONS:?}, got {:?}", self.dilations));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma {} must be positive", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning rate {} must be >= 0", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        Ok(())
    }

    /// `28C + 3B(54C^2 + 6C) + CK + K`: stem conv, two convs and two batch
    /// norms per block, and the 1x1x1 head.
    pub fn parameter_count(&self) -> usize {
        let (c, b, k) = (self.channels, self.blocks, self.landmarks);
        28 * c + 3 * b * (54 * c * c + 6 * c) + c * k + k
    }
}

/// Which stochastic / batch-dependent behaviour a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub dropout: bool,
    /// Normalize with batch statistics instead of running statistics.
    pub batch_stats: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode { dropout: true, batch_stats: true };
    pub const EVAL: Mode = Mode { dropout: false, batch_stats: false };
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    fn fresh(c: usize) -> Self {
        Self { mean: vec![0.0; c], var: vec![1.0; c] }
    }

    fn update(&mut self, batch: &BatchStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    cfg: ModelConfig,
    params: Vec<Tensor<T>>,
    names: Vec<String>,
    running: Vec<RunningStats>,
}

/// Node ids of one forward pass.
pub struct Forward {
    pub output: NodeId,
    pub params: Vec<NodeId>,
    /// Convolution outputs by layer name, in network order.
    pub layers: Vec<(String, NodeId)>,
    pub batch_stats: Vec<BatchStats>,
}

impl Forward {
    pub fn layer(&self, name: &str) -> Result<NodeId> {
        self.layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::HookLayerMissing(name.to_string()))
    }
}

fn block_prefix(g: usize, b: usize) -> String {
    format!("g{}b{}", g + 1, b + 1)
}

/// Shapes of all parameters in storage order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let c = cfg.channels;
    let mut out = vec![("stem.w".to_string(), vec![c, 1, 3, 3, 3]), ("stem.b".to_string(), vec![c])];
    for g in 0..3 {
        for b in 0..cfg.blocks {
            let p = block_prefix(g, b);
            for half in ["1", "2"] {
                out.push((format!("{p}.bn{half}.gamma"), vec![c]));
                out.push((format!("{p}.bn{half}.beta"), vec![c]));
                out.push((format!("{p}.conv{half}.w"), vec![c, c, 3, 3, 3]));
                out.push((format!("{p}.conv{half}.b"), vec![c]));
            }
        }
    }
    out.push(("head.w".to_string(), vec![cfg.landmarks, c, 1, 1, 1]));
    out.push(("head.b".to_string(), vec![cfg.landmarks]));
    out
}

impl<T: Scalar> Model<T> {
    /// He-initialized convolutions, zero biases, unit / zero batch-norm affine.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(mix_seed(cfg.seed, INIT_SALT), 0);
        let mut params = Vec::new();
        let mut names = Vec::new();
        for (name, shape) in layout(&cfg) {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".w") {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
            } else if name.ends_with(".gamma") {
                vec![T::one(); n]
            } else {
                vec![T::zero(); n]
            };
            params.push(Tensor::new(shape, data)?);
            names.push(name);
        }
        let running = (0..3 * cfg.blocks * 2).map(|_| RunningStats::fresh(cfg.channels)).collect();
        Ok(Self { cfg, params, names, running })
    }

    /// Reassembles a model from stored parts, checking every shape.
    pub fn from_parts(cfg: ModelConfig, params: Vec<Tensor<T>>, running: Vec<RunningStats>) -> Result<Self> {
        let mut m = Self::new(cfg)?;
        if params.len() != m.params.len() || running.len() != m.running.len() {
            return Err(Error::ShapeMismatch("parameter or statistics count differs from config".into()));
        }
        for (have, want) in params.iter().zip(&m.params) {
            if have.shape() != want.shape() {
                return Err(Error::ShapeMismatch(format!("parameter shape {:?}, expected {:?}", have.shape(), want.shape())));
            }
        }
        if running.iter().any(|r| r.mean.len() != m.cfg.channels || r.var.len() != m.cfg.channels) {
            return Err(Error::ShapeMismatch("running statistics width differs from config".into()));
        }
        m.params = params;
        m.running = running;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Names of all convolution layers that can be hooked.
    pub fn layer_names(&self) -> Vec<String> {
        let mut out = vec!["stem".to_string()];
        for g in 0..3 {
            for b in 0..self.cfg.blocks {
                let p = block_prefix(g, b);
                out.push(format!("{p}.conv1"));
                out.push(format!("{p}.conv2"));
            }
        }
        out.push("head".to_string());
        out
    }

    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (r, s) in self.running.iter_mut().zip(stats) {
            r.update(s);
        }
    }

    /// Stacks volumes into a `[n, 1, d0, d1, d2]` tensor.
    pub fn input_tensor(&self, volumes: &[&Volume3]) -> Result<Tensor<T>> {
        let dims = self.cfg.dims;
        let mut data = Vec::with_capacity(volumes.len() * dims.iter().product::<usize>());
        for v in volumes {
            if v.dims() != dims {
                return Err(Error::ShapeMismatch(format!("volume {:?} but model expects {dims:?}", v.dims())));
            }
            data.extend(v.data().iter().map(|&x| T::of(x as f64)));
        }
        Tensor::new(vec![volumes.len(), 1, dims[0], dims[1], dims[2]], data)
    }

    /// Builds the network on `g`. With `replace = Some((layer, a))` the output
    /// of that convolution is swapped for the leaf `a` before the rest of the
    /// network consumes it.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        input: Tensor<T>,
        mode: Mode,
        rng: &mut impl rand::Rng,
        replace: Option<(&str, Tensor<T>)>,
    ) -> Result<Forward> {
        let shape = input.shape().to_vec();
        if shape.len() != 5 || shape[1] != 1 || shape[2..] != self.cfg.dims {
            return Err(Error::ShapeMismatch(format!("input {shape:?} but model expects [n, 1, {:?}]", self.cfg.dims)));
        }
        if replace.as_ref().is_some_and(|(name, _)| !self.layer_names().iter().any(|n| n == name)) {
            return Err(Error::HookLayerMissing(replace.expect("checked").0.to_string()));
        }
        let mut replace = replace;
        let params: Vec<NodeId> = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        let mut layers = Vec::new();
        let mut batch_stats = Vec::new();
        let mut next = 0usize;
        let mut take = || {
            next += 1;
            params[next - 1]
        };
        let mut conv = |g: &mut Graph<T>, name: String, x: NodeId, w: NodeId, b: NodeId, dil: usize| -> Result<NodeId> {
            let mut y = g.conv3d(x, w, b, dil)?;
            if let Some((_, a)) = replace.take_if(|(n, _)| *n == name) {
                if a.shape() != g.value(y).shape() {
                    return Err(Error::ShapeMismatch(format!("replacement {:?} for {name} of {:?}", a.shape(), g.value(y).shape())));
                }
                y = g.leaf(a);
            }
            layers.push((name, y));
            Ok(y)
        };
        let mut bn_index = 0usize;
        let mut norm = |g: &mut Graph<T>, x: NodeId, gamma: NodeId, beta: NodeId| -> Result<NodeId> {
            let id = if mode.batch_stats {
                let (id, s) = g.batchnorm(x, gamma, beta, BN_EPS)?;
                batch_stats.push(s);
                id
            } else {
                let r = &self.running[bn_index];
                g.batchnorm_fixed(x, gamma, beta, &r.mean, &r.var, BN_EPS)?
            };
            bn_index += 1;
            Ok(id)
        };

        let x = g.leaf(input);
        let (w, b) = (take(), take());
        let mut h = conv(g, "stem".into(), x, w, b, 1)?;
        for (gi, &dil) in self.cfg.dilations.iter().enumerate() {
            for bi in 0..self.cfg.blocks {
                let p = block_prefix(gi, bi);
                let mut y = h;
                for half in 1..=2 {
                    let (gamma, beta, w, b) = (take(), take(), take(), take());
                    y = norm(g, y, gamma, beta)?;
                    y = g.relu(y);
                    y = conv(g, format!("{p}.conv{half}"), y, w, b, dil)?;
                }
                h = g.add(h, y)?;
            }
        }
        if mode.dropout && self.cfg.dropout > 0.0 {
            h = g.dropout(h, self.cfg.dropout, rng)?;
        }
        let (w, b) = (take(), take());
        let output = conv(g, "head".into(), h, w, b, 1)?;
        Ok(Forward { output, params, layers, batch_stats })
    }

    /// Eval-mode heatmaps and soft-argmax coordinates for one volume.
    pub fn predict(&self, v: &Volume3) -> Result<(HeatmapStack<T>, Vec<[f64; 3]>)> {
        let mut g = Graph::new();
        let input = self.input_tensor(&[v])?;
        // eval mode never draws from the generator
        let mut rng = stream_rng(0, 0);
        let f = self.forward(&mut g, input, Mode::EVAL, &mut rng, None)?;
        let out = g.value(f.output).data().to_vec();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("forward pass"));
        }
        let h_hat = HeatmapStack::new(self.cfg.dims, self.cfg.landmarks, out)?;
        let (_, points) = spatial_softmax(&h_hat);
        Ok((h_hat, points))
    }
}
