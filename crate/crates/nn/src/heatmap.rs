//! Heatmap targets, spatial softmax and the coordinate / heatmap / mixed losses.
//!
//! All reductions run in f64 whatever the storage scalar is, one channel at a
//! time in a fixed order, so results do not depend on thread count.

use brainmark_core::{LandmarkSet, Scalar};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Smallest probability fed to `log` in the heatmap loss.
pub const LOG_FLOOR: f64 = 1e-30;
pub const DEFAULT_SIGMA: f64 = 2.0;

/// `K` scalar fields over a common grid, channel-major, axis 2 fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack<T> {
    dims: [usize; 3],
    channels: usize,
    data: Vec<T>,
    /// `false` marks a channel excluded from every loss.
    mask: Vec<bool>,
}

impl<T: Scalar> HeatmapStack<T> {
    pub fn new(dims: [usize; 3], channels: usize, data: Vec<T>) -> Result<Self> {
        let plane = dims.iter().product::<usize>();
        if data.len() != channels * plane {
            return Err(Error::ShapeMismatch(format!(
                "{channels} channels of {dims:?} need {} values, got {}",
                channels * plane,
                data.len()
            )));
        }
        Ok(Self { dims, channels, data, mask: vec![true; channels] })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.channels {
            return Err(Error::ShapeMismatch(format!("mask has {} entries for {} channels", mask.len(), self.channels)));
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn channel(&self, t: usize) -> &[T] {
        let n = self.plane();
        &self.data[t * n..(t + 1) * n]
    }

    fn coords(&self, idx: usize) -> [f64; 3] {
        let [_, d1, d2] = self.dims;
        [(idx / (d1 * d2)) as f64, ((idx / d2) % d1) as f64, (idx % d2) as f64]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub l_c: f64,
    pub l_h: f64,
    pub alpha: f64,
}

/// One normalized isotropic Gaussian per landmark; out-of-bounds landmarks get
/// a uniform channel that is masked out.
pub fn gen_gt_heatmap<T: Scalar>(lms: &LandmarkSet, dims: [usize; 3], sigma: f64) -> Result<HeatmapStack<T>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("heatmap sigma must be positive, got {sigma}")));
    }
    let plane: usize = dims.iter().product();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let channels: Vec<Vec<T>> = lms
        .points()
        .par_iter()
        .map(|lm| {
            if lm.oob {
                return vec![T::of(1.0 / plane as f64); plane];
            }
            let mut v = vec![0.0f64; plane];
            for (idx, x) in v.iter_mut().enumerate() {
                let q = [idx / (dims[1] * dims[2]), (idx / dims[2]) % dims[1], idx % dims[2]];
                let d2: f64 = (0..3).map(|a| (q[a] as f64 - lm.p[a]).powi(2)).sum();
                *x = (-d2 * inv).exp();
            }
            let s: f64 = v.iter().sum();
            v.iter().map(|x| T::of(x / s)).collect()
        })
        .collect();
    let mask = lms.points().iter().map(|l| !l.oob).collect();
    HeatmapStack::new(dims, lms.len(), channels.concat())?.with_mask(mask)
}

fn softmax_channel<T: Scalar>(z: &[T]) -> Vec<f64> {
    let m = z.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = z.iter().map(|v| (v.f64() - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= s);
    e
}

fn expectation<T: Scalar>(stack: &HeatmapStack<T>, phi: &[f64]) -> [f64; 3] {
    let mut p = [0.0; 3];
    for (idx, &w) in phi.iter().enumerate() {
        let q = stack.coords(idx);
        for a in 0..3 {
            p[a] += w * q[a];
        }
    }
    p
}

/// Per-channel softmax over all voxels and the expected voxel coordinate
/// under each resulting distribution.
pub fn spatial_softmax<T: Scalar>(h_hat: &HeatmapStack<T>) -> (HeatmapStack<T>, Vec<[f64; 3]>) {
    let parts: Vec<(Vec<f64>, [f64; 3])> = (0..h_hat.channels)
        .into_par_iter()
        .map(|t| {
            let phi = softmax_channel(h_hat.channel(t));
            let p = expectation(h_hat, &phi);
            (phi, p)
        })
        .collect();
    let data = parts.iter().flat_map(|(phi, _)| phi.iter().map(|&x| T::of(x))).collect();
    let points = parts.iter().map(|(_, p)| *p).collect();
    let phi = HeatmapStack { dims: h_hat.dims, channels: h_hat.channels, data, mask: h_hat.mask.clone() };
    (phi, points)
}

fn active_count(mask: &[bool]) -> Result<usize> {
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        k => Ok(k),
    }
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Mean squared Euclidean distance over unmasked landmarks.
pub fn loss_coord(p_hat: &[[f64; 3]], p: &[[f64; 3]], mask: &[bool]) -> Result<f64> {
    if p_hat.len() != p.len() || p.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions, {} targets, {} mask entries", p_hat.len(), p.len(), mask.len())));
    }
    let k = active_count(mask)?;
    let s: f64 = (0..p.len()).filter(|&t| mask[t]).map(|t| sq_dist(p_hat[t], p[t])).sum();
    Ok(s / k as f64)
}

fn cross_entropy<T: Scalar>(h: &[T], phi: impl Iterator<Item = f64>) -> f64 {
    h.iter().zip(phi).map(|(&q, f)| -q.f64() * f.max(LOG_FLOOR).ln()).sum()
}

/// Mean cross-entropy `-sum H log(phi)` over unmasked channels.
pub fn loss_heatmap<T: Scalar>(h: &HeatmapStack<T>, phi: &HeatmapStack<T>, mask: &[bool]) -> Result<f64> {
    check_pair(h, phi)?;
    if mask.len() != h.channels {
        return Err(Error::ShapeMismatch(format!("mask has {} entries for {} channels", mask.len(), h.channels)));
    }
    let k = active_count(mask)?;
    let s: f64 = (0..h.channels)
        .filter(|&t| mask[t])
        .map(|t| cross_entropy(h.channel(t), phi.channel(t).iter().map(|v| v.f64())))
        .sum();
    Ok(s / k as f64)
}

fn check_pair<T: Scalar>(a: &HeatmapStack<T>, b: &HeatmapStack<T>) -> Result<()> {
    if a.dims != b.dims || a.channels != b.channels {
        return Err(Error::ShapeMismatch(format!(
            "heatmap stacks differ: {} x {:?} vs {} x {:?}",
            a.channels, a.dims, b.channels, b.dims
        )));
    }
    Ok(())
}

/// Loss value and `dL/dH_hat` (f64, same layout as `h_hat`) in one pass.
pub(crate) fn mixed_loss_and_grad<T: Scalar>(
    h: &HeatmapStack<T>,
    h_hat: &HeatmapStack<T>,
    p: &[[f64; 3]],
    alpha: f64,
    mask: &[bool],
) -> Result<(LossValue, Vec<f64>)> {
    check_pair(h, h_hat)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    if p.len() != h.channels || mask.len() != h.channels {
        return Err(Error::ShapeMismatch(format!("{} channels but {} points, {} mask entries", h.channels, p.len(), mask.len())));
    }
    let k = active_count(mask)? as f64;
    let plane = h.plane();
    let per_channel: Vec<(f64, f64, Vec<f64>)> = (0..h.channels)
        .into_par_iter()
        .map(|t| {
            if !mask[t] {
                return (0.0, 0.0, vec![0.0; plane]);
            }
            let phi = softmax_channel(h_hat.channel(t));
            let target = h.channel(t);
            let ph = expectation(h, &phi);
            let lc = sq_dist(ph, p[t]);
            let lh = cross_entropy(target, phi.iter().copied());
            // Floored terms are constant in H_hat and drop out of the gradient.
            let kept: f64 = target.iter().zip(&phi).filter(|(_, &f)| f >= LOG_FLOOR).map(|(q, _)| q.f64()).sum();
            let diff = [0, 1, 2].map(|a| ph[a] - p[t][a]);
            let g = phi
                .iter()
                .zip(target)
                .enumerate()
                .map(|(idx, (&f, q))| {
                    let q = if f >= LOG_FLOOR { q.f64() } else { 0.0 };
                    let gh = f * kept - q;
                    let y = h.coords(idx);
                    let gc: f64 = (0..3).map(|a| 2.0 * diff[a] * f * (y[a] - ph[a])).sum();
                    (alpha * gh + (1.0 - alpha) * gc) / k
                })
                .collect();
            (lc, lh, g)
        })
        .collect();
    let l_c = per_channel.iter().map(|c| c.0).sum::<f64>() / k;
    let l_h = per_channel.iter().map(|c| c.1).sum::<f64>() / k;
    let grad = per_channel.into_iter().flat_map(|c| c.2).collect();
    Ok((LossValue { total: alpha * l_h + (1.0 - alpha) * l_c, l_c, l_h, alpha }, grad))
}

/// `alpha * L_h + (1 - alpha) * L_c` with softmax and coordinates computed from `h_hat`.
pub fn loss_mixed<T: Scalar>(
    h: &HeatmapStack<T>,
    h_hat: &HeatmapStack<T>,
    p: &[[f64; 3]],
    alpha: f64,
    mask: &[bool],
) -> Result<LossValue> {
    mixed_loss_and_grad(h, h_hat, p, alpha, mask).map(|(v, _)| v)
}

/// Exact gradient of [`loss_mixed`] with respect to `h_hat`.
pub fn loss_mixed_backward<T: Scalar>(
    h: &HeatmapStack<T>,
    h_hat: &HeatmapStack<T>,
    p: &[[f64; 3]],
    alpha: f64,
    mask: &[bool],
) -> Result<HeatmapStack<T>> {
    let (_, g) = mixed_loss_and_grad(h, h_hat, p, alpha, mask)?;
    HeatmapStack::new(h.dims, h.channels, g.into_iter().map(T::of).collect())
}
