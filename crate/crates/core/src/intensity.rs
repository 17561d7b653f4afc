//! Machine-side (non-spatial) artifact simulators: ghosting, spikes, bias
//! field, noise, motion and blur. None of these move anatomy, so landmarks are
//! never touched by them.

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft3, fft_axis, signed_frequency};
use crate::rng::stream_rng;
use crate::spatial::{apply_affine, AffineParams};
use crate::volume::Volume3;

fn to_complex(v: &Volume3) -> Vec<Complex64> {
    v.data().iter().map(|&x| Complex64::new(x as f64, 0.0)).collect()
}

/// Periodic k-space line attenuation along `axis`: every bin whose signed
/// frequency is a non-zero multiple of `n` is scaled by `1 - rho`.
pub fn add_ghosting(v: &Volume3, axis: usize, n: usize, rho: f64) -> Result<Volume3> {
    if axis > 2 {
        return Err(Error::InvalidParameter(format!("ghost axis {axis} out of range")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("ghost period must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("ghost intensity {rho} outside [0, 1]")));
    }
    let dims = v.dims();
    let len = dims[axis];
    let mut k = to_complex(v);
    fft_axis(&mut k, dims, axis, false);
    let keep = 1.0 - rho;
    let strides = [dims[1] * dims[2], dims[2], 1];
    for (idx, x) in k.iter_mut().enumerate() {
        let bin = (idx / strides[axis]) % len;
        let f = signed_frequency(bin, len);
        if f != 0 && f.unsigned_abs() as usize % n == 0 {
            *x *= keep;
        }
    }
    fft_axis(&mut k, dims, axis, true);
    Ok(v.with_data(k.iter().map(|c| c.re as f32).collect()))
}

/// Spike injection in the complex spectrum; returns the (complex) spatial
/// result before the imaginary part is dropped.
pub fn spike_field(v: &Volume3, count: usize, amplitude: f64, rng: &mut impl rand::Rng) -> Result<Vec<Complex64>> {
    if !(amplitude >= 0.0) {
        return Err(Error::InvalidParameter("spike amplitude must be non-negative".into()));
    }
    let dims = v.dims();
    let mut k = to_complex(v);
    fft3(&mut k, dims, false);
    let peak = k.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let spike = amplitude * peak;
    // Candidates: non-DC bins whose conjugate partner is a different bin.
    let partner = |q: [usize; 3]| [0, 1, 2].map(|a| (dims[a] - q[a]) % dims[a]);
    let total = k.len();
    let mut placed = 0;
    let mut attempts = 0;
    while placed < count {
        attempts += 1;
        if attempts > 1000 * (count + 1) {
            return Err(Error::InvalidParameter(format!("no admissible spike frequency in dims {dims:?}")));
        }
        let idx = rng.random_range(0..total);
        let q = v.coords(idx);
        let c = partner(q);
        if q == [0, 0, 0] || q == c {
            continue;
        }
        let cidx = v.index(c);
        k[idx] += Complex64::new(spike, 0.0);
        k[cidx] += Complex64::new(spike, 0.0);
        placed += 1;
    }
    fft3(&mut k, dims, true);
    Ok(k)
}

/// Adds `count` conjugate-symmetric k-space spikes of magnitude `amplitude * max|F(v)|`.
pub fn add_spikes(v: &Volume3, count: usize, amplitude: f64, rng: &mut impl rand::Rng) -> Result<Volume3> {
    if count == 0 {
        return Ok(v.clone());
    }
    let k = spike_field(v, count, amplitude, rng)?;
    Ok(v.with_data(k.iter().map(|c| c.re as f32).collect()))
}

/// Exponents `(a, b, c)` with `a + b + c <= order`, in a fixed order.
pub fn monomials(order: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for total in 0..=order {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

fn normalized(i: usize, d: usize) -> f64 {
    if d > 1 {
        2.0 * i as f64 / (d - 1) as f64 - 1.0
    } else {
        0.0
    }
}

/// Multiplies by `exp(P(x))` for a polynomial of `order` over `[-1, 1]^3` with
/// given coefficients (one per entry of [`monomials`]).
pub fn apply_bias_polynomial(v: &Volume3, order: usize, coefficients: &[f64]) -> Volume3 {
    let terms = monomials(order);
    assert_eq!(terms.len(), coefficients.len(), "one coefficient per monomial");
    let dims = v.dims();
    let data = v
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &x)| {
            let i = v.coords(idx);
            let u = [0, 1, 2].map(|a| normalized(i[a], dims[a]));
            let p: f64 = terms
                .iter()
                .zip(coefficients)
                .map(|(e, c)| c * u[0].powi(e[0] as i32) * u[1].powi(e[1] as i32) * u[2].powi(e[2] as i32))
                .sum();
            (x as f64 * p.exp()) as f32
        })
        .collect();
    v.with_data(data)
}

/// Smooth multiplicative inhomogeneity with coefficients ~ U(-magnitude, magnitude).
pub fn add_bias_field(v: &Volume3, order: usize, magnitude: f64, rng: &mut impl rand::Rng) -> Result<Volume3> {
    if !(magnitude >= 0.0) {
        return Err(Error::InvalidParameter("bias magnitude must be non-negative".into()));
    }
    if magnitude == 0.0 {
        return Ok(v.clone());
    }
    let coefficients: Vec<f64> = monomials(order).iter().map(|_| rng.random_range(-magnitude..=magnitude)).collect();
    Ok(apply_bias_polynomial(v, order, &coefficients))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Rician,
}

/// Additive Gaussian or Rician noise with std `sigma * range(v)`.
///
/// Each axis-2 line draws from its own stream keyed by a seed taken from
/// `rng`, so the result does not depend on thread count.
pub fn add_noise(v: &Volume3, sigma: f64, kind: NoiseKind, rng: &mut impl rand::Rng) -> Result<Volume3> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter("noise sigma must be non-negative".into()));
    }
    if sigma == 0.0 && kind == NoiseKind::Gaussian {
        return Ok(v.clone());
    }
    let (lo, hi) = v.min_max();
    let std = sigma * (hi - lo) as f64;
    let seed: u64 = rng.random();
    let line = v.dims()[2];
    let mut out = v.data().to_vec();
    out.par_chunks_mut(line).enumerate().for_each(|(li, chunk)| {
        let mut r = stream_rng(seed, li as u64);
        let normal = Normal::new(0.0, std).expect("finite std");
        for x in chunk.iter_mut() {
            let base = *x as f64;
            *x = match kind {
                NoiseKind::Gaussian => (base + normal.sample(&mut r)) as f32,
                NoiseKind::Rician => {
                    let e1 = normal.sample(&mut r);
                    let e2 = normal.sample(&mut r);
                    ((base + e1).powi(2) + e2 * e2).sqrt() as f32
                }
            };
        }
    });
    Ok(v.with_data(out))
}

/// Image-space motion: `(1 - sum w) * v + sum_j w_j * affine(v, m_j)`.
pub fn simulate_motion(v: &Volume3, movements: &[AffineParams], weights: &[f64]) -> Result<Volume3> {
    if movements.len() != weights.len() {
        return Err(Error::InvalidParameter("one weight per movement".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidParameter("motion weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::InvalidParameter(format!("motion weights sum to {total} > 1")));
    }
    let rest = (1.0 - total).max(0.0);
    let mut acc: Vec<f64> = v.data().iter().map(|&x| rest * x as f64).collect();
    for (m, &w) in movements.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let moved = apply_affine(v, m)?;
        for (a, x) in acc.iter_mut().zip(moved.data()) {
            *a += w * *x as f64;
        }
    }
    Ok(v.with_data(acc.into_iter().map(|x| x as f32).collect()))
}

/// Normalized Gaussian kernel truncated at `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize;
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Separable Gaussian blur with replicated edges; a zero std leaves that axis alone.
pub fn blur(v: &Volume3, stds: [f64; 3]) -> Result<Volume3> {
    if stds.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidParameter("blur stds must be non-negative".into()));
    }
    let dims = v.dims();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut cur: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    for axis in 0..3 {
        if stds[axis] == 0.0 {
            continue;
        }
        let kernel = gaussian_kernel(stds[axis]);
        let r = (kernel.len() / 2) as isize;
        let n = dims[axis] as isize;
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = ((idx / strides[axis]) % dims[axis]) as isize;
            let base = idx as isize - pos * strides[axis] as isize;
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let src = (pos + t as isize - r).clamp(0, n - 1);
                acc += w * cur[(base + src * strides[axis] as isize) as usize];
            }
            *out = acc;
        }
        cur = next;
    }
    Ok(v.with_data(cur.into_iter().map(|x| x as f32).collect()))
}
