//! Synthetic head phantoms with known landmark positions.
//!
//! A phantom is an ellipsoidal "head" of uniform base intensity with a brighter
//! shell near its boundary, plus one Gaussian blob per landmark. Landmarks sit
//! at fixed anchor positions spread over an inner ellipsoid, jittered per
//! sample. Each blob has its own peak amplitude so landmarks are
//! distinguishable by intensity as well as position.

use std::f64::consts::PI;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::rng::stream_rng;
use crate::volume::Volume3;

const BASE_INTENSITY: f64 = 0.3;
const SHELL_INTENSITY: f64 = 0.5;
/// Normalized ellipsoid radius where the shell starts.
const SHELL_START: f64 = 0.88;
/// Normalized radius of the inner ellipsoid carrying the anchors.
const ANCHOR_RADIUS: f64 = 0.55;
pub const JITTER: f64 = 1.5;
const MIN_AMPLITUDE: f64 = 0.4;
const MAX_AMPLITUDE: f64 = 0.65;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub k: usize,
    /// Blob standard deviation in voxels.
    pub blob_sigma: f64,
    /// Ellipsoid semi-axes as fractions of dims, each in (0, 0.5].
    pub semi_axes: [f64; 3],
    /// Upper bound of the uniform background noise.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            spacing: [1.0, 1.0, 1.0],
            k: 8,
            blob_sigma: 1.5,
            semi_axes: [0.42, 0.42, 0.42],
            noise_floor: 0.03,
            seed: 42,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("phantom needs at least one landmark".into()));
        }
        if !(self.blob_sigma > 0.0) {
            return Err(Error::InvalidParameter("blob_sigma must be positive".into()));
        }
        if self.semi_axes.iter().any(|&s| !(s > 0.0 && s <= 0.5)) {
            return Err(Error::InvalidParameter("semi-axes must be in (0, 0.5]".into()));
        }
        if !(self.noise_floor >= 0.0) {
            return Err(Error::InvalidParameter("noise_floor must be non-negative".into()));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::NonPositiveDims(self.dims));
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.dims[a] - 1) as f64 / 2.0)
    }

    pub fn radii(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.semi_axes[a] * self.dims[a] as f64)
    }

    /// Landmark `i` (0-based) anchor before jitter.
    pub fn anchors(&self) -> Vec<[f64; 3]> {
        let c = self.center();
        let r = self.radii();
        // golden-angle spiral; unit directions spread roughly evenly
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..self.k)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / self.k as f64;
                let ring = (1.0 - z * z).sqrt();
                let theta = golden * i as f64 + PI / 12.0;
                let dir = [z, ring * theta.cos(), ring * theta.sin()];
                [0, 1, 2].map(|a| c[a] + ANCHOR_RADIUS * r[a] * dir[a])
            })
            .collect()
    }

    pub fn amplitude(&self, i: usize) -> f64 {
        if self.k == 1 {
            return MAX_AMPLITUDE;
        }
        MIN_AMPLITUDE + (MAX_AMPLITUDE - MIN_AMPLITUDE) * i as f64 / (self.k - 1) as f64
    }

    /// Normalized ellipsoid radius `sqrt(sum(((x-c)/r)^2))`.
    pub fn ellipsoid_radius(&self, p: [f64; 3]) -> f64 {
        let c = self.center();
        let r = self.radii();
        (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>().sqrt()
    }
}

/// Generates phantom `index` of the family described by `spec`.
pub fn gen_phantom(spec: &PhantomSpec, index: u64) -> Result<(Volume3, LandmarkSet)> {
    spec.validate()?;
    let anchors = spec.anchors();
    // Worst-case jitter corner must stay inside the ellipsoid.
    let c = spec.center();
    let r = spec.radii();
    for a in &anchors {
        let worst: f64 = (0..3).map(|ax| (((a[ax] - c[ax]).abs() + JITTER) / r[ax]).powi(2)).sum();
        if worst >= 1.0 {
            return Err(Error::InfeasiblePlacement { k: spec.k });
        }
    }

    let mut rng = stream_rng(spec.seed, index);
    let points: Vec<[f64; 3]> = anchors
        .iter()
        .map(|a| a.map(|x| x + rng.random_range(-JITTER..=JITTER)))
        .collect();

    let [d0, d1, d2] = spec.dims;
    let inv2s2 = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);
    let cutoff = (6.0 * spec.blob_sigma).powi(2);
    let amps: Vec<f64> = (0..spec.k).map(|i| spec.amplitude(i)).collect();
    let mut data = Vec::with_capacity(d0 * d1 * d2);
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let x = [i0 as f64, i1 as f64, i2 as f64];
                let rho = spec.ellipsoid_radius(x);
                let mut v = if rho >= 1.0 {
                    0.0
                } else if rho >= SHELL_START {
                    SHELL_INTENSITY
                } else {
                    BASE_INTENSITY
                };
                for (p, amp) in points.iter().zip(&amps) {
                    let d2: f64 = (0..3).map(|a| (x[a] - p[a]).powi(2)).sum();
                    if d2 < cutoff {
                        v += amp * (-d2 * inv2s2).exp();
                    }
                }
                if spec.noise_floor > 0.0 {
                    v += rng.random_range(0.0..spec.noise_floor);
                }
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    let vol = Volume3::new(spec.dims, spec.spacing, data)?;
    Ok((vol, LandmarkSet::from_points(&points)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_index() {
        let spec = PhantomSpec::default();
        let (a, la) = gen_phantom(&spec, 3).unwrap();
        let (b, lb) = gen_phantom(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn landmarks_inside_ellipsoid() {
        let spec = PhantomSpec::default();
        for idx in 0..20 {
            let (_, lms) = gen_phantom(&spec, idx).unwrap();
            assert_eq!(lms.len(), 8);
            for l in lms.points() {
                let c = spec.center();
                let r = spec.radii();
                let s: f64 = (0..3).map(|a| ((l.p[a] - c[a]) / r[a]).powi(2)).sum();
                assert!(s < 1.0, "landmark {} at {:?} outside ellipsoid ({s})", l.id, l.p);
            }
        }
    }

    #[test]
    fn landmark_voxels_outshine_background() {
        let spec = PhantomSpec::default();
        let (v, lms) = gen_phantom(&spec, 0).unwrap();
        let far = 4.0 * spec.blob_sigma;
        let mut background_max = 0.0f32;
        for idx in 0..v.len() {
            let x = v.coords(idx).map(|c| c as f64);
            let near = lms
                .points()
                .iter()
                .any(|l| (0..3).map(|a| (x[a] - l.p[a]).powi(2)).sum::<f64>().sqrt() < far);
            if !near {
                background_max = background_max.max(v.data()[idx]);
            }
        }
        for l in lms.points() {
            let q = l.p.map(|x| x.round() as usize);
            assert!(v.get(q) >= background_max, "landmark {} dimmer than background", l.id);
        }
    }

    #[test]
    fn intensities_in_unit_interval() {
        let (v, _) = gen_phantom(&PhantomSpec::default(), 9).unwrap();
        let (lo, hi) = v.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
        assert!(v.first_non_finite().is_none());
    }

    #[test]
    fn distinct_indices_distinct_jitter() {
        let spec = PhantomSpec::default();
        let sets: Vec<_> = (0..100).map(|i| gen_phantom(&spec, i).unwrap().1.coords()).collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                assert_ne!(sets[i], sets[j]);
            }
        }
    }

    #[test]
    fn anchors_well_separated() {
        let spec = PhantomSpec::default();
        let a = spec.anchors();
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                let d: f64 = (0..3).map(|ax| (a[i][ax] - a[j][ax]).powi(2)).sum::<f64>().sqrt();
                assert!(d > 5.0, "anchors {i},{j} only {d} apart");
            }
        }
    }

    #[test]
    fn tiny_head_is_infeasible() {
        let spec = PhantomSpec { dims: [8, 8, 8], semi_axes: [0.2; 3], ..Default::default() };
        assert!(matches!(gen_phantom(&spec, 0), Err(Error::InfeasiblePlacement { k: 8 })));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(gen_phantom(&PhantomSpec { k: 0, ..Default::default() }, 0).is_err());
        assert!(gen_phantom(&PhantomSpec { blob_sigma: 0.0, ..Default::default() }, 0).is_err());
        assert!(gen_phantom(&PhantomSpec { semi_axes: [0.6, 0.4, 0.4], ..Default::default() }, 0).is_err());
    }
}
