//! Landmark-preserving augmentation.
//!
//! Each sample draws one of four policies and a matching transform chain:
//!
//! | policy | chain                               |
//! |--------|-------------------------------------|
//! | DA1    | one spatial + one intensity         |
//! | DA2    | one intensity                       |
//! | DA3    | one spatial                         |
//! | DA4    | elastic deformation                 |
//!
//! The image receives the whole chain. Every landmark is turned into a faux
//! volume (a unit impulse at its voxel) that is pushed through the spatial
//! members of the chain and then reduced back to a point with a thresholded
//! centroid. Intensity members never move anatomy, so they are skipped for
//! landmarks.

use std::fmt;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{add_bias_field, add_ghosting, add_noise, add_spikes, blur, simulate_motion, NoiseKind};
use crate::landmarks::LandmarkSet;
use crate::rng::{mix_seed, stream_rng};
use crate::spatial::{
    apply_affine, apply_anisotropy, apply_elastic, volume_center, AffineParams, AnisotropyParams, ElasticParams,
};
use crate::volume::Volume3;

/// Voxels above this fraction of the peak take part in the centroid.
pub const CENTROID_THRESHOLD: f64 = 0.5;
/// A faux volume whose peak falls below this has lost its landmark.
pub const LOST_CUTOFF: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    DA1,
    DA2,
    DA3,
    DA4,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::DA1, Policy::DA2, Policy::DA3, Policy::DA4];

    pub fn index(self) -> usize {
        match self {
            Policy::DA1 => 0,
            Policy::DA2 => 1,
            Policy::DA3 => 2,
            Policy::DA4 => 3,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugPolicy {
    pub tag: Policy,
    pub probability: f64,
}

/// Selection probabilities for DA1..DA4.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyProbabilities(pub [f64; 4]);

impl Default for PolicyProbabilities {
    fn default() -> Self {
        Self([0.2, 0.25, 0.25, 0.3])
    }
}

impl PolicyProbabilities {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidParameter(format!("negative policy probability in {p:?}")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("policy probabilities sum to {s}, not 1")));
        }
        Ok(Self(p))
    }

    /// Cumulative half-open intervals in DA1..DA4 order.
    pub fn sample(&self, u: f64) -> AugPolicy {
        let mut upper = 0.0;
        for (tag, &p) in Policy::ALL.iter().zip(&self.0) {
            upper += p;
            if u < upper {
                return AugPolicy { tag: *tag, probability: p };
            }
        }
        // u within rounding of 1.0 falls into the last non-empty interval
        let last = (0..4).rev().find(|&i| self.0[i] > 0.0).unwrap_or(3);
        AugPolicy { tag: Policy::ALL[last], probability: self.0[last] }
    }
}

/// Policy for a uniform draw `u` in `[0, 1)` with the default probabilities.
pub fn sample_policy(u: f64) -> AugPolicy {
    PolicyProbabilities::default().sample(u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum SpatialTransform {
    Affine(AffineParams),
    Elastic(ElasticParams),
    Anisotropy(AnisotropyParams),
}

impl SpatialTransform {
    pub fn apply(&self, v: &Volume3) -> Result<Volume3> {
        match self {
            SpatialTransform::Affine(a) => apply_affine(v, a),
            SpatialTransform::Elastic(e) => apply_elastic(v, e),
            SpatialTransform::Anisotropy(a) => apply_anisotropy(v, a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum IntensityTransform {
    Ghost { axis: usize, period: usize, intensity: f64 },
    Spike { count: usize, amplitude: f64, seed: u64 },
    BiasField { order: usize, magnitude: f64, seed: u64 },
    Noise { sigma: f64, kind: NoiseKind, seed: u64 },
    Motion { movements: Vec<AffineParams>, weights: Vec<f64> },
    Blur { stds: [f64; 3] },
}

impl IntensityTransform {
    pub fn apply(&self, v: &Volume3) -> Result<Volume3> {
        match self {
            IntensityTransform::Ghost { axis, period, intensity } => add_ghosting(v, *axis, *period, *intensity),
            IntensityTransform::Spike { count, amplitude, seed } => {
                add_spikes(v, *count, *amplitude, &mut stream_rng(*seed, 0))
            }
            IntensityTransform::BiasField { order, magnitude, seed } => {
                add_bias_field(v, *order, *magnitude, &mut stream_rng(*seed, 0))
            }
            IntensityTransform::Noise { sigma, kind, seed } => add_noise(v, *sigma, *kind, &mut stream_rng(*seed, 0)),
            IntensityTransform::Motion { movements, weights } => simulate_motion(v, movements, weights),
            IntensityTransform::Blur { stds } => blur(v, *stds),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "transform")]
pub enum TransformSpec {
    Spatial(SpatialTransform),
    Intensity(IntensityTransform),
}

impl TransformSpec {
    pub fn is_spatial(&self) -> bool {
        matches!(self, TransformSpec::Spatial(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransformSpec::Spatial(SpatialTransform::Affine(_)) => "Affine",
            TransformSpec::Spatial(SpatialTransform::Elastic(_)) => "Elastic",
            TransformSpec::Spatial(SpatialTransform::Anisotropy(_)) => "Anisotropy",
            TransformSpec::Intensity(IntensityTransform::Ghost { .. }) => "Ghost",
            TransformSpec::Intensity(IntensityTransform::Spike { .. }) => "Spike",
            TransformSpec::Intensity(IntensityTransform::BiasField { .. }) => "BiasField",
            TransformSpec::Intensity(IntensityTransform::Noise { .. }) => "Noise",
            TransformSpec::Intensity(IntensityTransform::Motion { .. }) => "Motion",
            TransformSpec::Intensity(IntensityTransform::Blur { .. }) => "Blur",
        }
    }

    pub fn apply(&self, v: &Volume3) -> Result<Volume3> {
        match self {
            TransformSpec::Spatial(s) => s.apply(v),
            TransformSpec::Intensity(i) => i.apply(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformChain {
    pub policy: Policy,
    pub seed: u64,
    pub transforms: Vec<TransformSpec>,
}

impl TransformChain {
    pub fn identity() -> Self {
        Self { policy: Policy::DA2, seed: 0, transforms: Vec::new() }
    }

    pub fn spatial(&self) -> impl Iterator<Item = &TransformSpec> {
        self.transforms.iter().filter(|t| t.is_spatial())
    }

    /// Checks the per-policy composition rule.
    pub fn satisfies_policy(&self) -> bool {
        let spatial = self.transforms.iter().filter(|t| t.is_spatial()).count();
        let intensity = self.transforms.len() - spatial;
        match self.policy {
            Policy::DA1 => spatial == 1 && intensity == 1,
            Policy::DA2 => spatial == 0 && intensity >= 1,
            Policy::DA3 => spatial == 1 && intensity == 0,
            Policy::DA4 => {
                self.transforms.len() == 1
                    && matches!(self.transforms[0], TransformSpec::Spatial(SpatialTransform::Elastic(_)))
            }
        }
    }

    pub fn apply(&self, v: &Volume3) -> Result<Volume3> {
        let mut out = v.clone();
        for t in &self.transforms {
            out = t.apply(&out)?;
        }
        Ok(out)
    }
}

/// Sampling ranges for every transform parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub probabilities: PolicyProbabilities,
    pub rotation_max_deg: f64,
    pub translation_max: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub elastic_grid: usize,
    pub elastic_max_displacement: f64,
    pub anisotropy_min: f64,
    pub anisotropy_max: f64,
    pub ghost_max_intensity: f64,
    pub ghost_max_period: usize,
    pub spike_max_count: usize,
    pub spike_max_amplitude: f64,
    pub bias_order: usize,
    pub bias_magnitude: f64,
    pub noise_max_sigma: f64,
    pub motion_movements: usize,
    pub motion_max_weight: f64,
    pub motion_rotation_max_deg: f64,
    pub motion_translation_max: f64,
    pub blur_max_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probabilities: PolicyProbabilities::default(),
            rotation_max_deg: 10.0,
            translation_max: 3.0,
            scale_min: 0.9,
            scale_max: 1.1,
            elastic_grid: 5,
            elastic_max_displacement: 1.5,
            anisotropy_min: 1.5,
            anisotropy_max: 3.0,
            ghost_max_intensity: 0.6,
            ghost_max_period: 4,
            spike_max_count: 2,
            spike_max_amplitude: 0.1,
            bias_order: 3,
            bias_magnitude: 0.15,
            noise_max_sigma: 0.05,
            motion_movements: 2,
            motion_max_weight: 0.3,
            motion_rotation_max_deg: 3.0,
            motion_translation_max: 2.0,
            blur_max_std: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        PolicyProbabilities::new(self.probabilities.0)?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(0.0..=45.0).contains(&self.rotation_max_deg) || !(0.0..=45.0).contains(&self.motion_rotation_max_deg) {
            return bad("rotation bounds must lie in [0, 45] degrees");
        }
        if !(0.5 <= self.scale_min && self.scale_min <= self.scale_max && self.scale_max <= 2.0) {
            return bad("scale bounds must satisfy 0.5 <= min <= max <= 2");
        }
        if self.elastic_grid < 2 {
            return bad("elastic grid needs at least 2 control points per axis");
        }
        if !(1.0 < self.anisotropy_min && self.anisotropy_min <= self.anisotropy_max && self.anisotropy_max <= 4.0) {
            return bad("anisotropy factors must satisfy 1 < min <= max <= 4");
        }
        if !(0.0..=1.0).contains(&self.ghost_max_intensity) || self.ghost_max_period < 1 {
            return bad("ghost intensity must be in [0, 1] and period >= 1");
        }
        if !(0.0..=1.0).contains(&self.motion_max_weight) {
            return bad("motion weight must be in [0, 1]");
        }
        for (name, x) in [
            ("translation_max", self.translation_max),
            ("elastic_max_displacement", self.elastic_max_displacement),
            ("spike_max_amplitude", self.spike_max_amplitude),
            ("bias_magnitude", self.bias_magnitude),
            ("noise_max_sigma", self.noise_max_sigma),
            ("motion_translation_max", self.motion_translation_max),
            ("blur_max_std", self.blur_max_std),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be a non-negative number")));
            }
        }
        Ok(())
    }

    fn symmetric(rng: &mut impl rand::Rng, max: f64) -> f64 {
        if max > 0.0 {
            rng.random_range(-max..=max)
        } else {
            0.0
        }
    }

    fn range(rng: &mut impl rand::Rng, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    }

    pub fn sample_affine(&self, dims: [usize; 3], rng: &mut impl rand::Rng) -> AffineParams {
        AffineParams {
            rotation_deg: [0; 3].map(|_| Self::symmetric(rng, self.rotation_max_deg)),
            translation: [0; 3].map(|_| Self::symmetric(rng, self.translation_max)),
            scale: [0; 3].map(|_| Self::range(rng, self.scale_min, self.scale_max)),
            center: volume_center(dims),
        }
    }

    pub fn sample_spatial(&self, dims: [usize; 3], rng: &mut impl rand::Rng) -> SpatialTransform {
        match rng.random_range(0..3) {
            0 => SpatialTransform::Affine(self.sample_affine(dims, rng)),
            1 => self.sample_elastic(rng),
            _ => SpatialTransform::Anisotropy(AnisotropyParams {
                axis: rng.random_range(0..3),
                downsample_factor: Self::range(rng, self.anisotropy_min, self.anisotropy_max),
            }),
        }
    }

    pub fn sample_elastic(&self, rng: &mut impl rand::Rng) -> SpatialTransform {
        SpatialTransform::Elastic(ElasticParams::random([self.elastic_grid; 3], self.elastic_max_displacement, rng))
    }

    pub fn sample_intensity(&self, dims: [usize; 3], rng: &mut impl rand::Rng) -> IntensityTransform {
        match rng.random_range(0..6) {
            0 => IntensityTransform::Ghost {
                axis: rng.random_range(0..3),
                period: rng.random_range(2.min(self.ghost_max_period)..=self.ghost_max_period),
                intensity: Self::range(rng, 0.0, self.ghost_max_intensity),
            },
            1 => IntensityTransform::Spike {
                count: rng.random_range(1..=self.spike_max_count.max(1)),
                amplitude: Self::range(rng, 0.0, self.spike_max_amplitude),
                seed: rng.random(),
            },
            2 => IntensityTransform::BiasField {
                order: self.bias_order,
                magnitude: self.bias_magnitude,
                seed: rng.random(),
            },
            3 => IntensityTransform::Noise {
                sigma: Self::range(rng, 0.0, self.noise_max_sigma),
                kind: if rng.random_bool(0.5) { NoiseKind::Gaussian } else { NoiseKind::Rician },
                seed: rng.random(),
            },
            4 => {
                let n = self.motion_movements.max(1);
                let total = Self::range(rng, 0.0, self.motion_max_weight);
                let movements = (0..n)
                    .map(|_| AffineParams {
                        rotation_deg: [0; 3].map(|_| Self::symmetric(rng, self.motion_rotation_max_deg)),
                        translation: [0; 3].map(|_| Self::symmetric(rng, self.motion_translation_max)),
                        scale: [1.0; 3],
                        center: volume_center(dims),
                    })
                    .collect();
                IntensityTransform::Motion { movements, weights: vec![total / n as f64; n] }
            }
            _ => IntensityTransform::Blur { stds: [0; 3].map(|_| Self::range(rng, 0.0, self.blur_max_std)) },
        }
    }
}

/// Builds the transform chain for `policy`, drawing parameters from `rng`.
pub fn get_transform(
    policy: AugPolicy,
    dims: [usize; 3],
    cfg: &AugmentConfig,
    seed: u64,
    rng: &mut impl rand::Rng,
) -> TransformChain {
    let transforms = match policy.tag {
        Policy::DA1 => vec![
            TransformSpec::Spatial(cfg.sample_spatial(dims, rng)),
            TransformSpec::Intensity(cfg.sample_intensity(dims, rng)),
        ],
        Policy::DA2 => vec![TransformSpec::Intensity(cfg.sample_intensity(dims, rng))],
        Policy::DA3 => vec![TransformSpec::Spatial(cfg.sample_spatial(dims, rng))],
        Policy::DA4 => vec![TransformSpec::Spatial(cfg.sample_elastic(rng))],
    };
    TransformChain { policy: policy.tag, seed, transforms }
}

/// Nearest voxel with round-half-up per axis.
pub fn nearest_voxel(p: [f64; 3], dims: [usize; 3]) -> Result<[usize; 3]> {
    let mut q = [0usize; 3];
    for a in 0..3 {
        let r = (p[a] + 0.5).floor();
        if !r.is_finite() || r < 0.0 || r > (dims[a] - 1) as f64 {
            return Err(Error::PointOutOfBounds { p, dims });
        }
        q[a] = r as usize;
    }
    Ok(q)
}

/// Zero volume with a unit impulse at the voxel nearest to `p`.
pub fn create_faux_volume(p: [f64; 3], dims: [usize; 3]) -> Result<Volume3> {
    let q = nearest_voxel(p, dims)?;
    let mut v = Volume3::zeros(dims);
    v.set(q, 1.0);
    Ok(v)
}

/// Intensity-weighted centroid of voxels above half the peak; `None` once the
/// peak has dropped below [`LOST_CUTOFF`].
pub fn extract_keypoint(fv: &Volume3) -> Option<[f64; 3]> {
    let (_, peak) = fv.min_max();
    let peak = peak as f64;
    if !(peak >= LOST_CUTOFF) {
        return None;
    }
    let threshold = CENTROID_THRESHOLD * peak;
    let mut mass = 0.0;
    let mut acc = [0.0; 3];
    for (idx, &x) in fv.data().iter().enumerate() {
        let x = x as f64;
        if x > threshold {
            let c = fv.coords(idx);
            mass += x;
            for a in 0..3 {
                acc[a] += x * c[a] as f64;
            }
        }
    }
    Some(acc.map(|s| s / mass))
}

/// Applies `chain` to the image and carries the landmarks through its spatial members.
pub fn augment_pair(v: &Volume3, lms: &LandmarkSet, chain: &TransformChain) -> Result<(Volume3, LandmarkSet)> {
    let image = chain.apply(v)?;
    let spatial: Vec<&TransformSpec> = chain.spatial().collect();
    if spatial.is_empty() {
        return Ok((image, lms.clone()));
    }
    let dims = v.dims();
    let moved = lms
        .points()
        .par_iter()
        .map(|l| -> Result<([f64; 3], bool)> {
            if l.oob {
                return Ok((l.p, true));
            }
            let mut fv = create_faux_volume(l.p, dims)?;
            for t in &spatial {
                fv = t.apply(&fv)?;
            }
            Ok(match extract_keypoint(&fv) {
                Some(p) => (p, false),
                None => (l.p, true),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((image, lms.with_points(moved)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    pub volume: Volume3,
    pub landmarks: LandmarkSet,
    pub chain: TransformChain,
}

/// Seed of sample `index` under `master_seed`.
pub fn sample_seed(master_seed: u64, index: usize) -> u64 {
    mix_seed(master_seed, index as u64)
}

/// Draws the policy and chain for sample `index`; depends only on `(master_seed, index)`.
pub fn chain_for_sample(master_seed: u64, index: usize, dims: [usize; 3], cfg: &AugmentConfig) -> TransformChain {
    let seed = sample_seed(master_seed, index);
    let mut rng = stream_rng(seed, 0);
    let u: f64 = rng.random();
    let policy = cfg.probabilities.sample(u);
    get_transform(policy, dims, cfg, seed, &mut rng)
}

/// One augmented pair per input pair.
pub fn augment_dataset(
    samples: &[(Volume3, LandmarkSet)],
    cfg: &AugmentConfig,
    master_seed: u64,
) -> Result<Vec<AugmentedSample>> {
    cfg.validate()?;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, (v, lms))| {
            let chain = chain_for_sample(master_seed, i, v.dims(), cfg);
            let (volume, landmarks) = augment_pair(v, lms, &chain)?;
            Ok(AugmentedSample { volume, landmarks, chain })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::transform_point_affine;
    use crate::synth::{gen_phantom, PhantomSpec};

    #[test]
    fn policy_intervals() {
        assert_eq!(sample_policy(0.1).tag, Policy::DA1);
        assert_eq!(sample_policy(0.44).tag, Policy::DA2);
        assert_eq!(sample_policy(0.95).tag, Policy::DA4);
        assert_eq!(sample_policy(0.2).tag, Policy::DA2);
        assert_eq!(sample_policy(0.45).tag, Policy::DA3);
        assert_eq!(sample_policy(0.7).tag, Policy::DA4);
        assert_eq!(sample_policy(0.0).tag, Policy::DA1);
        assert_eq!(sample_policy(0.2).probability, 0.25);
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        assert!(PolicyProbabilities::new([0.5, 0.5, 0.5, 0.0]).is_err());
        assert!(PolicyProbabilities::new([-0.1, 0.6, 0.25, 0.25]).is_err());
        assert!(PolicyProbabilities::new([0.25; 4]).is_ok());
    }

    #[test]
    fn chains_follow_policy_rules() {
        let cfg = AugmentConfig::default();
        for p in Policy::ALL {
            for s in 0..30 {
                let mut rng = stream_rng(s, 1);
                let chain = get_transform(AugPolicy { tag: p, probability: 0.25 }, [16; 3], &cfg, s, &mut rng);
                assert!(chain.satisfies_policy(), "{p} chain {:?}", chain.transforms);
            }
        }
        let mut rng = stream_rng(0, 0);
        let da4 = get_transform(AugPolicy { tag: Policy::DA4, probability: 0.3 }, [16; 3], &cfg, 0, &mut rng);
        assert_eq!(da4.transforms.iter().map(|t| t.name()).collect::<Vec<_>>(), vec!["Elastic"]);
    }

    #[test]
    fn same_seed_same_chain() {
        let cfg = AugmentConfig::default();
        assert_eq!(chain_for_sample(5, 17, [32; 3], &cfg), chain_for_sample(5, 17, [32; 3], &cfg));
    }

    #[test]
    fn faux_volume_construction() {
        let v = create_faux_volume([3.0, 5.0, 7.0], [10, 10, 10]).unwrap();
        assert_eq!(v.sum(), 1.0);
        assert_eq!(v.argmax(), [3, 5, 7]);
        let v = create_faux_volume([3.4, 5.6, 7.5], [10, 10, 10]).unwrap();
        assert_eq!(v.argmax(), [3, 6, 8]);
        assert!(matches!(create_faux_volume([-1.0, 0.0, 0.0], [10, 10, 10]), Err(Error::PointOutOfBounds { .. })));
    }

    #[test]
    fn keypoint_extraction() {
        let fv = create_faux_volume([3.0, 5.0, 7.0], [10, 10, 10]).unwrap();
        assert_eq!(extract_keypoint(&fv), Some([3.0, 5.0, 7.0]));
        assert_eq!(extract_keypoint(&Volume3::zeros([4, 4, 4])), None);

        let dims = [16, 16, 16];
        let a = AffineParams::translation(dims, [4.0, 0.0, 0.0]);
        let fv = apply_affine(&create_faux_volume([5.0, 6.0, 7.0], dims).unwrap(), &a).unwrap();
        let got = extract_keypoint(&fv).unwrap();
        let want = transform_point_affine([5.0, 6.0, 7.0], &a);
        let err: f64 = (0..3).map(|i| (got[i] - want[i]).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 0.75);
    }

    #[test]
    fn translated_out_of_field_is_lost() {
        let dims = [8, 8, 8];
        let lms = LandmarkSet::from_points(&[[6.0, 4.0, 4.0], [1.0, 4.0, 4.0]]);
        let chain = TransformChain {
            policy: Policy::DA3,
            seed: 0,
            transforms: vec![TransformSpec::Spatial(SpatialTransform::Affine(AffineParams::translation(
                dims,
                [3.0, 0.0, 0.0],
            )))],
        };
        let (_, out) = augment_pair(&Volume3::zeros(dims), &lms, &chain).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.points()[0].oob);
        assert!(!out.points()[1].oob);
        assert_eq!(out.points()[1].p, [4.0, 4.0, 4.0]);
        assert_eq!(out.ids(), vec![1, 2]);
    }

    #[test]
    fn identity_chain_rounds_only() {
        let (v, lms) = gen_phantom(&PhantomSpec::default(), 0).unwrap();
        let chain = TransformChain {
            policy: Policy::DA3,
            seed: 0,
            transforms: vec![TransformSpec::Spatial(SpatialTransform::Affine(AffineParams::identity(v.dims())))],
        };
        let (img, out) = augment_pair(&v, &lms, &chain).unwrap();
        assert_eq!(img, v);
        for (a, b) in out.points().iter().zip(lms.points()) {
            for i in 0..3 {
                assert!((a.p[i] - b.p[i]).abs() <= 0.5);
            }
        }
    }

    #[test]
    fn intensity_chain_leaves_landmarks_bitwise() {
        let (v, lms) = gen_phantom(&PhantomSpec::default(), 1).unwrap();
        let cfg = AugmentConfig::default();
        for s in 0..6 {
            let mut rng = stream_rng(s, 0);
            let chain = get_transform(AugPolicy { tag: Policy::DA2, probability: 0.25 }, v.dims(), &cfg, s, &mut rng);
            let (_, out) = augment_pair(&v, &lms, &chain).unwrap();
            assert_eq!(out, lms);
        }
    }

    #[test]
    fn chain_json_round_trip() {
        let cfg = AugmentConfig::default();
        for i in 0..12 {
            let chain = chain_for_sample(9, i, [32; 3], &cfg);
            let text = serde_json::to_string(&chain).unwrap();
            let back: TransformChain = serde_json::from_str(&text).unwrap();
            assert_eq!(back, chain);
        }
    }

    #[test]
    fn default_config_is_valid() {
        AugmentConfig::default().validate().unwrap();
        let bad = AugmentConfig { rotation_max_deg: 60.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
