//! 3D Grad-CAM on a hooked convolution of the landmark network.
//!
//! For landmark `c`, the target `y_c` is the raw heatmap value at the argmax
//! voxel of channel `c`. Each hooked channel `t` is weighted by the spatial
//! mean of `dy_c / dA_t`, and the map is the rectified weighted sum. The
//! network keeps full resolution, so maps are input-sized without resampling.

use std::path::Path;
use std::str::FromStr;

use brainmark_core::rng::stream_rng;
use brainmark_core::{Scalar, Volume3};
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::model::{Mode, Model, DEFAULT_HOOK};
use crate::tensor::{Graph, Tensor};

pub const LOCALIZATION_RADIUS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CamRequest {
    /// 1-based landmark index.
    pub landmark: usize,
    pub layer: String,
}

impl CamRequest {
    pub fn new(landmark: usize) -> Self {
        Self { landmark, layer: DEFAULT_HOOK.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
    pub landmark: usize,
    pub peak: [usize; 3],
}

impl CamMap {
    pub fn get(&self, i: [usize; 3]) -> f64 {
        self.data[(i[0] * self.dims[1] + i[1]) * self.dims[2] + i[2]]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

fn coords(idx: usize, dims: [usize; 3]) -> [usize; 3] {
    [idx / (dims[1] * dims[2]), (idx / dims[2]) % dims[1], idx % dims[2]]
}

/// `ReLU(sum_t mean(grad_t) * A_t)` for channel-major activations and
/// gradients of `channels` fields over `dims`.
pub fn cam_from_gradients(
    activations: &[f64],
    gradients: &[f64],
    channels: usize,
    dims: [usize; 3],
    landmark: usize,
) -> Result<CamMap> {
    let plane: usize = dims.iter().product();
    if activations.len() != channels * plane || gradients.len() != activations.len() {
        return Err(Error::ShapeMismatch(format!(
            "{channels} channels over {dims:?} need {} values; got {} activations, {} gradients",
            channels * plane,
            activations.len(),
            gradients.len()
        )));
    }
    let mut data = vec![0.0; plane];
    for t in 0..channels {
        let g = &gradients[t * plane..(t + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        for (m, a) in data.iter_mut().zip(&activations[t * plane..(t + 1) * plane]) {
            *m += alpha * a;
        }
    }
    data.iter_mut().for_each(|m| *m = m.max(0.0));
    let mut best = 0;
    for (i, &v) in data.iter().enumerate() {
        if v > data[best] {
            best = i;
        }
    }
    Ok(CamMap { dims, data, landmark, peak: coords(best, dims) })
}

/// Hooked activations, their gradient and the target of one request.
#[derive(Clone, Debug)]
pub struct HookedGradient<T> {
    /// `[1, channels, d0, d1, d2]`
    pub activations: Tensor<T>,
    pub gradient: Vec<T>,
    /// Flat voxel index `R_c` within the landmark's output channel.
    pub target_voxel: usize,
    pub y: T,
}

fn check_landmark<T: Scalar>(model: &Model<T>, c: usize) -> Result<()> {
    let k = model.config().landmarks;
    if c == 0 || c > k {
        return Err(Error::LandmarkIndex(c, k));
    }
    Ok(())
}

/// Eval-mode forward, target selection and backward to the hooked layer.
pub fn hooked_gradient<T: Scalar>(model: &Model<T>, v: &Volume3, req: &CamRequest) -> Result<HookedGradient<T>> {
    check_landmark(model, req.landmark)?;
    let mut g = Graph::new();
    let input = model.input_tensor(&[v])?;
    let f = model.forward(&mut g, input, Mode::EVAL, &mut stream_rng(0, 0), None)?;
    let hook = f.layer(&req.layer)?;
    let plane: usize = model.config().dims.iter().product();
    let channel = &g.value(f.output).data()[(req.landmark - 1) * plane..req.landmark * plane];
    let mut target_voxel = 0;
    for (i, &x) in channel.iter().enumerate() {
        if x > channel[target_voxel] {
            target_voxel = i;
        }
    }
    let y = g.pick(f.output, (req.landmark - 1) * plane + target_voxel)?;
    g.backward(y)?;
    let activations = g.value(hook).clone();
    let gradient = g.grad(hook).map(|d| d.to_vec()).unwrap_or_else(|| vec![T::zero(); activations.len()]);
    Ok(HookedGradient { activations, gradient, target_voxel, y: g.value(y).data()[0] })
}

/// `y_c` at a fixed voxel when the hooked layer's output is replaced by
/// `activations`; the probe for finite-difference checks of the hook gradient.
pub fn target_with_activations<T: Scalar>(
    model: &Model<T>,
    v: &Volume3,
    req: &CamRequest,
    activations: Tensor<T>,
    target_voxel: usize,
) -> Result<T> {
    check_landmark(model, req.landmark)?;
    let mut g = Graph::new();
    let input = model.input_tensor(&[v])?;
    let f = model.forward(&mut g, input, Mode::EVAL, &mut stream_rng(0, 0), Some((&req.layer, activations)))?;
    let plane: usize = model.config().dims.iter().product();
    Ok(g.value(f.output).data()[(req.landmark - 1) * plane + target_voxel])
}

pub fn gradcam<T: Scalar>(model: &Model<T>, v: &Volume3, req: &CamRequest) -> Result<CamMap> {
    let h = hooked_gradient(model, v, req)?;
    let shape = h.activations.shape();
    let dims = [shape[2], shape[3], shape[4]];
    let acts: Vec<f64> = h.activations.data().iter().map(|x| x.f64()).collect();
    let grads: Vec<f64> = h.gradient.iter().map(|x| x.f64()).collect();
    let cam = cam_from_gradients(&acts, &grads, shape[1], dims, req.landmark)?;
    if cam.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("grad-cam"));
    }
    Ok(cam)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Localization {
    /// Fraction of cam mass within the radius of the point.
    pub score: f64,
    /// Shannon entropy (nats) of the cam normalized to a distribution.
    pub entropy: f64,
}

pub fn cam_localization_score(cam: &CamMap, p: [f64; 3], radius: f64) -> Result<Localization> {
    let mass: f64 = cam.data.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut inside = 0.0;
    let mut entropy = 0.0;
    for (idx, &m) in cam.data.iter().enumerate() {
        let q = coords(idx, cam.dims);
        let d2: f64 = (0..3).map(|a| (q[a] as f64 - p[a]).powi(2)).sum();
        if d2 <= radius * radius {
            inside += m;
        }
        if m > 0.0 {
            let w = m / mass;
            entropy -= w * w.ln();
        }
    }
    Ok(Localization { score: inside / mass, entropy })
}

/// Slice orientation, named by the axis held fixed: sagittal fixes axis 0,
/// coronal axis 1, axial axis 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Sagittal,
    Coronal,
    Axial,
}

impl Plane {
    pub fn axis(self) -> usize {
        match self {
            Plane::Sagittal => 0,
            Plane::Coronal => 1,
            Plane::Axial => 2,
        }
    }

    /// Voxel shown at image pixel `(col, row)` of slice `s`.
    pub fn voxel(self, s: usize, col: usize, row: usize) -> [usize; 3] {
        match self {
            Plane::Sagittal => [s, row, col],
            Plane::Coronal => [row, s, col],
            Plane::Axial => [row, col, s],
        }
    }

    /// `(width, height)` of a slice image for a volume of `dims`.
    pub fn image_size(self, dims: [usize; 3]) -> (usize, usize) {
        match self {
            Plane::Sagittal => (dims[2], dims[1]),
            Plane::Coronal => (dims[2], dims[0]),
            Plane::Axial => (dims[1], dims[0]),
        }
    }
}

impl FromStr for Plane {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sagittal" => Ok(Plane::Sagittal),
            "coronal" => Ok(Plane::Coronal),
            "axial" => Ok(Plane::Axial),
            other => Err(format!("unknown plane {other:?} (expected axial, coronal or sagittal)")),
        }
    }
}

/// "hot" ramp: black to red to yellow.
fn hot(c: f64) -> [f64; 3] {
    [(2.0 * c).min(1.0), (2.0 * c - 1.0).max(0.0), 0.0]
}

/// Grayscale slice with the cam blended on top, opacity equal to the cam
/// value relative to its global maximum.
pub fn render_cam_overlay(v: &Volume3, cam: &CamMap, plane: Plane, slice: usize) -> Result<RgbImage> {
    let dims = v.dims();
    if cam.dims != dims {
        return Err(Error::ShapeMismatch(format!("cam {:?} vs volume {dims:?}", cam.dims)));
    }
    if slice >= dims[plane.axis()] {
        return Err(Error::ShapeMismatch(format!("slice {slice} outside axis {} of {dims:?}", plane.axis())));
    }
    let (lo, hi) = v.min_max();
    let span = (hi - lo) as f64;
    let cmax = cam.max();
    let (w, h) = plane.image_size(dims);
    let img = ImageBuffer::from_fn(w as u32, h as u32, |col, row| {
        let q = plane.voxel(slice, col as usize, row as usize);
        let gray = if span > 0.0 { (v.get(q) - lo) as f64 / span } else { 0.0 };
        let c = if cmax > 0.0 { cam.get(q) / cmax } else { 0.0 };
        let color = hot(c);
        Rgb([0, 1, 2].map(|ch| (255.0 * ((1.0 - c) * gray + c * color[ch])).round() as u8))
    });
    Ok(img)
}

pub fn export_cam_overlay(v: &Volume3, cam: &CamMap, plane: Plane, slice: usize, path: impl AsRef<Path>) -> Result<()> {
    let img = render_cam_overlay(v, cam, plane, slice)?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gradient_reproduces_relu_of_activations() {
        let acts: Vec<f64> = (0..27).map(|i| (i as f64 - 13.0) * 0.37).collect();
        let cam = cam_from_gradients(&acts, &[1.0; 27], 1, [3, 3, 3], 1).unwrap();
        for (m, a) in cam.data.iter().zip(&acts) {
            assert_eq!(*m, a.max(0.0));
        }
        assert_eq!(cam.peak, [2, 2, 2]);
    }

    #[test]
    fn opposing_signs_are_rectified_away() {
        let acts = vec![0.5; 8];
        let cam = cam_from_gradients(&acts, &[-0.2; 8], 1, [2, 2, 2], 1).unwrap();
        assert!(cam.data.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn weights_are_mean_gradients() {
        // channel 0 gradient mean 0.5, channel 1 gradient mean -1
        let mut acts = vec![1.0; 8];
        acts.extend(vec![0.25; 8]);
        let mut grads = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        grads.extend(vec![-1.0; 8]);
        let cam = cam_from_gradients(&acts, &grads, 2, [2, 2, 2], 1).unwrap();
        assert!(cam.data.iter().all(|&m| (m - 0.25).abs() < 1e-15));
    }

    #[test]
    fn linear_hook_scales_quadratically() {
        // y = sum(A) * lambda: activations and gradient both scale with lambda
        let acts: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let base = cam_from_gradients(&acts, &[1.0; 64], 1, [4, 4, 4], 1).unwrap();
        let lambda = 2.5;
        let scaled: Vec<f64> = acts.iter().map(|a| a * lambda).collect();
        let cam = cam_from_gradients(&scaled, &[lambda; 64], 1, [4, 4, 4], 1).unwrap();
        for (a, b) in cam.data.iter().zip(&base.data) {
            assert!((a - lambda * lambda * b).abs() < 1e-12);
        }
        assert_eq!(cam.peak, base.peak);
    }

    fn ball_count(r: f64) -> usize {
        let k = r.floor() as i64;
        let mut n = 0;
        for x in -k..=k {
            for y in -k..=k {
                for z in -k..=k {
                    if ((x * x + y * y + z * z) as f64) <= r * r {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    #[test]
    fn uniform_cam_scores_ball_fraction() {
        assert_eq!(ball_count(4.0), 257);
        let cam = CamMap { dims: [32, 32, 32], data: vec![1.0; 32768], landmark: 1, peak: [0; 3] };
        let loc = cam_localization_score(&cam, [16.0, 16.0, 16.0], LOCALIZATION_RADIUS).unwrap();
        assert!((loc.score - 257.0 / 32768.0).abs() < 1e-15);
        assert!((loc.entropy - 32768f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ball_indicator_and_outside_support() {
        let dims = [12, 12, 12];
        let p = [6.0, 5.0, 6.0];
        let inside: Vec<f64> = (0..1728)
            .map(|i| {
                let q = coords(i, dims);
                let d2: f64 = (0..3).map(|a| (q[a] as f64 - p[a]).powi(2)).sum();
                if d2 <= 16.0 { 1.0 } else { 0.0 }
            })
            .collect();
        let outside: Vec<f64> = inside.iter().map(|v| 1.0 - v).collect();
        let cam = |data| CamMap { dims, data, landmark: 1, peak: [0; 3] };
        assert_eq!(cam_localization_score(&cam(inside), p, 4.0).unwrap().score, 1.0);
        assert_eq!(cam_localization_score(&cam(outside), p, 4.0).unwrap().score, 0.0);
        assert!(matches!(cam_localization_score(&cam(vec![0.0; 1728]), p, 4.0), Err(Error::ZeroMass)));
    }

    fn ramp_volume() -> Volume3 {
        Volume3::from_fn([6, 7, 8], |i| (i[0] * 3 + i[1] * 2 + i[2]) as f32)
    }

    #[test]
    fn zero_cam_renders_plain_grayscale() {
        let v = ramp_volume();
        let cam = CamMap { dims: [6, 7, 8], data: vec![0.0; 336], landmark: 1, peak: [0; 3] };
        for plane in [Plane::Axial, Plane::Coronal, Plane::Sagittal] {
            let img = render_cam_overlay(&v, &cam, plane, 2).unwrap();
            assert_eq!((img.width() as usize, img.height() as usize), plane.image_size([6, 7, 8]));
            for p in img.pixels() {
                assert!(p[0] == p[1] && p[1] == p[2]);
            }
        }
    }

    #[test]
    fn bad_slice_rejected() {
        let v = ramp_volume();
        let cam = CamMap { dims: [6, 7, 8], data: vec![0.0; 336], landmark: 1, peak: [0; 3] };
        assert!(render_cam_overlay(&v, &cam, Plane::Axial, 8).is_err());
        assert!("oblique".parse::<Plane>().is_err());
        assert_eq!("Axial".parse::<Plane>().unwrap(), Plane::Axial);
    }
}
