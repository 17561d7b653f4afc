use brainmark_core::rng::stream_rng;
use brainmark_core::Volume3;
use brainmark_nn::gradcam::{
    cam_localization_score, export_cam_overlay, gradcam, hooked_gradient, render_cam_overlay,
    target_with_activations, LOCALIZATION_RADIUS,
};
use brainmark_nn::model::DEFAULT_HOOK;
use brainmark_nn::{CamRequest, Error, Model64, ModelConfig, Plane, Tensor};
use rand::Rng;

fn model() -> Model64 {
    Model64::new(ModelConfig { dims: [8, 8, 8], landmarks: 2, channels: 3, ..Default::default() }).unwrap()
}

fn volume(seed: u64) -> Volume3 {
    let mut rng = stream_rng(seed, 0);
    Volume3::from_fn([8, 8, 8], |_| rng.random_range(0.0f32..1.0))
}

#[test]
fn hook_gradient_matches_finite_differences() {
    let m = model();
    let v = volume(1);
    for layer in [DEFAULT_HOOK, "g2b1.conv1", "stem"] {
        let req = CamRequest { landmark: 2, layer: layer.to_string() };
        let h = hooked_gradient(&m, &v, &req).unwrap();
        let shape = h.activations.shape().to_vec();
        let base = h.activations.data().to_vec();
        let y0 = target_with_activations(&m, &v, &req, h.activations.clone(), h.target_voxel).unwrap();
        assert_eq!(y0, h.y);
        let step = 1e-5;
        let mut worst = 0.0f64;
        for i in (0..base.len()).step_by(7) {
            let probe = |delta: f64| {
                let mut a = base.clone();
                a[i] += delta;
                target_with_activations(&m, &v, &req, Tensor::new(shape.clone(), a).unwrap(), h.target_voxel).unwrap()
            };
            let numeric = (probe(step) - probe(-step)) / (2.0 * step);
            let analytic = h.gradient[i];
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
        assert!(worst <= 1e-4, "{layer}: max relative error {worst}");
    }
}

#[test]
fn map_is_nonnegative_and_input_sized() {
    let m = model();
    let cam = gradcam(&m, &volume(2), &CamRequest::new(1)).unwrap();
    assert_eq!(cam.dims, [8, 8, 8]);
    assert_eq!(cam.data.len(), 512);
    assert!(cam.data.iter().all(|&x| x >= 0.0 && x.is_finite()));
    assert_eq!(cam.get(cam.peak), cam.max());
}

#[test]
fn bad_requests_are_rejected() {
    let m = model();
    let v = volume(3);
    assert!(matches!(gradcam(&m, &v, &CamRequest::new(0)), Err(Error::LandmarkIndex(0, 2))));
    assert!(matches!(gradcam(&m, &v, &CamRequest::new(3)), Err(Error::LandmarkIndex(3, 2))));
    let req = CamRequest { landmark: 1, layer: "nope".into() };
    assert!(matches!(gradcam(&m, &v, &req), Err(Error::HookLayerMissing(_))));
}

#[test]
fn localization_score_is_a_fraction() {
    let m = model();
    let cam = gradcam(&m, &volume(4), &CamRequest::new(1)).unwrap();
    if cam.max() > 0.0 {
        let s = cam_localization_score(&cam, [4.0, 4.0, 4.0], LOCALIZATION_RADIUS).unwrap();
        assert!((0.0..=1.0).contains(&s.score));
        assert!(s.entropy >= 0.0 && s.entropy <= (512f64).ln() + 1e-12);
    }
}

#[test]
fn overlay_png_is_deterministic() {
    let m = model();
    let v = volume(5);
    let cam = gradcam(&m, &v, &CamRequest::new(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    export_cam_overlay(&v, &cam, Plane::Axial, 3, &a).unwrap();
    export_cam_overlay(&v, &cam, Plane::Axial, 3, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(&bytes[1..4], b"PNG");
}

#[test]
fn overlay_is_reddest_at_the_cam_peak() {
    let m = model();
    let v = volume(6);
    let cam = gradcam(&m, &v, &CamRequest::new(1)).unwrap();
    assert!(cam.max() > 0.0);
    let [p0, p1, p2] = cam.peak;
    let img = render_cam_overlay(&v, &cam, Plane::Axial, p2).unwrap();
    assert_eq!(img.dimensions(), (8, 8));
    let redness = |x: u32, y: u32| {
        let px = img.get_pixel(x, y);
        px[0] as i32 - px[2] as i32
    };
    let peak = redness(p1 as u32, p0 as u32);
    for y in 0..8 {
        for x in 0..8 {
            assert!(redness(x, y) <= peak);
        }
    }
}
