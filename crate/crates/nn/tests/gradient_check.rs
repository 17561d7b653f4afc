//! Whole-network gradients against central finite differences.

use brainmark_core::rng::stream_rng;
use brainmark_core::{LandmarkSet, Volume3};
use brainmark_nn::heatmap::gen_gt_heatmap;
use brainmark_nn::{Graph64, Mode, Model64, ModelConfig, Tensor};
use rand::Rng;

const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely; roundoff in a central difference here is ~2e-10.
const FLOOR: f64 = 1e-5;

fn config(alpha: f64) -> ModelConfig {
    ModelConfig { dims: [8, 8, 8], landmarks: 2, channels: 2, dropout: 0.0, alpha, ..Default::default() }
}

fn batch() -> (Vec<Volume3>, Vec<LandmarkSet>) {
    let mut rng = stream_rng(11, 3);
    let vols = (0..2)
        .map(|_| Volume3::from_fn([8, 8, 8], |_| rng.random_range(-1.0f32..1.0)))
        .collect();
    let lms = vec![
        LandmarkSet::from_points(&[[2.3, 4.1, 5.6], [5.0, 2.5, 1.7]]),
        LandmarkSet::from_points(&[[3.8, 3.2, 6.1], [1.4, 5.9, 4.4]]),
    ];
    (vols, lms)
}

/// Loss and, optionally, its gradient for every parameter of `model`.
fn loss(model: &Model64, vols: &[Volume3], lms: &[LandmarkSet], with_grad: bool) -> (f64, Vec<Vec<f64>>) {
    let cfg = model.config();
    let mut g = Graph64::new();
    let refs: Vec<&Volume3> = vols.iter().collect();
    let input = model.input_tensor(&refs).unwrap();
    let f = model.forward(&mut g, input, Mode::TRAIN, &mut stream_rng(0, 0), None).unwrap();
    let targets: Vec<_> = lms.iter().map(|l| gen_gt_heatmap::<f64>(l, cfg.dims, cfg.sigma).unwrap()).collect();
    let points: Vec<Vec<[f64; 3]>> = lms.iter().map(|l| l.coords()).collect();
    let (id, _) = g.mixed_loss(f.output, &targets, &points, cfg.alpha).unwrap();
    let value = g.value(id).data()[0];
    if !with_grad {
        return (value, Vec::new());
    }
    g.backward(id).unwrap();
    let grads = f
        .params
        .iter()
        .zip(model.params())
        .map(|(&p, t)| g.grad(p).map(|d| d.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    (value, grads)
}

fn set_param(model: &mut Model64, p: usize, i: usize, value: f64) {
    let t = &mut model.params_mut()[p];
    let shape = t.shape().to_vec();
    let mut data = t.data().to_vec();
    data[i] = value;
    *t = Tensor::new(shape, data).unwrap();
}

fn max_relative_error(alpha: f64) -> f64 {
    let (vols, lms) = batch();
    let mut model = Model64::new(config(alpha)).unwrap();
    let (_, analytic) = loss(&model, &vols, &lms, true);
    let mut worst = 0.0f64;
    for p in 0..model.params().len() {
        for i in 0..model.params()[p].len() {
            let x = model.params()[p].data()[i];
            set_param(&mut model, p, i, x + STEP);
            let (up, _) = loss(&model, &vols, &lms, false);
            set_param(&mut model, p, i, x - STEP);
            let (down, _) = loss(&model, &vols, &lms, false);
            set_param(&mut model, p, i, x);
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[p][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn heatmap_free_loss_matches_finite_differences() {
    let e = max_relative_error(0.0);
    assert!(e <= 1e-4, "max relative error {e}");
}

#[test]
fn mixed_loss_matches_finite_differences() {
    let e = max_relative_error(0.4);
    assert!(e <= 1e-4, "max relative error {e}");
}

#[test]
fn every_parameter_receives_a_gradient() {
    let (vols, lms) = batch();
    let model = Model64::new(config(0.4)).unwrap();
    let (_, grads) = loss(&model, &vols, &lms, true);
    for (name, g) in model.param_names().iter().zip(&grads) {
        assert!(g.iter().any(|&x| x != 0.0), "{name} has an all-zero gradient");
    }
}
