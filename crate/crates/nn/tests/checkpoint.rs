use std::fs;

use brainmark_core::rng::stream_rng;
use brainmark_core::{LandmarkSet, Volume3};
use brainmark_nn::checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, read_model, write_checkpoint};
use brainmark_nn::train::{train, CHECKPOINT, LOSS_LOG};
use brainmark_nn::{Error, ModelConfig, Sample, TrainState};
use rand::Rng;

fn config(epochs: usize) -> ModelConfig {
    ModelConfig { dims: [8, 8, 8], landmarks: 2, channels: 3, epochs, batch_size: 2, seed: 7, ..Default::default() }
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let volume = Volume3::from_fn([8, 8, 8], |_| rng.random_range(0.0f32..1.0));
            let pts: Vec<[f64; 3]> = (0..2).map(|_| [0; 3].map(|_| rng.random_range(1.0..6.0))).collect();
            Sample { volume, landmarks: LandmarkSet::from_points(&pts) }
        })
        .collect()
}

#[test]
fn round_trip_reproduces_predictions_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut state = TrainState::<f32>::new(config(2)).unwrap();
    let (tr, val) = (samples(4, 1), samples(2, 2));
    train(&mut state, &tr, &val, None, 2).unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&state, &path).unwrap();
    let back = read_checkpoint::<f32>(&path).unwrap();
    assert_eq!(back, state);
    let model = read_model::<f32>(&path).unwrap();
    assert_eq!(model.predict(&val[0].volume).unwrap(), state.model.predict(&val[0].volume).unwrap());
}

#[test]
fn identical_states_encode_identically() {
    let a = TrainState::<f64>::new(config(1)).unwrap();
    let b = TrainState::<f64>::new(config(1)).unwrap();
    assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (tr, val) = (samples(5, 3), samples(2, 4));
    let straight_dir = tempfile::tempdir().unwrap();
    let mut straight = TrainState::<f32>::new(config(5)).unwrap();
    train(&mut straight, &tr, &val, Some(straight_dir.path()), 5).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = TrainState::<f32>::new(config(5)).unwrap();
    train(&mut first, &tr, &val, Some(dir.path()), 3).unwrap();
    assert_eq!(first.epoch, 3);
    drop(first);
    let mut resumed = TrainState::<f32>::load(dir.path().join(CHECKPOINT)).unwrap();
    train(&mut resumed, &tr, &val, Some(dir.path()), 5).unwrap();

    assert_eq!(resumed, straight);
    assert_eq!(
        fs::read(dir.path().join(CHECKPOINT)).unwrap(),
        fs::read(straight_dir.path().join(CHECKPOINT)).unwrap()
    );
    assert_eq!(
        fs::read_to_string(dir.path().join(LOSS_LOG)).unwrap(),
        fs::read_to_string(straight_dir.path().join(LOSS_LOG)).unwrap()
    );
}

#[test]
fn loss_log_has_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut state = TrainState::<f32>::new(config(3)).unwrap();
    train(&mut state, &samples(3, 5), &[], Some(dir.path()), usize::MAX).unwrap();
    let text = fs::read_to_string(dir.path().join(LOSS_LOG)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_mae_voxels");
    assert_eq!(lines.len(), 4);
    for (i, line) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], (i + 1).to_string());
        assert!(cols[1].parse::<f64>().unwrap().is_finite());
        assert_eq!(cols[2], "NaN");
    }
}

#[test]
fn training_stops_at_configured_epochs() {
    let mut state = TrainState::<f32>::new(config(2)).unwrap();
    train(&mut state, &samples(2, 6), &[], None, 10).unwrap();
    assert_eq!(state.epoch, 2);
    assert_eq!(state.log.len(), 2);
}

fn expect_bad(bytes: &[u8]) {
    let path = std::path::Path::new("mem.ckpt");
    match decode_checkpoint::<f32>(bytes, path) {
        Err(Error::BadCheckpoint { .. }) => {}
        other => panic!("expected BadCheckpoint, got {other:?}"),
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let state = TrainState::<f32>::new(config(1)).unwrap();
    let bytes = encode_checkpoint(&state);
    expect_bad(&bytes[..bytes.len() - 1]);
    expect_bad(&bytes[..10]);
    let mut magic = bytes.clone();
    magic[0] = b'X';
    expect_bad(&magic);
    let mut trailing = bytes.clone();
    trailing.push(0);
    expect_bad(&trailing);
    let mut version = bytes.clone();
    version[4] = 9;
    expect_bad(&version);
}

#[test]
fn scalar_width_must_match() {
    let state = TrainState::<f64>::new(config(1)).unwrap();
    let bytes = encode_checkpoint(&state);
    assert!(matches!(
        decode_checkpoint::<f32>(&bytes, std::path::Path::new("x")),
        Err(Error::BadCheckpoint { .. })
    ));
    assert!(decode_checkpoint::<f64>(&bytes, std::path::Path::new("x")).is_ok());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_checkpoint::<f32>(&dir.path().join("none.ckpt")), Err(Error::Io(_))));
}
