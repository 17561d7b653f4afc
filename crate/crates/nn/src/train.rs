//! Mini-batch training with Adam, per-epoch loss logging and checkpoints.

use std::fs;
use std::path::Path;

use brainmark_core::rng::{mix_seed, stream_rng};
use brainmark_core::{LandmarkSet, Scalar, Volume3};
use rand::seq::SliceRandom;

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::error::{Error, Result};
use crate::heatmap::{gen_gt_heatmap, LossValue};
use crate::model::{Mode, Model, ModelConfig};
use crate::optim::Adam;
use crate::tensor::Graph;

pub const LOSS_LOG: &str = "loss.csv";
pub const CHECKPOINT: &str = "latest.ckpt";

#[derive(Clone, Debug)]
pub struct Sample {
    pub volume: Volume3,
    pub landmarks: LandmarkSet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when no validation set was given.
    pub val_mae_voxels: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let model = Model::new(cfg)?;
        let adam = Adam::new(model.config().learning_rate, model.params());
        Ok(Self { model, adam, epoch: 0, log: Vec::new() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_checkpoint(path.as_ref())
    }
}

/// One optimizer update on `batch`; returns the batch-mean loss before the update.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    adam: &mut Adam<T>,
    batch: &[&Sample],
    rng: &mut impl rand::Rng,
) -> Result<LossValue> {
    let cfg = model.config().clone();
    let volumes: Vec<&Volume3> = batch.iter().map(|s| &s.volume).collect();
    let targets = batch
        .iter()
        .map(|s| gen_gt_heatmap::<T>(&s.landmarks, cfg.dims, cfg.sigma))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<Vec<[f64; 3]>> = batch.iter().map(|s| s.landmarks.coords()).collect();

    let mut g = Graph::new();
    let input = model.input_tensor(&volumes)?;
    let f = model.forward(&mut g, input, Mode::TRAIN, rng, None)?;
    let (loss, parts) = g.mixed_loss(f.output, &targets, &points, cfg.alpha)?;
    g.backward(loss)?;
    let grads: Vec<Vec<T>> = f
        .params
        .iter()
        .zip(model.params())
        .map(|(&id, p)| g.grad(id).map(|d| d.to_vec()).unwrap_or_else(|| vec![T::zero(); p.len()]))
        .collect();
    if grads.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("backward pass"));
    }
    adam.update(model.params_mut(), &grads)?;
    model.update_running_stats(&f.batch_stats);

    let n = parts.len() as f64;
    let mean = |f: fn(&LossValue) -> f64| parts.iter().map(f).sum::<f64>() / n;
    let value = LossValue { total: mean(|v| v.total), l_c: mean(|v| v.l_c), l_h: mean(|v| v.l_h), alpha: cfg.alpha };
    if !value.total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(value)
}

/// Mean Euclidean error in voxels over all in-bounds landmarks.
pub fn mean_error_voxels<T: Scalar>(model: &Model<T>, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let (_, pred) = model.predict(&s.volume)?;
        for (lm, p) in s.landmarks.points().iter().zip(&pred) {
            if lm.oob {
                continue;
            }
            total += (0..3).map(|a| (lm.p[a] - p[a]).powi(2)).sum::<f64>().sqrt();
            count += 1;
        }
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_mae_voxels\n");
    for e in log {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_mae_voxels));
    }
    s
}

/// Runs epochs `state.epoch + 1 ..= until` (capped at the configured epoch
/// count). Epoch `e` shuffles with stream 0 and draws dropout masks from
/// stream 1 of `mix_seed(seed, e)`, so a resumed run replays the same
/// trajectory. With `out_dir`, the loss log and a checkpoint are rewritten
/// after every epoch.
pub fn train<T: Scalar>(
    state: &mut TrainState<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    out_dir: Option<&Path>,
    until: usize,
) -> Result<()> {
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let cfg = state.model.config().clone();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let last = until.min(cfg.epochs);
    while state.epoch < last {
        let epoch = state.epoch + 1;
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream_rng(epoch_seed, 0));
        let mut dropout_rng = stream_rng(epoch_seed, 1);
        let mut sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            sum += train_step(&mut state.model, &mut state.adam, &batch, &mut dropout_rng)?.total;
            steps += 1;
        }
        let val = if val_set.is_empty() { f64::NAN } else { mean_error_voxels(&state.model, val_set)? };
        state.log.push(EpochLog { epoch, train_loss: sum / steps as f64, val_mae_voxels: val });
        state.epoch = epoch;
        if let Some(dir) = out_dir {
            fs::write(dir.join(LOSS_LOG), loss_log_csv(&state.log))?;
            write_checkpoint(state, &dir.join(CHECKPOINT))?;
        }
    }
    Ok(())
}
