//! Binary checkpoint: everything [`TrainState`] holds, little-endian.
//!
//! Layout: magic `CKPT`, version u32, scalar width u32, config JSON
//! (u32 length + bytes), completed epochs u64, master seed u64, parameter
//! tensors (count u32, then per tensor rank u32, dims u32s, values), running
//! statistics (count u32, then per layer width u32, means f64s, variances
//! f64s), Adam (step u64, lr/beta1/beta2/eps f64, first then second moments
//! with the parameter shapes) and the epoch log (count u32, then epoch u64,
//! train loss f64, validation error f64).
//!
//! The master seed plus the epoch count is the whole generator state: each
//! epoch derives its streams from them.

use std::fs;
use std::path::Path;

use brainmark_core::Scalar;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, RunningStats};
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::train::{EpochLog, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint<T: Scalar>(state: &TrainState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_u32(&mut out, T::BYTES);
    let cfg = state.model.config();
    let json = serde_json::to_vec(cfg).expect("config serializes");
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    put_u64(&mut out, state.epoch as u64);
    put_u64(&mut out, cfg.seed);

    let params = state.model.params();
    put_u32(&mut out, params.len());
    for p in params {
        put_u32(&mut out, p.shape().len());
        p.shape().iter().for_each(|&d| put_u32(&mut out, d));
        p.data().iter().for_each(|x| x.write_le(&mut out));
    }
    let running = state.model.running_stats();
    put_u32(&mut out, running.len());
    for r in running {
        put_u32(&mut out, r.mean.len());
        r.mean.iter().chain(&r.var).for_each(|&x| put_f64(&mut out, x));
    }
    let a = &state.adam;
    put_u64(&mut out, a.step);
    for x in [a.lr, a.beta1, a.beta2, a.eps] {
        put_f64(&mut out, x);
    }
    for moment in [&a.m, &a.v] {
        moment.iter().flatten().for_each(|x| x.write_le(&mut out));
    }
    put_u32(&mut out, state.log.len());
    for e in &state.log {
        put_u64(&mut out, e.epoch as u64);
        put_f64(&mut out, e.train_loss);
        put_f64(&mut out, e.val_mae_voxels);
    }
    out
}

/// Writes to a sibling temporary file and renames, so a crash never leaves a
/// half-written checkpoint behind.
pub fn write_checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, encode_checkpoint(state))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail<V>(&self, reason: impl Into<String>) -> Result<V> {
        Err(Error::BadCheckpoint { path: self.path.to_path_buf(), reason: reason.into() })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!("truncated at byte {}", self.pos));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn scalars<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let Some(len) = n.checked_mul(T::BYTES) else { return self.fail("length overflow") };
        let raw = self.take(len)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], path: &Path) -> Result<TrainState<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return r.fail("missing CKPT magic");
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return r.fail(format!("unsupported version {version}"));
    }
    let width = r.u32()?;
    if width != T::BYTES {
        return r.fail(format!("stored with {width}-byte scalars, loading as {}-byte", T::BYTES));
    }
    let json_len = r.u32()?;
    let cfg: ModelConfig = match serde_json::from_slice(r.take(json_len)?) {
        Ok(c) => c,
        Err(e) => return r.fail(format!("config: {e}")),
    };
    let epoch = r.u64()? as usize;
    let seed = r.u64()?;
    if seed != cfg.seed {
        return r.fail("seed does not match config");
    }

    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let rank = r.u32()?;
        if rank > 5 {
            return r.fail(format!("tensor rank {rank}"));
        }
        let shape: Vec<usize> = (0..rank).map(|_| r.u32()).collect::<Result<_>>()?;
        let data = r.scalars::<T>(shape.iter().product())?;
        params.push(Tensor::new(shape, data)?);
    }
    let count = r.u32()?;
    let mut running = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let c = r.u32()?;
        let mean = r.f64s(c)?;
        let var = r.f64s(c)?;
        running.push(RunningStats { mean, var });
    }
    let model = Model::from_parts(cfg, params, running)?;

    let step = r.u64()?;
    let [lr, beta1, beta2, eps] = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
    let mut moments = [Vec::new(), Vec::new()];
    for m in moments.iter_mut() {
        for p in model.params() {
            m.push(r.scalars::<T>(p.len())?);
        }
    }
    let [m, v] = moments;
    let adam = Adam { lr, beta1, beta2, eps, step, m, v };

    let count = r.u32()?;
    let mut log = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let epoch = r.u64()? as usize;
        log.push(EpochLog { epoch, train_loss: r.f64()?, val_mae_voxels: r.f64()? });
    }
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(TrainState { model, adam, epoch, log })
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes, path)
}

/// Loads only the model from a checkpoint.
pub fn read_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    read_checkpoint(path.as_ref()).map(|s| s.model)
}
