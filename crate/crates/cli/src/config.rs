//! Flat `key = value` configuration covering the model, training and
//! augmentation parameters. Blank lines and `#` comments are ignored; an
//! unknown or repeated key is an error.

use std::collections::BTreeSet;
use std::str::FromStr;

use brainmark_core::augment::{AugmentConfig, PolicyProbabilities};
use brainmark_nn::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    /// Append one augmented copy of every training sample.
    pub augment_training: bool,
    pub augment_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), augment: AugmentConfig::default(), augment_training: false, augment_seed: 1 }
    }
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

pub fn list<T: FromStr, const N: usize>(key: &str, v: &str) -> Result<[T; N], String> {
    let items: Vec<T> = v.split(',').map(|s| scalar(key, s.trim())).collect::<Result<_, _>>()?;
    let n = items.len();
    items.try_into().map_err(|_| format!("{key}: expected {N} comma-separated values, got {n}"))
}

fn boolean(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let m = &mut self.model;
        let a = &mut self.augment;
        match key {
            "dims" => m.dims = list(key, v)?,
            "landmarks" => m.landmarks = scalar(key, v)?,
            "channels" => m.channels = scalar(key, v)?,
            "blocks" => m.blocks = scalar(key, v)?,
            "dilations" => m.dilations = list(key, v)?,
            "dropout" => m.dropout = scalar(key, v)?,
            "sigma" => m.sigma = scalar(key, v)?,
            "alpha" => m.alpha = scalar(key, v)?,
            "learning_rate" => m.learning_rate = scalar(key, v)?,
            "epochs" => m.epochs = scalar(key, v)?,
            "batch_size" => m.batch_size = scalar(key, v)?,
            "seed" => m.seed = scalar(key, v)?,
            "augment" => self.augment_training = boolean(key, v)?,
            "augment_seed" => self.augment_seed = scalar(key, v)?,
            "policy_probabilities" => a.probabilities = PolicyProbabilities(list(key, v)?),
            "rotation_max_deg" => a.rotation_max_deg = scalar(key, v)?,
            "translation_max" => a.translation_max = scalar(key, v)?,
            "scale_min" => a.scale_min = scalar(key, v)?,
            "scale_max" => a.scale_max = scalar(key, v)?,
            "elastic_grid" => a.elastic_grid = scalar(key, v)?,
            "elastic_max_displacement" => a.elastic_max_displacement = scalar(key, v)?,
            "anisotropy_min" => a.anisotropy_min = scalar(key, v)?,
            "anisotropy_max" => a.anisotropy_max = scalar(key, v)?,
            "ghost_max_intensity" => a.ghost_max_intensity = scalar(key, v)?,
            "ghost_max_period" => a.ghost_max_period = scalar(key, v)?,
            "spike_max_count" => a.spike_max_count = scalar(key, v)?,
            "spike_max_amplitude" => a.spike_max_amplitude = scalar(key, v)?,
            "bias_order" => a.bias_order = scalar(key, v)?,
            "bias_magnitude" => a.bias_magnitude = scalar(key, v)?,
            "noise_max_sigma" => a.noise_max_sigma = scalar(key, v)?,
            "motion_movements" => a.motion_movements = scalar(key, v)?,
            "motion_max_weight" => a.motion_max_weight = scalar(key, v)?,
            "motion_rotation_max_deg" => a.motion_rotation_max_deg = scalar(key, v)?,
            "motion_translation_max" => a.motion_translation_max = scalar(key, v)?,
            "blur_max_std" => a.blur_max_std = scalar(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected key = value", n + 1));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(format!("line {}: {key:?} given twice", n + 1));
            }
            cfg.set(key, value.trim()).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        cfg.model.validate().map_err(|e| e.to_string())?;
        cfg.augment.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn keys_override_defaults() {
        let c = RunConfig::parse("epochs = 3\ndims=16,16,8\nalpha=0 # coordinate loss only\naugment=true\nscale_max=1.2")
            .unwrap();
        assert_eq!(c.model.epochs, 3);
        assert_eq!(c.model.dims, [16, 16, 8]);
        assert_eq!(c.model.alpha, 0.0);
        assert!(c.augment_training);
        assert_eq!(c.augment.scale_max, 1.2);
    }

    #[test]
    fn unknown_and_repeated_keys_fail() {
        assert!(RunConfig::parse("learning_rte = 0.1").unwrap_err().contains("unknown key"));
        assert!(RunConfig::parse("epochs=1\nepochs=2").unwrap_err().contains("twice"));
        assert!(RunConfig::parse("epochs").is_err());
        assert!(RunConfig::parse("dims=1,2").is_err());
        assert!(RunConfig::parse("alpha=1.5").is_err());
    }
}
