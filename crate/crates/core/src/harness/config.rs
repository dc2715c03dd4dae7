use std::fs;
use std::path::Path;

use crate::arch::{parse, ModelConfig};
use crate::error::{Error, Result};
use crate::phantom::PhantomSpec;

/// Optimisation and evaluation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine-annealed from `lr_start` at the first step to `lr_end` at the last.
    pub lr_start: f64,
    pub lr_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Gaussian noise added by augmentation; flips are always on during training.
    pub aug_noise: f64,
    pub folds: usize,
    pub fold_seed: u64,
    pub train_seed: u64,
    pub threshold: f64,
    pub bootstrap_iters: usize,
    pub timing_reps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr_start: 1e-5,
            lr_end: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            aug_noise: 0.05,
            folds: 5,
            fold_seed: 0,
            train_seed: 0,
            threshold: 0.5,
            bootstrap_iters: 2000,
            timing_reps: 3,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 14] = [
        "epochs",
        "batch_size",
        "lr_start",
        "lr_end",
        "beta1",
        "beta2",
        "adam_eps",
        "aug_noise",
        "folds",
        "fold_seed",
        "train_seed",
        "threshold",
        "bootstrap_iters",
        "timing_reps",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr_start" => self.lr_start = parse(key, v)?,
            "lr_end" => self.lr_end = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "aug_noise" => self.aug_noise = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "fold_seed" => self.fold_seed = parse(key, v)?,
            "train_seed" => self.train_seed = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "bootstrap_iters" => self.bootstrap_iters = parse(key, v)?,
            "timing_reps" => self.timing_reps = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_start", self.lr_start.to_string()),
            ("lr_end", self.lr_end.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("aug_noise", self.aug_noise.to_string()),
            ("folds", self.folds.to_string()),
            ("fold_seed", self.fold_seed.to_string()),
            ("train_seed", self.train_seed.to_string()),
            ("threshold", self.threshold.to_string()),
            ("bootstrap_iters", self.bootstrap_iters.to_string()),
            ("timing_reps", self.timing_reps.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.aug_noise < 0.0 {
            return bad("aug_noise must be non-negative".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if self.bootstrap_iters == 0 || self.timing_reps == 0 {
            return bad("bootstrap_iters and timing_reps must be positive".into());
        }
        Ok(())
    }
}

/// Everything one run needs: network, phantom generator and training settings.
///
/// The text form is one `key = value` per line; `#` starts a comment. Keys from the three
/// records share one namespace and every field is addressable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub phantom: PhantomSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Apply `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected key = value, got `{raw}`", no + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? || self.phantom.set(key, value)? || self.train.set(key, value)? {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("unknown key `{key}`")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.phantom.validate()?;
        self.train.validate()
    }

    /// Every field, one `key = value` line each; [`RunConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, pairs) in [
            ("model", self.model.to_pairs()),
            ("phantom", self.phantom.to_pairs()),
            ("train", self.train.to_pairs()),
        ] {
            out.push_str(&format!("# {section}\n"));
            for (k, v) in pairs {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}
