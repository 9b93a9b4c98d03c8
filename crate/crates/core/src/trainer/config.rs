use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, ClassifierConfig, GeneratorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Joint,
    Sequential,
    ClassifierOnly,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Joint => "joint",
            TrainMode::Sequential => "sequential",
            TrainMode::ClassifierOnly => "classifier_only",
        }
    }

    pub fn uses_generator(self) -> bool {
        self != TrainMode::ClassifierOnly
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "sequential" => Ok(TrainMode::Sequential),
            "classifier-only" | "classifier_only" => Ok(TrainMode::ClassifierOnly),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierInput {
    Generated,
    Poly,
}

impl ClassifierInput {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierInput::Generated => "generated",
            ClassifierInput::Poly => "poly",
        }
    }
}

impl FromStr for ClassifierInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generated" => Ok(ClassifierInput::Generated),
            "poly" => Ok(ClassifierInput::Poly),
            other => Err(Error::Config(format!("unknown classifier input {other:?}"))),
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs_const: usize,
    pub epochs_decay: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub image_size: usize,
    pub mix_fraction: f64,
    pub seed: u64,
    pub classifier_input: ClassifierInput,
    pub generator: GeneratorConfig,
    pub classifier: ClassifierConfig,
    pub folds: usize,
}

impl TrainConfig {
    /// Desk-scale defaults for `mode`.
    pub fn desk(mode: TrainMode) -> Self {
        TrainConfig {
            mode,
            epochs_const: 5,
            epochs_decay: 5,
            batch_size: 8,
            adam: AdamConfig::default(),
            image_size: 64,
            mix_fraction: 0.5,
            seed: 0,
            classifier_input: match mode {
                TrainMode::ClassifierOnly => ClassifierInput::Poly,
                _ => ClassifierInput::Generated,
            },
            generator: GeneratorConfig::default(),
            classifier: ClassifierConfig::default(),
            folds: 5,
        }
    }

    /// Full-size settings: 512x512 slices, batch 5, nine residual blocks.
    pub fn paper_scale(mode: TrainMode) -> Self {
        TrainConfig {
            batch_size: 5,
            image_size: 512,
            generator: GeneratorConfig { in_channels: 1, base_channels: 64, n_blocks: 9 },
            classifier: ClassifierConfig { in_channels: 1, base_channels: 64, n_stages: 4 },
            ..Self::desk(mode)
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_const + self.epochs_decay
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.adam.validate()?;
        if self.total_epochs() == 0 {
            return bad("at least one epoch is required".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.mix_fraction > 0.0 && self.mix_fraction < 1.0) {
            return bad(format!("mix fraction {} must lie strictly between 0 and 1", self.mix_fraction));
        }
        if self.folds < 3 {
            return bad(format!("need at least 3 folds for disjoint train/val/test, got {}", self.folds));
        }
        let div = 1usize << self.classifier.n_stages.max(2);
        if self.image_size < 8 || !self.image_size.is_multiple_of(div) {
            return bad(format!("image size {} must be a multiple of {div}", self.image_size));
        }
        if self.mode == TrainMode::ClassifierOnly && self.classifier_input != ClassifierInput::Poly {
            return bad("classifier-only mode trains on poly inputs".into());
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order; floats use shortest round-trip form.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    fn entries(&self) -> Vec<(String, String)> {
        let e = |k: &str, v: String| (k.to_string(), v);
        vec![
            e("mode", self.mode.to_string()),
            e("epochs_const", self.epochs_const.to_string()),
            e("epochs_decay", self.epochs_decay.to_string()),
            e("batch_size", self.batch_size.to_string()),
            e("lr", self.adam.lr.to_string()),
            e("beta1", self.adam.beta1.to_string()),
            e("beta2", self.adam.beta2.to_string()),
            e("weight_decay", self.adam.weight_decay.to_string()),
            e("adam_eps", self.adam.eps.to_string()),
            e("image_size", self.image_size.to_string()),
            e("mix_fraction", self.mix_fraction.to_string()),
            e("seed", self.seed.to_string()),
            e("classifier_input", self.classifier_input.as_str().to_string()),
            e("gen_base_channels", self.generator.base_channels.to_string()),
            e("gen_blocks", self.generator.n_blocks.to_string()),
            e("cls_base_channels", self.classifier.base_channels.to_string()),
            e("cls_stages", self.classifier.n_stages.to_string()),
            e("folds", self.folds.to_string()),
        ]
    }

    /// Parses the output of [`TrainConfig::to_kv`]. Unknown keys are
    /// returned untouched so callers can store extra fields alongside.
    pub fn from_kv(text: &str) -> Result<(Self, BTreeMap<String, String>)> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| map.remove(k).ok_or_else(|| Error::Config(format!("missing key {k:?}")));
        fn num<T: FromStr>(k: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {k:?}")))
        }
        let mode: TrainMode = take("mode")?.parse()?;
        let cfg = TrainConfig {
            mode,
            epochs_const: num("epochs_const", take("epochs_const")?)?,
            epochs_decay: num("epochs_decay", take("epochs_decay")?)?,
            batch_size: num("batch_size", take("batch_size")?)?,
            adam: AdamConfig {
                lr: num("lr", take("lr")?)?,
                beta1: num("beta1", take("beta1")?)?,
                beta2: num("beta2", take("beta2")?)?,
                weight_decay: num("weight_decay", take("weight_decay")?)?,
                eps: num("adam_eps", take("adam_eps")?)?,
            },
            image_size: num("image_size", take("image_size")?)?,
            mix_fraction: num("mix_fraction", take("mix_fraction")?)?,
            seed: num("seed", take("seed")?)?,
            classifier_input: take("classifier_input")?.parse()?,
            generator: GeneratorConfig {
                in_channels: 1,
                base_channels: num("gen_base_channels", take("gen_base_channels")?)?,
                n_blocks: num("gen_blocks", take("gen_blocks")?)?,
            },
            classifier: ClassifierConfig {
                in_channels: 1,
                base_channels: num("cls_base_channels", take("cls_base_channels")?)?,
                n_stages: num("cls_stages", take("cls_stages")?)?,
            },
            folds: num("folds", take("folds")?)?,
        };
        Ok((cfg, map))
    }
}

/// Learning rate for a 0-based epoch: constant, then a linear ramp whose
/// last epoch keeps the final nonzero step of the ramp.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let (c, d) = (cfg.epochs_const, cfg.epochs_decay);
    if epoch >= c + d {
        return Err(Error::Config(format!("epoch {epoch} outside the {}-epoch schedule", c + d)));
    }
    if epoch < c {
        return Ok(cfg.adam.lr);
    }
    let k = (epoch - c + 1).min(d - 1);
    Ok(cfg.adam.lr * (1.0 - k as f64 / d as f64))
}
