use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Normalization, SynthSpec};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::ndam::NdamConfig;
use crate::optim::SgdConfig;
use crate::sdm::PartitionPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Scratch,
    TraditionalKd,
    Lakd,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(Regime::Scratch),
            "traditional-kd" => Ok(Regime::TraditionalKd),
            "lakd" => Ok(Regime::Lakd),
            other => Err(Error::Config(format!("regime: unknown value {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated images; the last `val_samples` form the validation split.
    Synthetic { synth: SynthSpec, val_samples: usize },
    /// CIFAR-10 binary batch files.
    Cifar10 { train: Vec<PathBuf>, test: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DatasetSource,
    /// Keep only the first `n` training samples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub val_limit: Option<usize>,
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub depth: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub checkpoint: Option<PathBuf>,
    /// Expected architecture; checked against the checkpoint when both are
    /// given.
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub width: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    LinearDecay,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub schedule: Schedule,
    /// Per-optimizer gradient norm bound; each local block clips its own.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let s = SgdConfig::default();
        OptimConfig {
            lr: s.lr,
            momentum: s.momentum,
            weight_decay: s.weight_decay,
            nesterov: s.nesterov,
            epochs: 30,
            batch_size: 64,
            schedule: Schedule::LinearDecay,
            clip_norm: s.clip_norm,
        }
    }
}

impl OptimConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { lr: self.lr, momentum: self.momentum, weight_decay: self.weight_decay, nesterov: self.nesterov, clip_norm: self.clip_norm }
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::LinearDecay => crate::optim::linear_decay(self.lr, step, total),
            Schedule::Constant => self.lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    /// Validation samples used for the final CKA matrix; 0 skips it.
    pub cka_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { batch_size: 256, cka_samples: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub regime: Regime,
    pub data: DataConfig,
    #[serde(default)]
    pub teacher: Option<TeacherConfig>,
    pub student: NetConfig,
    #[serde(default)]
    pub weights: LossWeights,
    /// Required for `lakd`.
    #[serde(default)]
    pub plan: Option<PartitionPlan>,
    /// `None` bypasses the weighting code path.
    #[serde(default)]
    pub ndam: Option<NdamConfig>,
    /// Feature-alignment units for `traditional-kd`.
    #[serde(default)]
    pub kd_align: Vec<usize>,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {msg}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| field("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks field values and referenced paths.
    pub fn validate(&self) -> Result<()> {
        self.validate_fields()?;
        if let DatasetSource::Cifar10 { train, test } = &self.data.source {
            if let Some(p) = train.iter().chain(test).find(|p| !p.exists()) {
                return Err(field("data.source", format!("{} does not exist", p.display())));
            }
        }
        if self.regime != Regime::Scratch {
            match self.teacher.as_ref().and_then(|t| t.checkpoint.as_ref()) {
                None => {
                    return Err(field(
                        "teacher.checkpoint",
                        "required for distillation; train the teacher with regime scratch first",
                    ))
                }
                Some(p) if !p.exists() => {
                    return Err(field("teacher.checkpoint", format!("{} does not exist", p.display())))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Checks field values only; referenced files are not touched.
    pub fn validate_fields(&self) -> Result<()> {
        self.weights.validate().map_err(|e| field("weights", e))?;
        if self.student.depth < 2 || self.student.width == 0 {
            return Err(field("student", "depth must be >= 2 and width >= 1"));
        }
        if self.optim.epochs == 0 {
            return Err(field("optim.epochs", "must be positive"));
        }
        if self.optim.batch_size == 0 {
            return Err(field("optim.batch_size", "must be positive"));
        }
        if !(self.optim.lr > 0.0) || !(0.0..1.0).contains(&self.optim.momentum) || self.optim.weight_decay < 0.0 {
            return Err(field("optim", "need lr > 0, momentum in [0, 1), weight_decay >= 0"));
        }
        if self.eval.batch_size == 0 {
            return Err(field("eval.batch_size", "must be positive"));
        }
        match &self.data.source {
            DatasetSource::Synthetic { synth, val_samples } => {
                if *val_samples == 0 || *val_samples >= synth.samples {
                    return Err(field("data.source.val_samples", format!("must lie in [1, {})", synth.samples)));
                }
            }
            DatasetSource::Cifar10 { train, test } => {
                if train.is_empty() || test.is_empty() {
                    return Err(field("data.source", "cifar10 needs train and test files"));
                }
            }
        }
        if let Some(n) = &self.ndam {
            if n.alpha_pool < 0.0 || n.beta_pool < 0.0 {
                return Err(field("ndam", "alpha_pool and beta_pool must be non-negative"));
            }
        }
        match self.regime {
            Regime::Lakd => {
                let plan = self.plan.as_ref().ok_or_else(|| field("plan", "required for regime lakd"))?;
                plan.validate(self.student.depth).map_err(|e| field("plan", e))?;
            }
            Regime::TraditionalKd => {
                if let Some(&a) = self.kd_align.iter().find(|&&a| a == 0 || a > self.student.depth) {
                    return Err(field("kd_align", format!("index {a} outside [1, {}]", self.student.depth)));
                }
            }
            Regime::Scratch => {}
        }
        Ok(())
    }

    /// Canonical serialization: compact JSON with object keys sorted.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// A small, fast configuration on the synthetic task.
    pub fn synthetic_default(regime: Regime) -> Self {
        RunConfig {
            regime,
            data: DataConfig {
                source: DatasetSource::Synthetic { synth: SynthSpec::default(), val_samples: 600 },
                train_limit: None,
                val_limit: None,
                augment: false,
                normalization: Normalization::default(),
            },
            teacher: None,
            student: NetConfig { depth: 9, width: 4 },
            weights: LossWeights::default(),
            plan: (regime == Regime::Lakd).then(|| PartitionPlan::from_locations(&[1, 4, 9], true, 9)),
            ndam: (regime == Regime::Lakd).then(NdamConfig::default),
            kd_align: Vec::new(),
            optim: OptimConfig { epochs: 5, batch_size: 32, clip_norm: Some(5.0), ..OptimConfig::default() },
            eval: EvalConfig::default(),
            seed: 0,
            output_dir: None,
        }
    }

    /// Long CIFAR-scale protocol: 300 epochs, batch 64, crop/flip augmentation.
    pub fn apply_paper_scale(&mut self) {
        self.optim.epochs = 300;
        self.optim.batch_size = 64;
        self.optim.lr = 0.05;
        self.optim.schedule = Schedule::LinearDecay;
        self.data.augment = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_hash() {
        let cfg = RunConfig::synthetic_default(Regime::Lakd);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn validation_messages_name_fields() {
        let mut cfg = RunConfig::synthetic_default(Regime::Lakd);
        cfg.plan = None;
        assert!(cfg.validate().unwrap_err().to_string().contains("plan"));
        let cfg = RunConfig::synthetic_default(Regime::TraditionalKd);
        assert!(cfg.validate().unwrap_err().to_string().contains("teacher.checkpoint"));
        let mut cfg = RunConfig::synthetic_default(Regime::Scratch);
        cfg.optim.epochs = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("optim.epochs"));
        assert!(RunConfig::synthetic_default(Regime::Scratch).validate().is_ok());
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = serde_json::to_value(RunConfig::synthetic_default(Regime::Scratch)).unwrap();
        v["bogus"] = serde_json::json!(1);
        let err = RunConfig::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
