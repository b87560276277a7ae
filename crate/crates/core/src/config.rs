//! Experiment configuration files.
//!
//! A TOML document with five optional sections:
//!
//! ```toml
//! [data]
//! path = "train.fseq"        # or an inline [data.spec] table (SyntheticSpec fields)
//! subsample_factor = 3       # overrides pretrain.subsample_factor when present
//!
//! [net]                      # NetConfig fields
//! [pretrain]                 # TrainConfig fields, defaults from TrainConfig::pretrain_default
//! [finetune]                 # TrainConfig fields, defaults from TrainConfig::finetune_default
//!
//! [eval]
//! data_range = "capacity"    # or a positive number
//! save_frames = false
//! ```
//!
//! Unknown keys are rejected at every level. Missing keys take their
//! defaults, which are the published full-scale values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::seqdata::{generate_synthetic, load_sequence, FrameSequence, SyntheticSpec};
use crate::train::{Phase, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub spec: Option<SyntheticSpec>,
    pub subsample_factor: Option<usize>,
}

impl DataSection {
    /// Load or generate the configured sequence. Relative paths resolve
    /// against `base`.
    pub fn load(&self, base: &Path) -> Result<FrameSequence> {
        match (&self.path, &self.spec) {
            (Some(_), Some(_)) => Err(Error::Config(
                "data: set either `path` or `spec`, not both".into(),
            )),
            (Some(p), None) => load_sequence(base.join(p)),
            (None, Some(spec)) => generate_synthetic(spec),
            (None, None) => Err(Error::Config(
                "no training data: pass --data or set data.path / data.spec".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangePolicy {
    /// The sequence capacity, shared with the scatter index.
    #[default]
    Capacity,
}

/// Peak value used by PSNR and SSIM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataRange {
    Policy(RangePolicy),
    Fixed(f64),
}

impl Default for DataRange {
    fn default() -> Self {
        DataRange::Policy(RangePolicy::Capacity)
    }
}

impl DataRange {
    pub fn resolve(&self, seq: &FrameSequence) -> f64 {
        match *self {
            DataRange::Policy(RangePolicy::Capacity) => seq.capacity as f64,
            DataRange::Fixed(v) => v,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub data_range: DataRange,
    pub save_frames: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub net: NetConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSection::default(),
            net: NetConfig::default(),
            pretrain: TrainConfig::pretrain_default(),
            finetune: TrainConfig::finetune_default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    data: DataSection,
    #[serde(default)]
    net: NetConfig,
    #[serde(default)]
    pretrain: toml::Table,
    #[serde(default)]
    finetune: toml::Table,
    #[serde(default)]
    eval: EvalSection,
}

/// Recursively overlay `over` on `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn train_section(name: &str, defaults: TrainConfig, over: toml::Table) -> Result<TrainConfig> {
    let want = defaults.phase;
    let mut table = toml::Table::try_from(&defaults).expect("defaults serialize");
    merge(&mut table, over);
    let cfg: TrainConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("[{name}] {}", e.message())))?;
    if cfg.phase != want {
        return Err(Error::Config(format!("[{name}] phase must be {want:?}")));
    }
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        let mut cfg = ExperimentConfig {
            data: raw.data,
            net: raw.net,
            pretrain: train_section("pretrain", TrainConfig::pretrain_default(), raw.pretrain)?,
            finetune: train_section("finetune", TrainConfig::finetune_default(), raw.finetune)?,
            eval: raw.eval,
        };
        if let Some(k) = cfg.data.subsample_factor {
            cfg.pretrain.subsample_factor = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if let Some(spec) = &self.data.spec {
            spec.validate()?;
        }
        if let DataRange::Fixed(v) = self.eval.data_range {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("eval.data_range must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Set the seed of both training phases.
    pub fn set_seed(&mut self, seed: u64) {
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
    }

    /// The fully resolved document, suitable for [`Self::from_toml_str`].
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train(&self, phase: Phase) -> &TrainConfig {
        match phase {
            Phase::Pretrain => &self.pretrain,
            Phase::Finetune => &self.finetune,
        }
    }
}
