//! Run configuration: one TOML file plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetConfig;
use crate::error::{Error, Result};
use crate::mesh::MeshConfig;
use crate::network::NetworkConfig;
use crate::train::{SsoConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// dataset root written by `gen-data` and read by training and eval
    pub data: PathBuf,
    /// model checkpoint for reconstruct/render/eval
    pub weights: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            weights: PathBuf::from("model.grm"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub scenes: usize,
    /// trailing scenes kept out of training
    pub held_out_scenes: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            scenes: 200,
            held_out_scenes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub fscore_thresholds: Vec<f64>,
    /// ICP-align predictions before geometry metrics
    pub align: bool,
    /// predicted Gaussians below this opacity are left out of geometry metrics
    pub opacity_threshold: f64,
    /// both clouds are subsampled to at most this many points
    pub max_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fscore_thresholds: vec![0.01, 0.02, 0.05],
            align: true,
            opacity_threshold: 0.5,
            max_points: 5000,
        }
    }
}

/// One ablation axis; each produces a paired pair of runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationSwitch {
    /// interpolated vs exponential scale activation
    ScaleActivation,
    /// configured vs zero upsampler blocks
    UpBlocks,
    /// mask loss on vs off
    MaskLoss,
    /// transformer vs convolutional upsampler
    ConvUpsampler,
    /// depth head vs XYZ head
    XyzHead,
}

impl AblationSwitch {
    pub const ALL: [AblationSwitch; 5] = [
        Self::ScaleActivation,
        Self::UpBlocks,
        Self::MaskLoss,
        Self::ConvUpsampler,
        Self::XyzHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ScaleActivation => "scale-activation",
            Self::UpBlocks => "up-blocks",
            Self::MaskLoss => "mask-loss",
            Self::ConvUpsampler => "conv-upsampler",
            Self::XyzHead => "xyz-head",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation switch {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub switches: Vec<AblationSwitch>,
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            switches: AblationSwitch::ALL.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

/// Everything a CLI run needs. `seed` drives dataset generation and weight
/// initialisation; `train.seed` drives scene and view sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub split: SplitConfig,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub sso: SsoConfig,
    pub mesh: MeshConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

impl RunConfig {
    /// Defaults, then the file (if any), then `key=value` overrides in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::format(p, e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = Self::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.sso.activation.validate()?;
        self.mesh.validate()?;
        if self.split.held_out_scenes > self.split.scenes {
            return Err(Error::Config("split.held_out_scenes exceeds split.scenes".into()));
        }
        if self.eval.fscore_thresholds.iter().any(|t| !(*t > 0.0)) || self.eval.max_points == 0 {
            return Err(Error::Config(
                "eval thresholds must be positive and max_points nonzero".into(),
            ));
        }
        if self.network.image_height != self.dataset.resolution || self.network.image_width != self.dataset.resolution {
            return Err(Error::Config(format!(
                "network expects {}x{} images but the dataset renders {}x{}",
                self.network.image_height, self.network.image_width, self.dataset.resolution, self.dataset.resolution
            )));
        }
        Ok(())
    }

    /// TOML text that resolves back to this configuration.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("run config is always representable")
    }
}

/// Sets the dotted `key` to `value`, read as a TOML value when it parses
/// as one and as a plain string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
