//! Run configuration: every module's settings plus artifact paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wsi_core::augment::AugmentConfig;
use wsi_core::corpus::SynthesisConfig;
use wsi_core::dsp::FeatureConfig;
use wsi_core::losses::LossConfig;
use wsi_core::model::ModelConfig;
use wsi_core::train::TrainConfig;

use crate::error::{Error, Result};
use crate::io::{read_json, with_suffix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Preset {
    /// whisper-tiny dimensions, 3000-frame inputs, learning rate 1e-5
    #[default]
    Paper,
    /// D=32, 2 layers, 300-frame inputs, learning rate 1e-3
    Micro,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub trials: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub synthesis: SynthesisConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => RunConfig::default(),
            Preset::Micro => RunConfig {
                features: FeatureConfig::micro(),
                model: ModelConfig::micro(),
                train: TrainConfig {
                    learning_rate: 1e-3,
                    ..TrainConfig::default()
                },
                ..RunConfig::default()
            },
        }
    }

    /// A JSON file's sections; omitted fields keep the defaults of `base`.
    pub fn load(path: &Path, base: Preset) -> Result<Self> {
        let overlay: serde_json::Value = read_json(path)?;
        let mut merged = serde_json::to_value(RunConfig::preset(base)).expect("config serializes");
        merge(&mut merged, overlay);
        serde_json::from_value(merged).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Module-level checks plus the cross-field ones.
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        self.augment.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if self.features.n_mels != self.model.n_mels {
            return Err(Error::usage(format!(
                "features.n_mels = {} but model.n_mels = {}",
                self.features.n_mels, self.model.n_mels
            )));
        }
        let frames = self.features.fixed_frames.div_ceil(2);
        if frames > self.model.max_frames {
            return Err(Error::usage(format!(
                "features.fixed_frames = {} needs model.max_frames >= {frames}, got {}",
                self.features.fixed_frames, self.model.max_frames
            )));
        }
        Ok(())
    }
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Where the resolved config of a training run is recorded.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    with_suffix(checkpoint, ".json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::preset(Preset::Paper).validate().unwrap();
        RunConfig::preset(Preset::Micro).validate().unwrap();
    }

    #[test]
    fn cross_field_checks() {
        let mut c = RunConfig::preset(Preset::Micro);
        c.model.n_mels = 40;
        assert!(c.validate().unwrap_err().to_string().contains("n_mels"));
        let mut c = RunConfig::preset(Preset::Micro);
        c.features.fixed_frames = 301;
        assert!(c.validate().unwrap_err().to_string().contains("max_frames >= 151"));
    }

    #[test]
    fn file_overlays_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"seed": 5}, "loss": {"ssl_weight": 0.0}}"#).unwrap();
        let c = RunConfig::load(&p, Preset::Micro).unwrap();
        assert_eq!(c.train.seed, 5);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.loss.ssl_weight, 0.0);
        assert_eq!(c.model, ModelConfig::micro());

        std::fs::write(&p, r#"{"train": {"sede": 5}}"#).unwrap();
        assert!(RunConfig::load(&p, Preset::Micro).is_err());
    }
}
