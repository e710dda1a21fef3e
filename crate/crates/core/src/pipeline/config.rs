//! Versioned run configuration with two built-in profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::degradation::{PadmConfig, WaldConfig};
use crate::diffusion::{DiffusionConfig, PredictorConfig};
use crate::error::{Error, Result};
use crate::hdlm::HdlmConfig;
use crate::scene::SceneSpec;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 16/4 scenes, two-stage predictor: minutes on one CPU core.
    Desk,
    /// The full-size defaults.
    PaperDefaults,
}

/// Operator used to synthesize reduced-resolution training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TrainOperator {
    Wald,
    Padm,
}

impl TrainOperator {
    pub fn name(self) -> &'static str {
        match self {
            TrainOperator::Wald => "wald",
            TrainOperator::Padm => "padm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub train: usize,
    pub test: usize,
    pub scene: SceneSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Seed of the DDIM starting noise.
    pub sample_seed: u64,
    /// Snapshot interval (training steps) for epoch tracking; 0 disables.
    pub track_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub profile: Profile,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub degradation: TrainOperator,
    pub wald: WaldConfig,
    pub padm: PadmConfig,
    pub hdlm: HdlmConfig,
    pub diffusion: DiffusionConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => RunConfig {
                version: CONFIG_VERSION,
                profile,
                seed: 0,
                dataset: DatasetSpec {
                    train: 16,
                    test: 4,
                    scene: SceneSpec::default(),
                },
                degradation: TrainOperator::Padm,
                wald: WaldConfig::default(),
                padm: PadmConfig::default(),
                hdlm: HdlmConfig::default(),
                diffusion: DiffusionConfig {
                    lr: 1e-3,
                    train_steps: 3000,
                    predictor: PredictorConfig::desk(),
                    ..Default::default()
                },
                eval: EvalConfig {
                    sample_seed: 0,
                    track_every: 500,
                },
            },
            Profile::PaperDefaults => RunConfig {
                version: CONFIG_VERSION,
                profile,
                seed: 0,
                dataset: DatasetSpec {
                    train: 1000,
                    test: 20,
                    scene: SceneSpec {
                        height: 256,
                        width: 256,
                        ..SceneSpec::default()
                    },
                },
                degradation: TrainOperator::Padm,
                wald: WaldConfig::default(),
                padm: PadmConfig::default(),
                hdlm: HdlmConfig::default(),
                diffusion: DiffusionConfig::default(),
                eval: EvalConfig {
                    sample_seed: 0,
                    track_every: 10_000,
                },
            },
        }
    }

    pub fn desk() -> Self {
        Self::profile(Profile::Desk)
    }

    /// Parses a JSON document layered over `base`'s profile. Keys absent
    /// from the document keep the profile value; unknown keys are errors.
    pub fn from_json(text: &str, base: Profile) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let profile = match doc.get("profile") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
            None => base,
        };
        let mut merged = serde_json::to_value(Self::profile(profile))?;
        merge(&mut merged, doc);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.dataset.scene.validate()?;
        let r = self.dataset.scene.hidden.r;
        if self.wald.r != r || self.padm.r != r {
            return Err(Error::Config(format!(
                "scale factors disagree: scene {r}, wald {}, padm {}",
                self.wald.r, self.padm.r
            )));
        }
        self.padm.validate().map_err(config)?;
        self.diffusion
            .predictor
            .validate(self.dataset.scene.bands)
            .map_err(config)?;
        self.diffusion.schedule().map_err(config)?;
        if self.diffusion.batch_size == 0 || self.hdlm.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

fn config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        e => e,
    }
}

/// Recursively overlays `patch` onto `base`; keys missing from `base` are
/// inserted so that strict deserialization can reject them.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
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
