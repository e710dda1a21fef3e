//! Self-describing JSON checkpoints. Every float is stored as base64 of its
//! little-endian bytes, so a load/save cycle is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use super::config::RunConfig;
use crate::degradation::{IterationRecord, PadmState};
use crate::diffusion::{Diffuser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::hdlm::{Hdlm, HdlmLosses};
use crate::numerics::{AdamW, AdamWConfig, Ema, Parameterized, RngState, SeededRng};

pub const FORMAT: &str = "padsharp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `f64`s serialized as one base64 string.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Floats(pub Vec<f64>);

impl Serialize for Floats {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self.0.iter().flat_map(|v| v.to_le_bytes()).collect();
        s.serialize_str(&STANDARD.encode(bytes))
    }
}

impl<'de> Deserialize<'de> for Floats {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text).map_err(serde::de::Error::custom)?;
        if bytes.len() % 8 != 0 {
            return Err(serde::de::Error::custom("float blob length is not a multiple of 8"));
        }
        Ok(Floats(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBlob {
    pub id: String,
    pub dims: Vec<usize>,
    pub value: Floats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlob {
    pub name: String,
    pub params: Vec<ParamBlob>,
}

impl ModelBlob {
    pub fn capture(name: &str, model: &impl Parameterized) -> Self {
        ModelBlob {
            name: name.into(),
            params: model
                .params()
                .into_iter()
                .map(|p| ParamBlob {
                    id: p.id.clone(),
                    dims: p.dims.clone(),
                    value: Floats(p.value.clone()),
                })
                .collect(),
        }
    }

    /// Copies the stored values into a freshly built model of the same
    /// architecture; ids and dims must match one to one.
    pub fn restore(&self, model: &mut impl Parameterized) -> Result<()> {
        let params = model.params_mut();
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "model `{}` has {} params, checkpoint has {}",
                self.name,
                params.len(),
                self.params.len()
            )));
        }
        for (p, b) in params.into_iter().zip(&self.params) {
            if p.id != b.id || p.dims != b.dims || b.value.0.len() != p.value.len() {
                return Err(Error::Checkpoint(format!(
                    "param `{}` {:?} does not match stored `{}` {:?}",
                    p.id, p.dims, b.id, b.dims
                )));
            }
            p.value.copy_from_slice(&b.value.0);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimBlob {
    pub lr: Floats,
    pub betas_eps_decay: Floats,
    pub step: u64,
    pub m: Vec<Floats>,
    pub v: Vec<Floats>,
}

impl OptimBlob {
    pub fn capture(opt: &AdamW) -> Self {
        let c = opt.config;
        OptimBlob {
            lr: Floats(vec![c.lr]),
            betas_eps_decay: Floats(vec![c.beta1, c.beta2, c.eps, c.weight_decay]),
            step: opt.step,
            m: opt.m.iter().map(|v| Floats(v.clone())).collect(),
            v: opt.v.iter().map(|v| Floats(v.clone())).collect(),
        }
    }

    pub fn restore(&self) -> Result<AdamW> {
        let (lr, rest) = (&self.lr.0, &self.betas_eps_decay.0);
        if lr.len() != 1 || rest.len() != 4 {
            return Err(Error::Checkpoint("malformed optimizer constants".into()));
        }
        Ok(AdamW {
            config: AdamWConfig {
                lr: lr[0],
                beta1: rest[0],
                beta2: rest[1],
                eps: rest[2],
                weight_decay: rest[3],
            },
            step: self.step,
            m: self.m.iter().map(|f| f.0.clone()).collect(),
            v: self.v.iter().map(|f| f.0.clone()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlob {
    pub steps: usize,
    pub beta_range: Floats,
    pub betas: Floats,
    pub alpha_bar: Floats,
    pub sequence: Vec<usize>,
}

impl ScheduleBlob {
    pub fn capture(s: &NoiseSchedule) -> Self {
        ScheduleBlob {
            steps: s.steps,
            beta_range: Floats(vec![s.beta_min, s.beta_max]),
            betas: Floats(s.betas.clone()),
            alpha_bar: Floats(s.alpha_bar.clone()),
            sequence: s.sequence.clone(),
        }
    }

    pub fn restore(&self) -> Result<NoiseSchedule> {
        let r = &self.beta_range.0;
        if r.len() != 2 || self.betas.0.len() != self.steps || self.alpha_bar.0.len() != self.steps + 1 {
            return Err(Error::Checkpoint("malformed noise schedule".into()));
        }
        Ok(NoiseSchedule {
            steps: self.steps,
            beta_min: r[0],
            beta_max: r[1],
            betas: self.betas.0.clone(),
            alpha_bar: self.alpha_bar.0.clone(),
            sequence: self.sequence.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Padm,
    Hdlm,
    Diffusion,
}

impl Kind {
    /// The command that produces this kind of checkpoint.
    pub fn command(self) -> &'static str {
        match self {
            Kind::Padm => "train-padm",
            Kind::Hdlm => "train-hdlm",
            Kind::Diffusion => "train-diff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: Kind,
    pub bands: usize,
    pub config: RunConfig,
    pub models: Vec<ModelBlob>,
    pub optimizer: Option<OptimBlob>,
    pub ema: Option<Floats>,
    pub schedule: Option<ScheduleBlob>,
    pub rng: RngState,
    /// Kind-specific extras (loss history, architecture flags).
    pub extra: Value,
}

impl Checkpoint {
    fn empty(kind: Kind, bands: usize, config: &RunConfig, rng: &SeededRng) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind,
            bands,
            config: config.clone(),
            models: Vec::new(),
            optimizer: None,
            ema: None,
            schedule: None,
            rng: rng.state(),
            extra: Value::Null,
        }
    }

    pub fn from_padm(config: &RunConfig, bands: usize, state: &PadmState, rng: &SeededRng) -> Self {
        let mut c = Self::empty(Kind::Padm, bands, config, rng);
        c.models = vec![
            ModelBlob::capture("align", &state.align),
            ModelBlob::capture("degrade", &state.degrade),
        ];
        c.extra = serde_json::json!({
            "align_output_reduction": state.align.output_reduction,
            "history": state.history,
        });
        c
    }

    pub fn from_hdlm(config: &RunConfig, model: &Hdlm, curve: &[HdlmLosses], rng: &SeededRng) -> Self {
        let mut c = Self::empty(Kind::Hdlm, model.bands(), config, rng);
        c.models = vec![ModelBlob::capture("hdlm", model)];
        c.extra = serde_json::json!({ "losses": curve });
        c
    }

    pub fn from_diffuser(config: &RunConfig, bands: usize, model: &Diffuser, losses: &[f64], rng: &SeededRng) -> Self {
        let mut c = Self::empty(Kind::Diffusion, bands, config, rng);
        let mut cfg = c.config.clone();
        cfg.diffusion = model.config.clone();
        c.config = cfg;
        c.models = vec![ModelBlob::capture("predictor", &model.predictor)];
        c.optimizer = Some(OptimBlob::capture(&model.opt));
        c.ema = Some(Floats(model.ema.shadow.clone()));
        c.schedule = Some(ScheduleBlob::capture(&model.schedule));
        c.extra = serde_json::json!({ "losses": Floats(losses.to_vec()) });
        c
    }

    fn model(&self, name: &str) -> Result<&ModelBlob> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("no model `{name}` in {:?} checkpoint", self.kind)))
    }

    fn expect(&self, kind: Kind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint (from `padsharp {}`), got {:?}",
                kind.command(),
                self.kind
            )));
        }
        Ok(())
    }

    /// Rebuilds the PADM nets; `lrpan`, `history` curves are not restored.
    pub fn padm(&self) -> Result<PadmState> {
        self.expect(Kind::Padm)?;
        let mut state = PadmState::new(&self.config.padm, self.bands, &mut SeededRng::new(0))?;
        self.model("align")?.restore(&mut state.align)?;
        self.model("degrade")?.restore(&mut state.degrade)?;
        state.align.output_reduction = self.extra["align_output_reduction"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing align_output_reduction".into()))?
            as usize;
        state.history = serde_json::from_value::<Vec<IterationRecord>>(self.extra["history"].clone())?;
        state.iteration = state.history.len();
        Ok(state)
    }

    pub fn hdlm(&self) -> Result<Hdlm> {
        self.expect(Kind::Hdlm)?;
        let mut model = Hdlm::new(self.bands, &self.config.hdlm, &mut SeededRng::new(0));
        self.model("hdlm")?.restore(&mut model)?;
        Ok(model)
    }

    /// Rebuilds the diffuser exactly as saved: weights, optimizer moments,
    /// EMA shadow and schedule.
    pub fn diffuser(&self) -> Result<Diffuser> {
        self.expect(Kind::Diffusion)?;
        let mut d = Diffuser::new(self.config.diffusion.clone(), self.bands, &mut SeededRng::new(0))?;
        self.model("predictor")?.restore(&mut d.predictor)?;
        d.opt = self
            .optimizer
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("missing optimizer state".into()))?
            .restore()?;
        let shadow = self
            .ema
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("missing EMA shadow".into()))?;
        if shadow.0.len() != d.predictor.num_weights() {
            return Err(Error::Checkpoint("EMA shadow size mismatch".into()));
        }
        d.ema = Ema::with_shadow(self.config.diffusion.ema, shadow.0.clone())?;
        d.schedule = self
            .schedule
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("missing noise schedule".into()))?
            .restore()?;
        Ok(d)
    }

    pub fn losses(&self) -> Result<Vec<f64>> {
        Ok(serde_json::from_value::<Floats>(self.extra["losses"].clone())?.0)
    }

    pub fn rng(&self) -> SeededRng {
        SeededRng::from_state(self.rng)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let doc: Value = serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if doc.get("format").and_then(Value::as_str) != Some(FORMAT) {
            return Err(Error::Checkpoint("not a padsharp checkpoint".into()));
        }
        let version = doc.get("version").and_then(Value::as_u64);
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version:?} is not supported (expected {CHECKPOINT_VERSION}); re-run training"
            )));
        }
        serde_json::from_value(doc).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a checkpoint of `kind`; a missing file names the command that
    /// creates it.
    pub fn load(path: &Path, kind: Kind) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingUpstream {
                path: path.to_path_buf(),
                command: kind.command(),
            });
        }
        let c = Self::from_bytes(&std::fs::read(path)?)?;
        c.expect(kind)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{train_step, DiffusionConfig, DiffusionSample, PredictorConfig};
    use crate::hdlm::HdlmConfig;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::desk();
        cfg.diffusion = DiffusionConfig {
            steps: 20,
            sample_steps: 4,
            predictor: PredictorConfig {
                widths: vec![4, 8],
                temb_dim: 8,
                ..Default::default()
            },
            ..cfg.diffusion
        };
        cfg
    }

    #[test]
    fn floats_survive_awkward_values() {
        let v = Floats(vec![0.1, -0.0, f64::MIN_POSITIVE / 3.0, 1e308, f64::INFINITY, f64::NAN]);
        let back: Floats = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        let bits = |f: &Floats| f.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&v), bits(&back));
    }

    #[test]
    fn diffuser_round_trip_is_bit_identical() {
        let cfg = tiny();
        let mut rng = SeededRng::new(5);
        let mut d = Diffuser::new(cfg.diffusion.clone(), 2, &mut rng).unwrap();
        let ims = rng.normal_raster(2, 8, 8);
        let s = DiffusionSample {
            target: ims.scale(1.1),
            pan: ims.spectral_mean(),
            ph: rng.normal_raster(1, 8, 8),
            ims,
        };
        train_step(&mut d, &[&s], &mut rng).unwrap();
        let ck = Checkpoint::from_diffuser(&cfg, 2, &d, &[0.25], &rng);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), ck.to_bytes());
        let restored = back.diffuser().unwrap();
        assert_eq!(restored.predictor.flat_values(), d.predictor.flat_values());
        assert_eq!(restored.opt, d.opt);
        assert_eq!(restored.ema, d.ema);
        assert_eq!(restored.schedule, d.schedule);
        assert_eq!(back.rng().state(), rng.state());
        assert_eq!(back.losses().unwrap(), vec![0.25]);
    }

    #[test]
    fn hdlm_round_trip_and_kind_check() {
        let cfg = tiny();
        let m = Hdlm::new(2, &HdlmConfig { width: 4, blocks: 1, ..cfg.hdlm }, &mut SeededRng::new(1));
        let mut cfg2 = cfg.clone();
        cfg2.hdlm.width = 4;
        cfg2.hdlm.blocks = 1;
        let ck = Checkpoint::from_hdlm(&cfg2, &m, &[], &SeededRng::new(1));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.hdlm().unwrap(), m);
        assert!(matches!(back.diffuser(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn version_mismatch_and_missing_file() {
        let cfg = tiny();
        let d = Diffuser::new(cfg.diffusion.clone(), 2, &mut SeededRng::new(1)).unwrap();
        let ck = Checkpoint::from_diffuser(&cfg, 2, &d, &[], &SeededRng::new(1));
        let mut doc: Value = serde_json::from_slice(&ck.to_bytes()).unwrap();
        doc["version"] = Value::from(CHECKPOINT_VERSION + 1);
        let err = Checkpoint::from_bytes(&serde_json::to_vec(&doc).unwrap()).unwrap_err();
        assert!(err.to_string().contains("not supported"), "{err}");
        let err = Checkpoint::load(Path::new("/nonexistent/padm.ckpt"), Kind::Padm).unwrap_err();
        assert!(err.to_string().contains("padsharp train-padm"), "{err}");
    }
}
