//! Alternating training of PAlignNet and PDegradeNet.

use serde::{Deserialize, Serialize};

use super::palign::PAlignNet;
use super::pdegrade::PDegradeNet;
use super::train::{fit, Regressor, TrainConfig};
use super::init_lrpan;
use crate::error::{Error, Result};
use crate::numerics::{Raster, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadmConfig {
    pub r: usize,
    /// Total alternations; at least 2.
    pub iterations: usize,
    pub width: usize,
    pub blocks: usize,
    pub head_size: usize,
    pub orientations: usize,
    pub align: TrainConfig,
    pub degrade: TrainConfig,
}

impl Default for PadmConfig {
    fn default() -> Self {
        PadmConfig {
            r: 4,
            iterations: 3,
            width: 32,
            blocks: 4,
            head_size: 7,
            orientations: 4,
            align: TrainConfig::default(),
            degrade: TrainConfig::default(),
        }
    }
}

impl PadmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 2 {
            return Err(Error::invalid(format!(
                "PADM needs at least 2 iterations, got {}",
                self.iterations
            )));
        }
        if self.r < 2 {
            return Err(Error::invalid("PADM scale factor must be ≥ 2"));
        }
        Ok(())
    }
}

/// Losses of one alternation, each measured on the full training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub align_initial: f64,
    pub align_final: f64,
    pub degrade_initial: f64,
    pub degrade_final: f64,
}

#[derive(Debug, Clone)]
pub struct PadmState {
    pub iteration: usize,
    pub total: usize,
    pub align: PAlignNet,
    pub degrade: PDegradeNet,
    /// Current LRPAN estimate per training sample.
    pub lrpan: Vec<Raster>,
    pub history: Vec<IterationRecord>,
    /// Per-epoch losses of every half-iteration, in order.
    pub curves: Vec<(String, Vec<f64>)>,
}

impl PadmState {
    pub fn new(cfg: &PadmConfig, bands: usize, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        Ok(PadmState {
            iteration: 0,
            total: cfg.iterations,
            align: PAlignNet::new(bands, cfg.width, cfg.blocks, rng),
            degrade: PDegradeNet::new(
                cfg.r,
                cfg.width,
                cfg.blocks,
                cfg.head_size,
                cfg.orientations,
                rng,
            )?,
            lrpan: Vec::new(),
            history: Vec::new(),
            curves: Vec::new(),
        })
    }
}

/// Alternates the two half-steps starting from block-mean LRPAN targets.
///
/// Each half-step warm-starts from the previous parameters; after it the
/// network's outputs become the other network's fixed targets.
pub fn padm_run(
    ms: &[Raster],
    pan: &[Raster],
    cfg: &PadmConfig,
    rng: &mut SeededRng,
) -> Result<PadmState> {
    cfg.validate()?;
    if ms.is_empty() || ms.len() != pan.len() {
        return Err(Error::invalid(format!(
            "PADM needs matching non-empty MS/PAN sets, got {} and {}",
            ms.len(),
            pan.len()
        )));
    }
    let mut state = PadmState::new(cfg, ms[0].channels(), rng)?;
    let lr_h = pan[0].height() / cfg.r;
    state.align.output_reduction = ms[0].height() / lr_h.max(1);
    state.lrpan = pan
        .iter()
        .map(|p| init_lrpan(p, cfg.r))
        .collect::<Result<_>>()?;
    for i in 1..=cfg.iterations {
        state.iteration = i;
        let align_curve = fit(
            &mut state.align,
            ms,
            &state.lrpan,
            &cfg.align,
            "PAlignNet",
            i,
            rng,
        )?;
        let align_targets: Vec<Raster> = ms
            .iter()
            .map(|m| state.align.predict(m))
            .collect::<Result<_>>()?;
        let degrade_curve = fit(
            &mut state.degrade,
            pan,
            &align_targets,
            &cfg.degrade,
            "PDegradeNet",
            i,
            rng,
        )?;
        state.lrpan = pan
            .iter()
            .map(|p| state.degrade.predict(p))
            .collect::<Result<_>>()?;
        state.history.push(IterationRecord {
            iteration: i,
            align_initial: align_curve[0],
            align_final: *align_curve.last().expect("non-empty"),
            degrade_initial: degrade_curve[0],
            degrade_final: *degrade_curve.last().expect("non-empty"),
        });
        state.curves.push((format!("align{i}"), align_curve));
        state.curves.push((format!("degrade{i}"), degrade_curve));
    }
    Ok(state)
}

/// Degrades every band of `image` with the trained PDegradeNet.
pub fn apply_degradation(net: &PDegradeNet, image: &Raster) -> Result<Raster> {
    let bands = (0..image.channels())
        .map(|c| net.predict(&image.channel(c)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Raster> = bands.iter().collect();
    Ok(Raster::concat(&refs)?.with_meta_of(image))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_iteration_rejected() {
        let cfg = PadmConfig {
            iterations: 1,
            ..Default::default()
        };
        let mut rng = SeededRng::new(1);
        let err = padm_run(&[Raster::zeros(4, 4, 4)], &[Raster::zeros(1, 16, 16)], &cfg, &mut rng)
            .unwrap_err();
        assert!(err.to_string().contains("at least 2"));
    }

    #[test]
    fn apply_degradation_is_per_band_and_deterministic() {
        let mut rng = SeededRng::new(2);
        let net = PDegradeNet::new(4, 8, 1, 5, 4, &mut rng).unwrap();
        let img = Raster::filled(3, 16, 16, 0.4);
        let out = apply_degradation(&net, &img).unwrap();
        assert_eq!(out.shape().to_string(), "3×4×4");
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-2));
        assert_eq!(apply_degradation(&net, &img).unwrap(), out);
    }
}
