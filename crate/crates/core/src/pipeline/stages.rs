//! The training, sampling and evaluation stages, independent of file layout
//! beyond the dataset directory.

use super::config::{RunConfig, TrainOperator};
use super::dataset::{Dataset, Observed, Split};
use crate::degradation::{apply_degradation, init_lrpan, padm_run, PDegradeNet, PadmState, WaldConfig};
use crate::diffusion::{sample, train, DiffusionSample, Diffuser};
use crate::error::{Error, Result};
use crate::hdlm::{extract_ph, train_hdlm, Hdlm, HdlmLosses};
use crate::metrics::{no_reference, reduced, NoReference, Reduced};
use crate::numerics::{bicubic_upsample, bilinear_upsample, Align, Raster, SeededRng};

/// Independent RNG streams, one per stage.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Padm = 1,
    Hdlm = 2,
    Diffusion = 3,
}

pub fn stage_rng(cfg: &RunConfig, stream: Stream) -> SeededRng {
    SeededRng::new(cfg.seed).fork(100 + stream as u64)
}

/// Upsampled MS: the `IMS` every fuser starts from.
pub fn ims(ms: &Raster, r: usize) -> Result<Raster> {
    bilinear_upsample(ms, r, Align::Centers)
}

pub fn bicubic(ms: &Raster, r: usize) -> Result<Raster> {
    Ok(bicubic_upsample(ms, r)?.clamp_to_range())
}

pub fn train_padm(cfg: &RunConfig, data: &[Observed]) -> Result<(PadmState, SeededRng)> {
    let mut rng = stage_rng(cfg, Stream::Padm);
    let ms: Vec<Raster> = data.iter().map(|o| o.ms.clone()).collect();
    let pan: Vec<Raster> = data.iter().map(|o| o.pan.clone()).collect();
    let state = padm_run(&ms, &pan, &cfg.padm, &mut rng)?;
    Ok((state, rng))
}

/// `kind,iteration,epoch,loss` rows for every half-iteration's curve.
pub fn padm_history_csv(state: &PadmState) -> String {
    let mut out = String::from("net,iteration,epoch,loss\n");
    for (name, curve) in &state.curves {
        let (net, it) = name.split_at(name.find(|c: char| c.is_ascii_digit()).unwrap_or(name.len()));
        for (e, l) in curve.iter().enumerate() {
            out.push_str(&format!("{net},{it},{e},{l:.9e}\n"));
        }
    }
    out
}

/// Trains HDLM on full-scale observed pairs `(PAN, IMS)`.
pub fn train_hdlm_stage(cfg: &RunConfig, data: &[Observed], r: usize) -> Result<(Hdlm, Vec<HdlmLosses>, SeededRng)> {
    let mut rng = stage_rng(cfg, Stream::Hdlm);
    let bands = data
        .first()
        .ok_or_else(|| Error::invalid("HDLM needs training scenes"))?
        .ms
        .channels();
    let mut model = Hdlm::new(bands, &cfg.hdlm, &mut rng);
    let pans: Vec<Raster> = data.iter().map(|o| o.pan.clone()).collect();
    let imss = data.iter().map(|o| ims(&o.ms, r)).collect::<Result<Vec<_>>>()?;
    let curve = train_hdlm(&mut model, &pans, &imss, &cfg.hdlm, &mut rng)?;
    Ok((model, curve, rng))
}

pub fn hdlm_csv(curve: &[HdlmLosses]) -> String {
    let mut out = String::from("epoch,hlb,llb,global,total\n");
    for (e, l) in curve.iter().enumerate() {
        out.push_str(&format!("{e},{:.9e},{:.9e},{:.9e},{:.9e}\n", l.hlb, l.llb, l.global, l.total));
    }
    out
}

/// Writes `P^h` for every scene of the dataset.
pub fn write_priors(ds: &Dataset, hdlm: &Hdlm) -> Result<()> {
    for split in [Split::Train, Split::Test] {
        for o in ds.observed(split)? {
            ds.write_prior(&o.id, &extract_ph(hdlm, &o.pan)?)?;
        }
    }
    Ok(())
}

/// The operator that manufactures reduced-resolution training pairs.
#[derive(Debug, Clone)]
pub enum Operator {
    Wald(WaldConfig),
    Padm(Box<PDegradeNet>),
}

impl Operator {
    pub fn kind(&self) -> TrainOperator {
        match self {
            Operator::Wald(_) => TrainOperator::Wald,
            Operator::Padm(_) => TrainOperator::Padm,
        }
    }

    pub fn degrade_ms(&self, ms: &Raster) -> Result<Raster> {
        match self {
            Operator::Wald(w) => w.ms_operator().apply(ms),
            Operator::Padm(net) => apply_degradation(net, ms),
        }
    }

    pub fn degrade_pan(&self, pan: &Raster) -> Result<Raster> {
        match self {
            Operator::Wald(w) => w.pan_operator().apply(pan),
            Operator::Padm(net) => apply_degradation(net, pan),
        }
    }
}

/// Conditions of one fusion problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub id: String,
    pub ms: Raster,
    pub pan: Raster,
    pub ims: Raster,
    pub ph: Raster,
}

/// Degrades an observed pair by `op`: the reduced-resolution problem whose
/// answer is the observed MS.
pub fn reduced_inputs(o: &Observed, op: &Operator, hdlm: &Hdlm, r: usize) -> Result<Inputs> {
    let ms = op.degrade_ms(&o.ms)?;
    let pan = op.degrade_pan(&o.pan)?;
    Ok(Inputs {
        id: o.id.clone(),
        ims: ims(&ms, r)?,
        ph: extract_ph(hdlm, &pan)?,
        ms,
        pan,
    })
}

pub fn full_inputs(o: &Observed, hdlm: &Hdlm, r: usize) -> Result<Inputs> {
    Ok(Inputs {
        id: o.id.clone(),
        ims: ims(&o.ms, r)?,
        ph: extract_ph(hdlm, &o.pan)?,
        ms: o.ms.clone(),
        pan: o.pan.clone(),
    })
}

pub fn training_samples(data: &[Observed], op: &Operator, hdlm: &Hdlm, r: usize) -> Result<Vec<DiffusionSample>> {
    data.iter()
        .map(|o| {
            let x = reduced_inputs(o, op, hdlm, r)?;
            Ok(DiffusionSample {
                target: o.ms.clone(),
                pan: x.pan,
                ims: x.ims,
                ph: x.ph,
            })
        })
        .collect()
}

/// Trains a fresh diffuser, or continues `resume` with its saved RNG.
/// `on_step` sees every step with the model and RNG after it.
pub fn train_diffusion(
    cfg: &RunConfig,
    samples: &[DiffusionSample],
    resume: Option<(Diffuser, SeededRng)>,
    on_step: impl FnMut(usize, f64, &Diffuser, &SeededRng) -> Result<()>,
) -> Result<(Diffuser, Vec<f64>, SeededRng)> {
    let bands = samples
        .first()
        .ok_or_else(|| Error::invalid("no diffusion training samples"))?
        .target
        .channels();
    let (mut model, mut rng) = match resume {
        Some((mut m, rng)) => {
            m.config.train_steps = cfg.diffusion.train_steps;
            (m, rng)
        }
        None => {
            let mut rng = stage_rng(cfg, Stream::Diffusion);
            (Diffuser::new(cfg.diffusion.clone(), bands, &mut rng)?, rng)
        }
    };
    let losses = train(&mut model, samples, &mut rng, on_step)?;
    Ok((model, losses, rng))
}

/// DDIM-samples every input with the EMA weights; image `i` draws its
/// noise from stream `i + 1` of `sample_seed`.
pub fn fuse_all(model: &Diffuser, inputs: &[Inputs], sample_seed: u64) -> Result<Vec<(String, Raster)>> {
    let predictor = model.ema_predictor()?;
    let base = SeededRng::new(sample_seed);
    inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = base.fork(i as u64 + 1);
            let out = sample(&predictor, &x.pan, &x.ims, &x.ph, &model.schedule, model.config.eta, &mut rng)?;
            Ok((x.id.clone(), out))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRow {
    pub id: String,
    pub metrics: Reduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullRow {
    pub id: String,
    pub no_reference: NoReference,
    /// Against the hidden ground truth, when the dataset carries it.
    pub oracle: Option<Reduced>,
}

pub fn evaluate_reduced(fused: &[(String, Raster)], references: &[Raster], r: usize) -> Result<Vec<ReducedRow>> {
    if fused.len() != references.len() {
        return Err(Error::invalid(format!("{} fused vs {} references", fused.len(), references.len())));
    }
    fused
        .iter()
        .zip(references)
        .map(|((id, f), g)| {
            Ok(ReducedRow {
                id: id.clone(),
                metrics: reduced(f, g, r)?,
            })
        })
        .collect()
}

/// No-reference scores use the block-mean PAN as the low-resolution PAN,
/// so every fuser is judged against the same operator.
pub fn evaluate_full(fused: &[(String, Raster)], ds: &Dataset, oracle: bool) -> Result<Vec<FullRow>> {
    let r = ds.index.r;
    let observed = ds.observed(Split::Test)?;
    fused
        .iter()
        .map(|(id, f)| {
            let o = observed
                .iter()
                .find(|o| &o.id == id)
                .ok_or_else(|| Error::invalid(format!("fused image `{id}` is not a test scene")))?;
            let pan_lr = init_lrpan(&o.pan, r)?;
            let nr = no_reference(f, &o.ms, &o.pan, &pan_lr, r)?;
            let oracle = if oracle {
                Some(reduced(f, &ds.oracle_hrms(id)?, r)?)
            } else {
                None
            };
            Ok(FullRow {
                id: id.clone(),
                no_reference: nr,
                oracle,
            })
        })
        .collect()
}

pub fn reduced_csv(rows: &[ReducedRow]) -> String {
    let mut out = format!("image,{}\n", Reduced::HEADER);
    for row in rows {
        out.push_str(&format!("{},{}\n", row.id, row.metrics.csv()));
    }
    let all: Vec<Reduced> = rows.iter().map(|r| r.metrics).collect();
    if !all.is_empty() {
        out.push_str(&format!("mean,{}\n", Reduced::mean(&all).csv()));
    }
    out
}

pub fn full_csv(rows: &[FullRow]) -> String {
    let with_oracle = rows.iter().all(|r| r.oracle.is_some()) && !rows.is_empty();
    let mut out = format!("image,{}", NoReference::HEADER);
    if with_oracle {
        out.push_str(&format!(",{}", Reduced::HEADER));
    }
    out.push('\n');
    let line = |id: &str, nr: &NoReference, o: Option<&Reduced>| {
        let mut s = format!("{id},{}", nr.csv());
        if let (true, Some(o)) = (with_oracle, o) {
            s.push_str(&format!(",{}", o.csv()));
        }
        s.push('\n');
        s
    };
    for row in rows {
        out.push_str(&line(&row.id, &row.no_reference, row.oracle.as_ref()));
    }
    if !rows.is_empty() {
        let nr = NoReference::mean(&rows.iter().map(|r| r.no_reference).collect::<Vec<_>>());
        let o = with_oracle.then(|| Reduced::mean(&rows.iter().filter_map(|r| r.oracle).collect::<Vec<_>>()));
        out.push_str(&line("mean", &nr, o.as_ref()));
    }
    out
}

/// JSON summary of the mean row.
pub fn reduced_summary(rows: &[ReducedRow]) -> serde_json::Value {
    let all: Vec<Reduced> = rows.iter().map(|r| r.metrics).collect();
    serde_json::json!({
        "mode": "reduced",
        "images": rows.len(),
        "mean": (!all.is_empty()).then(|| Reduced::mean(&all)),
    })
}

pub fn full_summary(rows: &[FullRow]) -> serde_json::Value {
    let nr: Vec<NoReference> = rows.iter().map(|r| r.no_reference).collect();
    let oracle: Vec<Reduced> = rows.iter().filter_map(|r| r.oracle).collect();
    serde_json::json!({
        "mode": "full",
        "images": rows.len(),
        "mean": (!nr.is_empty()).then(|| NoReference::mean(&nr)),
        "oracle_mean": (!oracle.is_empty() && oracle.len() == rows.len()).then(|| Reduced::mean(&oracle)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_streams_are_distinct_and_seeded() {
        let cfg = RunConfig::desk();
        let a = stage_rng(&cfg, Stream::Padm).normal();
        let b = stage_rng(&cfg, Stream::Hdlm).normal();
        assert_ne!(a, b);
        assert_eq!(a, stage_rng(&cfg, Stream::Padm).normal());
    }

    #[test]
    fn wald_operator_reduces_by_r() {
        let op = Operator::Wald(WaldConfig::default());
        let ms = Raster::filled(4, 16, 16, 0.5);
        let out = op.degrade_ms(&ms).unwrap();
        assert_eq!(out.shape().to_string(), "4×4×4");
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert_eq!(op.kind(), TrainOperator::Wald);
    }

    #[test]
    fn csv_layout() {
        let m = Reduced {
            psnr: 30.0,
            ssim: 0.9,
            sam: 2.0,
            ergas: 3.0,
            scc: 0.8,
        };
        let rows = vec![ReducedRow { id: "a".into(), metrics: m }];
        assert_eq!(
            reduced_csv(&rows),
            "image,psnr,ssim,sam,ergas,scc\na,30.000000,0.900000,2.000000,3.000000,0.800000\nmean,30.000000,0.900000,2.000000,3.000000,0.800000\n"
        );
        let nr = NoReference { d_lambda: 0.1, d_s: 0.2, hqnr: 0.72 };
        let full = full_csv(&[FullRow { id: "a".into(), no_reference: nr, oracle: None }]);
        assert_eq!(full, "image,d_lambda,d_s,hqnr\na,0.100000,0.200000,0.720000\nmean,0.100000,0.200000,0.720000\n");
    }
}
