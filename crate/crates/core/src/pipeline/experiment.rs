//! The whole desk pipeline in one call: synthesize, learn the degradation
//! and the prior, train one fuser per training operator, and score them
//! next to the bicubic baseline.

use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::{RunConfig, TrainOperator};
use super::dataset::{synth_dataset, Dataset, Observed, Split};
use super::stages::*;
use crate::error::Result;
use crate::hdlm::Hdlm;
use crate::metrics::Reduced;
use crate::numerics::Raster;

#[derive(Debug, Clone)]
pub struct VariantReport {
    pub operator: TrainOperator,
    pub full: Vec<FullRow>,
    pub reduced: Vec<ReducedRow>,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub bicubic_full: Vec<FullRow>,
    pub bicubic_reduced: Vec<ReducedRow>,
    pub variants: Vec<VariantReport>,
    /// Metric CSVs in the order written.
    pub csv_files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn variant(&self, op: TrainOperator) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.operator == op)
    }
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text)?;
    files.push(path);
    Ok(())
}

/// Shared state of every variant: dataset, HDLM and the test inputs.
struct Prepared {
    ds: Dataset,
    r: usize,
    bands: usize,
    train: Vec<Observed>,
    hdlm: Hdlm,
    full_test: Vec<Inputs>,
    /// Wald-degraded test inputs; their references are the observed MS.
    reduced_test: Vec<Inputs>,
    references: Vec<Raster>,
}

fn prepare(cfg: &RunConfig, dir: &Path, progress: &mut impl FnMut(&str)) -> Result<Prepared> {
    std::fs::create_dir_all(dir)?;
    let data_dir = dir.join("data");
    synth_dataset(&cfg.dataset, cfg.seed, &data_dir)?;
    let ds = Dataset::open(&data_dir)?;
    let r = ds.index.r;
    let bands = ds.index.bands.len();
    let train = ds.observed(Split::Train)?;
    let test = ds.observed(Split::Test)?;
    progress("dataset written");

    let (hdlm, curve, hrng) = train_hdlm_stage(cfg, &train, r)?;
    Checkpoint::from_hdlm(cfg, &hdlm, &curve, &hrng).save(&dir.join("hdlm.ckpt"))?;
    std::fs::write(dir.join("hdlm_losses.csv"), hdlm_csv(&curve))?;
    write_priors(&ds, &hdlm)?;
    progress("HDLM trained");

    let wald = Operator::Wald(cfg.wald);
    let reduced_test = test
        .iter()
        .map(|o| reduced_inputs(o, &wald, &hdlm, r))
        .collect::<Result<Vec<_>>>()?;
    let full_test = test
        .iter()
        .map(|o| full_inputs(o, &hdlm, r))
        .collect::<Result<Vec<_>>>()?;
    let references = test.iter().map(|o| o.ms.clone()).collect();
    Ok(Prepared {
        ds,
        r,
        bands,
        train,
        hdlm,
        full_test,
        reduced_test,
        references,
    })
}

fn operator(
    cfg: &RunConfig,
    kind: TrainOperator,
    p: &Prepared,
    dir: &Path,
    progress: &mut impl FnMut(&str),
) -> Result<Operator> {
    Ok(match kind {
        TrainOperator::Wald => Operator::Wald(cfg.wald),
        TrainOperator::Padm => {
            let (state, prng) = train_padm(cfg, &p.train)?;
            Checkpoint::from_padm(cfg, p.bands, &state, &prng).save(&dir.join("padm.ckpt"))?;
            std::fs::write(dir.join("padm_history.csv"), padm_history_csv(&state))?;
            progress("PADM trained");
            Operator::Padm(Box::new(state.degrade))
        }
    })
}

/// Runs everything under `dir`. Reduced-resolution scores always use the
/// Wald protocol for the test inputs so the variants share one yardstick.
pub fn run_experiment(
    cfg: &RunConfig,
    operators: &[TrainOperator],
    dir: &Path,
    mut progress: impl FnMut(&str),
) -> Result<ExperimentReport> {
    let p = prepare(cfg, dir, &mut progress)?;
    let r = p.r;
    let mut files = Vec::new();
    let bicubic_of = |xs: &[Inputs]| -> Result<Vec<(String, Raster)>> {
        xs.iter().map(|x| Ok((x.id.clone(), bicubic(&x.ms, r)?))).collect()
    };
    let bicubic_full = evaluate_full(&bicubic_of(&p.full_test)?, &p.ds, true)?;
    let bicubic_reduced = evaluate_reduced(&bicubic_of(&p.reduced_test)?, &p.references, r)?;
    write(dir.join("bicubic_full.csv"), &full_csv(&bicubic_full), &mut files)?;
    write(dir.join("bicubic_reduced.csv"), &reduced_csv(&bicubic_reduced), &mut files)?;

    let mut variants = Vec::new();
    for &kind in operators {
        let op = operator(cfg, kind, &p, dir, &mut progress)?;
        let samples = training_samples(&p.train, &op, &p.hdlm, r)?;
        let mut run_cfg = cfg.clone();
        run_cfg.degradation = kind;
        let (model, losses, drng) = train_diffusion(&run_cfg, &samples, None, |_, _, _, _| Ok(()))?;
        Checkpoint::from_diffuser(&run_cfg, p.bands, &model, &losses, &drng)
            .save(&dir.join(format!("diff_{}.ckpt", kind.name())))?;
        progress(&format!("diffusion trained on {} pairs", kind.name()));
        let full = evaluate_full(&fuse_all(&model, &p.full_test, cfg.eval.sample_seed)?, &p.ds, true)?;
        let reduced = evaluate_reduced(
            &fuse_all(&model, &p.reduced_test, cfg.eval.sample_seed)?,
            &p.references,
            r,
        )?;
        write(dir.join(format!("{}_full.csv", kind.name())), &full_csv(&full), &mut files)?;
        write(dir.join(format!("{}_reduced.csv", kind.name())), &reduced_csv(&reduced), &mut files)?;
        variants.push(VariantReport {
            operator: kind,
            full,
            reduced,
            losses,
        });
    }
    Ok(ExperimentReport {
        bicubic_full,
        bicubic_reduced,
        variants,
        csv_files: files,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub cfb: bool,
    pub bamb: bool,
    /// Full-resolution means against the hidden ground truth.
    pub psnr: f64,
    pub ssim: f64,
    pub hqnr: f64,
    /// Reduced-resolution (Wald protocol) PSNR against the observed MS.
    pub reduced_psnr: f64,
    /// Mean training loss over the last tenth of the steps.
    pub final_loss: f64,
}

/// The four CFB/BAMB configurations per seed, all trained on the same
/// `cfg.degradation` pairs. Within a seed every configuration draws from
/// the same diffusion stream; `seeds` replace `cfg.seed` for that stage
/// only. Writes `ablation.csv`.
pub fn run_ablation(
    cfg: &RunConfig,
    seeds: &[u64],
    dir: &Path,
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRow>> {
    let p = prepare(cfg, dir, &mut progress)?;
    let op = operator(cfg, cfg.degradation, &p, dir, &mut progress)?;
    let samples = training_samples(&p.train, &op, &p.hdlm, p.r)?;
    let mut rows = Vec::new();
    let mut csv = String::from("seed,cfb,bamb,psnr,ssim,hqnr,reduced_psnr,final_loss\n");
    for &seed in seeds {
        for (cfb, bamb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = seed;
            run_cfg.diffusion.predictor.cfb = cfb;
            run_cfg.diffusion.predictor.bamb = bamb;
            let (model, losses, _) = train_diffusion(&run_cfg, &samples, None, |_, _, _, _| Ok(()))?;
            let full = evaluate_full(&fuse_all(&model, &p.full_test, cfg.eval.sample_seed)?, &p.ds, true)?;
            let reduced = evaluate_reduced(
                &fuse_all(&model, &p.reduced_test, cfg.eval.sample_seed)?,
                &p.references,
                p.r,
            )?;
            let tail = &losses[losses.len() - (losses.len() / 10).max(1)..];
            let oracle = |f: fn(&Reduced) -> f64| mean_of(&full, |r| f(r.oracle.as_ref().expect("oracle")));
            let row = AblationRow {
                seed,
                cfb,
                bamb,
                psnr: oracle(|m| m.psnr),
                ssim: oracle(|m| m.ssim),
                hqnr: mean_of(&full, |r| r.no_reference.hqnr),
                reduced_psnr: mean_of(&reduced, |r| r.metrics.psnr),
                final_loss: mean_of(tail, |&l| l),
            };
            csv.push_str(&format!(
                "{seed},{cfb},{bamb},{:.6},{:.6},{:.6},{:.6},{:.6e}\n",
                row.psnr, row.ssim, row.hqnr, row.reduced_psnr, row.final_loss
            ));
            progress(&format!(
                "seed {seed} cfb={cfb} bamb={bamb}: PSNR {:.2} (reduced {:.2}), loss {:.4e}",
                row.psnr, row.reduced_psnr, row.final_loss
            ));
            rows.push(row);
        }
    }
    std::fs::write(dir.join("ablation.csv"), csv)?;
    Ok(rows)
}

/// Mean of a column over rows.
pub fn mean_of<T>(rows: &[T], f: impl Fn(&T) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}
