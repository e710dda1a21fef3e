//! The `padsharp` command line. The binary only parses and maps errors to
//! exit codes; everything else lives here so it can be driven from tests.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::numerics::{pfr, Raster};
use crate::pipeline::*;

#[derive(Debug, Parser)]
#[command(name = "padsharp", version, about = "Pansharpening with learned degradation and conditional diffusion")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON run configuration layered over the profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    pub profile: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Reduced,
    Full,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with hidden-operator observations.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the degradation with alternating PAlignNet/PDegradeNet training.
    TrainPadm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "padm.ckpt")]
        out: PathBuf,
    },
    /// Train the high-frequency learning module and write P^h maps.
    TrainHdlm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "hdlm.ckpt")]
        out: PathBuf,
    },
    /// Train the conditional diffusion fuser.
    TrainDiff {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "hdlm.ckpt")]
        hdlm: PathBuf,
        /// Required when training on PADM-degraded pairs.
        #[arg(long)]
        padm: Option<PathBuf>,
        /// Operator producing reduced-resolution pairs (default: from config).
        #[arg(long, value_enum)]
        degradation: Option<TrainOperator>,
        #[arg(long)]
        no_cfb: bool,
        #[arg(long)]
        no_bamb: bool,
        /// Continue a saved run up to the configured step count.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value = "diff.ckpt")]
        out: PathBuf,
    },
    /// Fuse every test scene.
    Sample {
        /// Diffusion checkpoint; omit with `--baseline`.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "hdlm.ckpt")]
        hdlm: PathBuf,
        #[arg(long, alias = "in")]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        /// Bicubic upsampling instead of the diffusion model.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score fused images, or track a training run's snapshots.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "track_epochs")]
        fused: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        /// Re-score every snapshot of `--ckpt` at both resolutions.
        #[arg(long, requires = "ckpt")]
        track_epochs: bool,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "hdlm.ckpt")]
        hdlm: PathBuf,
        /// Skip scores against the hidden ground truth.
        #[arg(long)]
        no_oracle: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an 8-bit PNG preview of a PFR raster.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        /// 1-based bands: one for grey, three for RGB.
        #[arg(long, value_delimiter = ',', default_value = "3,2,1")]
        bands: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// 0 ok, 2 configuration or setup error, 3 numerical abort, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Config(_) | Error::MissingUpstream { .. } | Error::Checkpoint(_)) {
        2
    } else {
        1
    }
}

pub fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p, g.profile)?,
        None => RunConfig::profile(g.profile),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn snapshots_dir(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".snapshots");
    PathBuf::from(s)
}

fn sibling_csv(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}.csv"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Test inputs at the requested resolution. Full resolution reads the
/// stored P^h maps; reduced resolution degrades by the Wald protocol and
/// needs the HDLM to extract P^h from the degraded PAN.
fn test_inputs(cfg: &RunConfig, ds: &Dataset, mode: Mode, hdlm: Option<&Path>) -> Result<Vec<Inputs>> {
    let r = ds.index.r;
    let test = ds.observed(Split::Test)?;
    match mode {
        Mode::Full => test
            .iter()
            .map(|o| {
                Ok(Inputs {
                    id: o.id.clone(),
                    ims: ims(&o.ms, r)?,
                    ph: ds.read_prior(&o.id)?,
                    ms: o.ms.clone(),
                    pan: o.pan.clone(),
                })
            })
            .collect(),
        Mode::Reduced => {
            let path = hdlm.ok_or_else(|| Error::Config("reduced-resolution sampling needs --hdlm".into()))?;
            let model = Checkpoint::load(path, Kind::Hdlm)?.hdlm()?;
            let wald = Operator::Wald(cfg.wald);
            test.iter().map(|o| reduced_inputs(o, &wald, &model, r)).collect()
        }
    }
}

fn load_fused(dir: &Path, ids: &[String]) -> Result<Vec<(String, Raster)>> {
    ids.iter()
        .map(|id| {
            let path = dir.join(format!("{id}.pfr"));
            if !path.exists() {
                return Err(Error::MissingUpstream { path, command: "sample" });
            }
            Ok((id.clone(), pfr::read_raster(&path)?))
        })
        .collect()
}

fn track_csv_header() -> String {
    "step,reduced_psnr,reduced_ssim,reduced_sam,reduced_ergas,reduced_scc,full_d_lambda,full_d_s,full_hqnr,oracle_psnr,oracle_ssim\n".into()
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Synth { out } => {
            let ds = synth_dataset(&cfg.dataset, cfg.seed, &out)?;
            eprintln!(
                "wrote {} train + {} test scenes to {}",
                ds.index.train.len(),
                ds.index.test.len(),
                out.display()
            );
        }
        Command::TrainPadm { data, out } => {
            let ds = Dataset::open(&data)?;
            let (state, rng) = train_padm(&cfg, &ds.observed(Split::Train)?)?;
            Checkpoint::from_padm(&cfg, ds.index.bands.len(), &state, &rng).save(&out)?;
            write_file(&sibling_csv(&out, "_history"), &padm_history_csv(&state))?;
            for h in &state.history {
                eprintln!(
                    "iteration {}: align {:.4e} → {:.4e}, degrade {:.4e} → {:.4e}",
                    h.iteration, h.align_initial, h.align_final, h.degrade_initial, h.degrade_final
                );
            }
        }
        Command::TrainHdlm { data, out } => {
            let ds = Dataset::open(&data)?;
            let (model, curve, rng) = train_hdlm_stage(&cfg, &ds.observed(Split::Train)?, ds.index.r)?;
            Checkpoint::from_hdlm(&cfg, &model, &curve, &rng).save(&out)?;
            write_file(&sibling_csv(&out, "_losses"), &hdlm_csv(&curve))?;
            write_priors(&ds, &model)?;
        }
        Command::TrainDiff {
            data,
            hdlm,
            padm,
            degradation,
            no_cfb,
            no_bamb,
            resume,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(d) = degradation {
                cfg.degradation = d;
            }
            cfg.diffusion.predictor.cfb &= !no_cfb;
            cfg.diffusion.predictor.bamb &= !no_bamb;
            let ds = Dataset::open(&data)?;
            let hdlm = Checkpoint::load(&hdlm, Kind::Hdlm)?.hdlm()?;
            let op = match cfg.degradation {
                TrainOperator::Wald => Operator::Wald(cfg.wald),
                TrainOperator::Padm => {
                    let path = padm.unwrap_or_else(|| PathBuf::from("padm.ckpt"));
                    Operator::Padm(Box::new(Checkpoint::load(&path, Kind::Padm)?.padm()?.degrade))
                }
            };
            let samples = training_samples(&ds.observed(Split::Train)?, &op, &hdlm, ds.index.r)?;
            let resume = match resume {
                Some(p) => {
                    let c = Checkpoint::load(&p, Kind::Diffusion)?;
                    if c.config.diffusion.predictor != cfg.diffusion.predictor {
                        return Err(Error::Config("--resume checkpoint has a different predictor".into()));
                    }
                    Some((c.diffuser()?, c.rng()))
                }
                None => None,
            };
            let bands = ds.index.bands.len();
            let every = cfg.eval.track_every;
            let snaps = snapshots_dir(&out);
            let (model, losses, rng) = train_diffusion(&cfg, &samples, resume, |step, loss, m, rng| {
                if every > 0 && step % every == 0 {
                    Checkpoint::from_diffuser(&cfg, bands, m, &[], rng)
                        .save(&snaps.join(format!("step_{step:07}.ckpt")))?;
                    eprintln!("step {step}: loss {loss:.5}");
                }
                Ok(())
            })?;
            Checkpoint::from_diffuser(&cfg, bands, &model, &losses, &rng).save(&out)?;
            let mut csv = String::from("step,loss\n");
            let first = model.opt.step as usize - losses.len();
            for (i, l) in losses.iter().enumerate() {
                csv.push_str(&format!("{},{l:.9e}\n", first + i + 1));
            }
            write_file(&sibling_csv(&out, "_losses"), &csv)?;
        }
        Command::Sample {
            ckpt,
            hdlm,
            data,
            mode,
            baseline,
            out,
        } => {
            let ds = Dataset::open(&data)?;
            let hdlm_path = (mode == Mode::Reduced && !baseline).then_some(hdlm.as_path());
            let inputs = match (mode, baseline) {
                // The baseline needs only MS; skip P^h entirely.
                (_, true) => {
                    let r = ds.index.r;
                    let wald = cfg.wald.ms_operator();
                    ds.observed(Split::Test)?
                        .into_iter()
                        .map(|o| {
                            let ms = if mode == Mode::Reduced { wald.apply(&o.ms)? } else { o.ms };
                            Ok(Inputs {
                                id: o.id,
                                ims: ims(&ms, r)?,
                                ph: Raster::zeros(1, 1, 1),
                                pan: Raster::zeros(1, 1, 1),
                                ms,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                _ => test_inputs(&cfg, &ds, mode, hdlm_path)?,
            };
            let fused = if baseline {
                inputs
                    .iter()
                    .map(|x| Ok((x.id.clone(), bicubic(&x.ms, ds.index.r)?)))
                    .collect::<Result<Vec<_>>>()?
            } else {
                let path = ckpt.ok_or_else(|| Error::Config("sample needs --ckpt or --baseline".into()))?;
                let model = Checkpoint::load(&path, Kind::Diffusion)?.diffuser()?;
                fuse_all(&model, &inputs, cfg.eval.sample_seed)?
            };
            for (id, img) in &fused {
                pfr::write(&out.join(format!("{id}.pfr")), img, &ds.index.bands)?;
            }
        }
        Command::Evaluate {
            data,
            fused,
            mode,
            track_epochs,
            ckpt,
            hdlm,
            no_oracle,
            out,
        } => {
            let ds = Dataset::open(&data)?;
            let oracle = !no_oracle && ds.has_oracle();
            std::fs::create_dir_all(&out)?;
            if track_epochs {
                let ckpt = ckpt.expect("clap enforces --ckpt");
                track(&cfg, &ds, &ckpt, &hdlm, oracle, &out)?;
            } else {
                let fused = load_fused(&fused.expect("clap enforces --fused"), ds.ids(Split::Test))?;
                let (csv, summary) = match mode {
                    Mode::Reduced => {
                        let refs: Vec<Raster> = ds.observed(Split::Test)?.into_iter().map(|o| o.ms).collect();
                        let rows = evaluate_reduced(&fused, &refs, ds.index.r)?;
                        (reduced_csv(&rows), reduced_summary(&rows))
                    }
                    Mode::Full => {
                        let rows = evaluate_full(&fused, &ds, oracle)?;
                        (full_csv(&rows), full_summary(&rows))
                    }
                };
                let name = match mode {
                    Mode::Reduced => "reduced",
                    Mode::Full => "full",
                };
                write_file(&out.join(format!("metrics_{name}.csv")), &csv)?;
                write_file(
                    &out.join(format!("summary_{name}.json")),
                    &serde_json::to_string_pretty(&summary)?,
                )?;
                print!("{csv}");
            }
        }
        Command::Export { input, bands, out } => {
            export_png(&pfr::read_raster(&input)?, &bands, &out)?;
        }
    }
    Ok(())
}

/// Scores every snapshot of a run at both resolutions (`track.csv`).
fn track(cfg: &RunConfig, ds: &Dataset, ckpt: &Path, hdlm: &Path, oracle: bool, out: &Path) -> Result<()> {
    let snaps = snapshots_dir(ckpt);
    if !snaps.is_dir() {
        return Err(Error::MissingUpstream {
            path: snaps,
            command: "train-diff (with eval.track_every > 0)",
        });
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&snaps)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    files.sort();
    let reduced_in = test_inputs(cfg, ds, Mode::Reduced, Some(hdlm))?;
    let full_in = test_inputs(cfg, ds, Mode::Full, None)?;
    let refs: Vec<Raster> = ds.observed(Split::Test)?.into_iter().map(|o| o.ms).collect();
    let mut csv = track_csv_header();
    for f in files {
        let model = Checkpoint::load(&f, Kind::Diffusion)?.diffuser()?;
        let red = evaluate_reduced(&fuse_all(&model, &reduced_in, cfg.eval.sample_seed)?, &refs, ds.index.r)?;
        let full = evaluate_full(&fuse_all(&model, &full_in, cfg.eval.sample_seed)?, ds, oracle)?;
        let m = crate::metrics::Reduced::mean(&red.iter().map(|r| r.metrics).collect::<Vec<_>>());
        let nr = crate::metrics::NoReference::mean(&full.iter().map(|r| r.no_reference).collect::<Vec<_>>());
        let (op, os) = if oracle {
            (
                mean_of(&full, |r| r.oracle.map_or(f64::NAN, |o| o.psnr)),
                mean_of(&full, |r| r.oracle.map_or(f64::NAN, |o| o.ssim)),
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        let line = format!(
            "{},{},{},{op:.6},{os:.6}\n",
            model.opt.step,
            m.csv(),
            nr.csv()
        );
        eprint!("{line}");
        csv.push_str(&line);
    }
    write_file(&out.join("track.csv"), &csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::MissingUpstream {
                path: "a".into(),
                command: "synth"
            }),
            2
        );
        assert_eq!(exit_code(&Error::NonFiniteLoss { stage: "x", epoch: 0 }), 3);
        assert_eq!(exit_code(&Error::invalid("x")), 1);
    }

    #[test]
    fn ablation_flags_and_seed_override() {
        let cli = Cli::try_parse_from([
            "padsharp", "--seed", "4", "train-diff", "--data", "d", "--no-cfb", "--degradation", "wald",
        ])
        .unwrap();
        assert_eq!(load_config(&cli.global).unwrap().seed, 4);
        match cli.command {
            Command::TrainDiff { no_cfb, no_bamb, degradation, .. } => {
                assert!(no_cfb && !no_bamb);
                assert_eq!(degradation, Some(TrainOperator::Wald));
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["padsharp", "--profile", "huge", "synth", "--out", "x"]).is_err());
    }
}
