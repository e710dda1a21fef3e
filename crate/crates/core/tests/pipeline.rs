//! End-to-end CLI runs on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use padsharp::cli::{run, Cli};
use padsharp::error::Error;

const TINY: &str = r#"{
  "dataset": {"train": 3, "test": 1, "scene": {"height": 32, "width": 32, "shapes": 6}},
  "padm": {"width": 4, "blocks": 1, "iterations": 2,
           "align": {"epochs": 2}, "degrade": {"epochs": 2}},
  "hdlm": {"width": 4, "blocks": 1, "epochs": 1},
  "diffusion": {"steps": 20, "sample_steps": 5, "train_steps": 6, "batch_size": 2,
                "predictor": {"widths": [4, 8], "temb_dim": 8}},
  "eval": {"track_every": 3}
}"#;

struct Run {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let path = root.join("tiny.json");
        std::fs::write(&path, config).unwrap();
        Run {
            _tmp: tmp,
            root,
            config: path,
        }
    }

    fn p(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }

    fn cli(&self, args: &[&str]) -> Result<(), Error> {
        let cfg = self.config.to_string_lossy().into_owned();
        let mut argv = vec!["padsharp", "--config", &cfg];
        argv.extend_from_slice(args);
        run(Cli::try_parse_from(argv).expect("arguments parse"))
    }

    fn ok(&self, args: &[&str]) {
        if let Err(e) = self.cli(args) {
            panic!("{args:?}: {e}");
        }
    }

    /// synth → train-hdlm → train-padm → train-diff with the ground truth
    /// moved out of reach.
    fn train(&self) {
        self.ok(&["synth", "--out", &self.p("data")]);
        let oracle = self.root.join("data/oracle");
        let hidden = self.root.join("oracle.hidden");
        std::fs::rename(&oracle, &hidden).unwrap();
        self.ok(&["train-hdlm", "--data", &self.p("data"), "--out", &self.p("hdlm.ckpt")]);
        self.ok(&["train-padm", "--data", &self.p("data"), "--out", &self.p("padm.ckpt")]);
        self.ok(&[
            "train-diff", "--data", &self.p("data"), "--hdlm", &self.p("hdlm.ckpt"),
            "--padm", &self.p("padm.ckpt"), "--out", &self.p("diff.ckpt"),
        ]);
        self.ok(&[
            "sample", "--ckpt", &self.p("diff.ckpt"), "--hdlm", &self.p("hdlm.ckpt"),
            "--data", &self.p("data"), "--out", &self.p("fused"),
        ]);
        self.ok(&[
            "sample", "--ckpt", &self.p("diff.ckpt"), "--hdlm", &self.p("hdlm.ckpt"),
            "--data", &self.p("data"), "--mode", "reduced", "--out", &self.p("fused_rr"),
        ]);
        std::fs::rename(&hidden, &oracle).unwrap();
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.root.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn full_pipeline_without_ground_truth_access() {
    let r = Run::new(TINY);
    r.train();
    for f in ["hdlm.ckpt", "padm.ckpt", "diff.ckpt", "hdlm_losses.csv", "padm_history.csv", "diff_losses.csv"] {
        assert!(r.root.join(f).is_file(), "{f}");
    }
    assert!(r.root.join("data/prior/test_000/ph.pfr").is_file());
    assert!(r.root.join("fused/test_000.pfr").is_file());

    r.ok(&["evaluate", "--data", &r.p("data"), "--fused", &r.p("fused"), "--out", &r.p("eval")]);
    let full = rows(&r.read("eval/metrics_full.csv"));
    assert_eq!(full[0].join(","), "image,d_lambda,d_s,hqnr,psnr,ssim,sam,ergas,scc");
    assert_eq!(full.len(), 3);
    assert_eq!(full[2][0], "mean");
    for v in &full[1][1..] {
        assert!(v.parse::<f64>().unwrap().is_finite(), "{v}");
    }
    assert!(r.root.join("eval/summary_full.json").is_file());

    r.ok(&[
        "evaluate", "--data", &r.p("data"), "--fused", &r.p("fused_rr"), "--mode", "reduced",
        "--out", &r.p("eval"),
    ]);
    let red = rows(&r.read("eval/metrics_reduced.csv"));
    assert_eq!(red[0].join(","), "image,psnr,ssim,sam,ergas,scc");
    assert_eq!(red.len(), 3);

    r.ok(&[
        "evaluate", "--data", &r.p("data"), "--track-epochs", "--ckpt", &r.p("diff.ckpt"),
        "--hdlm", &r.p("hdlm.ckpt"), "--out", &r.p("track"),
    ]);
    let track = rows(&r.read("track/track.csv"));
    assert_eq!(track.len(), 3, "header plus steps 3 and 6");
    assert_eq!((track[1][0].as_str(), track[2][0].as_str()), ("3", "6"));
    assert!(track[2].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));

    r.ok(&["export", "--in", &r.p("fused/test_000.pfr"), "--out", &r.p("png/rgb.png")]);
    r.ok(&["export", "--in", &r.p("data/observed/test_000/pan.pfr"), "--bands", "1", "--out", &r.p("png/pan.png")]);
    let png = std::fs::read(r.root.join("png/rgb.png")).unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
}

#[test]
fn baseline_sampling_and_missing_upstream() {
    let r = Run::new(TINY);
    match r.cli(&["train-hdlm", "--data", &r.p("nowhere"), "--out", &r.p("h.ckpt")]) {
        Err(e @ Error::MissingUpstream { .. }) => assert!(e.to_string().contains("synth"), "{e}"),
        other => panic!("{other:?}"),
    }
    r.ok(&["synth", "--out", &r.p("data")]);
    match r.cli(&["evaluate", "--data", &r.p("data"), "--fused", &r.p("none"), "--out", &r.p("e")]) {
        Err(e @ Error::MissingUpstream { .. }) => assert!(e.to_string().contains("sample"), "{e}"),
        other => panic!("{other:?}"),
    }
    r.ok(&["sample", "--baseline", "--data", &r.p("data"), "--out", &r.p("bic")]);
    r.ok(&["evaluate", "--data", &r.p("data"), "--fused", &r.p("bic"), "--out", &r.p("e")]);
    let full = rows(&r.read("e/metrics_full.csv"));
    let psnr: f64 = full[2][4].parse().unwrap();
    assert!(psnr > 10.0 && psnr < 60.0, "{psnr}");
}

#[test]
fn repeated_runs_are_byte_identical_and_resume_matches() {
    let a = Run::new(TINY);
    let b = Run::new(TINY);
    a.train();
    b.train();
    for r in [&a, &b] {
        r.ok(&["evaluate", "--data", &r.p("data"), "--fused", &r.p("fused"), "--out", &r.p("eval")]);
    }
    assert_eq!(a.read("eval/metrics_full.csv"), b.read("eval/metrics_full.csv"));
    assert_eq!(a.read("diff_losses.csv"), b.read("diff_losses.csv"));
    assert_eq!(
        std::fs::read(a.root.join("fused/test_000.pfr")).unwrap(),
        std::fs::read(b.root.join("fused/test_000.pfr")).unwrap()
    );

    // Resume from the step-3 snapshot and finish to step 6.
    a.ok(&[
        "train-diff", "--data", &a.p("data"), "--hdlm", &a.p("hdlm.ckpt"), "--padm", &a.p("padm.ckpt"),
        "--resume", &a.p("diff.ckpt.snapshots/step_0000003.ckpt"), "--out", &a.p("resumed.ckpt"),
    ]);
    a.ok(&[
        "sample", "--ckpt", &a.p("resumed.ckpt"), "--hdlm", &a.p("hdlm.ckpt"), "--data", &a.p("data"),
        "--out", &a.p("fused_resumed"),
    ]);
    assert_eq!(
        std::fs::read(a.root.join("fused/test_000.pfr")).unwrap(),
        std::fs::read(a.root.join("fused_resumed/test_000.pfr")).unwrap()
    );
    let full = a.read("diff_losses.csv");
    let resumed = a.read("resumed_losses.csv");
    assert_eq!(
        resumed.lines().skip(1).collect::<Vec<_>>(),
        full.lines().skip(4).collect::<Vec<_>>()
    );
}

fn bin(args: &[&str], dir: &Path) -> i32 {
    Process::new(env!("CARGO_BIN_EXE_padsharp"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let r = Run::new(TINY);
    let dir = r.root.as_path();
    assert_eq!(bin(&["--config", &r.p("tiny.json"), "synth", "--out", &r.p("data")], dir), 0);

    std::fs::write(r.root.join("bad.json"), r#"{"diffusion": {"learning_rate": 1}}"#).unwrap();
    assert_eq!(bin(&["--config", &r.p("bad.json"), "synth", "--out", &r.p("x")], dir), 2);
    assert_eq!(bin(&["synth"], dir), 2, "missing --out is a usage error");

    let blowup = TINY.replacen(
        r#""align": {"epochs": 2}"#,
        r#""align": {"epochs": 2, "lr": 10.0, "warmup": 0}"#,
        1,
    );
    std::fs::write(r.root.join("blowup.json"), blowup).unwrap();
    assert_eq!(
        bin(&["--config", &r.p("blowup.json"), "train-padm", "--data", &r.p("data"), "--out", &r.p("p.ckpt")], dir),
        3
    );
}
