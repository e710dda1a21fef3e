//! The `padsharp` command sequence on a small configuration, driven
//! in-process. Each step prints the equivalent shell command.
//!
//! cargo run --release --example cli_walkthrough -- [work-dir]

use std::path::PathBuf;

use clap::Parser;
use padsharp::cli::{run, Cli};

const SMALL: &str = r#"{
  "dataset": {"train": 6, "test": 2, "scene": {"height": 32, "width": 32, "shapes": 8}},
  "padm": {"width": 8, "blocks": 2, "align": {"epochs": 5}, "degrade": {"epochs": 5}},
  "hdlm": {"width": 8, "blocks": 2, "epochs": 5},
  "diffusion": {"train_steps": 300, "predictor": {"widths": [8, 16]}},
  "eval": {"track_every": 100}
}"#;

fn main() -> padsharp::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("padsharp-cli"), PathBuf::from);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("small.json"), SMALL)?;
    let p = |rel: &str| dir.join(rel).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--out".into(), p("data")],
        vec!["train-hdlm".into(), "--data".into(), p("data"), "--out".into(), p("hdlm.ckpt")],
        vec!["train-padm".into(), "--data".into(), p("data"), "--out".into(), p("padm.ckpt")],
        vec![
            "train-diff".into(), "--data".into(), p("data"), "--hdlm".into(), p("hdlm.ckpt"),
            "--padm".into(), p("padm.ckpt"), "--out".into(), p("diff.ckpt"),
        ],
        vec![
            "sample".into(), "--ckpt".into(), p("diff.ckpt"), "--hdlm".into(), p("hdlm.ckpt"),
            "--data".into(), p("data"), "--out".into(), p("fused"),
        ],
        vec!["sample".into(), "--baseline".into(), "--data".into(), p("data"), "--out".into(), p("bicubic")],
        vec!["evaluate".into(), "--data".into(), p("data"), "--fused".into(), p("fused"), "--out".into(), p("eval")],
        vec!["evaluate".into(), "--data".into(), p("data"), "--fused".into(), p("bicubic"), "--out".into(), p("eval_bicubic")],
        vec![
            "evaluate".into(), "--data".into(), p("data"), "--track-epochs".into(), "--ckpt".into(), p("diff.ckpt"),
            "--hdlm".into(), p("hdlm.ckpt"), "--out".into(), p("track"),
        ],
        vec!["export".into(), "--in".into(), p("fused/test_000.pfr"), "--out".into(), p("test_000.png")],
    ];
    for args in steps {
        let mut argv = vec!["padsharp".to_string(), "--config".into(), p("small.json")];
        argv.extend(args);
        println!("$ {}", argv.join(" "));
        run(Cli::try_parse_from(&argv).expect("valid arguments"))?;
    }
    Ok(())
}
