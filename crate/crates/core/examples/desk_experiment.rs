//! The complete desk pipeline: PADM- and Wald-trained fusers against the
//! bicubic baseline, scored at full resolution against the hidden truth.
//!
//! cargo run --release --example desk_experiment -- [seed] [out-dir]

use std::path::PathBuf;
use std::time::Instant;

use padsharp::pipeline::{mean_of, run_experiment, RunConfig, TrainOperator};

fn main() -> padsharp::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let out = args.next().map_or_else(|| std::env::temp_dir().join("padsharp-desk"), PathBuf::from);
    let mut cfg = RunConfig::desk();
    cfg.seed = seed;
    if let Ok(steps) = std::env::var("STEPS") {
        cfg.diffusion.train_steps = steps.parse().expect("STEPS");
    }
    let t = Instant::now();
    let report = run_experiment(&cfg, &[TrainOperator::Wald, TrainOperator::Padm], &out, |msg| {
        eprintln!("[{:6.1}s] {msg}", t.elapsed().as_secs_f64())
    })?;
    let line = |name: &str, rows: &[padsharp::pipeline::FullRow]| {
        let o = |f: fn(&padsharp::metrics::Reduced) -> f64| mean_of(rows, |r| f(r.oracle.as_ref().unwrap()));
        println!(
            "{name:8} PSNR {:6.2}  SSIM {:.4}  SAM {:5.2}  ERGAS {:5.2}  Dλ {:.4}  Ds {:.4}  HQNR {:.4}",
            o(|m| m.psnr),
            o(|m| m.ssim),
            o(|m| m.sam),
            o(|m| m.ergas),
            mean_of(rows, |r| r.no_reference.d_lambda),
            mean_of(rows, |r| r.no_reference.d_s),
            mean_of(rows, |r| r.no_reference.hqnr),
        );
    };
    println!("full resolution vs hidden ground truth ({} test scenes):", report.bicubic_full.len());
    line("bicubic", &report.bicubic_full);
    for v in &report.variants {
        line(v.operator.name(), &v.full);
    }
    println!("reduced resolution (Wald protocol) PSNR:");
    println!("bicubic  {:6.2}", mean_of(&report.bicubic_reduced, |r| r.metrics.psnr));
    for v in &report.variants {
        println!("{:8} {:6.2}", v.operator.name(), mean_of(&v.reduced, |r| r.metrics.psnr));
    }
    println!("artifacts in {} ({:.0}s)", out.display(), t.elapsed().as_secs_f64());
    Ok(())
}
