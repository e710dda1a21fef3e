//! CFB/BAMB ablation: four predictor configurations per seed, scored by
//! full-resolution PSNR against the hidden ground truth.
//!
//! cargo run --release --example ablation -- [out-dir] [seeds...]

use std::path::PathBuf;
use std::time::Instant;

use padsharp::pipeline::{run_ablation, RunConfig};

fn main() -> padsharp::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("padsharp-ablation"), PathBuf::from);
    let mut seeds: Vec<u64> = args.map(|s| s.parse().expect("seed")).collect();
    if seeds.is_empty() {
        seeds = vec![0, 1, 2];
    }
    let mut cfg = RunConfig::desk();
    if let Ok(steps) = std::env::var("STEPS") {
        cfg.diffusion.train_steps = steps.parse().expect("STEPS");
    }
    let t = Instant::now();
    let rows = run_ablation(&cfg, &seeds, &out, |msg| eprintln!("[{:6.1}s] {msg}", t.elapsed().as_secs_f64()))?;
    println!("seed  CFB   BAMB  PSNR    SSIM    HQNR    reduced PSNR  loss");
    for r in &rows {
        println!(
            "{:<5} {:<5} {:<5} {:6.2}  {:.4}  {:.4}  {:6.2}        {:.4e}",
            r.seed, r.cfb, r.bamb, r.psnr, r.ssim, r.hqnr, r.reduced_psnr, r.final_loss
        );
    }
    for &seed in &seeds {
        let group: Vec<_> = rows.iter().filter(|r| r.seed == seed).collect();
        let best = group.iter().max_by(|a, b| a.psnr.total_cmp(&b.psnr)).expect("rows");
        println!("seed {seed}: best is cfb={} bamb={}", best.cfb, best.bamb);
    }
    Ok(())
}
