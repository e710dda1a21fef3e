//! Trains the high-frequency learning module on observed pairs and shows
//! how close its high branch gets to the fixed high-pass prior.
//!
//! cargo run --release --example hdlm_prior -- [out-dir]

use std::path::PathBuf;

use padsharp::hdlm::{extract_ph, highpass_prior};
use padsharp::pipeline::{export_png, ims, train_hdlm_stage, Observed, RunConfig};
use padsharp::scene::generate_set;

fn main() -> padsharp::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("padsharp-hdlm"), PathBuf::from);
    let cfg = RunConfig::desk();
    let r = cfg.dataset.scene.hidden.r;
    let scenes = generate_set(&cfg.dataset.scene, 9, cfg.seed)?;
    let (train, test) = scenes.split_at(8);
    let observed: Vec<Observed> = train
        .iter()
        .enumerate()
        .map(|(i, s)| Observed {
            id: format!("train_{i}"),
            ms: s.lrms.clone(),
            pan: s.pan.clone(),
        })
        .collect();

    let (model, curve, _) = train_hdlm_stage(&cfg, &observed, r)?;
    println!("epoch  HLB       LLB       global    total");
    for (e, l) in curve.iter().enumerate() {
        println!("{e:5}  {:.3e} {:.3e} {:.3e} {:.3e}", l.hlb, l.llb, l.global, l.total);
    }

    let s = &test[0];
    let prior = highpass_prior(&s.pan, model.lowpass)?;
    let ph = extract_ph(&model, &s.pan)?;
    let resid = ph.sub(&prior.high)?.norm() / prior.high.norm();
    println!("held-out scene: ‖P^h − PAN_high‖ / ‖PAN_high‖ = {resid:.3}");
    let low = model.llb.forward(&s.pan)?;
    println!(
        "LLB output vs IMS: relative error {:.3}",
        low.sub(&ims(&s.lrms, r)?)?.norm() / ims(&s.lrms, r)?.norm()
    );

    // P^h is zero-centred; shift it into the display range.
    let show = |x: &padsharp::Raster| x.map(|v| (0.5 + 4.0 * v).clamp(0.0, 1.0));
    export_png(&s.pan, &[1], &out.join("pan.png"))?;
    export_png(&show(&prior.high), &[1], &out.join("prior_high.png"))?;
    export_png(&show(&ph), &[1], &out.join("ph.png"))?;
    println!("previews in {}", out.display());
    Ok(())
}
