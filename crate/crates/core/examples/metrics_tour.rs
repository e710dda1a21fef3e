//! Every fusion metric on a synthetic scene: ideal values, then a few
//! classic fusers scored against the hidden ground truth.
//!
//! cargo run --release --example metrics_tour

use padsharp::metrics::{no_reference, reduced};
use padsharp::numerics::{bicubic_upsample, bilinear_upsample, downsample, nearest_upsample, Align, DownsampleMode};
use padsharp::scene::{generate_set, SceneSpec};

fn main() -> padsharp::Result<()> {
    let spec = SceneSpec::default();
    let r = spec.hidden.r;
    let scene = generate_set(&spec, 1, 3)?.remove(0);
    let pan_lr = downsample(&scene.pan, r, DownsampleMode::Area)?;

    let ideal = reduced(&scene.hrms, &scene.hrms, r)?;
    println!("ground truth against itself: {ideal:?}");

    let fusers = [
        ("nearest", nearest_upsample(&scene.lrms, r)),
        ("bilinear", bilinear_upsample(&scene.lrms, r, Align::Centers)?),
        ("bicubic", bicubic_upsample(&scene.lrms, r)?.clamp_to_range()),
        ("truth", scene.hrms.clone()),
    ];
    println!("{:9} {:>7} {:>7} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}", "fuser", "PSNR", "SSIM", "SAM", "ERGAS", "SCC", "Dλ", "Ds", "HQNR");
    for (name, fused) in &fusers {
        let m = reduced(fused, &scene.hrms, r)?;
        let nr = no_reference(fused, &scene.lrms, &scene.pan, &pan_lr, r)?;
        println!(
            "{name:9} {:7.2} {:7.4} {:6.2} {:6.2} {:6.3} {:7.4} {:7.4} {:7.4}",
            m.psnr, m.ssim, m.sam, m.ergas, m.scc, nr.d_lambda, nr.d_s, nr.hqnr
        );
    }
    Ok(())
}
