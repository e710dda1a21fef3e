//! Fourier-basis convolution: fit a kernel, rotate it continuously, and
//! compare quarter-turn equivariance of pooled and unpooled layers.
//!
//! cargo run --release --example fconv_equivariance

use std::f64::consts::PI;
use std::sync::Arc;

use padsharp::fconv::{build_bases, fit_filter, rotate_filter, rotation_error, synthesize_filter, FConvLayer};
use padsharp::numerics::{blur, gaussian_kernel, ConvSpec, Padding};
use padsharp::SeededRng;

fn print_kernel(k: &[f64], p: usize) {
    for row in k.chunks(p) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.3}")).collect();
        println!("    {}", cells.join(" "));
    }
}

fn main() -> padsharp::Result<()> {
    let p = 5;
    let basis = Arc::new(build_bases(p)?);
    let mut rng = SeededRng::new(0);

    // An off-centre bar: least squares reproduces it exactly.
    let mut bar = vec![0.0; p * p];
    for y in 0..p {
        bar[y * p + 3] = 1.0;
    }
    let coef = fit_filter(&basis, &bar)?;
    let back = synthesize_filter(&basis, &coef);
    let err = back.iter().zip(&bar).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("fit/synthesize round trip: max error {err:.1e}");
    for deg in [0.0, 30.0, 90.0] {
        println!("  rotated by {deg}°:");
        print_kernel(&rotate_filter(&basis, &coef, deg * PI / 180.0), p);
    }

    let smooth = gaussian_kernel(9, 2.0)?;
    let x = blur(&rng.normal_raster(3, 33, 33), &smooth, Padding::Reflect)?;
    let spec = ConvSpec::same(p, Padding::Zero);
    println!("relative quarter-turn error on a smooth 33×33 input:");
    for orientations in [1, 2, 4] {
        let layer = FConvLayer::new("f", basis.clone(), 3, 4, spec, orientations, &mut rng)?;
        let errs = (1..4)
            .map(|q| rotation_error(|x| layer.forward(x), &x, q))
            .collect::<padsharp::Result<Vec<_>>>()?;
        println!(
            "  {orientations} orientation(s): 90° {:.2e}  180° {:.2e}  270° {:.2e}",
            errs[0], errs[1], errs[2]
        );
    }
    Ok(())
}
