//! The noise schedule and deterministic DDIM: forward noising, and the
//! reverse chain driven by an oracle that always predicts the true x₀.
//!
//! cargo run --release --example diffusion_schedule

use padsharp::diffusion::{ddim_step, epsilon_from_x0, make_schedule, q_sample};
use padsharp::SeededRng;

fn main() -> padsharp::Result<()> {
    let s = make_schedule(500, 1e-4, 0.02, 25)?;
    println!("t     β_t       ᾱ_t       √ᾱ_t");
    for t in [1, 50, 100, 250, 400, 500] {
        println!("{t:<5} {:.2e}  {:.4e}  {:.4}", s.betas[t - 1], s.alpha_bar[t], s.alpha_bar[t].sqrt());
    }
    println!("25-step sub-sequence: {:?}", s.sequence);

    let mut rng = SeededRng::new(0);
    let x0 = rng.normal_raster(4, 16, 16).scale(0.1);
    let eps = rng.normal_raster(4, 16, 16);
    let xt = q_sample(&x0, 300, &eps, &s)?;
    let back = epsilon_from_x0(&xt, &x0, 300, &s)?;
    println!("ε recovered from (x_t, x₀) at t = 300: max error {:.1e}", back.max_abs_diff(&eps)?);

    for n in [5, 25, 500] {
        let s = s.clone().with_sequence(n)?;
        let mut x = rng.normal_raster(4, 16, 16);
        for (i, &t) in s.sequence.iter().enumerate() {
            let t_prev = s.sequence.get(i + 1).copied().unwrap_or(0);
            x = ddim_step(&x, t, t_prev, &x0, &s, 0.0, &mut rng)?;
        }
        println!("oracle DDIM with {n:3} steps: max |x̂₀ − x₀| = {:.1e}", x.max_abs_diff(&x0)?);
    }
    Ok(())
}
