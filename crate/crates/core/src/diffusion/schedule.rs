//! Forward noising and the DDIM reverse update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Raster, SeededRng};

/// Linear β ramp with its cumulative products; index 0 is the clean signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// `betas[t-1]` is β_t.
    pub betas: Vec<f64>,
    /// `alpha_bar[t]`, with `alpha_bar[0] = 1`.
    pub alpha_bar: Vec<f64>,
    /// Descending sampling times, ending above 0.
    pub sequence: Vec<usize>,
}

pub fn make_schedule(
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    sample_steps: usize,
) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "β range ({beta_min}, {beta_max}) must satisfy 0 < min ≤ max < 1"
        )));
    }
    if steps > 1 && beta_min == beta_max {
        return Err(Error::invalid("β must increase strictly over the schedule"));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    for b in &betas {
        let prev = *alpha_bar.last().expect("non-empty");
        alpha_bar.push(prev * (1.0 - b));
    }
    Ok(NoiseSchedule {
        steps,
        beta_min,
        beta_max,
        betas,
        alpha_bar,
        sequence: subsequence(steps, sample_steps)?,
    })
}

/// `n` uniformly spaced times from `steps` down to `steps / n`.
pub fn subsequence(steps: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > steps {
        return Err(Error::invalid(format!(
            "cannot take {n} sampling steps from a {steps}-step schedule"
        )));
    }
    Ok((0..n)
        .map(|i| ((steps * (n - i)) as f64 / n as f64).round() as usize)
        .collect())
}

impl NoiseSchedule {
    pub fn with_sequence(mut self, sample_steps: usize) -> Result<Self> {
        self.sequence = subsequence(self.steps, sample_steps)?;
        Ok(self)
    }

    fn ab(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or_else(|| {
            Error::invalid(format!("time {t} outside [0, {}]", self.steps))
        })
    }

    /// DDIM noise scale for the jump `t → t_prev`.
    pub fn sigma(&self, t: usize, t_prev: usize, eta: f64) -> Result<f64> {
        let (a, ap) = (self.ab(t)?, self.ab(t_prev)?);
        Ok(eta * ((1.0 - ap) / (1.0 - a)).sqrt() * (1.0 - a / ap).sqrt())
    }
}

fn positive_time(s: &NoiseSchedule, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("diffusion time must be ≥ 1"));
    }
    s.ab(t)
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn q_sample(x0: &Raster, t: usize, eps: &Raster, s: &NoiseSchedule) -> Result<Raster> {
    let a = positive_time(s, t)?;
    let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
    x0.zip_map(eps, |x, e| ca * x + cn * e)
}

/// Noise implied by a clean-signal estimate.
pub fn epsilon_from_x0(xt: &Raster, x0: &Raster, t: usize, s: &NoiseSchedule) -> Result<Raster> {
    let a = positive_time(s, t)?;
    let (ca, inv) = (a.sqrt(), 1.0 / (1.0 - a).sqrt());
    xt.zip_map(x0, |x, p| (x - ca * p) * inv)
}

/// One reverse step from `t` to `t_prev < t`; `rng` is only drawn from when
/// `σ > 0`.
pub fn ddim_step(
    xt: &Raster,
    t: usize,
    t_prev: usize,
    x0: &Raster,
    s: &NoiseSchedule,
    eta: f64,
    rng: &mut SeededRng,
) -> Result<Raster> {
    if t_prev >= t {
        return Err(Error::invalid(format!("DDIM step must go backwards, got {t} → {t_prev}")));
    }
    let eps = epsilon_from_x0(xt, x0, t, s)?;
    let ap = s.ab(t_prev)?;
    let sigma = s.sigma(t, t_prev, eta)?;
    let (cx, ce) = (ap.sqrt(), (1.0 - ap - sigma * sigma).max(0.0).sqrt());
    let mut out = x0.zip_map(&eps, |p, e| cx * p + ce * e)?;
    if sigma > 0.0 {
        let z = rng.normal_raster(xt.channels(), xt.height(), xt.width());
        out.axpy(sigma, &z)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default() -> NoiseSchedule {
        make_schedule(500, 1e-4, 0.02, 25).unwrap()
    }

    #[test]
    fn single_step_half() {
        let s = make_schedule(1, 0.5, 0.5, 1).unwrap();
        assert_eq!(s.alpha_bar[1], 0.5);
    }

    #[test]
    fn alpha_bar_is_the_running_product() {
        let s = default();
        let mut prod = 1.0;
        for t in 1..=500 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 499.0);
            assert!((s.alpha_bar[t] - prod).abs() < 1e-12);
            assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        }
        assert!(s.alpha_bar[500] < 0.01);
        assert_eq!(s.sequence.len(), 25);
        assert_eq!(s.sequence[0], 500);
        assert_eq!(*s.sequence.last().unwrap(), 20);
    }

    #[test]
    fn bad_ranges_rejected() {
        assert!(make_schedule(10, 0.0, 0.02, 5).is_err());
        assert!(make_schedule(10, 0.02, 0.01, 5).is_err());
        assert!(make_schedule(10, 1e-4, 0.02, 11).is_err());
        assert!(q_sample(&Raster::zeros(1, 2, 2), 0, &Raster::zeros(1, 2, 2), &default()).is_err());
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = default();
        let mut rng = SeededRng::new(1);
        let x0 = rng.normal_raster(2, 3, 3);
        let xt = q_sample(&x0, 7, &Raster::zeros(2, 3, 3), &s).unwrap();
        assert!(xt.max_abs_diff(&x0.scale(s.alpha_bar[7].sqrt())).unwrap() < 1e-15);
        let e = epsilon_from_x0(&xt, &x0, 7, &s).unwrap();
        assert!(e.max_abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_moments() {
        let s = default();
        let t = 200;
        let mut rng = SeededRng::new(2);
        let x0 = Raster::from_vec(1, 1, 2, vec![0.8, -0.3]).unwrap();
        let n = 10_000;
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for _ in 0..n {
            let e = rng.normal_raster(1, 1, 2);
            let xt = q_sample(&x0, t, &e, &s).unwrap();
            for i in 0..2 {
                m[i] += xt.data()[i];
                v[i] += xt.data()[i].powi(2);
            }
        }
        let a = s.alpha_bar[t];
        for i in 0..2 {
            let mean = m[i] / n as f64;
            let var = v[i] / n as f64 - mean * mean;
            let band = 3.0 * ((1.0 - a) / n as f64).sqrt();
            assert!((mean - a.sqrt() * x0.data()[i]).abs() < band);
            assert!((var / (1.0 - a) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn final_step_returns_estimate() {
        let s = default();
        let mut rng = SeededRng::new(3);
        let xt = rng.normal_raster(1, 4, 4);
        let x0 = rng.normal_raster(1, 4, 4);
        let out = ddim_step(&xt, 20, 0, &x0, &s, 0.0, &mut rng).unwrap();
        assert_eq!(out, x0);
        let again = ddim_step(&xt, 20, 0, &x0, &s, 0.0, &mut rng).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn oracle_chain_retracts_for_any_subsequence() {
        let mut rng = SeededRng::new(4);
        let x0 = rng.normal_raster(2, 5, 5).scale(0.5);
        for n in [5, 25, 500] {
            let s = default().with_sequence(n).unwrap();
            let mut x = rng.normal_raster(2, 5, 5);
            for (i, &t) in s.sequence.iter().enumerate() {
                let tp = s.sequence.get(i + 1).copied().unwrap_or(0);
                x = ddim_step(&x, t, tp, &x0, &s, 0.0, &mut rng).unwrap();
            }
            assert!(x.max_abs_diff(&x0).unwrap() < 1e-5, "{n}");
        }
    }

    #[test]
    fn stochastic_sigma_is_standard() {
        let s = default();
        let (a, ap) = (s.alpha_bar[100], s.alpha_bar[80]);
        let want = ((1.0 - ap) / (1.0 - a) * (1.0 - a / ap)).sqrt();
        assert!((s.sigma(100, 80, 1.0).unwrap() - want).abs() < 1e-15);
        assert_eq!(s.sigma(100, 80, 0.0).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn epsilon_inverts_q_sample(seed in 0u64..1000, t in 1usize..=500) {
            let s = default();
            let mut rng = SeededRng::new(seed);
            let x0 = rng.normal_raster(1, 3, 3);
            let e = rng.normal_raster(1, 3, 3);
            let xt = q_sample(&x0, t, &e, &s).unwrap();
            let back = epsilon_from_x0(&xt, &x0, t, &s).unwrap();
            // conditioning of the inverse grows like √(ᾱ/(1−ᾱ)) as t → 1
            let tol = 1e-13 * (1.0 + (s.alpha_bar[t] / (1.0 - s.alpha_bar[t])).sqrt());
            prop_assert!(back.max_abs_diff(&e).unwrap() < tol);
        }
    }
}
