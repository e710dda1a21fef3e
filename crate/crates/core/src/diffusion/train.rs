//! x0-prediction training with EMA weights, and DDIM sampling.

use serde::{Deserialize, Serialize};

use super::predictor::{Condition, Predictor, PredictorConfig};
use super::schedule::{ddim_step, make_schedule, q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{AdamW, AdamWConfig, Ema, Parameterized, Raster, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sample_steps: usize,
    pub eta: f64,
    pub lr: f64,
    pub ema: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    /// Random quarter turns and flips of each batch.
    pub augment: bool,
    pub predictor: PredictorConfig,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 500,
            beta_min: 1e-4,
            beta_max: 0.02,
            sample_steps: 25,
            eta: 0.0,
            lr: 1e-4,
            ema: 0.999,
            batch_size: 4,
            train_steps: 100_000,
            augment: true,
            predictor: PredictorConfig::default(),
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max, self.sample_steps)
    }
}

/// One training pair: HRMS target and its conditions, all at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample {
    pub target: Raster,
    pub pan: Raster,
    pub ims: Raster,
    pub ph: Raster,
}

impl DiffusionSample {
    /// The residual the predictor learns: `HRMS − IMS`.
    pub fn residual(&self) -> Result<Raster> {
        self.target.sub(&self.ims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diffuser {
    pub config: DiffusionConfig,
    pub schedule: NoiseSchedule,
    pub predictor: Predictor,
    pub opt: AdamW,
    pub ema: Ema,
}

impl Diffuser {
    pub fn new(config: DiffusionConfig, bands: usize, rng: &mut SeededRng) -> Result<Self> {
        let schedule = config.schedule()?;
        let predictor = Predictor::new(config.predictor.clone(), bands, rng)?;
        let opt = AdamW::new(
            AdamWConfig {
                lr: config.lr,
                ..Default::default()
            },
            &predictor,
        );
        let ema = Ema::new(config.ema, &predictor)?;
        Ok(Diffuser {
            config,
            schedule,
            predictor,
            opt,
            ema,
        })
    }

    /// A copy of the predictor carrying the EMA weights.
    pub fn ema_predictor(&self) -> Result<Predictor> {
        let mut p = self.predictor.clone();
        self.ema.copy_to(&mut p)?;
        Ok(p)
    }
}

/// `mean |pred − target|` and its gradient with respect to `pred`.
pub fn l1_loss(pred: &Raster, target: &Raster) -> Result<(f64, Raster)> {
    let diff = pred.sub(target)?;
    let n = diff.len() as f64;
    let loss = diff.data().iter().map(|v| v.abs()).sum::<f64>() / n;
    let grad = diff.map(|v| {
        if v > 0.0 {
            1.0 / n
        } else if v < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    Ok((loss, grad))
}

/// One optimizer step on a batch; returns the batch L1 loss.
///
/// Draws, in order: the dihedral transform (if augmenting), then per
/// sample its time and noise.
pub fn train_step(model: &mut Diffuser, batch: &[&DiffusionSample], rng: &mut SeededRng) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty diffusion batch"));
    }
    let (k, flip) = if model.config.augment {
        (rng.below(4), rng.below(2) == 1)
    } else {
        (0, false)
    };
    let stages = model.predictor.stages();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    model.predictor.zero_grad();
    for s in batch {
        let aug = |r: &Raster| r.dihedral(k, flip);
        let x0 = aug(&s.residual()?);
        let cond = Condition::new(&aug(&s.pan), &aug(&s.ims), &aug(&s.ph), stages)?;
        let t = 1 + rng.below(model.schedule.steps);
        let eps = rng.normal_raster(x0.channels(), x0.height(), x0.width());
        let xt = q_sample(&x0, t, &eps, &model.schedule)?;
        let (pred, trace) = model.predictor.trace(&xt, t, &cond)?;
        let (loss, grad) = l1_loss(&pred, &x0)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "diffusion",
                epoch: model.opt.step as usize,
            });
        }
        model.predictor.backward(&cond, &trace, &grad.scale(scale))?;
        total += loss * scale;
    }
    model.opt.step(&mut model.predictor)?;
    model.ema.update(&model.predictor);
    Ok(total)
}

/// Trains on random batches until the optimizer has taken
/// `config.train_steps` steps, so a restored model resumes where it stopped.
/// Returns the loss of every step taken here.
pub fn train(
    model: &mut Diffuser,
    data: &[DiffusionSample],
    rng: &mut SeededRng,
    mut on_step: impl FnMut(usize, f64, &Diffuser, &SeededRng) -> Result<()>,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("no diffusion training samples"));
    }
    let start = model.opt.step as usize;
    let mut losses = Vec::with_capacity(model.config.train_steps.saturating_sub(start));
    for step in start..model.config.train_steps {
        let batch: Vec<&DiffusionSample> = (0..model.config.batch_size)
            .map(|_| &data[rng.below(data.len())])
            .collect();
        let loss = train_step(model, &batch, rng)?;
        losses.push(loss);
        on_step(step + 1, loss, model, rng)?;
    }
    Ok(losses)
}

/// DDIM chain from pure noise; returns `clamp(x̂0 + IMS)`.
pub fn sample(
    predictor: &Predictor,
    pan: &Raster,
    ims: &Raster,
    ph: &Raster,
    schedule: &NoiseSchedule,
    eta: f64,
    rng: &mut SeededRng,
) -> Result<Raster> {
    let cond = Condition::new(pan, ims, ph, predictor.stages())?;
    let mut x = rng.normal_raster(ims.channels(), ims.height(), ims.width());
    let seq = &schedule.sequence;
    for (i, &t) in seq.iter().enumerate() {
        let t_prev = seq.get(i + 1).copied().unwrap_or(0);
        let x0 = predictor.forward(&x, t, &cond)?;
        x = ddim_step(&x, t, t_prev, &x0, schedule, eta, rng)?;
    }
    Ok(x.add(ims)?.with_meta_of(ims).clamp_to_range())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> DiffusionConfig {
        DiffusionConfig {
            steps: 50,
            sample_steps: 5,
            lr: 1e-3,
            train_steps: 3,
            predictor: PredictorConfig {
                widths: vec![4, 8],
                temb_dim: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn sample_data(rng: &mut SeededRng) -> DiffusionSample {
        let ims = rng.normal_raster(2, 8, 8).map(|v| 0.5 + 0.1 * v);
        DiffusionSample {
            target: ims.add(&rng.normal_raster(2, 8, 8).scale(0.05)).unwrap(),
            pan: ims.spectral_mean(),
            ph: rng.normal_raster(1, 8, 8).scale(0.05),
            ims,
        }
    }

    #[test]
    fn l1_matches_direct_sum() {
        let mut rng = SeededRng::new(1);
        let a = rng.normal_raster(2, 3, 3);
        let b = rng.normal_raster(2, 3, 3);
        let (l, _) = l1_loss(&a, &b).unwrap();
        let direct: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 18.0;
        assert!((l - direct).abs() < 1e-12);
        assert_eq!(l1_loss(&a, &a).unwrap().0, 0.0);
    }

    #[test]
    fn ema_moves_by_one_minus_ratio() {
        let mut rng = SeededRng::new(2);
        let mut m = Diffuser::new(tiny_config(), 2, &mut rng).unwrap();
        let before = m.predictor.flat_values();
        let d = sample_data(&mut rng);
        train_step(&mut m, &[&d], &mut rng).unwrap();
        let after = m.predictor.flat_values();
        for i in (0..before.len()).step_by(37) {
            let want = before[i] + (1.0 - 0.999) * (after[i] - before[i]);
            assert!((m.ema.shadow[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn training_is_deterministic_and_sampling_reproducible() {
        let run = || {
            let mut rng = SeededRng::new(3);
            let data = vec![sample_data(&mut rng), sample_data(&mut rng)];
            let mut m = Diffuser::new(tiny_config(), 2, &mut rng).unwrap();
            let losses = train(&mut m, &data, &mut rng, |_, _, _, _| Ok(())).unwrap();
            let p = m.ema_predictor().unwrap();
            let d = &data[0];
            let out = sample(&p, &d.pan, &d.ims, &d.ph, &m.schedule, 0.0, &mut SeededRng::new(9)).unwrap();
            (losses, out)
        };
        let (l1, o1) = run();
        let (l2, o2) = run();
        assert_eq!(l1, l2);
        assert_eq!(o1, o2);
        assert_eq!(o1.shape().to_string(), "2×8×8");
        assert!(o1.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn interrupted_training_resumes_identically() {
        let mut rng = SeededRng::new(4);
        let data = vec![sample_data(&mut rng), sample_data(&mut rng)];
        let fresh = Diffuser::new(tiny_config(), 2, &mut rng).unwrap();
        let (mut a, mut ra) = (fresh.clone(), rng.clone());
        train(&mut a, &data, &mut ra, |_, _, _, _| Ok(())).unwrap();
        let (mut b, mut rb) = (fresh, rng);
        b.config.train_steps = 1;
        train(&mut b, &data, &mut rb, |_, _, _, _| Ok(())).unwrap();
        b.config.train_steps = 3;
        let rest = train(&mut b, &data, &mut rb, |_, _, _, _| Ok(())).unwrap();
        assert_eq!(rest.len(), 2);
        assert_eq!(a, b);
    }
}
