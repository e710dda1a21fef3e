//! Minibatch AdamW regression shared by both PADM networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamW, AdamWConfig, Parameterized, Raster, SeededRng};

/// A network trained with a squared-Frobenius loss against fixed targets.
pub trait Regressor: Parameterized {
    fn predict(&self, x: &Raster) -> Result<Raster>;

    /// Returns `‖f(x) − target‖²_F` and accumulates its gradient.
    fn loss_and_grad(&mut self, x: &Raster, target: &Raster) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Optimizer steps over which the learning rate ramps linearly up to `lr`.
    pub warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            lr: 5e-5,
            weight_decay: 0.0,
            warmup: 20,
        }
    }
}

/// `(1/N) Σ ‖f(xₙ) − tₙ‖²_F` over the whole set.
pub fn mean_loss(net: &impl Regressor, inputs: &[Raster], targets: &[Raster]) -> Result<f64> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::invalid(format!(
            "{} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        total += net.predict(x)?.dist_sq(t)?;
    }
    Ok(total / inputs.len() as f64)
}

/// Trains for a fixed number of epochs; returns the full-set loss before
/// training followed by the loss after every epoch.
///
/// Aborts on a non-finite loss, or once the loss exceeds ten times its
/// starting value.
pub fn fit(
    net: &mut impl Regressor,
    inputs: &[Raster],
    targets: &[Raster],
    cfg: &TrainConfig,
    stage: &'static str,
    iteration: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let initial = mean_loss(net, inputs, targets)?;
    let mut history = vec![initial];
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        net,
    );
    net.zero_grad();
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(inputs.len());
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                let l = net.loss_and_grad(&inputs[i], &targets[i])?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss { stage, epoch });
                }
            }
            net.scale_grads(1.0 / batch.len() as f64);
            let ramp = (opt.step + 1) as f64 / cfg.warmup.max(1) as f64;
            opt.config.lr = cfg.lr * ramp.min(1.0);
            opt.step(net)?;
        }
        let loss = mean_loss(net, inputs, targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { stage, epoch });
        }
        if loss > 10.0 * initial && loss > 1e-12 {
            return Err(Error::Diverged {
                stage,
                iteration,
                loss,
                initial,
            });
        }
        history.push(loss);
    }
    Ok(history)
}
