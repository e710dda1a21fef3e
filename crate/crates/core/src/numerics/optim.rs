//! Parameters, AdamW and weight EMA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named learnable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub id: String,
    pub dims: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(id: impl Into<String>, dims: Vec<usize>, value: Vec<f64>) -> Self {
        let n: usize = dims.iter().product();
        assert_eq!(n, value.len(), "param value does not match its dims");
        Param {
            id: id.into(),
            dims,
            grad: vec![0.0; n],
            value,
        }
    }

    pub fn zeros(id: impl Into<String>, dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self::new(id, dims, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.grad.len());
        for (a, b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Anything that owns [`Param`]s, listed in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn num_weights(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Flattened copy of every value, in parameter order.
    fn flat_values(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    fn flat_grads(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.num_weights();
        if flat.len() != total {
            return Err(Error::invalid(format!(
                "expected {total} weights, got {}",
                flat.len()
            )));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Multiplies every gradient by `s` (e.g. `1/batch`).
    fn scale_grads(&mut self, s: f64) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, model: &impl Parameterized) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        AdamW {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update from the accumulated gradients, which are then zeroed.
    ///
    /// Non-finite gradients abort before anything is modified.
    pub fn step(&mut self, model: &mut impl Parameterized) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} params, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.len() != m.len() {
                return Err(Error::invalid(format!("moment shape mismatch for `{}`", p.id)));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.id.clone()));
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= lr * weight_decay * p.value[i];
                p.value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Exponential moving average of a model's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ema {
    pub ratio: f64,
    pub shadow: Vec<f64>,
}

impl Ema {
    pub fn new(ratio: f64, model: &impl Parameterized) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::invalid(format!("ema ratio {ratio} outside (0, 1)")));
        }
        Ok(Ema {
            ratio,
            shadow: model.flat_values(),
        })
    }

    /// Starts from an explicit shadow (e.g. zeros).
    pub fn with_shadow(ratio: f64, shadow: Vec<f64>) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::invalid(format!("ema ratio {ratio} outside (0, 1)")));
        }
        Ok(Ema { ratio, shadow })
    }

    pub fn update(&mut self, model: &impl Parameterized) {
        let mut off = 0;
        for p in model.params() {
            for (s, &v) in self.shadow[off..off + p.len()].iter_mut().zip(&p.value) {
                *s = self.ratio * *s + (1.0 - self.ratio) * v;
            }
            off += p.len();
        }
    }

    /// Loads the shadow weights into `model`.
    pub fn copy_to(&self, model: &mut impl Parameterized) -> Result<()> {
        model.load_flat(&self.shadow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar(Param);

    impl Parameterized for Scalar {
        fn params(&self) -> Vec<&Param> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![&mut self.0]
        }
    }

    fn scalar(v: f64) -> Scalar {
        Scalar(Param::new("w", vec![1], vec![v]))
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params() {
        let mut s = scalar(0.3);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s).unwrap();
        assert_eq!(s.0.value[0], 0.3);
    }

    #[test]
    fn single_step_matches_hand_calculation() {
        let mut s = scalar(1.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        s.0.grad[0] = 0.5;
        opt.step(&mut s).unwrap();
        // m̂ = 0.5, v̂ = 0.25 → step = 0.1·0.5/(0.5+1e-8); decay 0.1·0.01·1
        let expected = 1.0 - 0.1 * 0.01 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((s.0.value[0] - expected).abs() < 1e-15);
        assert_eq!(s.0.grad[0], 0.0);
    }

    #[test]
    fn nan_gradient_is_reported_by_id() {
        let mut s = scalar(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        s.0.grad[0] = f64::NAN;
        let err = opt.step(&mut s).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(s.0.value[0], 1.0);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn ema_single_update() {
        let s = scalar(1.0);
        let mut ema = Ema::with_shadow(0.999, vec![0.0]).unwrap();
        ema.update(&s);
        assert!((ema.shadow[0] - 0.001).abs() < 1e-15);
        assert!(Ema::new(1.0, &s).is_err());
        assert!(Ema::new(0.0, &s).is_err());
    }
}
