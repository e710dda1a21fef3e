//! Element-wise nonlinearities and their derivatives.

use serde::{Deserialize, Serialize};

use super::raster::Raster;

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Gelu,
    Sigmoid,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Gelu => gelu(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::LeakyRelu(s) => leaky_relu(x, s),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Gelu => gelu_grad(x),
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::LeakyRelu(s) => leaky_relu_grad(x, s),
        }
    }

    pub fn forward(self, pre: &Raster) -> Raster {
        pre.map(|v| self.apply(v))
    }

    /// `∂L/∂pre` from `∂L/∂out`, given the pre-activation.
    pub fn backward(self, pre: &Raster, grad: &Raster) -> Raster {
        let mut g = grad.clone();
        for (g, &x) in g.data_mut().iter_mut().zip(pre.data()) {
            *g *= self.derivative(x);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn gelu_three_against_series_erf() {
        // erf(z) = 2/√π Σ (−1)ⁿ z^(2n+1) / (n! (2n+1)), summed until negligible.
        let z = 3.0 / std::f64::consts::SQRT_2;
        let mut term = z;
        let mut sum = z;
        for n in 1..200 {
            term *= -z * z / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        let erf = 2.0 / std::f64::consts::PI.sqrt() * sum;
        let expected = 0.5 * 3.0 * (1.0 + erf);
        assert!((gelu(3.0) - expected).abs() < 1e-12);
        assert!((gelu(3.0) - 2.995_950_305_905_109_7).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in [
            Activation::Gelu,
            Activation::Sigmoid,
            Activation::LeakyRelu(0.01),
            Activation::Identity,
        ] {
            for &x in &[-2.5, -0.3, 0.4, 1.7] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }
}
