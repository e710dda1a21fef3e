//! Procedural multispectral scenes with a known sensor degradation.
//!
//! A scene is a piecewise-constant map of materials (ellipses and
//! rectangles over a background), shaded by a smooth illumination field,
//! with a little band-specific smooth variation. PAN is a fixed spectral
//! mix of the bands plus fine texture. The observed MS and the reference
//! LRPAN are both produced by the hidden operator.

use serde::{Deserialize, Serialize};

use crate::degradation::{DecimationMode, Degradation, GaussSpec};
use crate::error::{Error, Result};
use crate::numerics::{blur, gaussian_kernel, Padding, Raster, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub materials: usize,
    pub shapes: usize,
    /// Spectral mix mapping bands to PAN; sums to 1.
    pub pan_weights: Vec<f64>,
    /// Amplitude of the PAN-only texture.
    pub texture: f64,
    /// The sensor's true degradation.
    pub hidden: Degradation,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            bands: 4,
            materials: 6,
            shapes: 24,
            pan_weights: vec![0.1, 0.2, 0.3, 0.4],
            texture: 0.01,
            hidden: Degradation {
                r: 4,
                kernel: GaussSpec {
                    size: 9,
                    sigma: 1.2,
                },
                mode: DecimationMode::Footprint,
            },
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.hidden.validate()?;
        let r = self.hidden.r;
        if self.height % r != 0 || self.width % r != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "scene {}×{} is not divisible by r={r}",
                self.height, self.width
            )));
        }
        if self.pan_weights.len() != self.bands {
            return Err(Error::Config(format!(
                "{} PAN weights for {} bands",
                self.pan_weights.len(),
                self.bands
            )));
        }
        let total: f64 = self.pan_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("PAN weights sum to {total}, not 1")));
        }
        if self.materials == 0 {
            return Err(Error::Config("at least one material required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Ground-truth HRMS.
    pub hrms: Raster,
    pub pan: Raster,
    /// Observed MS at `1/r`.
    pub lrms: Raster,
    /// PAN through the hidden operator; never shown to training code.
    pub lrpan: Raster,
}

/// Gaussian-filtered white noise normalised to unit standard deviation.
pub fn smooth_field(rng: &mut SeededRng, h: usize, w: usize, scale: f64) -> Result<Raster> {
    let noise = rng.normal_raster(1, h, w);
    let size = (6.0 * scale) as usize | 1;
    let f = blur(&noise, &gaussian_kernel(size, scale)?, Padding::Reflect)?;
    let mean = f.mean();
    let var = f.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64;
    Ok(f.scale(1.0 / (var.sqrt() + 1e-12)))
}

pub fn mix_pan(hrms: &Raster, weights: &[f64]) -> Raster {
    let mut pan = Raster::zeros(1, hrms.height(), hrms.width());
    for (c, &w) in weights.iter().enumerate() {
        for (p, v) in pan.data_mut().iter_mut().zip(hrms.plane(c)) {
            *p += w * v;
        }
    }
    pan
}

pub fn generate(spec: &SceneSpec, rng: &mut SeededRng) -> Result<Scene> {
    spec.validate()?;
    let (h, w, bands) = (spec.height, spec.width, spec.bands);
    let k = spec.materials;
    let spectra: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let level = rng.uniform_range(0.15, 0.85);
            (0..bands)
                .map(|_| level * (1.0 + 0.25 * rng.uniform_range(-1.0, 1.0)))
                .collect()
        })
        .collect();
    let mut labels = vec![rng.below(k); h * w];
    for _ in 0..spec.shapes {
        let m = rng.below(k);
        let cy = rng.uniform_range(0.0, h as f64);
        let cx = rng.uniform_range(0.0, w as f64);
        let a = rng.uniform_range(2.0, 14.0);
        let b = rng.uniform_range(2.0, 14.0);
        let th = rng.uniform_range(0.0, std::f64::consts::PI);
        let ellipse = rng.uniform() < 0.5;
        let (s, c) = th.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                let inside = if ellipse {
                    (u / a).powi(2) + (v / b).powi(2) <= 1.0
                } else {
                    u.abs() <= a && v.abs() <= b
                };
                if inside {
                    labels[y * w + x] = m;
                }
            }
        }
    }
    let shade = smooth_field(rng, h, w, 6.0)?;
    let mut hrms = Raster::zeros(bands, h, w);
    for c in 0..bands {
        let variation = smooth_field(rng, h, w, 4.0)?;
        let plane = hrms.plane_mut(c);
        for i in 0..h * w {
            let v = spectra[labels[i]][c] * (1.0 + 0.1 * shade.data()[i]) + 0.03 * variation.data()[i];
            plane[i] = v.clamp(0.0, 1.0);
        }
    }
    let texture = smooth_field(rng, h, w, 0.7)?;
    let mut pan = mix_pan(&hrms, &spec.pan_weights);
    pan.axpy(spec.texture, &texture)?;
    let lrms = spec.hidden.apply(&hrms)?;
    let lrpan = spec.hidden.apply(&pan)?;
    Ok(Scene {
        hrms,
        pan,
        lrms,
        lrpan,
    })
}

/// `n` scenes, each drawn from its own RNG stream so any prefix is stable.
pub fn generate_set(spec: &SceneSpec, n: usize, seed: u64) -> Result<Vec<Scene>> {
    let base = SeededRng::new(seed);
    (0..n)
        .map(|i| generate(spec, &mut base.fork(i as u64 + 1)))
        .collect()
}
