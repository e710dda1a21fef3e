//! Reference (Wald) degradation and the learned alternative: two networks
//! trained against each other until the low-resolution PAN they agree on
//! matches how the sensor actually degrades.

mod padm;
mod palign;
mod pdegrade;
mod train;

pub use padm::{apply_degradation, padm_run, IterationRecord, PadmConfig, PadmState};
pub use palign::PAlignNet;
pub use pdegrade::PDegradeNet;
pub use train::{fit, mean_loss, Regressor, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{blur, downsample, footprint_degrade, gaussian_kernel, DownsampleMode, Padding, Raster};

/// An odd-sized isotropic Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussSpec {
    pub size: usize,
    pub sigma: f64,
}

/// How blurring and decimation combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecimationMode {
    /// Gaussian centred on each output pixel's `r×r` footprint.
    #[default]
    Footprint,
    /// Same-size blur, then keep pixel `(r·i, r·j)`.
    Stride,
    /// Same-size blur, then block mean.
    Area,
}

/// Blur-and-decimate operator applied band by band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degradation {
    pub r: usize,
    pub kernel: GaussSpec,
    pub mode: DecimationMode,
}

impl Degradation {
    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(Error::invalid(format!("scale factor {} must be ≥ 2", self.r)));
        }
        if self.kernel.size % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel size {} must be odd",
                self.kernel.size
            )));
        }
        if !(self.kernel.sigma > 0.0) {
            return Err(Error::invalid("kernel sigma must be > 0"));
        }
        Ok(())
    }

    pub fn apply(&self, img: &Raster) -> Result<Raster> {
        self.validate()?;
        let GaussSpec { size, sigma } = self.kernel;
        match self.mode {
            DecimationMode::Footprint => footprint_degrade(img, self.r, size, sigma),
            DecimationMode::Stride | DecimationMode::Area => {
                let k = gaussian_kernel(size, sigma)?;
                let blurred = blur(img, &k, Padding::Reflect)?;
                let mode = if self.mode == DecimationMode::Stride {
                    DownsampleMode::Stride
                } else {
                    DownsampleMode::Area
                };
                downsample(&blurred, self.r, mode)
            }
        }
    }
}

/// The fixed reference protocol: per-modality Gaussian blur, then `↓r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaldConfig {
    pub r: usize,
    pub ms_kernel: GaussSpec,
    pub pan_kernel: GaussSpec,
    pub mode: DecimationMode,
}

impl Default for WaldConfig {
    fn default() -> Self {
        let k = GaussSpec {
            size: 13,
            sigma: 2.4,
        };
        WaldConfig {
            r: 4,
            ms_kernel: k,
            pan_kernel: k,
            mode: DecimationMode::Footprint,
        }
    }
}

impl WaldConfig {
    pub fn ms_operator(&self) -> Degradation {
        Degradation {
            r: self.r,
            kernel: self.ms_kernel,
            mode: self.mode,
        }
    }

    pub fn pan_operator(&self) -> Degradation {
        Degradation {
            r: self.r,
            kernel: self.pan_kernel,
            mode: self.mode,
        }
    }
}

/// Degrades an MS/PAN pair to `1/r` of their resolutions.
pub fn wald_degrade(ms: &Raster, pan: &Raster, cfg: &WaldConfig) -> Result<(Raster, Raster)> {
    if pan.channels() != 1 {
        return Err(Error::invalid(format!(
            "PAN must be single-channel, got {}",
            pan.shape()
        )));
    }
    if pan.height() != cfg.r * ms.height() || pan.width() != cfg.r * ms.width() {
        return Err(Error::invalid(format!(
            "PAN {} is not {}× MS {}",
            pan.shape(),
            cfg.r,
            ms.shape()
        )));
    }
    Ok((cfg.ms_operator().apply(ms)?, cfg.pan_operator().apply(pan)?))
}

/// Starting LRPAN estimate: block mean of the PAN.
pub fn init_lrpan(pan: &Raster, r: usize) -> Result<Raster> {
    downsample(pan, r, DownsampleMode::Area)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_ms_stays_constant() {
        let ms = Raster::filled(4, 16, 16, 0.3);
        let pan = Raster::filled(1, 64, 64, 0.6);
        for mode in [
            DecimationMode::Footprint,
            DecimationMode::Stride,
            DecimationMode::Area,
        ] {
            let cfg = WaldConfig {
                mode,
                ..Default::default()
            };
            let (lrms, lrpan) = wald_degrade(&ms, &pan, &cfg).unwrap();
            assert_eq!(lrms.shape().to_string(), "4×4×4");
            assert!(lrms.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
            assert!(lrpan.data().iter().all(|&v| (v - 0.6).abs() < 1e-12));
        }
    }

    #[test]
    fn default_ratio_is_four() {
        assert_eq!(WaldConfig::default().r, 4);
    }

    #[test]
    fn impulse_gives_strided_kernel_samples() {
        let k = GaussSpec {
            size: 5,
            sigma: 1.0,
        };
        let op = Degradation {
            r: 2,
            kernel: k,
            mode: DecimationMode::Stride,
        };
        let mut img = Raster::zeros(1, 12, 12);
        img.set(0, 6, 6, 1.0);
        let out = op.apply(&img).unwrap();
        let g = gaussian_kernel(5, 1.0).unwrap();
        // out[i][j] = g[6 − 2i + 2][6 − 2j + 2] where that index is inside the kernel
        for i in 0..6 {
            for j in 0..6 {
                let (u, v) = (6 + 2 - 2 * i as isize, 6 + 2 - 2 * j as isize);
                let expected = if (0..5).contains(&u) && (0..5).contains(&v) {
                    g.get(u as usize, v as usize)
                } else {
                    0.0
                };
                assert!((out.get(0, i, j) - expected).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn ratio_mismatch_rejected() {
        let ms = Raster::zeros(4, 16, 16);
        let pan = Raster::zeros(1, 32, 32);
        assert!(wald_degrade(&ms, &pan, &WaldConfig::default()).is_err());
        assert!(wald_degrade(&ms, &Raster::zeros(2, 64, 64), &WaldConfig::default()).is_err());
    }

    #[test]
    fn init_lrpan_is_block_mean() {
        let c = init_lrpan(&Raster::filled(1, 8, 8, 0.2), 4).unwrap();
        assert!(c.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let ramp = Raster::from_vec(1, 4, 4, (0..16).map(f64::from).collect()).unwrap();
        assert_eq!(init_lrpan(&ramp, 4).unwrap().data(), &[7.5]);
        let x = Raster::from_fn(1, 3, 3, |_, y, x| (y * 3 + x) as f64);
        assert_eq!(init_lrpan(&x, 1).unwrap(), x);
    }
}
