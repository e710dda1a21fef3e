//! Blurs, decimation, interpolation and pooling.

use serde::{Deserialize, Serialize};

use super::conv::{conv2d, ConvSpec, Kernel, Padding};
use super::raster::Raster;
use crate::error::{Error, Result};

/// A square, single-plane filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel2d {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.size + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// The same filter applied independently to each of `channels` planes.
    pub fn depthwise(&self, channels: usize) -> Kernel {
        let mut data = Vec::with_capacity(channels * self.data.len());
        for _ in 0..channels {
            data.extend_from_slice(&self.data);
        }
        Kernel {
            out: channels,
            inp: 1,
            size: self.size,
            data,
        }
    }
}

/// Sampled isotropic Gaussian on the centred integer grid, normalised to unit sum.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel2d> {
    if size % 2 == 0 {
        return Err(Error::invalid(format!("gaussian size {size} must be odd")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("gaussian sigma {sigma} must be > 0")));
    }
    let c = (size / 2) as f64;
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (y as f64 - c, x as f64 - c);
            data.push((-(u * u + v * v) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= total);
    Ok(Kernel2d { size, data })
}

/// 5-point Laplacian.
pub fn laplacian() -> Kernel2d {
    Kernel2d {
        size: 3,
        data: vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0],
    }
}

/// Same-size filtering of every channel with `k`.
pub fn blur(input: &Raster, k: &Kernel2d, padding: Padding) -> Result<Raster> {
    let spec = ConvSpec::same(k.size, padding).with_groups(input.channels());
    conv2d(input, &k.depthwise(input.channels()), spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownsampleMode {
    /// Keep pixel `(r·i, r·j)`.
    Stride,
    /// Mean of each `r×r` block.
    #[default]
    Area,
}

fn check_divisible(input: &Raster, r: usize) -> Result<()> {
    if r == 0 || input.height() % r != 0 || input.width() % r != 0 {
        return Err(Error::invalid(format!(
            "spatial size {}×{} not divisible by factor {r}",
            input.height(),
            input.width()
        )));
    }
    Ok(())
}

pub fn downsample(input: &Raster, r: usize, mode: DownsampleMode) -> Result<Raster> {
    check_divisible(input, r)?;
    let (c, h, w) = (input.channels(), input.height() / r, input.width() / r);
    let out = match mode {
        DownsampleMode::Stride => Raster::from_fn(c, h, w, |ch, y, x| input.get(ch, r * y, r * x)),
        DownsampleMode::Area => {
            let inv = 1.0 / (r * r) as f64;
            Raster::from_fn(c, h, w, |ch, y, x| {
                let mut acc = 0.0;
                for dy in 0..r {
                    for dx in 0..r {
                        acc += input.get(ch, r * y + dy, r * x + dx);
                    }
                }
                acc * inv
            })
        }
    };
    Ok(out.with_meta_of(input))
}

/// Adjoint of area downsampling: spreads each gradient evenly over its block.
pub fn area_downsample_backward(grad: &Raster, r: usize) -> Raster {
    let inv = 1.0 / (r * r) as f64;
    Raster::from_fn(
        grad.channels(),
        grad.height() * r,
        grad.width() * r,
        |c, y, x| grad.get(c, y / r, x / r) * inv,
    )
    .with_meta_of(grad)
}

/// 1-D taps of a Gaussian centred on a decimated pixel's footprint.
///
/// Output pixel `i` sits at the centre `r·i + (r−1)/2` of its `r`-wide input
/// block; the returned `(offset, weight)` pairs are relative to `r·i` and
/// cover input samples within `size / 2` of that centre.
pub fn footprint_taps(r: usize, size: usize, sigma: f64) -> Result<Vec<(isize, f64)>> {
    if !(sigma > 0.0) || size == 0 || r == 0 {
        return Err(Error::invalid("footprint taps need r, size, sigma > 0"));
    }
    let centre = (r as f64 - 1.0) / 2.0;
    let half = (size / 2) as f64;
    let lo = (centre - half).ceil() as isize;
    let hi = (centre + half).floor() as isize;
    let mut taps: Vec<(isize, f64)> = (lo..=hi)
        .map(|a| {
            let d = a as f64 - centre;
            (a, (-d * d / (2.0 * sigma * sigma)).exp())
        })
        .collect();
    let total: f64 = taps.iter().map(|t| t.1).sum();
    taps.iter_mut().for_each(|t| t.1 /= total);
    Ok(taps)
}

/// Separable Gaussian blur evaluated only at block centres, then decimated by `r`.
///
/// Unlike blur-then-stride, the result is aligned with area downsampling, so
/// the two differ only by the blur shape.
pub fn footprint_degrade(input: &Raster, r: usize, size: usize, sigma: f64) -> Result<Raster> {
    check_divisible(input, r)?;
    let taps = footprint_taps(r, size, sigma)?;
    let (c, h, w) = (input.channels(), input.height(), input.width());
    let (oh, ow) = (h / r, w / r);
    let reflect = Padding::Reflect;
    // rows first: c × oh × w
    let mut tmp = vec![0.0; c * oh * w];
    for ch in 0..c {
        let plane = input.plane(ch);
        for i in 0..oh {
            let dst = &mut tmp[(ch * oh + i) * w..][..w];
            for &(a, wt) in &taps {
                let sy = reflect.source((r * i) as isize + a, h).expect("reflect");
                for (d, s) in dst.iter_mut().zip(&plane[sy * w..][..w]) {
                    *d += wt * s;
                }
            }
        }
    }
    let mut out = Raster::zeros(c, oh, ow).with_meta_of(input);
    for ch in 0..c {
        for i in 0..oh {
            let row = &tmp[(ch * oh + i) * w..][..w];
            for j in 0..ow {
                let mut acc = 0.0;
                for &(a, wt) in &taps {
                    acc += wt * row[reflect.source((r * j) as isize + a, w).expect("reflect")];
                }
                out.set(ch, i, j, acc);
            }
        }
    }
    Ok(out)
}

/// Sample-grid alignment for interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Align {
    /// Pixel centres line up: source coordinate `(o + ½)/r − ½`.
    #[default]
    Centers,
    /// First and last samples coincide: source coordinate `o·(n−1)/(N−1)`.
    Corners,
}

impl Align {
    fn source(self, o: usize, n: usize, r: usize) -> f64 {
        match self {
            Align::Centers => ((o as f64 + 0.5) / r as f64 - 0.5).clamp(0.0, (n - 1) as f64),
            Align::Corners => {
                let big = n * r;
                if big <= 1 {
                    0.0
                } else {
                    o as f64 * (n - 1) as f64 / (big - 1) as f64
                }
            }
        }
    }
}

fn linear_weights(n: usize, r: usize, align: Align) -> Vec<(usize, usize, f64)> {
    (0..n * r)
        .map(|o| {
            let s = align.source(o, n, r);
            let i0 = (s.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn bilinear_upsample(input: &Raster, r: usize, align: Align) -> Result<Raster> {
    if r == 0 {
        return Err(Error::invalid("upsampling factor must be ≥ 1"));
    }
    if input.is_empty() {
        return Err(Error::invalid("cannot upsample an empty raster"));
    }
    let ys = linear_weights(input.height(), r, align);
    let xs = linear_weights(input.width(), r, align);
    Ok(Raster::from_fn(
        input.channels(),
        input.height() * r,
        input.width() * r,
        |c, y, x| {
            let (y0, y1, fy) = ys[y];
            let (x0, x1, fx) = xs[x];
            let top = input.get(c, y0, x0) * (1.0 - fx) + input.get(c, y0, x1) * fx;
            let bot = input.get(c, y1, x0) * (1.0 - fx) + input.get(c, y1, x1) * fx;
            top * (1.0 - fy) + bot * fy
        },
    )
    .with_meta_of(input))
}

fn cubic(t: f64) -> f64 {
    // Keys kernel, a = −0.5
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Centre-aligned bicubic interpolation with edge replication.
pub fn bicubic_upsample(input: &Raster, r: usize) -> Result<Raster> {
    if r == 0 || input.is_empty() {
        return Err(Error::invalid("bicubic needs r ≥ 1 and a non-empty raster"));
    }
    let taps = |n: usize| -> Vec<[(usize, f64); 4]> {
        (0..n * r)
            .map(|o| {
                let s = (o as f64 + 0.5) / r as f64 - 0.5;
                let base = s.floor();
                let mut t = [(0, 0.0); 4];
                for (k, slot) in t.iter_mut().enumerate() {
                    let i = base as isize - 1 + k as isize;
                    *slot = (
                        i.clamp(0, n as isize - 1) as usize,
                        cubic(s - i as f64),
                    );
                }
                t
            })
            .collect()
    };
    let ys = taps(input.height());
    let xs = taps(input.width());
    Ok(Raster::from_fn(
        input.channels(),
        input.height() * r,
        input.width() * r,
        |c, y, x| {
            let mut acc = 0.0;
            for &(sy, wy) in &ys[y] {
                for &(sx, wx) in &xs[x] {
                    acc += wy * wx * input.get(c, sy, sx);
                }
            }
            acc
        },
    )
    .with_meta_of(input))
}

pub fn nearest_upsample(input: &Raster, r: usize) -> Raster {
    Raster::from_fn(
        input.channels(),
        input.height() * r,
        input.width() * r,
        |c, y, x| input.get(c, y / r, x / r),
    )
    .with_meta_of(input)
}

/// Adjoint of [`nearest_upsample`]: block sums.
pub fn nearest_upsample_backward(grad: &Raster, r: usize) -> Result<Raster> {
    Ok(downsample(grad, r, DownsampleMode::Area)?.scale((r * r) as f64))
}

/// Per-channel spatial mean.
pub fn avgpool_global(input: &Raster) -> Vec<f64> {
    (0..input.channels()).map(|c| input.channel_mean(c)).collect()
}
