//! Planar `C×H×W` rasters.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage precision of a raster.
///
/// Arithmetic always runs in `f64`; the precision decides how samples are
/// written to disk and whether [`Raster::quantize`] rounds them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Declared radiometric interval of a raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ValueRange {
    fn default() -> Self {
        ValueRange { lo: 0.0, hi: 1.0 }
    }
}

impl ValueRange {
    pub fn peak(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}", self.channels, self.height, self.width)
    }
}

/// A planar image: `data[c * H * W + y * W + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    shape: Shape,
    data: Vec<f64>,
    pub value_range: ValueRange,
    pub precision: Precision,
}

impl Raster {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        let shape = Shape::new(channels, height, width);
        Raster {
            shape,
            data: vec![value; shape.len()],
            value_range: ValueRange::default(),
            precision: Precision::default(),
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(channels, height, width);
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "raster {shape} needs {} samples, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Raster {
            shape,
            data,
            value_range: ValueRange::default(),
            precision: Precision::default(),
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut r = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    r.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        r
    }

    /// Same shape and metadata, zeroed samples.
    pub fn zeros_like(&self) -> Self {
        Raster {
            shape: self.shape,
            data: vec![0.0; self.data.len()],
            value_range: self.value_range,
            precision: self.precision,
        }
    }

    pub fn with_meta_of(mut self, other: &Raster) -> Self {
        self.value_range = other.value_range;
        self.precision = other.precision;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn channels(&self) -> usize {
        self.shape.channels
    }
    pub fn height(&self) -> usize {
        self.shape.height
    }
    pub fn width(&self) -> usize {
        self.shape.width
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.shape.plane();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.shape.plane();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel(&self, c: usize) -> Raster {
        Raster::from_vec(1, self.height(), self.width(), self.plane(c).to_vec())
            .expect("plane length")
            .with_meta_of(self)
    }

    /// Channels `[start, start + count)` as a new raster.
    pub fn channel_range(&self, start: usize, count: usize) -> Raster {
        let n = self.shape.plane();
        Raster::from_vec(
            count,
            self.height(),
            self.width(),
            self.data[start * n..(start + count) * n].to_vec(),
        )
        .expect("channel range")
        .with_meta_of(self)
    }

    pub fn ensure_shape(&self, other: &Raster, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    pub fn ensure_spatial(&self, other: &Raster, op: &'static str) -> Result<()> {
        if self.height() != other.height() || self.width() != other.width() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn zip_map(&self, other: &Raster, f: impl Fn(f64, f64) -> f64) -> Result<Raster> {
        self.ensure_shape(other, "zip_map")?;
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            *o = f(*o, b);
        }
        Ok(out)
    }

    pub fn add(&self, other: &Raster) -> Result<Raster> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Raster) -> Result<Raster> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Raster) -> Result<Raster> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Raster {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Raster) -> Result<()> {
        self.ensure_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn axpy(&mut self, alpha: f64, other: &Raster) -> Result<()> {
        self.ensure_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let p = self.plane(c);
        p.iter().sum::<f64>() / p.len() as f64
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Squared Frobenius distance.
    pub fn dist_sq(&self, other: &Raster) -> Result<f64> {
        self.ensure_shape(other, "dist_sq")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Raster) -> Result<f64> {
        self.ensure_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn clamp_to_range(&self) -> Raster {
        let ValueRange { lo, hi } = self.value_range;
        self.map(|v| v.clamp(lo, hi))
    }

    /// Rounds every sample through `f32` when the raster is single precision.
    pub fn quantize(&mut self) {
        if self.precision == Precision::F32 {
            self.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Stacks rasters of equal spatial size along the channel axis.
    pub fn concat(parts: &[&Raster]) -> Result<Raster> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero rasters"))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            first.ensure_spatial(p, "concat")?;
            data.extend_from_slice(&p.data);
            channels += p.channels();
        }
        Ok(Raster::from_vec(channels, first.height(), first.width(), data)?.with_meta_of(first))
    }

    /// Splits into consecutive channel groups of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<Raster>> {
        if sizes.iter().sum::<usize>() != self.channels() {
            return Err(Error::invalid(format!(
                "split sizes {:?} do not cover {} channels",
                sizes,
                self.channels()
            )));
        }
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&n| {
                let r = self.channel_range(start, n);
                start += n;
                r
            })
            .collect())
    }

    /// Mean over channels, as a single-channel raster.
    pub fn spectral_mean(&self) -> Raster {
        let (h, w) = (self.height(), self.width());
        let mut out = Raster::zeros(1, h, w).with_meta_of(self);
        let inv = 1.0 / self.channels() as f64;
        for c in 0..self.channels() {
            for (o, v) in out.data.iter_mut().zip(self.plane(c)) {
                *o += v * inv;
            }
        }
        out
    }

    /// Counterclockwise rotation by `quarter_turns × 90°` as displayed
    /// (row 0 at the top).
    pub fn rot90(&self, quarter_turns: usize) -> Raster {
        let k = quarter_turns % 4;
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let (oh, ow) = if k % 2 == 0 { (h, w) } else { (w, h) };
        let mut out = Raster::zeros(c, oh, ow).with_meta_of(self);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let (sy, sx) = match k {
                        0 => (i, j),
                        1 => (j, w - 1 - i),
                        2 => (h - 1 - i, w - 1 - j),
                        _ => (h - 1 - j, i),
                    };
                    out.set(ch, i, j, self.get(ch, sy, sx));
                }
            }
        }
        out
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Raster {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let mut out = self.zeros_like();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(ch, y, x, self.get(ch, y, w - 1 - x));
                }
            }
        }
        out
    }

    /// One of the eight dihedral transforms: `k` quarter turns after an
    /// optional horizontal flip.
    pub fn dihedral(&self, k: usize, flip: bool) -> Raster {
        if flip {
            self.flip_horizontal().rot90(k)
        } else {
            self.rot90(k)
        }
    }

    /// Inverse of [`Raster::dihedral`].
    pub fn dihedral_inverse(&self, k: usize, flip: bool) -> Raster {
        let back = self.rot90((4 - k % 4) % 4);
        if flip {
            back.flip_horizontal()
        } else {
            back
        }
    }

    /// Integer translation with zero fill: `out[y][x] = in[y - dy][x - dx]`.
    pub fn shift(&self, dy: isize, dx: isize) -> Raster {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let mut out = self.zeros_like();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = y as isize - dy;
                    let sx = x as isize - dx;
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        out.set(ch, y, x, self.get(ch, sy as usize, sx as usize));
                    }
                }
            }
        }
        out
    }

    /// Top-left crop.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Raster> {
        if y0 + h > self.height() || x0 + w > self.width() {
            return Err(Error::invalid(format!(
                "crop {h}×{w} at ({y0},{x0}) exceeds {}",
                self.shape
            )));
        }
        Ok(Raster::from_fn(self.channels(), h, w, |c, y, x| {
            self.get(c, y0 + y, x0 + x)
        })
        .with_meta_of(self))
    }
}
