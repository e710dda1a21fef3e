//! Filters expanded in masked 2-D Fourier bases, and the convolution layer
//! built from them.
//!
//! A `p×p` kernel is the sampled version of a continuous function
//! `φ(v) = Σ a_kl·Ω(v)·cos(ω_kl·v) + b_kl·Ω(v)·sin(ω_kl·v)`. Because the
//! expansion is continuous, a filter can be rotated by rotating the sampling
//! coordinates instead of resampling pixels.
//!
//! Coordinates: `x = (col − c)·h`, `y = (row − c)·h` with `c = ⌊p/2⌋` and
//! rows growing downwards. Positive angles turn kernels counterclockwise as
//! displayed, matching [`Raster::rot90`].

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    conv2d, conv2d_backward, Activation, ConvSpec, Kernel, Padding, Param, Parameterized, Raster,
    SeededRng,
};

/// Radial window applied to every basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskProfile {
    /// `½(1 + cos(π‖v‖/ρ))` inside `ρ = (p + ½)h`, zero outside.
    #[default]
    RaisedCosine,
    /// No window at all: plain trigonometric bases.
    None,
}

/// Which of the two trigonometric families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trig {
    Cos,
    Sin,
}

/// Sampled basis filters for one filter size.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasis {
    pub p: usize,
    pub h: f64,
    pub profile: MaskProfile,
    /// Sampled window, `p×p`.
    pub mask: Vec<f64>,
    centred_cos: Vec<Vec<f64>>,
    centred_sin: Vec<Vec<f64>>,
    classic_cos: Vec<Vec<f64>>,
    classic_sin: Vec<Vec<f64>>,
    /// Pseudo-inverse of the centred basis matrix, `2p² × p²`.
    pinv: Vec<f64>,
}

impl FourierBasis {
    pub fn new(p: usize, h: f64, profile: MaskProfile) -> Result<Self> {
        if p % 2 == 0 || p == 0 {
            return Err(Error::invalid(format!("filter size {p} must be odd")));
        }
        if !(h > 0.0) {
            return Err(Error::invalid(format!("mesh size {h} must be > 0")));
        }
        let n = p * p;
        let c = (p / 2) as f64;
        let mut basis = FourierBasis {
            p,
            h,
            profile,
            mask: Vec::with_capacity(n),
            centred_cos: Vec::with_capacity(n),
            centred_sin: Vec::with_capacity(n),
            classic_cos: Vec::with_capacity(n),
            classic_sin: Vec::with_capacity(n),
            pinv: Vec::new(),
        };
        for row in 0..p {
            for col in 0..p {
                let (x, y) = ((col as f64 - c) * h, (row as f64 - c) * h);
                basis.mask.push(basis.window(x, y));
            }
        }
        for k in 0..p {
            for l in 0..p {
                let sample = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
                    let mut v = Vec::with_capacity(n);
                    for row in 0..p {
                        for col in 0..p {
                            v.push(f((col as f64 - c) * h, (row as f64 - c) * h));
                        }
                    }
                    v
                };
                basis.centred_cos.push(sample(&|x, y| basis.eval(Trig::Cos, k, l, x, y)));
                basis.centred_sin.push(sample(&|x, y| basis.eval(Trig::Sin, k, l, x, y)));
                basis
                    .classic_cos
                    .push(sample(&|x, y| basis.eval_classic(Trig::Cos, k, l, x, y)));
                basis
                    .classic_sin
                    .push(sample(&|x, y| basis.eval_classic(Trig::Sin, k, l, x, y)));
            }
        }
        basis.pinv = basis.pseudo_inverse()?;
        Ok(basis)
    }

    /// Radius where the window reaches zero.
    pub fn rho(&self) -> f64 {
        (self.p as f64 + 0.5) * self.h
    }

    pub fn window(&self, x: f64, y: f64) -> f64 {
        match self.profile {
            MaskProfile::None => 1.0,
            MaskProfile::RaisedCosine => {
                let r = x.hypot(y);
                if r >= self.rho() {
                    0.0
                } else {
                    0.5 * (1.0 + (PI * r / self.rho()).cos())
                }
            }
        }
    }

    fn omega(&self, k: usize) -> f64 {
        2.0 * PI / (self.p as f64 * self.h) * (k as f64 - (self.p / 2) as f64)
    }

    /// Centred basis function `(k, l)` at continuous coordinates.
    pub fn eval(&self, trig: Trig, k: usize, l: usize, x: f64, y: f64) -> f64 {
        let phase = self.omega(k) * x + self.omega(l) * y;
        self.window(x, y)
            * match trig {
                Trig::Cos => phase.cos(),
                Trig::Sin => phase.sin(),
            }
    }

    /// Classic (uncentred) 2-D Fourier basis function `(k, l)`.
    pub fn eval_classic(&self, trig: Trig, k: usize, l: usize, x: f64, y: f64) -> f64 {
        let w = 2.0 * PI / (self.p as f64 * self.h);
        let phase = w * (k as f64 * x + l as f64 * y);
        self.window(x, y)
            * match trig {
                Trig::Cos => phase.cos(),
                Trig::Sin => phase.sin(),
            }
    }

    pub fn centred(&self, trig: Trig, k: usize, l: usize) -> &[f64] {
        let i = k * self.p + l;
        match trig {
            Trig::Cos => &self.centred_cos[i],
            Trig::Sin => &self.centred_sin[i],
        }
    }

    pub fn classic(&self, trig: Trig, k: usize, l: usize) -> &[f64] {
        let i = k * self.p + l;
        match trig {
            Trig::Cos => &self.classic_cos[i],
            Trig::Sin => &self.classic_sin[i],
        }
    }

    /// Basis functions sampled on a grid rotated by `angle`.
    fn rotated(&self, angle: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let p = self.p;
        let c = (p / 2) as f64;
        let (s, co) = angle.sin_cos();
        let coords: Vec<(f64, f64)> = (0..p * p)
            .map(|i| {
                let (x, y) = (
                    ((i % p) as f64 - c) * self.h,
                    ((i / p) as f64 - c) * self.h,
                );
                (x * co - y * s, x * s + y * co)
            })
            .collect();
        let mut cos = Vec::with_capacity(p * p);
        let mut sin = Vec::with_capacity(p * p);
        for k in 0..p {
            for l in 0..p {
                cos.push(
                    coords
                        .iter()
                        .map(|&(x, y)| self.eval(Trig::Cos, k, l, x, y))
                        .collect(),
                );
                sin.push(
                    coords
                        .iter()
                        .map(|&(x, y)| self.eval(Trig::Sin, k, l, x, y))
                        .collect(),
                );
            }
        }
        (cos, sin)
    }

    fn pseudo_inverse(&self) -> Result<Vec<f64>> {
        let n = self.p * self.p;
        // columns: cos bases then sin bases
        let m = DMatrix::from_fn(n, 2 * n, |pix, j| {
            if j < n {
                self.centred_cos[j][pix]
            } else {
                self.centred_sin[j - n][pix]
            }
        });
        let pinv = m
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::invalid(format!("basis pseudo-inverse failed: {e}")))?;
        Ok((0..2 * n)
            .flat_map(|j| (0..n).map(move |pix| (j, pix)))
            .map(|(j, pix)| pinv[(j, pix)])
            .collect())
    }
}

/// Builds the bases for a `p×p` filter with unit mesh and the default window.
pub fn build_bases(p: usize) -> Result<FourierBasis> {
    FourierBasis::new(p, 1.0, MaskProfile::RaisedCosine)
}

/// Expansion coefficients of one filter, each `p×p` indexed `k·p + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FConvFilter {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FConvFilter {
    pub fn zeros(p: usize) -> Self {
        FConvFilter {
            a: vec![0.0; p * p],
            b: vec![0.0; p * p],
        }
    }
}

fn expand(cos: &[Vec<f64>], sin: &[Vec<f64>], f: &FConvFilter) -> Vec<f64> {
    let n = cos[0].len();
    let mut k = vec![0.0; n];
    for (j, (bc, bs)) in cos.iter().zip(sin).enumerate() {
        let (a, b) = (f.a[j], f.b[j]);
        if a == 0.0 && b == 0.0 {
            continue;
        }
        for i in 0..n {
            k[i] += a * bc[i] + b * bs[i];
        }
    }
    k
}

/// Samples the expansion on the filter grid.
pub fn synthesize_filter(basis: &FourierBasis, f: &FConvFilter) -> Vec<f64> {
    expand(&basis.centred_cos, &basis.centred_sin, f)
}

/// Samples the expansion on a grid rotated by `angle` radians.
pub fn rotate_filter(basis: &FourierBasis, f: &FConvFilter, angle: f64) -> Vec<f64> {
    let (cos, sin) = basis.rotated(angle);
    expand(&cos, &sin, f)
}

/// Minimum-norm least-squares coefficients reproducing `target` on the grid.
pub fn fit_filter(basis: &FourierBasis, target: &[f64]) -> Result<FConvFilter> {
    let n = basis.p * basis.p;
    if target.len() != n {
        return Err(Error::invalid(format!(
            "target has {} samples, expected {n}",
            target.len()
        )));
    }
    let coef: Vec<f64> = (0..2 * n)
        .map(|j| {
            basis.pinv[j * n..(j + 1) * n]
                .iter()
                .zip(target)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    Ok(FConvFilter {
        a: coef[..n].to_vec(),
        b: coef[n..].to_vec(),
    })
}

/// Convolution whose every `(out, in)` kernel is an F-conv expansion.
///
/// With `orientations = N > 1` each kernel is the mean of its expansion
/// rotated by `2πn/N`; the result is still linear in the coefficients and
/// makes the layer commute exactly with rotations by multiples of `2π/N`
/// whenever those land on the pixel grid.
#[derive(Debug, Clone)]
pub struct FConvLayer {
    pub a: Param,
    pub b: Param,
    pub bias: Param,
    pub out: usize,
    pub inp: usize,
    pub spec: ConvSpec,
    pub orientations: usize,
    pub basis: Arc<FourierBasis>,
    /// Effective bases after orientation pooling, `p²` rows of `p²` samples each.
    eff_cos: Vec<f64>,
    eff_sin: Vec<f64>,
}

impl PartialEq for FConvLayer {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a
            && self.b == other.b
            && self.bias == other.bias
            && self.spec == other.spec
            && self.orientations == other.orientations
            && self.basis.p == other.basis.p
    }
}

impl FConvLayer {
    pub fn zeros(
        id: &str,
        basis: Arc<FourierBasis>,
        inp: usize,
        out: usize,
        spec: ConvSpec,
        orientations: usize,
    ) -> Result<Self> {
        if orientations == 0 {
            return Err(Error::invalid("orientations must be ≥ 1"));
        }
        let p = basis.p;
        let n = p * p;
        let mut eff_cos = vec![0.0; n * n];
        let mut eff_sin = vec![0.0; n * n];
        for o in 0..orientations {
            let (cos, sin) = basis.rotated(2.0 * PI * o as f64 / orientations as f64);
            for j in 0..n {
                for i in 0..n {
                    eff_cos[j * n + i] += cos[j][i] / orientations as f64;
                    eff_sin[j * n + i] += sin[j][i] / orientations as f64;
                }
            }
        }
        let dims = vec![out, inp, p, p];
        Ok(FConvLayer {
            a: Param::zeros(format!("{id}.a"), dims.clone()),
            b: Param::zeros(format!("{id}.b"), dims),
            bias: Param::zeros(format!("{id}.bias"), vec![out]),
            out,
            inp,
            spec,
            orientations,
            basis,
            eff_cos,
            eff_sin,
        })
    }

    /// Coefficients fitted to He-normal discrete kernels.
    pub fn new(
        id: &str,
        basis: Arc<FourierBasis>,
        inp: usize,
        out: usize,
        spec: ConvSpec,
        orientations: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut layer = Self::zeros(id, basis, inp, out, spec, orientations)?;
        let n = layer.basis.p * layer.basis.p;
        let std = (2.0 / (inp * n) as f64).sqrt();
        for f in 0..out * inp {
            let target: Vec<f64> = (0..n).map(|_| std * rng.normal()).collect();
            layer.set_filter(f / inp, f % inp, &target)?;
        }
        Ok(layer)
    }

    /// Fits the `(o, i)` coefficients to a discrete kernel.
    pub fn set_filter(&mut self, o: usize, i: usize, target: &[f64]) -> Result<()> {
        let fit = fit_filter(&self.basis, target)?;
        let n = fit.a.len();
        let off = (o * self.inp + i) * n;
        self.a.value[off..off + n].copy_from_slice(&fit.a);
        self.b.value[off..off + n].copy_from_slice(&fit.b);
        Ok(())
    }

    pub fn filter(&self, o: usize, i: usize) -> FConvFilter {
        let n = self.basis.p * self.basis.p;
        let off = (o * self.inp + i) * n;
        FConvFilter {
            a: self.a.value[off..off + n].to_vec(),
            b: self.b.value[off..off + n].to_vec(),
        }
    }

    /// The discrete kernels `[out, in, p, p]` this layer convolves with.
    pub fn kernel(&self) -> Kernel {
        let p = self.basis.p;
        let n = p * p;
        let filters = self.out * self.inp;
        let mut data = vec![0.0; filters * n];
        gemm_nn(filters, n, n, &self.a.value, &self.eff_cos, &mut data);
        gemm_nn(filters, n, n, &self.b.value, &self.eff_sin, &mut data);
        Kernel {
            out: self.out,
            inp: self.inp,
            size: p,
            data,
        }
    }

    pub fn forward(&self, x: &Raster) -> Result<Raster> {
        let mut y = conv2d(x, &self.kernel(), self.spec)?;
        let n = y.shape().plane();
        for (o, &b) in self.bias.value.iter().enumerate() {
            y.data_mut()[o * n..(o + 1) * n]
                .iter_mut()
                .for_each(|v| *v += b);
        }
        Ok(y)
    }

    /// Accumulates coefficient gradients through the linear synthesis.
    pub fn backward(&mut self, x: &Raster, grad: &Raster) -> Result<Raster> {
        let (gx, gk) = conv2d_backward(x, &self.kernel(), self.spec, grad)?;
        let n = self.basis.p * self.basis.p;
        let filters = self.out * self.inp;
        gemm_nt(filters, n, n, &gk, &self.eff_cos, &mut self.a.grad);
        gemm_nt(filters, n, n, &gk, &self.eff_sin, &mut self.b.grad);
        let plane = grad.shape().plane();
        for o in 0..self.out {
            self.bias.grad[o] += grad.data()[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
        Ok(gx)
    }
}

/// `C[m×n] += A[m×k] · B[k×n]`, all row-major.
fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    // SAFETY: slices are exactly m×k, k×n and m×n row-major blocks.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C[m×k] += A[m×n] · B[k×n]ᵀ`.
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    // SAFETY: a is m×n, b is k×n, c is m×k, all row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            1.0,
            c.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

impl Parameterized for FConvLayer {
    fn params(&self) -> Vec<&Param> {
        vec![&self.a, &self.b, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.a, &mut self.b, &mut self.bias]
    }
}

/// Residual block of two F-conv layers, the second zero-initialised.
#[derive(Debug, Clone, PartialEq)]
pub struct FResBlock {
    pub conv1: FConvLayer,
    pub conv2: FConvLayer,
    pub act: Activation,
}

pub struct FResCache {
    pre: Raster,
    hidden: Raster,
}

impl FResBlock {
    pub fn new(
        id: &str,
        basis: Arc<FourierBasis>,
        width: usize,
        padding: Padding,
        orientations: usize,
        act: Activation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let spec = ConvSpec::same(basis.p, padding);
        Ok(FResBlock {
            conv1: FConvLayer::new(
                &format!("{id}.conv1"),
                basis.clone(),
                width,
                width,
                spec,
                orientations,
                rng,
            )?,
            conv2: FConvLayer::zeros(&format!("{id}.conv2"), basis, width, width, spec, orientations)?,
            act,
        })
    }

    pub fn forward(&self, x: &Raster) -> Result<(Raster, FResCache)> {
        let pre = self.conv1.forward(x)?;
        let hidden = self.act.forward(&pre);
        let mut y = self.conv2.forward(&hidden)?;
        y.add_assign(x)?;
        Ok((y, FResCache { pre, hidden }))
    }

    pub fn backward(&mut self, x: &Raster, cache: &FResCache, grad: &Raster) -> Result<Raster> {
        let gh = self.conv2.backward(&cache.hidden, grad)?;
        let gpre = self.act.backward(&cache.pre, &gh);
        let mut gx = self.conv1.backward(x, &gpre)?;
        gx.add_assign(grad)?;
        Ok(gx)
    }
}

impl Parameterized for FResBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v
    }
}

/// `‖L(rot x) − rot L(x)‖ / ‖L(x)‖` for a quarter-turn count.
pub fn rotation_error(
    forward: impl Fn(&Raster) -> Result<Raster>,
    x: &Raster,
    quarter_turns: usize,
) -> Result<f64> {
    let direct = forward(x)?;
    let lhs = forward(&x.rot90(quarter_turns))?;
    let rhs = direct.rot90(quarter_turns);
    Ok(lhs.dist_sq(&rhs)?.sqrt() / direct.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::check_param_grads;
    use proptest::prelude::*;

    fn basis(p: usize) -> FourierBasis {
        build_bases(p).unwrap()
    }

    #[test]
    fn zero_frequency_cos_is_the_mask_and_sin_vanishes() {
        for p in [3, 5, 7] {
            let b = basis(p);
            let c = p / 2;
            assert_eq!(b.centred(Trig::Cos, c, c), b.mask.as_slice());
            assert!(b.centred(Trig::Sin, c, c).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn even_size_rejected() {
        assert!(build_bases(4).is_err());
    }

    #[test]
    fn mask_vanishes_outside_support() {
        let b = basis(5);
        let rho = b.rho();
        assert_eq!(rho, 5.5);
        for (x, y) in [(5.5, 0.0), (4.0, 4.0), (-6.0, 1.0)] {
            assert_eq!(b.window(x, y), 0.0);
            for k in 0..5 {
                for l in 0..5 {
                    assert_eq!(b.eval(Trig::Cos, k, l, x, y), 0.0);
                    assert_eq!(b.eval_classic(Trig::Sin, k, l, x, y), 0.0);
                }
            }
        }
        assert!(b.mask.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn zero_coefficients_give_zero_kernel() {
        let b = basis(5);
        assert!(synthesize_filter(&b, &FConvFilter::zeros(5))
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn unit_zero_frequency_gives_mask() {
        let b = basis(5);
        let mut f = FConvFilter::zeros(5);
        f.a[2 * 5 + 2] = 1.0;
        assert_eq!(synthesize_filter(&b, &f), b.mask);
    }

    #[test]
    fn round_trip_fit_reconstructs_random_kernels() {
        let mut rng = SeededRng::new(31);
        for p in [3, 5, 7] {
            let b = basis(p);
            for _ in 0..10 {
                let target = rng.normal_vec(p * p);
                let fit = fit_filter(&b, &target).unwrap();
                let back = synthesize_filter(&b, &fit);
                let err = back
                    .iter()
                    .zip(&target)
                    .fold(0.0f64, |m, (a, t)| m.max((a - t).abs()));
                assert!(err < 1e-8, "p={p}: {err}");
            }
        }
    }

    #[test]
    fn rotation_by_zero_and_full_turn() {
        let mut rng = SeededRng::new(32);
        let b = basis(5);
        let f = fit_filter(&b, &rng.normal_vec(25)).unwrap();
        let k = synthesize_filter(&b, &f);
        assert_eq!(rotate_filter(&b, &f, 0.0), k);
        let full = rotate_filter(&b, &f, 2.0 * PI);
        assert!(full.iter().zip(&k).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn quarter_turn_matches_raster_rotation_and_hand_evaluation() {
        let b = basis(5);
        let mut f = FConvFilter::zeros(5);
        // single cos basis, frequencies (k−2, l−2) = (1, −2)
        f.a[3 * 5 + 0] = 1.0;
        let k = Raster::from_vec(1, 5, 5, synthesize_filter(&b, &f)).unwrap();
        let r = Raster::from_vec(1, 5, 5, rotate_filter(&b, &f, PI / 2.0)).unwrap();
        assert!(r.max_abs_diff(&k.rot90(1)).unwrap() < 1e-12);
        // rotated(x, y) = Ω·cos(ω(1·(−y) + (−2)·x)): the (k,l) pair permuted and re-signed
        let w = 2.0 * PI / 5.0;
        for row in 0..5 {
            for col in 0..5 {
                let (x, y) = (col as f64 - 2.0, row as f64 - 2.0);
                let expected = b.window(x, y) * (w * (-y) + (-2.0 * w) * x).cos();
                assert!((r.get(0, row, col) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_with_identity_coefficients_is_identity() {
        let b = Arc::new(basis(3));
        let mut layer =
            FConvLayer::zeros("f", b, 1, 1, ConvSpec::same(3, Padding::Zero), 1).unwrap();
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        layer.set_filter(0, 0, &delta).unwrap();
        let mut rng = SeededRng::new(33);
        let x = rng.normal_raster(1, 6, 6);
        assert!(layer.forward(&x).unwrap().max_abs_diff(&x).unwrap() < 1e-12);
        let zero =
            FConvLayer::zeros("z", layer.basis.clone(), 1, 1, ConvSpec::same(3, Padding::Zero), 1)
                .unwrap();
        assert!(zero.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_gradients_through_synthesis() {
        let mut rng = SeededRng::new(34);
        for orientations in [1, 4] {
            let b = Arc::new(basis(5));
            let layer = FConvLayer::new(
                "f",
                b,
                2,
                2,
                ConvSpec::same(5, Padding::Reflect),
                orientations,
                &mut rng,
            )
            .unwrap();
            let x = rng.normal_raster(2, 8, 8);
            let gy = rng.normal_raster(2, 8, 8);
            let loss = |l: &FConvLayer| l.forward(&x).unwrap().mul(&gy).unwrap().sum();
            let mut l = layer.clone();
            l.backward(&x, &gy).unwrap();
            check_param_grads(&l, &layer, loss, 1e-6);
        }
    }

    #[test]
    fn pooled_layer_commutes_with_quarter_turns() {
        let mut rng = SeededRng::new(35);
        let b = Arc::new(basis(5));
        let layer =
            FConvLayer::new("f", b, 1, 3, ConvSpec::same(5, Padding::Zero), 4, &mut rng).unwrap();
        let x = rng.normal_raster(1, 17, 17);
        for q in 1..4 {
            let err = rotation_error(|x| layer.forward(x), &x, q).unwrap();
            assert!(err < 1e-12, "{q}: {err}");
        }
    }

    #[test]
    fn interior_is_exactly_translation_equivariant() {
        let mut rng = SeededRng::new(36);
        let b = Arc::new(basis(5));
        let layer =
            FConvLayer::new("f", b, 1, 1, ConvSpec::same(5, Padding::Zero), 1, &mut rng).unwrap();
        let x = rng.normal_raster(1, 16, 16);
        let a = layer.forward(&x.shift(2, 3)).unwrap();
        let c = layer.forward(&x).unwrap().shift(2, 3);
        for y in 2 + 2..16 - 2 {
            for xx in 3 + 2..16 - 2 {
                assert_eq!(a.get(0, y, xx), c.get(0, y, xx));
            }
        }
    }

    proptest! {
        #[test]
        fn synthesis_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let b = basis(5);
            let mut rng = SeededRng::new(seed);
            let f = FConvFilter { a: rng.normal_vec(25), b: rng.normal_vec(25) };
            let g = FConvFilter { a: rng.normal_vec(25), b: rng.normal_vec(25) };
            let mix = FConvFilter {
                a: f.a.iter().zip(&g.a).map(|(x, y)| alpha * x + beta * y).collect(),
                b: f.b.iter().zip(&g.b).map(|(x, y)| alpha * x + beta * y).collect(),
            };
            let lhs = synthesize_filter(&b, &mix);
            let kf = synthesize_filter(&b, &f);
            let kg = synthesize_filter(&b, &g);
            for i in 0..25 {
                prop_assert!((lhs[i] - (alpha * kf[i] + beta * kg[i])).abs() < 1e-12);
            }
        }
    }
}
