//! 2-D convolution via im2col and `dgemm`, with its adjoint.

use serde::{Deserialize, Serialize};

use super::raster::{Raster, Shape};
use crate::error::{Error, Result};

/// How samples outside the image are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Zero,
    /// Half-sample symmetric: `… b a | a b c … | c b …`.
    Reflect,
}

impl Padding {
    /// Source index for a possibly out-of-range coordinate.
    #[inline]
    pub fn source(self, i: isize, n: usize) -> Option<usize> {
        if i >= 0 && (i as usize) < n {
            return Some(i as usize);
        }
        match self {
            Padding::Zero => None,
            Padding::Reflect => {
                let period = 2 * n as isize;
                let m = i.rem_euclid(period);
                Some(if m < n as isize {
                    m as usize
                } else {
                    (period - 1 - m) as usize
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvSpec {
    /// Stride 1, "same" padding for a `p×p` kernel.
    pub fn same(p: usize, padding: Padding) -> Self {
        ConvSpec {
            stride: 1,
            pad: p / 2,
            groups: 1,
            padding,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: 1,
            pad: 0,
            groups: 1,
            padding: Padding::Zero,
        }
    }
}

/// Weights `[out, in / groups, p, p]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub out: usize,
    pub inp: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn zeros(out: usize, inp: usize, size: usize) -> Self {
        Kernel {
            out,
            inp,
            size,
            data: vec![0.0; out * inp * size * size],
        }
    }

    pub fn from_vec(out: usize, inp: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out * inp * size * size {
            return Err(Error::invalid(format!(
                "kernel [{out},{inp},{size},{size}] needs {} weights, got {}",
                out * inp * size * size,
                data.len()
            )));
        }
        Ok(Kernel {
            out,
            inp,
            size,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, o: usize, i: usize, y: usize, x: usize) -> usize {
        ((o * self.inp + i) * self.size + y) * self.size + x
    }

    fn as_shape(&self) -> Shape {
        Shape::new(self.out, self.inp, self.size * self.size)
    }
}

struct Geometry {
    groups: usize,
    in_per_group: usize,
    out_per_group: usize,
    p: usize,
    out_h: usize,
    out_w: usize,
    /// `rows[oy * p + ky]` is the source row, if any.
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

impl Geometry {
    fn new(input: Shape, kernel: &Kernel, spec: ConvSpec) -> Result<Self> {
        let p = kernel.size;
        if p % 2 == 0 {
            return Err(Error::invalid(format!("kernel size {p} must be odd")));
        }
        if spec.stride == 0 || spec.groups == 0 {
            return Err(Error::invalid("stride and groups must be positive"));
        }
        let g = spec.groups;
        if input.channels != kernel.inp * g || kernel.out % g != 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input,
                right: kernel.as_shape(),
            });
        }
        let padded_h = input.height + 2 * spec.pad;
        let padded_w = input.width + 2 * spec.pad;
        if padded_h < p || padded_w < p {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input,
                right: kernel.as_shape(),
            });
        }
        let out_h = (padded_h - p) / spec.stride + 1;
        let out_w = (padded_w - p) / spec.stride + 1;
        let axis = |out: usize, n: usize| -> Vec<Option<usize>> {
            let mut m = Vec::with_capacity(out * p);
            for o in 0..out {
                for k in 0..p {
                    let i = (o * spec.stride + k) as isize - spec.pad as isize;
                    m.push(spec.padding.source(i, n));
                }
            }
            m
        };
        Ok(Geometry {
            groups: g,
            in_per_group: kernel.inp,
            out_per_group: kernel.out / g,
            p,
            out_h,
            out_w,
            rows: axis(out_h, input.height),
            cols: axis(out_w, input.width),
        })
    }

    fn k(&self) -> usize {
        self.in_per_group * self.p * self.p
    }

    fn n(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col(&self, input: &Raster, group: usize, col: &mut [f64]) {
        let (p, n) = (self.p, self.n());
        let w = input.width();
        for ci in 0..self.in_per_group {
            let plane = input.plane(group * self.in_per_group + ci);
            for ky in 0..p {
                for kx in 0..p {
                    let row = &mut col[((ci * p + ky) * p + kx) * n..][..n];
                    for oy in 0..self.out_h {
                        let sy = self.rows[oy * p + ky];
                        let dst = &mut row[oy * self.out_w..][..self.out_w];
                        match sy {
                            None => dst.fill(0.0),
                            Some(sy) => {
                                let src = &plane[sy * w..][..w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match self.cols[ox * p + kx] {
                                        Some(sx) => src[sx],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], group: usize, grad: &mut Raster) {
        let (p, n) = (self.p, self.n());
        let w = grad.width();
        for ci in 0..self.in_per_group {
            let plane = grad.plane_mut(group * self.in_per_group + ci);
            for ky in 0..p {
                for kx in 0..p {
                    let row = &col[((ci * p + ky) * p + kx) * n..][..n];
                    for oy in 0..self.out_h {
                        let Some(sy) = self.rows[oy * p + ky] else {
                            continue;
                        };
                        let src = &row[oy * self.out_w..][..self.out_w];
                        for (ox, &v) in src.iter().enumerate() {
                            if let Some(sx) = self.cols[ox * p + kx] {
                                plane[sy * w + sx] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `C[m×n] (+)= A[m×k] · B[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices that cover the strided m×k, k×n and m×n
    // extents; `c` is a contiguous row-major m×n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation of `input` with `kernel` (the deep-learning convention).
pub fn conv2d(input: &Raster, kernel: &Kernel, spec: ConvSpec) -> Result<Raster> {
    let geo = Geometry::new(input.shape(), kernel, spec)?;
    let (k, n, og) = (geo.k(), geo.n(), geo.out_per_group);
    let mut out = Raster::zeros(kernel.out, geo.out_h, geo.out_w).with_meta_of(input);
    let mut col = vec![0.0; k * n];
    for g in 0..geo.groups {
        geo.im2col(input, g, &mut col);
        let w = &kernel.data[g * og * k..][..og * k];
        let dst = &mut out.data_mut()[g * og * n..][..og * n];
        gemm(og, k, n, w, (k, 1), &col, (n, 1), 0.0, dst);
    }
    Ok(out)
}

/// Adjoint of [`conv2d`]: returns `(∂L/∂input, ∂L/∂kernel)`.
pub fn conv2d_backward(
    input: &Raster,
    kernel: &Kernel,
    spec: ConvSpec,
    grad_out: &Raster,
) -> Result<(Raster, Vec<f64>)> {
    let geo = Geometry::new(input.shape(), kernel, spec)?;
    let expected = Shape::new(kernel.out, geo.out_h, geo.out_w);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: grad_out.shape(),
            right: expected,
        });
    }
    let (k, n, og) = (geo.k(), geo.n(), geo.out_per_group);
    let mut grad_in = input.zeros_like();
    let mut grad_w = vec![0.0; kernel.data.len()];
    let mut col = vec![0.0; k * n];
    for g in 0..geo.groups {
        let dy = &grad_out.data()[g * og * n..][..og * n];
        geo.im2col(input, g, &mut col);
        // dW[og×k] = dY[og×n] · colᵀ[n×k]
        gemm(
            og,
            n,
            k,
            dy,
            (n, 1),
            &col,
            (1, n),
            0.0,
            &mut grad_w[g * og * k..][..og * k],
        );
        // dcol[k×n] = Wᵀ[k×og] · dY[og×n]
        let w = &kernel.data[g * og * k..][..og * k];
        gemm(k, og, n, w, (1, k), dy, (n, 1), 0.0, &mut col);
        geo.col2im(&col, g, &mut grad_in);
    }
    Ok((grad_in, grad_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    /// Direct quadruple loop, independent of im2col.
    fn naive(input: &Raster, k: &Kernel, s: ConvSpec) -> Raster {
        let p = k.size;
        let oh = (input.height() + 2 * s.pad - p) / s.stride + 1;
        let ow = (input.width() + 2 * s.pad - p) / s.stride + 1;
        let og = k.out / s.groups;
        Raster::from_fn(k.out, oh, ow, |o, y, x| {
            let g = o / og;
            let mut acc = 0.0;
            for ci in 0..k.inp {
                for ky in 0..p {
                    for kx in 0..p {
                        let iy = (y * s.stride + ky) as isize - s.pad as isize;
                        let ix = (x * s.stride + kx) as isize - s.pad as isize;
                        let (Some(sy), Some(sx)) = (
                            s.padding.source(iy, input.height()),
                            s.padding.source(ix, input.width()),
                        ) else {
                            continue;
                        };
                        acc += k.data[k.idx(o, ci, ky, kx)] * input.get(g * k.inp + ci, sy, sx);
                    }
                }
            }
            acc
        })
    }

    fn random(rng: &mut SeededRng, c: usize, h: usize, w: usize) -> Raster {
        rng.normal_raster(c, h, w)
    }

    fn random_kernel(rng: &mut SeededRng, o: usize, i: usize, p: usize) -> Kernel {
        Kernel::from_vec(o, i, p, (0..o * i * p * p).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = SeededRng::new(1);
        let x = random(&mut rng, 1, 5, 5);
        let mut k = Kernel::zeros(1, 1, 3);
        k.data[4] = 1.0;
        let y = conv2d(&x, &k, ConvSpec::same(3, Padding::Zero)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_constant_sums_nine() {
        let x = Raster::filled(1, 6, 6, 0.3);
        let k = Kernel::from_vec(1, 1, 3, vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &k, ConvSpec::default()).unwrap();
        assert_eq!((y.height(), y.width()), (4, 4));
        for &v in y.data() {
            assert!((v - 2.7).abs() < 1e-12);
        }
    }

    #[test]
    fn output_size_formula() {
        let x = Raster::zeros(2, 9, 7);
        let k = Kernel::zeros(3, 2, 3);
        for (stride, pad) in [(1, 0), (2, 1), (3, 2), (2, 0)] {
            let spec = ConvSpec {
                stride,
                pad,
                ..Default::default()
            };
            let y = conv2d(&x, &k, spec).unwrap();
            assert_eq!(y.height(), (9 + 2 * pad - 3) / stride + 1);
            assert_eq!(y.width(), (7 + 2 * pad - 3) / stride + 1);
        }
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = SeededRng::new(2);
        for &(padding, stride, groups) in &[
            (Padding::Zero, 1, 1),
            (Padding::Reflect, 1, 1),
            (Padding::Zero, 2, 2),
            (Padding::Reflect, 2, 4),
        ] {
            let x = random(&mut rng, 4, 7, 6);
            let k = random_kernel(&mut rng, 8, 4 / groups, 3);
            let spec = ConvSpec {
                stride,
                pad: 1,
                groups,
                padding,
            };
            let fast = conv2d(&x, &k, spec).unwrap();
            let slow = naive(&x, &k, spec);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
        }
    }

    #[test]
    fn reflect_handles_pad_wider_than_image() {
        let mut rng = SeededRng::new(3);
        let x = random(&mut rng, 1, 2, 2);
        let k = random_kernel(&mut rng, 1, 1, 7);
        let spec = ConvSpec::same(7, Padding::Reflect);
        let y = conv2d(&x, &k, spec).unwrap();
        assert!(y.max_abs_diff(&naive(&x, &k, spec)).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_channel_mismatch_naming_shapes() {
        let x = Raster::zeros(3, 5, 5);
        let k = Kernel::zeros(1, 2, 3);
        let err = conv2d(&x, &k, ConvSpec::default()).unwrap_err().to_string();
        assert!(err.contains("3×5×5"), "{err}");
        assert!(conv2d(&x, &Kernel::zeros(1, 3, 2), ConvSpec::default()).is_err());
    }

    #[test]
    fn linear_in_input() {
        let mut rng = SeededRng::new(4);
        let x = random(&mut rng, 2, 8, 8);
        let z = random(&mut rng, 2, 8, 8);
        let k = random_kernel(&mut rng, 3, 2, 3);
        let spec = ConvSpec::same(3, Padding::Reflect);
        let (a, b) = (0.7, -1.3);
        let lhs = conv2d(&x.scale(a).add(&z.scale(b)).unwrap(), &k, spec).unwrap();
        let rhs = conv2d(&x, &k, spec)
            .unwrap()
            .scale(a)
            .add(&conv2d(&z, &k, spec).unwrap().scale(b))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(5);
        for &(padding, stride, groups) in &[
            (Padding::Zero, 1, 1),
            (Padding::Reflect, 1, 2),
            (Padding::Reflect, 2, 1),
        ] {
            let x = random(&mut rng, 2, 8, 8);
            let mut k = random_kernel(&mut rng, 2, 2 / groups, 3);
            let spec = ConvSpec {
                stride,
                pad: 1,
                groups,
                padding,
            };
            let y = conv2d(&x, &k, spec).unwrap();
            let gy = random(&mut rng, y.channels(), y.height(), y.width());
            let loss = |x: &Raster, k: &Kernel| -> f64 {
                let y = conv2d(x, k, spec).unwrap();
                y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum()
            };
            let (gx, gk) = conv2d_backward(&x, &k, spec, &gy).unwrap();
            let h = 1e-5;
            for i in 0..k.data.len() {
                let orig = k.data[i];
                k.data[i] = orig + h;
                let lp = loss(&x, &k);
                k.data[i] = orig - h;
                let lm = loss(&x, &k);
                k.data[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!(rel_err(fd, gk[i]) < 1e-6, "kernel {i}: {fd} vs {}", gk[i]);
            }
            let mut xp = x.clone();
            for i in (0..x.len()).step_by(3) {
                let orig = xp.data()[i];
                xp.data_mut()[i] = orig + h;
                let lp = loss(&xp, &k);
                xp.data_mut()[i] = orig - h;
                let lm = loss(&xp, &k);
                xp.data_mut()[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!(rel_err(fd, gx.data()[i]) < 1e-6, "input {i}");
            }
        }
    }
}
