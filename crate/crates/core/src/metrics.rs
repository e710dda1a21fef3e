//! Fusion quality metrics. Exact definitions are pinned in `METRICS.md`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{blur, gaussian_kernel, laplacian, Kernel2d, Padding, Raster};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const Q_BLOCK: usize = 32;

/// `10·log10(peak²/MSE)`; `+∞` when the images are identical.
pub fn psnr(x: &Raster, y: &Raster, peak: f64) -> Result<f64> {
    x.ensure_shape(y, "psnr")?;
    let mse = x.dist_sq(y)? / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Valid-mode weighted local moments of one plane.
fn local_mean(plane: &[f64], h: usize, w: usize, k: &Kernel2d) -> Vec<f64> {
    let p = k.size;
    let (oh, ow) = (h + 1 - p, w + 1 - p);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for dy in 0..p {
                let row = &plane[(y + dy) * w + x..][..p];
                for dx in 0..p {
                    s += k.get(dy, dx) * row[dx];
                }
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean SSIM with an 11×11 Gaussian (σ = 1.5) window over valid
/// positions, averaged over bands. Smaller images shrink the window to the
/// largest odd size that fits.
pub fn ssim(x: &Raster, y: &Raster, peak: f64) -> Result<f64> {
    x.ensure_shape(y, "ssim")?;
    let (h, w) = (x.height(), x.width());
    let mut p = SSIM_WINDOW.min(h).min(w);
    if p % 2 == 0 {
        p -= 1;
    }
    if p == 0 {
        return Err(Error::invalid("ssim of an empty image"));
    }
    let k = gaussian_kernel(p, SSIM_SIGMA)?;
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mut total = 0.0;
    for c in 0..x.channels() {
        let (a, b) = (x.plane(c), y.plane(c));
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(s, t)| s * t).collect::<Vec<_>>();
        let mu_a = local_mean(a, h, w, &k);
        let mu_b = local_mean(b, h, w, &k);
        let aa = local_mean(&prod(a, a), h, w, &k);
        let bb = local_mean(&prod(b, b), h, w, &k);
        let ab = local_mean(&prod(a, b), h, w, &k);
        let mut s = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += s / mu_a.len() as f64;
    }
    Ok(total / x.channels() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sam {
    /// Mean spectral angle in degrees over the counted pixels.
    pub degrees: f64,
    /// Pixels where either spectrum is the zero vector.
    pub skipped: usize,
}

pub fn sam(x: &Raster, y: &Raster) -> Result<Sam> {
    x.ensure_shape(y, "sam")?;
    let n = x.height() * x.width();
    let (mut sum, mut counted) = (0.0, 0usize);
    let c = x.channels();
    let (mut u, mut v) = (vec![0.0; c], vec![0.0; c]);
    for i in 0..n {
        for b in 0..c {
            u[b] = x.plane(b)[i];
            v[b] = y.plane(b)[i];
        }
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            continue;
        }
        // 2·atan2(|û − v̂|, |û + v̂|) stays accurate near 0° and 180°.
        let (mut d, mut s) = (0.0, 0.0);
        for b in 0..c {
            let (p, q) = (u[b] / nu, v[b] / nv);
            d += (p - q) * (p - q);
            s += (p + q) * (p + q);
        }
        sum += 2.0 * d.sqrt().atan2(s.sqrt());
        counted += 1;
    }
    let degrees = if counted == 0 {
        0.0
    } else {
        (sum / counted as f64).to_degrees()
    };
    Ok(Sam {
        degrees,
        skipped: n - counted,
    })
}

/// `(100/r)·√(mean_b RMSE_b² / μ_b²)` with `μ_b` the reference band mean.
pub fn ergas(fused: &Raster, reference: &Raster, r: usize) -> Result<f64> {
    fused.ensure_shape(reference, "ergas")?;
    let n = (fused.height() * fused.width()) as f64;
    let mut acc = 0.0;
    for c in 0..fused.channels() {
        let mse: f64 = fused
            .plane(c)
            .iter()
            .zip(reference.plane(c))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n;
        let mu = reference.channel_mean(c);
        if mu == 0.0 {
            return Err(Error::invalid(format!("ERGAS: reference band {c} has zero mean")));
        }
        acc += mse / (mu * mu);
    }
    Ok(100.0 / r as f64 * (acc / fused.channels() as f64).sqrt())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 && vb == 0.0 {
        return 1.0;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Band-averaged correlation of Laplacian-filtered images.
pub fn scc(fused: &Raster, reference: &Raster) -> Result<f64> {
    fused.ensure_shape(reference, "scc")?;
    let lap = laplacian();
    let hf = blur(fused, &lap, Padding::Reflect)?;
    let hr = blur(reference, &lap, Padding::Reflect)?;
    let total: f64 = (0..fused.channels())
        .map(|c| pearson(hf.plane(c), hr.plane(c)))
        .sum();
    Ok(total / fused.channels() as f64)
}

/// Universal image quality index of two equally sized samples.
pub fn q_index(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let (cov, va, vb) = (cov / n, va / n, vb / n);
    let den = (va + vb) * (ma * ma + mb * mb);
    if den == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    4.0 * cov * ma * mb / den
}

/// Mean Q over non-overlapping `block×block` tiles (clipped to the image,
/// trailing partial tiles dropped).
pub fn q_blocks(x: &Raster, cx: usize, y: &Raster, cy: usize, block: usize) -> Result<f64> {
    x.ensure_spatial(y, "q_blocks")?;
    let (h, w) = (x.height(), x.width());
    let b = block.min(h).min(w).max(1);
    let (a, bb) = (x.plane(cx), y.plane(cy));
    let mut total = 0.0;
    let mut count = 0;
    let mut ta = Vec::with_capacity(b * b);
    let mut tb = Vec::with_capacity(b * b);
    for by in 0..h / b {
        for bx in 0..w / b {
            ta.clear();
            tb.clear();
            for yy in by * b..(by + 1) * b {
                ta.extend_from_slice(&a[yy * w + bx * b..][..b]);
                tb.extend_from_slice(&bb[yy * w + bx * b..][..b]);
            }
            total += q_index(&ta, &tb);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoReference {
    pub d_lambda: f64,
    pub d_s: f64,
    pub hqnr: f64,
}

/// `(1 − Dλ)(1 − Ds)`.
pub fn hqnr(d_lambda: f64, d_s: f64) -> f64 {
    (1.0 - d_lambda) * (1.0 - d_s)
}

/// Spectral and spatial distortion against the low-resolution inputs.
/// `pan_lr` is PAN degraded by the same operator used to build training
/// data. Q tiles are `Q_BLOCK` at full resolution and `Q_BLOCK / r` at
/// MS resolution so both cover the same ground area.
pub fn no_reference(fused: &Raster, ms: &Raster, pan: &Raster, pan_lr: &Raster, r: usize) -> Result<NoReference> {
    if fused.height() != r * ms.height() || fused.width() != r * ms.width() || fused.channels() != ms.channels() {
        return Err(Error::invalid(format!(
            "fused {} is not {r}× MS {}",
            fused.shape(),
            ms.shape()
        )));
    }
    fused.ensure_spatial(pan, "no_reference")?;
    ms.ensure_spatial(pan_lr, "no_reference")?;
    let c = fused.channels();
    let (bf, bm) = (Q_BLOCK, (Q_BLOCK / r).max(1));
    let mut dl = 0.0;
    if c > 1 {
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    dl += (q_blocks(fused, i, fused, j, bf)? - q_blocks(ms, i, ms, j, bm)?).abs();
                }
            }
        }
        dl /= (c * (c - 1)) as f64;
    }
    let mut ds = 0.0;
    for b in 0..c {
        ds += (q_blocks(fused, b, pan, 0, bf)? - q_blocks(ms, b, pan_lr, 0, bm)?).abs();
    }
    ds /= c as f64;
    let (d_lambda, d_s) = (dl.clamp(0.0, 1.0), ds.clamp(0.0, 1.0));
    Ok(NoReference {
        d_lambda,
        d_s,
        hqnr: hqnr(d_lambda, d_s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reduced {
    pub psnr: f64,
    pub ssim: f64,
    pub sam: f64,
    pub ergas: f64,
    pub scc: f64,
}

pub fn reduced(fused: &Raster, reference: &Raster, r: usize) -> Result<Reduced> {
    let peak = reference.value_range.peak();
    Ok(Reduced {
        psnr: psnr(fused, reference, peak)?,
        ssim: ssim(fused, reference, peak)?,
        sam: sam(fused, reference)?.degrees,
        ergas: ergas(fused, reference, r)?,
        scc: scc(fused, reference)?,
    })
}

impl Reduced {
    pub const HEADER: &'static str = "psnr,ssim,sam,ergas,scc";

    pub fn csv(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.psnr, self.ssim, self.sam, self.ergas, self.scc
        )
    }

    /// Field-wise mean.
    pub fn mean(rows: &[Reduced]) -> Reduced {
        let n = rows.len() as f64;
        let f = |g: fn(&Reduced) -> f64| rows.iter().map(g).sum::<f64>() / n;
        Reduced {
            psnr: f(|r| r.psnr),
            ssim: f(|r| r.ssim),
            sam: f(|r| r.sam),
            ergas: f(|r| r.ergas),
            scc: f(|r| r.scc),
        }
    }
}

impl NoReference {
    pub const HEADER: &'static str = "d_lambda,d_s,hqnr";

    pub fn csv(&self) -> String {
        format!("{:.6},{:.6},{:.6}", self.d_lambda, self.d_s, self.hqnr)
    }

    pub fn mean(rows: &[NoReference]) -> NoReference {
        let n = rows.len() as f64;
        let d_lambda = rows.iter().map(|r| r.d_lambda).sum::<f64>() / n;
        let d_s = rows.iter().map(|r| r.d_s).sum::<f64>() / n;
        NoReference {
            d_lambda,
            d_s,
            hqnr: rows.iter().map(|r| r.hqnr).sum::<f64>() / n,
        }
    }
}
