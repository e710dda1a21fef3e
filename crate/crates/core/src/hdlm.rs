//! High-frequency detail learning: two small branches split PAN into a
//! detail map (HLB) and a multispectral low-frequency estimate (LLB).
//! The trained HLB output is the `P^h` condition for the diffusion fuser.

use serde::{Deserialize, Serialize};

use crate::degradation::GaussSpec;
use crate::error::{Error, Result};
use crate::numerics::{
    blur, gaussian_kernel, Activation, AdamW, AdamWConfig, Conv2d, ConvSpec, Padding, Param, Parameterized,
    Raster, ResBlock, ResCache, SeededRng,
};

/// Additive low/high split of PAN.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqPrior {
    pub low: Raster,
    pub high: Raster,
    pub lowpass: GaussSpec,
}

pub const DEFAULT_LOWPASS: GaussSpec = GaussSpec {
    size: 9,
    sigma: 2.0,
};

pub fn highpass_prior(pan: &Raster, lowpass: GaussSpec) -> Result<FreqPrior> {
    if pan.channels() != 1 {
        return Err(Error::invalid(format!(
            "PAN must be single-channel, got {}",
            pan.shape()
        )));
    }
    let low = blur(pan, &gaussian_kernel(lowpass.size, lowpass.sigma)?, Padding::Reflect)?;
    let high = pan.sub(&low)?;
    Ok(FreqPrior { low, high, lowpass })
}

/// 3×3 head, residual trunk, 3×3 tail; the tail starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub head: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub tail: Conv2d,
}

pub struct BranchTrace {
    inputs: Vec<Raster>,
    caches: Vec<ResCache>,
}

impl Branch {
    pub fn new(id: &str, inp: usize, out: usize, width: usize, blocks: usize, rng: &mut SeededRng) -> Self {
        let pad = Padding::Reflect;
        Branch {
            head: Conv2d::same(&format!("{id}.head"), inp, width, 3, pad, rng),
            blocks: (0..blocks)
                .map(|b| ResBlock::new(&format!("{id}.block{b}"), width, pad, Activation::Gelu, rng))
                .collect(),
            tail: Conv2d::zeros(&format!("{id}.tail"), width, out, 3, ConvSpec::same(3, pad)),
        }
    }

    pub fn forward(&self, x: &Raster) -> Result<Raster> {
        Ok(self.trace(x)?.0)
    }

    pub fn trace(&self, x: &Raster) -> Result<(Raster, BranchTrace)> {
        let mut inputs = Vec::with_capacity(self.blocks.len() + 1);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = self.head.forward(x)?;
        for b in &self.blocks {
            let (next, cache) = b.forward(&h)?;
            inputs.push(h);
            caches.push(cache);
            h = next;
        }
        let out = self.tail.forward(&h)?;
        inputs.push(h);
        Ok((out, BranchTrace { inputs, caches }))
    }

    pub fn backward(&mut self, x: &Raster, t: &BranchTrace, grad: &Raster) -> Result<()> {
        let n = self.blocks.len();
        let mut g = self.tail.backward(&t.inputs[n], grad)?;
        for i in (0..n).rev() {
            g = self.blocks[i].backward(&t.inputs[i], &t.caches[i], &g)?;
        }
        self.head.backward(x, &g)?;
        Ok(())
    }
}

impl Parameterized for Branch {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.head.params();
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.tail.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.head.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.tail.params_mut());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HdlmConfig {
    pub width: usize,
    pub blocks: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lowpass: GaussSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for HdlmConfig {
    fn default() -> Self {
        HdlmConfig {
            width: 16,
            blocks: 4,
            lambda1: 1.0,
            lambda2: 1.0,
            lowpass: DEFAULT_LOWPASS,
            epochs: 20,
            batch_size: 4,
            lr: 3e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hdlm {
    pub hlb: Branch,
    pub llb: Branch,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lowpass: GaussSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HdlmLosses {
    pub hlb: f64,
    pub llb: f64,
    pub global: f64,
    pub total: f64,
}

impl HdlmLosses {
    fn accumulate(&mut self, o: &HdlmLosses, w: f64) {
        self.hlb += w * o.hlb;
        self.llb += w * o.llb;
        self.global += w * o.global;
        self.total += w * o.total;
    }
}

impl Hdlm {
    pub fn new(bands: usize, cfg: &HdlmConfig, rng: &mut SeededRng) -> Self {
        Hdlm {
            hlb: Branch::new("hdlm.hlb", 1, 1, cfg.width, cfg.blocks, rng),
            llb: Branch::new("hdlm.llb", 1, bands, cfg.width, cfg.blocks, rng),
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            lowpass: cfg.lowpass,
        }
    }

    pub fn bands(&self) -> usize {
        self.llb.tail.out
    }

    fn check(&self, pan: &Raster, ims: &Raster) -> Result<()> {
        if ims.channels() != self.bands() {
            return Err(Error::invalid(format!(
                "LLB produces {} bands but IMS has {}",
                self.bands(),
                ims.channels()
            )));
        }
        pan.ensure_spatial(ims, "hdlm")
    }

    /// Residuals of the three terms for one sample.
    fn residuals(&self, h: &Raster, l: &Raster, pan: &Raster, ims: &Raster, prior: &FreqPrior) -> Result<[Raster; 3]> {
        Ok([
            h.sub(&prior.high)?,
            l.sub(ims)?,
            h.add(&l.spectral_mean())?.sub(pan)?,
        ])
    }

    fn combine(&self, r: &[Raster; 3]) -> HdlmLosses {
        let (hlb, llb, global) = (r[0].sum_sq(), r[1].sum_sq(), r[2].sum_sq());
        HdlmLosses {
            hlb,
            llb,
            global,
            total: hlb + self.lambda1 * llb + self.lambda2 * global,
        }
    }

    /// Per-sample losses and accumulated gradients.
    pub fn loss_and_grad(&mut self, pan: &Raster, ims: &Raster, prior: &FreqPrior) -> Result<HdlmLosses> {
        self.check(pan, ims)?;
        let (h, ht) = self.hlb.trace(pan)?;
        let (l, lt) = self.llb.trace(pan)?;
        let r = self.residuals(&h, &l, pan, ims, prior)?;
        let losses = self.combine(&r);
        let g_global = r[2].scale(2.0 * self.lambda2);
        let gh = r[0].scale(2.0).add(&g_global)?;
        let c = l.channels();
        let mut gl = r[1].scale(2.0 * self.lambda1);
        for b in 0..c {
            for (g, v) in gl.plane_mut(b).iter_mut().zip(g_global.data()) {
                *g += v / c as f64;
            }
        }
        self.hlb.backward(pan, &ht, &gh)?;
        self.llb.backward(pan, &lt, &gl)?;
        Ok(losses)
    }
}

impl Parameterized for Hdlm {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.hlb.params();
        v.extend(self.llb.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.hlb.params_mut();
        v.extend(self.llb.params_mut());
        v
    }
}

/// The three terms and their weighted total for one sample.
pub fn hdlm_losses(model: &Hdlm, pan: &Raster, ims: &Raster, prior: &FreqPrior) -> Result<HdlmLosses> {
    model.check(pan, ims)?;
    let h = model.hlb.forward(pan)?;
    let l = model.llb.forward(pan)?;
    Ok(model.combine(&model.residuals(&h, &l, pan, ims, prior)?))
}

/// Mean losses over a set of (PAN, IMS) pairs.
pub fn mean_losses(model: &Hdlm, pans: &[Raster], imss: &[Raster]) -> Result<HdlmLosses> {
    let mut acc = HdlmLosses::default();
    let w = 1.0 / pans.len() as f64;
    for (p, i) in pans.iter().zip(imss) {
        let prior = highpass_prior(p, model.lowpass)?;
        acc.accumulate(&hdlm_losses(model, p, i, &prior)?, w);
    }
    Ok(acc)
}

/// AdamW on the total loss; returns the mean losses before training and
/// after every epoch.
pub fn train_hdlm(
    model: &mut Hdlm,
    pans: &[Raster],
    imss: &[Raster],
    cfg: &HdlmConfig,
    rng: &mut SeededRng,
) -> Result<Vec<HdlmLosses>> {
    if pans.is_empty() {
        return Err(Error::invalid("HDLM needs at least one training pair"));
    }
    if pans.len() != imss.len() {
        return Err(Error::invalid(format!(
            "{} PAN images vs {} IMS images",
            pans.len(),
            imss.len()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let priors = pans
        .iter()
        .map(|p| highpass_prior(p, model.lowpass))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        model,
    );
    model.zero_grad();
    let mut curve = vec![mean_losses(model, pans, imss)?];
    for epoch in 0..cfg.epochs {
        for batch in rng.permutation(pans.len()).chunks(cfg.batch_size) {
            for &i in batch {
                let l = model.loss_and_grad(&pans[i], &imss[i], &priors[i])?;
                if !l.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        stage: "HDLM",
                        epoch,
                    });
                }
            }
            model.scale_grads(1.0 / batch.len() as f64);
            opt.step(model)?;
        }
        let l = mean_losses(model, pans, imss)?;
        if !l.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "HDLM",
                epoch,
            });
        }
        curve.push(l);
    }
    Ok(curve)
}

/// `P^h = HLB(PAN)`.
pub fn extract_ph(model: &Hdlm, pan: &Raster) -> Result<Raster> {
    if pan.channels() != 1 {
        return Err(Error::invalid(format!(
            "PAN must be single-channel, got {}",
            pan.shape()
        )));
    }
    model.hlb.forward(pan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{bilinear_upsample, Align};
    use crate::scene::{generate_set, SceneSpec};
    use crate::testing::check_param_grads;

    fn tiny(rng: &mut SeededRng) -> Hdlm {
        let cfg = HdlmConfig {
            width: 4,
            blocks: 1,
            lambda1: 0.7,
            lambda2: 1.3,
            ..Default::default()
        };
        let mut m = Hdlm::new(3, &cfg, rng);
        for p in m.params_mut() {
            if p.id.contains("conv2") {
                p.value.iter_mut().for_each(|w| *w = 0.1 * rng.normal());
            }
        }
        m
    }

    #[test]
    fn prior_split_is_exact() {
        let mut rng = SeededRng::new(1);
        let pan = rng.normal_raster(1, 12, 12);
        let p = highpass_prior(&pan, DEFAULT_LOWPASS).unwrap();
        assert!(p.low.add(&p.high).unwrap().max_abs_diff(&pan).unwrap() < 1e-15);
        let c = highpass_prior(&Raster::filled(1, 8, 8, 0.3), DEFAULT_LOWPASS).unwrap();
        assert!(c.high.max_abs() < 1e-15);
    }

    #[test]
    fn impulse_highpass_is_delta_minus_kernel() {
        let mut pan = Raster::zeros(1, 21, 21);
        pan.set(0, 10, 10, 1.0);
        let p = highpass_prior(&pan, DEFAULT_LOWPASS).unwrap();
        let k = gaussian_kernel(9, 2.0).unwrap();
        for dy in 0..9 {
            for dx in 0..9 {
                let want = if (dy, dx) == (4, 4) { 1.0 } else { 0.0 } - k.get(dy, dx);
                assert!((p.high.get(0, 6 + dy, 6 + dx) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn total_is_weighted_sum_of_independent_terms() {
        let mut rng = SeededRng::new(2);
        let m = tiny(&mut rng);
        let pan = rng.normal_raster(1, 6, 6);
        let ims = rng.normal_raster(3, 6, 6);
        let prior = highpass_prior(&pan, m.lowpass).unwrap();
        let l = hdlm_losses(&m, &pan, &ims, &prior).unwrap();
        let h = m.hlb.forward(&pan).unwrap();
        let lo = m.llb.forward(&pan).unwrap();
        let (mut a, mut b, mut g) = (0.0, 0.0, 0.0);
        for y in 0..6 {
            for x in 0..6 {
                a += (h.get(0, y, x) - prior.high.get(0, y, x)).powi(2);
                let mut s = 0.0;
                for c in 0..3 {
                    b += (lo.get(c, y, x) - ims.get(c, y, x)).powi(2);
                    s += lo.get(c, y, x);
                }
                g += (h.get(0, y, x) + s / 3.0 - pan.get(0, y, x)).powi(2);
            }
        }
        assert!((l.hlb - a).abs() < 1e-12);
        assert!((l.llb - b).abs() < 1e-12);
        assert!((l.global - g).abs() < 1e-12);
        assert!((l.total - (a + 0.7 * b + 1.3 * g)).abs() < 1e-12);
        let mut z = m.clone();
        z.lambda1 = 0.0;
        z.lambda2 = 0.0;
        let lz = hdlm_losses(&z, &pan, &ims, &prior).unwrap();
        assert_eq!(lz.total, lz.hlb);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(3);
        let m = tiny(&mut rng);
        let pan = rng.normal_raster(1, 5, 5);
        let ims = rng.normal_raster(3, 5, 5);
        let prior = highpass_prior(&pan, m.lowpass).unwrap();
        let mut g = m.clone();
        g.loss_and_grad(&pan, &ims, &prior).unwrap();
        let loss = |n: &Hdlm| hdlm_losses(n, &pan, &ims, &prior).unwrap().total;
        check_param_grads(&g, &m, loss, 1e-6);
    }

    #[test]
    fn band_mismatch_and_empty_data_rejected() {
        let mut rng = SeededRng::new(4);
        let mut m = tiny(&mut rng);
        let pan = Raster::zeros(1, 4, 4);
        let prior = highpass_prior(&pan, m.lowpass).unwrap();
        assert!(hdlm_losses(&m, &pan, &Raster::zeros(4, 4, 4), &prior).is_err());
        assert!(train_hdlm(&mut m, &[], &[], &HdlmConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn training_decreases_loss_and_separates_edges() {
        let spec = SceneSpec {
            height: 32,
            width: 32,
            ..Default::default()
        };
        let scenes = generate_set(&spec, 4, 5).unwrap();
        let pans: Vec<_> = scenes.iter().map(|s| s.pan.clone()).collect();
        let imss: Vec<_> = scenes
            .iter()
            .map(|s| bilinear_upsample(&s.lrms, 4, Align::Centers).unwrap())
            .collect();
        let cfg = HdlmConfig {
            width: 8,
            blocks: 2,
            epochs: 5,
            batch_size: 2,
            ..Default::default()
        };
        let mut rng = SeededRng::new(5);
        let mut m = Hdlm::new(4, &cfg, &mut rng);
        let curve = train_hdlm(&mut m, &pans, &imss, &cfg, &mut rng).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].total < w[0].total, "{curve:?}");
        }
        let again = extract_ph(&m, &pans[0]).unwrap();
        assert_eq!(again, extract_ph(&m, &pans[0]).unwrap());
    }
}
