//! Encoder–decoder x0-predictor conditioned on (PAN, IMS, P^h) and time.

use serde::{Deserialize, Serialize};

use super::blocks::{time_embedding, Block, BlockCache, Level};
use crate::error::{Error, Result};
use crate::numerics::{
    downsample, nearest_upsample, nearest_upsample_backward, Conv2d, ConvSpec, DownsampleMode,
    Padding, Param, Parameterized, Raster, SeededRng,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    /// Channel width of each stage; the first is the base width.
    pub widths: Vec<usize>,
    pub cfb: bool,
    pub bamb: bool,
    pub temb_dim: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            widths: vec![32, 64, 128, 128],
            cfb: true,
            bamb: true,
            temb_dim: 32,
        }
    }
}

impl PredictorConfig {
    pub fn desk() -> Self {
        PredictorConfig {
            widths: vec![16, 32],
            ..Default::default()
        }
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// Without either block the conditions are stacked onto the input.
    pub fn concat_input(&self) -> bool {
        !(self.cfb || self.bamb)
    }

    pub fn validate(&self, bands: usize) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Config("predictor needs at least one stage".into()));
        }
        if self.temb_dim == 0 || self.temb_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding size {} must be even and positive",
                self.temb_dim
            )));
        }
        if self.bamb {
            if let Some(w) = self.widths.iter().find(|&&w| w % bands != 0) {
                return Err(Error::Config(format!(
                    "stage width {w} is not divisible by the {bands} MS bands"
                )));
            }
        }
        Ok(())
    }
}

/// Conditions with their per-stage area-downsampled pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub levels: Vec<Level>,
}

impl Condition {
    pub fn new(pan: &Raster, ims: &Raster, ph: &Raster, stages: usize) -> Result<Self> {
        let mut levels = vec![Level::new(pan.clone(), ims.clone(), ph.clone())?];
        for s in 1..stages {
            let prev = &levels[s - 1];
            if prev.pan.height() % 2 != 0 || prev.pan.width() % 2 != 0 {
                return Err(Error::invalid(format!(
                    "{}×{} cannot be halved {} times",
                    pan.height(),
                    pan.width(),
                    stages - 1
                )));
            }
            let d = |r: &Raster| downsample(r, 2, DownsampleMode::Area);
            levels.push(Level::new(d(&prev.pan)?, d(&prev.ims)?, d(&prev.ph)?)?);
        }
        Ok(Condition { levels })
    }

    /// Applies the same dihedral transform to every level.
    pub fn dihedral(&self, k: usize, flip: bool) -> Result<Self> {
        let levels = self
            .levels
            .iter()
            .map(|l| {
                Level::new(
                    l.pan.dihedral(k, flip),
                    l.ims.dihedral(k, flip),
                    l.ph.dihedral(k, flip),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Condition { levels })
    }

    pub fn base(&self) -> &Level {
        &self.levels[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub bands: usize,
    pub head: Conv2d,
    pub enc: Vec<Block>,
    /// `down[s]` takes stage `s` to `s+1` with a stride-2 conv.
    pub down: Vec<Conv2d>,
    pub dec: Vec<Block>,
    /// `up[s]` maps stage `s+1` features to stage `s` width before ×2 nearest.
    pub up: Vec<Conv2d>,
    /// `fuse[s]` merges the upsampled path with the stage-`s` skip.
    pub fuse: Vec<Conv2d>,
    pub out: Conv2d,
}

pub struct Trace {
    temb: Vec<f64>,
    x_in: Raster,
    enc_in: Vec<Raster>,
    enc_out: Vec<Raster>,
    enc_cache: Vec<BlockCache>,
    dec_in: Vec<Option<Raster>>,
    dec_out: Vec<Option<Raster>>,
    dec_cache: Vec<Option<BlockCache>>,
    cats: Vec<Option<Raster>>,
}

fn finite(r: &Raster, stage: &str, block: usize) -> Result<()> {
    if r.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation {
            stage: stage.to_string(),
            block,
        })
    }
}

impl Predictor {
    pub fn new(config: PredictorConfig, bands: usize, rng: &mut SeededRng) -> Result<Self> {
        config.validate(bands)?;
        let pad = Padding::Reflect;
        let w = &config.widths;
        let s = w.len();
        let cin = if config.concat_input() {
            2 * bands + 2
        } else {
            bands
        };
        let block = |id: String, width: usize, rng: &mut SeededRng| {
            Block::new(&id, width, bands, config.temb_dim, config.cfb, config.bamb, rng)
        };
        let head = Conv2d::uniform("head", cin, w[0], 3, ConvSpec::same(3, pad), rng);
        let mut enc = Vec::with_capacity(s);
        let mut down = Vec::with_capacity(s - 1);
        for i in 0..s {
            if i > 0 {
                down.push(Conv2d::uniform(
                    &format!("down{}", i - 1),
                    w[i - 1],
                    w[i],
                    3,
                    ConvSpec::same(3, pad).with_stride(2),
                    rng,
                ));
            }
            enc.push(block(format!("enc{i}"), w[i], rng)?);
        }
        let mut dec = Vec::with_capacity(s);
        let mut up = Vec::with_capacity(s - 1);
        let mut fuse = Vec::with_capacity(s - 1);
        for i in 0..s {
            dec.push(block(format!("dec{i}"), w[i], rng)?);
            if i + 1 < s {
                up.push(Conv2d::uniform(
                    &format!("up{i}"),
                    w[i + 1],
                    w[i],
                    1,
                    ConvSpec::same(1, pad),
                    rng,
                ));
                fuse.push(Conv2d::uniform(
                    &format!("fuse{i}"),
                    2 * w[i],
                    w[i],
                    1,
                    ConvSpec::same(1, pad),
                    rng,
                ));
            }
        }
        let out = Conv2d::uniform("out", w[0], bands, 3, ConvSpec::same(3, pad), rng);
        Ok(Predictor {
            config,
            bands,
            head,
            enc,
            down,
            dec,
            up,
            fuse,
            out,
        })
    }

    pub fn stages(&self) -> usize {
        self.config.stages()
    }

    pub fn forward(&self, xt: &Raster, t: usize, cond: &Condition) -> Result<Raster> {
        Ok(self.trace(xt, t, cond)?.0)
    }

    pub fn trace(&self, xt: &Raster, t: usize, cond: &Condition) -> Result<(Raster, Trace)> {
        let s = self.stages();
        if cond.levels.len() != s {
            return Err(Error::invalid(format!(
                "condition has {} levels, predictor {s} stages",
                cond.levels.len()
            )));
        }
        if xt.channels() != self.bands {
            return Err(Error::invalid(format!(
                "predictor expects {} bands, got {}",
                self.bands,
                xt.shape()
            )));
        }
        xt.ensure_spatial(&cond.base().pan, "predictor")?;
        let temb = time_embedding(t, self.config.temb_dim);
        let base = cond.base();
        let x_in = if self.config.concat_input() {
            Raster::concat(&[xt, &base.pan, &base.ims, &base.ph])?
        } else {
            xt.clone()
        };
        let mut enc_in = Vec::with_capacity(s);
        let mut enc_out: Vec<Raster> = Vec::with_capacity(s);
        let mut enc_cache = Vec::with_capacity(s);
        for i in 0..s {
            let input = if i == 0 {
                self.head.forward(&x_in)?
            } else {
                self.down[i - 1].forward(&enc_out[i - 1])?
            };
            let (y, cache) = self.enc[i].forward(&input, &cond.levels[i], &temb)?;
            finite(&y, "encoder", i)?;
            enc_in.push(input);
            enc_out.push(y);
            enc_cache.push(cache);
        }
        let mut dec_in = vec![None; s];
        let mut dec_out: Vec<Option<Raster>> = vec![None; s];
        let mut dec_cache: Vec<Option<BlockCache>> = (0..s).map(|_| None).collect();
        let mut cats = vec![None; s];
        for i in (0..s).rev() {
            let input = if i + 1 == s {
                enc_out[i].clone()
            } else {
                let below = dec_out[i + 1].as_ref().expect("computed");
                let u = nearest_upsample(&self.up[i].forward(below)?, 2);
                let cat = Raster::concat(&[&u, &enc_out[i]])?;
                let fused = self.fuse[i].forward(&cat)?;
                cats[i] = Some(cat);
                fused
            };
            let (y, cache) = self.dec[i].forward(&input, &cond.levels[i], &temb)?;
            finite(&y, "decoder", i)?;
            dec_in[i] = Some(input);
            dec_out[i] = Some(y);
            dec_cache[i] = Some(cache);
        }
        let y = self.out.forward(dec_out[0].as_ref().expect("computed"))?;
        finite(&y, "output", 0)?;
        Ok((
            y,
            Trace {
                temb,
                x_in,
                enc_in,
                enc_out,
                enc_cache,
                dec_in,
                dec_out,
                dec_cache,
                cats,
            },
        ))
    }

    /// Accumulates parameter gradients for `∂L/∂output = grad`.
    pub fn backward(&mut self, cond: &Condition, tr: &Trace, grad: &Raster) -> Result<()> {
        let s = self.stages();
        let mut g_enc: Vec<Option<Raster>> = vec![None; s];
        let mut g_dec = self.out.backward(tr.dec_out[0].as_ref().expect("traced"), grad)?;
        for i in 0..s {
            let dec_in = tr.dec_in[i].as_ref().expect("traced");
            let cache = tr.dec_cache[i].as_ref().expect("traced");
            let g_in = self.dec[i].backward(dec_in, &cond.levels[i], &tr.temb, cache, &g_dec)?;
            if i + 1 == s {
                add_into(&mut g_enc[i], g_in)?;
            } else {
                let cat = tr.cats[i].as_ref().expect("traced");
                let g_cat = self.fuse[i].backward(cat, &g_in)?;
                let w = self.config.widths[i];
                let mut parts = g_cat.split(&[w, w])?.into_iter();
                let g_u = parts.next().expect("two parts");
                add_into(&mut g_enc[i], parts.next().expect("two parts"))?;
                let g_up = nearest_upsample_backward(&g_u, 2)?;
                let below = tr.dec_out[i + 1].as_ref().expect("traced");
                g_dec = self.up[i].backward(below, &g_up)?;
            }
        }
        for i in (0..s).rev() {
            let g_out = g_enc[i].take().expect("every stage receives a gradient");
            let g_in = self.enc[i].backward(
                &tr.enc_in[i],
                &cond.levels[i],
                &tr.temb,
                &tr.enc_cache[i],
                &g_out,
            )?;
            if i == 0 {
                self.head.backward(&tr.x_in, &g_in)?;
            } else {
                let g_prev = self.down[i - 1].backward(&tr.enc_out[i - 1], &g_in)?;
                add_into(&mut g_enc[i - 1], g_prev)?;
            }
        }
        Ok(())
    }
}

fn add_into(slot: &mut Option<Raster>, g: Raster) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl Parameterized for Predictor {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.head.params();
        for b in &self.enc {
            v.extend(b.params());
        }
        for c in &self.down {
            v.extend(c.params());
        }
        for b in &self.dec {
            v.extend(b.params());
        }
        for c in self.up.iter().chain(&self.fuse) {
            v.extend(c.params());
        }
        v.extend(self.out.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.head.params_mut();
        for b in &mut self.enc {
            v.extend(b.params_mut());
        }
        for c in &mut self.down {
            v.extend(c.params_mut());
        }
        for b in &mut self.dec {
            v.extend(b.params_mut());
        }
        for c in self.up.iter_mut().chain(self.fuse.iter_mut()) {
            v.extend(c.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::max_param_grad_error;

    fn setup(cfb: bool, bamb: bool, h: usize, seed: u64) -> (Predictor, Condition, Raster) {
        let mut rng = SeededRng::new(seed);
        let cfg = PredictorConfig {
            widths: vec![8, 8],
            cfb,
            bamb,
            temb_dim: 8,
        };
        let p = Predictor::new(cfg, 2, &mut rng).unwrap();
        let cond = Condition::new(
            &rng.normal_raster(1, h, h),
            &rng.normal_raster(2, h, h),
            &rng.normal_raster(1, h, h),
            2,
        )
        .unwrap();
        let x = rng.normal_raster(2, h, h);
        (p, cond, x)
    }

    #[test]
    fn output_shape_matches_input() {
        for (cfb, bamb) in [(true, true), (true, false), (false, true), (false, false)] {
            let (p, cond, x) = setup(cfb, bamb, 8, 1);
            let y = p.forward(&x, 17, &cond).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert_eq!(y, p.forward(&x, 17, &cond).unwrap());
        }
    }

    #[test]
    fn full_predictor_gradient() {
        for (cfb, bamb) in [(true, true), (false, false)] {
            let (p, cond, x) = setup(cfb, bamb, 8, 2);
            let w = SeededRng::new(9).normal_raster(2, 8, 8);
            let loss = |m: &Predictor| m.forward(&x, 40, &cond).unwrap().mul(&w).unwrap().sum();
            let mut g = p.clone();
            let (_, tr) = g.trace(&x, 40, &cond).unwrap();
            g.backward(&cond, &tr, &w).unwrap();
            let err = max_param_grad_error(&g, &p, loss, 1e-4, 400);
            assert!(err < 1e-4, "{cfb} {bamb}: {err}");
        }
    }

    #[test]
    fn interior_translation_covariance() {
        // the CFB gate pools globally, so only the local part can commute
        // with shifts; freeze the gate to a constant
        let (mut p, cond, x) = setup(true, true, 64, 3);
        for b in p.enc.iter_mut().chain(p.dec.iter_mut()) {
            b.cfb.gate.weight.value.iter_mut().for_each(|w| *w = 0.0);
        }
        // shift by the total downsampling factor so the pyramid aligns
        let shift = |r: &Raster| r.shift(2, 2);
        let c2 = Condition::new(
            &shift(&cond.base().pan),
            &shift(&cond.base().ims),
            &shift(&cond.base().ph),
            2,
        )
        .unwrap();
        let y = p.forward(&x, 10, &cond).unwrap();
        let y2 = p.forward(&shift(&x), 10, &c2).unwrap();
        let a = shift(&y).crop(28, 28, 8, 8).unwrap();
        let b = y2.crop(28, 28, 8, 8).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn non_finite_input_reports_stage() {
        let (p, cond, mut x) = setup(true, true, 8, 4);
        x.data_mut()[3] = f64::NAN;
        match p.forward(&x, 5, &cond) {
            Err(Error::NonFiniteActivation { stage, block }) => {
                assert_eq!((stage.as_str(), block), ("encoder", 0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn indivisible_width_rejected() {
        let cfg = PredictorConfig {
            widths: vec![6],
            ..Default::default()
        };
        assert!(Predictor::new(cfg, 4, &mut SeededRng::new(0)).is_err());
    }
}
