//! Condition fusion (CFB) and band-aware modulation (BAMB) blocks.

use crate::error::{Error, Result};
use crate::numerics::{
    gelu_grad, sigmoid, Activation, Conv2d, ConvSpec, Linear, Padding, Param, Parameterized,
    Raster, SeededRng,
};

/// Pointwise then depthwise 3×3: the cheap "conv" used inside the blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PdConv {
    pub pw: Conv2d,
    pub dw: Conv2d,
}

impl PdConv {
    pub fn new(id: &str, inp: usize, out: usize, rng: &mut SeededRng) -> Self {
        let pad = Padding::Reflect;
        PdConv {
            pw: Conv2d::uniform(&format!("{id}.pw"), inp, out, 1, ConvSpec::same(1, pad), rng),
            dw: Conv2d::uniform(
                &format!("{id}.dw"),
                out,
                out,
                3,
                ConvSpec::same(3, pad).with_groups(out),
                rng,
            ),
        }
    }

    pub fn zero(&mut self) {
        for p in self.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Returns the output and the intermediate pointwise result.
    pub fn forward(&self, x: &Raster) -> Result<(Raster, Raster)> {
        let mid = self.pw.forward(x)?;
        Ok((self.dw.forward(&mid)?, mid))
    }

    pub fn backward(&mut self, x: &Raster, mid: &Raster, grad: &Raster) -> Result<Raster> {
        let g = self.dw.backward(mid, grad)?;
        self.pw.backward(x, &g)
    }
}

impl Parameterized for PdConv {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.pw.params();
        v.extend(self.dw.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.pw.params_mut();
        v.extend(self.dw.params_mut());
        v
    }
}

fn add_channel_bias(r: &mut Raster, bias: &[f64]) {
    for (c, &b) in bias.iter().enumerate() {
        r.plane_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums(r: &Raster) -> Vec<f64> {
    (0..r.channels()).map(|c| r.plane(c).iter().sum()).collect()
}

/// Conditioning inputs at one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub pan: Raster,
    pub ims: Raster,
    pub ph: Raster,
    /// `[PAN, IMS]` stacked, the CFB condition.
    pub pan_ims: Raster,
}

impl Level {
    pub fn new(pan: Raster, ims: Raster, ph: Raster) -> Result<Self> {
        pan.ensure_spatial(&ims, "condition")?;
        pan.ensure_spatial(&ph, "condition")?;
        let pan_ims = Raster::concat(&[&pan, &ims])?;
        Ok(Level {
            pan,
            ims,
            ph,
            pan_ims,
        })
    }
}

/// `f̂ = σ(α)⊙Conv(f) + β`, `out = GeLU(Conv(f̂)) ⊙ σ(Conv(avgpool(f̂)))`,
/// with `(α, β)` from `GeLU(Conv([PAN, IMS]))`. Without the condition path
/// `f̂ = Conv(f)`. The time embedding enters as a bias on `f̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cfb {
    pub cond: Option<PdConv>,
    pub main: PdConv,
    pub out: PdConv,
    /// 1×1 conv on the pooled vector.
    pub gate: Linear,
    pub width: usize,
}

pub struct CfbCache {
    cpre: Option<(Raster, Raster)>,
    a_sig: Option<Raster>,
    m: Raster,
    m_mid: Raster,
    fh: Raster,
    o_mid: Raster,
    o_pre: Raster,
    o: Raster,
    pooled: Vec<f64>,
    gs: Vec<f64>,
}

impl Cfb {
    pub fn new(id: &str, width: usize, cond_channels: Option<usize>, rng: &mut SeededRng) -> Self {
        Cfb {
            cond: cond_channels.map(|c| PdConv::new(&format!("{id}.cond"), c, 2 * width, rng)),
            main: PdConv::new(&format!("{id}.main"), width, width, rng),
            out: PdConv::new(&format!("{id}.out"), width, width, rng),
            gate: Linear::uniform(&format!("{id}.gate"), width, width, rng),
            width,
        }
    }

    pub fn forward(&self, f: &Raster, cond: &Raster, tb: &[f64]) -> Result<(Raster, CfbCache)> {
        let c = self.width;
        let (m, m_mid) = self.main.forward(f)?;
        let (mut fh, cpre, a_sig) = match &self.cond {
            Some(conv) => {
                if cond.height() != f.height() || cond.width() != f.width() {
                    return Err(Error::ShapeMismatch {
                        op: "cfb condition",
                        left: f.shape(),
                        right: cond.shape(),
                    });
                }
                let (pre, mid) = conv.forward(cond)?;
                let act = Activation::Gelu.forward(&pre);
                let a_sig = act.channel_range(0, c).map(sigmoid);
                let beta = act.channel_range(c, c);
                let fh = a_sig.mul(&m)?.add(&beta)?;
                (fh, Some((pre, mid)), Some(a_sig))
            }
            None => (m.clone(), None, None),
        };
        add_channel_bias(&mut fh, tb);
        let (o_pre, o_mid) = self.out.forward(&fh)?;
        let o = Activation::Gelu.forward(&o_pre);
        let pooled: Vec<f64> = channel_sums(&fh)
            .into_iter()
            .map(|s| s / (fh.height() * fh.width()) as f64)
            .collect();
        let gs: Vec<f64> = self.gate.forward(&pooled).into_iter().map(sigmoid).collect();
        let mut y = o.clone();
        for (ch, &g) in gs.iter().enumerate() {
            y.plane_mut(ch).iter_mut().for_each(|v| *v *= g);
        }
        Ok((
            y,
            CfbCache {
                cpre,
                a_sig,
                m,
                m_mid,
                fh,
                o_mid,
                o_pre,
                o,
                pooled,
                gs,
            },
        ))
    }

    /// Returns `(∂L/∂f, ∂L/∂time-bias)`.
    pub fn backward(
        &mut self,
        f: &Raster,
        cond: &Raster,
        k: &CfbCache,
        gy: &Raster,
    ) -> Result<(Raster, Vec<f64>)> {
        let c = self.width;
        let n = (k.fh.height() * k.fh.width()) as f64;
        let mut g_o = gy.clone();
        let mut g_gs = vec![0.0; c];
        for ch in 0..c {
            let g = k.gs[ch];
            g_o.plane_mut(ch).iter_mut().for_each(|v| *v *= g);
            g_gs[ch] = gy.plane(ch).iter().zip(k.o.plane(ch)).map(|(a, b)| a * b).sum();
        }
        let g_gpre: Vec<f64> = g_gs
            .iter()
            .zip(&k.gs)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();
        let g_pooled = self.gate.backward(&k.pooled, &g_gpre);
        let g_opre = g_o.zip_map(&k.o_pre, |g, x| g * gelu_grad(x))?;
        let mut g_fh = self.out.backward(&k.fh, &k.o_mid, &g_opre)?;
        add_channel_bias(
            &mut g_fh,
            &g_pooled.iter().map(|g| g / n).collect::<Vec<_>>(),
        );
        let g_tb = channel_sums(&g_fh);
        let g_m = match (&mut self.cond, &k.cpre, &k.a_sig) {
            (Some(conv), Some((pre, mid)), Some(a_sig)) => {
                let g_m = g_fh.mul(a_sig)?;
                let mut g_act = Raster::zeros(2 * c, f.height(), f.width());
                for ch in 0..c {
                    let (gf, m, s) = (g_fh.plane(ch), k.m.plane(ch), a_sig.plane(ch));
                    let dst = g_act.plane_mut(ch);
                    for i in 0..dst.len() {
                        dst[i] = gf[i] * m[i] * s[i] * (1.0 - s[i]);
                    }
                    g_act.plane_mut(c + ch).copy_from_slice(gf);
                }
                let g_pre = g_act.zip_map(pre, |g, x| g * gelu_grad(x))?;
                conv.backward(cond, mid, &g_pre)?;
                g_m
            }
            _ => g_fh,
        };
        let g_f = self.main.backward(f, &k.m_mid, &g_m)?;
        Ok((g_f, g_tb))
    }
}

impl Parameterized for Cfb {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        if let Some(c) = &self.cond {
            v.extend(c.params());
        }
        v.extend(self.main.params());
        v.extend(self.out.params());
        v.extend(self.gate.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        if let Some(c) = &mut self.cond {
            v.extend(c.params_mut());
        }
        v.extend(self.main.params_mut());
        v.extend(self.out.params_mut());
        v.extend(self.gate.params_mut());
        v
    }
}

/// Per-band groups: each group of `c/C` channels is fused with its own MS
/// band, modulated by `(γ, η)` from `GeLU(Conv(P^h))`, and the result is
/// added back to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Bamb {
    pub fuse: Vec<PdConv>,
    pub ph: PdConv,
    pub group: usize,
}

pub struct BambCache {
    p_pre: Raster,
    p_mid: Raster,
    gamma_sig: Raster,
    inputs: Vec<Raster>,
    fused: Vec<Raster>,
    mids: Vec<Raster>,
}

impl Bamb {
    pub fn new(id: &str, width: usize, bands: usize, rng: &mut SeededRng) -> Result<Self> {
        if bands == 0 || width % bands != 0 {
            return Err(Error::invalid(format!(
                "BAMB width {width} is not divisible by {bands} bands"
            )));
        }
        let g = width / bands;
        Ok(Bamb {
            fuse: (0..bands)
                .map(|k| PdConv::new(&format!("{id}.fuse{k}"), g + 1, g, rng))
                .collect(),
            ph: PdConv::new(&format!("{id}.ph"), 1, 2 * width, rng),
            group: g,
        })
    }

    pub fn bands(&self) -> usize {
        self.fuse.len()
    }

    pub fn forward(&self, f: &Raster, ims: &Raster, ph: &Raster) -> Result<(Raster, BambCache)> {
        let (g, bands) = (self.group, self.bands());
        let c = g * bands;
        if f.channels() != c || ims.channels() != bands {
            return Err(Error::invalid(format!(
                "BAMB expects {c} features and {bands} bands, got {} and {}",
                f.shape(),
                ims.shape()
            )));
        }
        f.ensure_spatial(ims, "bamb")?;
        f.ensure_spatial(ph, "bamb")?;
        let (p_pre, p_mid) = self.ph.forward(ph)?;
        let act = Activation::Gelu.forward(&p_pre);
        let gamma_sig = act.channel_range(0, c).map(sigmoid);
        let mut y = f.clone();
        let mut inputs = Vec::with_capacity(bands);
        let mut fused = Vec::with_capacity(bands);
        let mut mids = Vec::with_capacity(bands);
        for k in 0..bands {
            let input = Raster::concat(&[&f.channel_range(k * g, g), &ims.channel(k)])?;
            let (fk, mid) = self.fuse[k].forward(&input)?;
            for j in 0..g {
                let ch = k * g + j;
                let (s, e) = (gamma_sig.plane(ch), act.plane(c + ch));
                let src = fk.plane(j);
                let dst = y.plane_mut(ch);
                for i in 0..dst.len() {
                    dst[i] += s[i] * src[i] + e[i];
                }
            }
            inputs.push(input);
            fused.push(fk);
            mids.push(mid);
        }
        Ok((
            y,
            BambCache {
                p_pre,
                p_mid,
                gamma_sig,
                inputs,
                fused,
                mids,
            },
        ))
    }

    pub fn backward(&mut self, ph: &Raster, k: &BambCache, gy: &Raster) -> Result<Raster> {
        let (g, bands) = (self.group, self.bands());
        let c = g * bands;
        let mut g_f = gy.clone();
        let mut g_act = Raster::zeros(2 * c, gy.height(), gy.width());
        for b in 0..bands {
            let mut g_fk = Raster::zeros(g, gy.height(), gy.width());
            for j in 0..g {
                let ch = b * g + j;
                let (gyc, s, fk) = (gy.plane(ch), k.gamma_sig.plane(ch), k.fused[b].plane(j));
                let dst = g_fk.plane_mut(j);
                for i in 0..dst.len() {
                    dst[i] = gyc[i] * s[i];
                }
                let dst = g_act.plane_mut(ch);
                for i in 0..dst.len() {
                    dst[i] = gyc[i] * fk[i] * s[i] * (1.0 - s[i]);
                }
                g_act.plane_mut(c + ch).copy_from_slice(gyc);
            }
            let g_in = self.fuse[b].backward(&k.inputs[b], &k.mids[b], &g_fk)?;
            for j in 0..g {
                let ch = b * g + j;
                for (d, s) in g_f.plane_mut(ch).iter_mut().zip(g_in.plane(j)) {
                    *d += s;
                }
            }
        }
        let g_pre = g_act.zip_map(&k.p_pre, |gr, x| gr * gelu_grad(x))?;
        self.ph.backward(ph, &k.p_mid, &g_pre)?;
        Ok(g_f)
    }
}

impl Parameterized for Bamb {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.fuse.iter().flat_map(|f| f.params()).collect();
        v.extend(self.ph.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.fuse.iter_mut().flat_map(|f| f.params_mut()).collect();
        v.extend(self.ph.params_mut());
        v
    }
}

/// One encoder/decoder unit: time projection, CFB, then optionally BAMB.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub tproj: Linear,
    pub cfb: Cfb,
    pub bamb: Option<Bamb>,
}

pub struct BlockCache {
    tb: Vec<f64>,
    cfb: CfbCache,
    mid: Raster,
    bamb: Option<BambCache>,
}

impl Block {
    pub fn new(
        id: &str,
        width: usize,
        bands: usize,
        temb_dim: usize,
        use_cfb: bool,
        use_bamb: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Block {
            tproj: Linear::uniform(&format!("{id}.tproj"), temb_dim, width, rng),
            cfb: Cfb::new(
                &format!("{id}.cfb"),
                width,
                use_cfb.then_some(1 + bands),
                rng,
            ),
            bamb: if use_bamb {
                Some(Bamb::new(&format!("{id}.bamb"), width, bands, rng)?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, f: &Raster, lvl: &Level, temb: &[f64]) -> Result<(Raster, BlockCache)> {
        let tb = self.tproj.forward(temb);
        let (mid, cfb) = self.cfb.forward(f, &lvl.pan_ims, &tb)?;
        let (y, bamb) = match &self.bamb {
            Some(b) => {
                let (y, cache) = b.forward(&mid, &lvl.ims, &lvl.ph)?;
                (y, Some(cache))
            }
            None => (mid.clone(), None),
        };
        Ok((y, BlockCache { tb, cfb, mid, bamb }))
    }

    pub fn backward(
        &mut self,
        f: &Raster,
        lvl: &Level,
        temb: &[f64],
        k: &BlockCache,
        gy: &Raster,
    ) -> Result<Raster> {
        debug_assert_eq!(k.mid.shape(), gy.shape());
        debug_assert_eq!(k.tb.len(), self.tproj.out);
        let g_mid = match (&mut self.bamb, &k.bamb) {
            (Some(b), Some(cache)) => b.backward(&lvl.ph, cache, gy)?,
            _ => gy.clone(),
        };
        let (g_f, g_tb) = self.cfb.backward(f, &lvl.pan_ims, &k.cfb, &g_mid)?;
        self.tproj.backward(temb, &g_tb);
        Ok(g_f)
    }
}

impl Parameterized for Block {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.tproj.params();
        v.extend(self.cfb.params());
        if let Some(b) = &self.bamb {
            v.extend(b.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.tproj.params_mut();
        v.extend(self.cfb.params_mut());
        if let Some(b) = &mut self.bamb {
            v.extend(b.params_mut());
        }
        v
    }
}

/// `[sin(t·f_k)…, cos(t·f_k)…]` with `f_k = 10000^(−k/(d/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs = (0..half).map(|k| (-(10000f64).ln() * k as f64 / half as f64).exp());
    let args: Vec<f64> = freqs.map(|f| t as f64 * f).collect();
    args.iter()
        .map(|a| a.sin())
        .chain(args.iter().map(|a| a.cos()))
        .collect()
}
