//! PAlignNet: a shallow, strictly local MS → PAN-like decolorisation.

use super::train::Regressor;
use crate::error::Result;
use crate::numerics::{
    area_downsample_backward, downsample, Activation, Conv2d, ConvSpec, DownsampleMode, Padding,
    Param, Parameterized, Raster, ResBlock, ResCache, SeededRng,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PAlignNet {
    pub head: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub tail: Conv2d,
    /// Area-downsample the output by this factor before comparing with
    /// LRPAN, for MS supplied at PAN resolution; 1 when MS already sits at
    /// the LRPAN scale.
    pub output_reduction: usize,
}

struct Trace {
    /// Input to each residual block, then the tail input.
    inputs: Vec<Raster>,
    caches: Vec<ResCache>,
    full: Raster,
}

impl PAlignNet {
    /// Starts as the band mean: head channel 0 averages the bands at the
    /// centre tap and the tail passes channel 0 through.
    pub fn new(bands: usize, width: usize, blocks: usize, rng: &mut SeededRng) -> Self {
        let pad = Padding::Reflect;
        let mut head = Conv2d::same("palign.head", bands, width, 3, pad, rng);
        for i in 0..bands {
            for y in 0..3 {
                for x in 0..3 {
                    let v = if (y, x) == (1, 1) {
                        1.0 / bands as f64
                    } else {
                        0.0
                    };
                    head.set_weight(0, i, y, x, v);
                }
            }
        }
        let blocks = (0..blocks)
            .map(|b| {
                ResBlock::new(
                    &format!("palign.block{b}"),
                    width,
                    pad,
                    Activation::Gelu,
                    rng,
                )
            })
            .collect();
        let mut tail = Conv2d::zeros("palign.tail", width, 1, 3, ConvSpec::same(3, pad));
        tail.set_weight(0, 0, 1, 1, 1.0);
        PAlignNet {
            head,
            blocks,
            tail,
            output_reduction: 1,
        }
    }

    /// Side length of the input window one output pixel depends on.
    pub fn receptive_field(&self) -> usize {
        let layers = 2 + 2 * self.blocks.len();
        2 * layers + 1
    }

    /// Largest spatial extent of any layer and whether any layer strides.
    pub fn layer_geometry(&self) -> (usize, bool) {
        let convs = std::iter::once(&self.head)
            .chain(self.blocks.iter().flat_map(|b| [&b.conv1, &b.conv2]))
            .chain(std::iter::once(&self.tail));
        convs.fold((0, false), |(size, strided), c| {
            (size.max(c.size), strided || c.spec.stride != 1)
        })
    }

    fn trace(&self, ms: &Raster) -> Result<(Raster, Trace)> {
        let mut inputs = Vec::with_capacity(self.blocks.len() + 1);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = self.head.forward(ms)?;
        for b in &self.blocks {
            let (next, cache) = b.forward(&h)?;
            inputs.push(h);
            caches.push(cache);
            h = next;
        }
        let full = self.tail.forward(&h)?;
        inputs.push(h);
        let out = if self.output_reduction > 1 {
            downsample(&full, self.output_reduction, DownsampleMode::Area)?
        } else {
            full.clone()
        };
        Ok((
            out,
            Trace {
                inputs,
                caches,
                full,
            },
        ))
    }

    fn backward(&mut self, ms: &Raster, trace: &Trace, grad: &Raster) -> Result<()> {
        let mut g = if self.output_reduction > 1 {
            area_downsample_backward(grad, self.output_reduction)
        } else {
            grad.clone()
        };
        debug_assert_eq!(g.shape(), trace.full.shape());
        let n = self.blocks.len();
        g = self.tail.backward(&trace.inputs[n], &g)?;
        for i in (0..n).rev() {
            g = self.blocks[i].backward(&trace.inputs[i], &trace.caches[i], &g)?;
        }
        self.head.backward(ms, &g)?;
        Ok(())
    }
}

impl Regressor for PAlignNet {
    fn predict(&self, ms: &Raster) -> Result<Raster> {
        Ok(self.trace(ms)?.0)
    }

    fn loss_and_grad(&mut self, ms: &Raster, target: &Raster) -> Result<f64> {
        let (out, trace) = self.trace(ms)?;
        let diff = out.sub(target)?;
        self.backward(ms, &trace, &diff.scale(2.0))?;
        Ok(diff.sum_sq())
    }
}

impl Parameterized for PAlignNet {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::check_param_grads;

    #[test]
    fn starts_as_band_mean() {
        let mut rng = SeededRng::new(41);
        let net = PAlignNet::new(4, 8, 2, &mut rng);
        let ms = rng.normal_raster(4, 6, 6);
        let out = net.predict(&ms).unwrap();
        assert!(out.max_abs_diff(&ms.spectral_mean()).unwrap() < 1e-12);
    }

    #[test]
    fn receptive_field_is_bounded_and_trunk_unstrided() {
        let mut rng = SeededRng::new(42);
        let net = PAlignNet::new(4, 8, 4, &mut rng);
        assert_eq!(net.receptive_field(), (2 * 4 + 2) * 2 + 1);
        assert_eq!(net.layer_geometry(), (3, false));
        // an impulse influences exactly the receptive field
        let mut net = net;
        for b in &mut net.blocks {
            b.conv2.weight.value.iter_mut().for_each(|w| *w = 0.1);
        }
        net.tail.weight.value.iter_mut().for_each(|w| *w = 0.1);
        net.head.weight.value.iter_mut().for_each(|w| *w = 0.1);
        let mut x = Raster::zeros(4, 41, 41);
        x.set(0, 20, 20, 1.0);
        let base = net.predict(&Raster::zeros(4, 41, 41)).unwrap();
        let diff = net.predict(&x).unwrap().sub(&base).unwrap();
        let rf = net.receptive_field();
        let half = rf / 2;
        for y in 0..41 {
            for xx in 0..41 {
                let inside = (y as isize - 20).abs() <= half as isize
                    && (xx as isize - 20).abs() <= half as isize;
                if !inside {
                    assert_eq!(diff.get(0, y, xx), 0.0);
                }
            }
        }
        assert!(diff.get(0, 20 - half, 20).abs() > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(43);
        for reduction in [1, 2] {
            let mut net = PAlignNet::new(3, 4, 1, &mut rng);
            net.output_reduction = reduction;
            for b in &mut net.blocks {
                b.conv2.weight.value.iter_mut().for_each(|w| *w = 0.2 * rng.normal());
            }
            let ms = rng.normal_raster(3, 6, 6);
            let t = rng.normal_raster(1, 6 / reduction, 6 / reduction);
            let loss = |n: &PAlignNet| n.predict(&ms).unwrap().dist_sq(&t).unwrap();
            let mut g = net.clone();
            let l = g.loss_and_grad(&ms, &t).unwrap();
            assert!((l - loss(&net)).abs() < 1e-12);
            check_param_grads(&g, &net, loss, 1e-6);
        }
    }
}
