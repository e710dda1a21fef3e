//! PDegradeNet: PAN → LRPAN built from F-conv layers.
//!
//! Every learnable filter is an orientation-pooled F-conv expansion, so the
//! whole network commutes with quarter turns of its input.

use std::sync::Arc;

use super::train::Regressor;
use crate::error::{Error, Result};
use crate::fconv::{build_bases, FConvLayer, FResBlock, FResCache};
use crate::numerics::{
    area_downsample_backward, downsample, Activation, ConvSpec, DownsampleMode, Padding, Param,
    Parameterized, Raster, SeededRng,
};

const TAIL_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct PDegradeNet {
    /// Full-resolution F-conv; its output is block-averaged by `r`.
    pub head: FConvLayer,
    pub r: usize,
    pub blocks: Vec<FResBlock>,
    pub tail: [FConvLayer; 3],
}

struct Trace {
    head_full: Raster,
    block_inputs: Vec<Raster>,
    caches: Vec<FResCache>,
    /// Inputs to the three tail layers and the pre-activations after the first two.
    tail_inputs: [Raster; 3],
    tail_pre: [Raster; 2],
}

fn delta(p: usize) -> Vec<f64> {
    let mut d = vec![0.0; p * p];
    d[p * p / 2] = 1.0;
    d
}

impl PDegradeNet {
    /// Initialised so that the output equals the block mean of the input.
    pub fn new(
        r: usize,
        width: usize,
        blocks: usize,
        head_size: usize,
        orientations: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if width < 4 {
            return Err(Error::invalid(format!("PDegradeNet width {width} < 4")));
        }
        let pad = Padding::Reflect;
        let head_basis = Arc::new(build_bases(head_size)?);
        let small = Arc::new(build_bases(3)?);
        let mut head = FConvLayer::new(
            "pdegrade.head",
            head_basis,
            1,
            width,
            ConvSpec::same(head_size, pad),
            orientations,
            rng,
        )?;
        head.set_filter(0, 0, &delta(head_size))?;
        let blocks = (0..blocks)
            .map(|b| {
                FResBlock::new(
                    &format!("pdegrade.block{b}"),
                    small.clone(),
                    width,
                    pad,
                    orientations,
                    Activation::Gelu,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let widths = [width, width / 2, width / 4, 1];
        let mut tail = Vec::with_capacity(3);
        for i in 0..3 {
            let mut layer = FConvLayer::new(
                &format!("pdegrade.tail{i}"),
                small.clone(),
                widths[i],
                widths[i + 1],
                ConvSpec::same(3, pad),
                orientations,
                rng,
            )?;
            layer.set_filter(0, 0, &delta(3))?;
            for c in 1..widths[i] {
                layer.set_filter(0, c, &[0.0; 9])?;
            }
            tail.push(layer);
        }
        let tail: [FConvLayer; 3] = tail.try_into().expect("three tail layers");
        Ok(PDegradeNet {
            head,
            r,
            blocks,
            tail,
        })
    }

    fn trace(&self, pan: &Raster) -> Result<(Raster, Trace)> {
        let head_full = self.head.forward(pan)?;
        let mut h = downsample(&head_full, self.r, DownsampleMode::Area)?;
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward(&h)?;
            block_inputs.push(h);
            caches.push(cache);
            h = next;
        }
        let act = Activation::LeakyRelu(TAIL_SLOPE);
        let pre0 = self.tail[0].forward(&h)?;
        let in1 = act.forward(&pre0);
        let pre1 = self.tail[1].forward(&in1)?;
        let in2 = act.forward(&pre1);
        let out = self.tail[2].forward(&in2)?;
        Ok((
            out,
            Trace {
                head_full,
                block_inputs,
                caches,
                tail_inputs: [h, in1, in2],
                tail_pre: [pre0, pre1],
            },
        ))
    }

    fn backward(&mut self, pan: &Raster, t: &Trace, grad: &Raster) -> Result<()> {
        let act = Activation::LeakyRelu(TAIL_SLOPE);
        let mut g = self.tail[2].backward(&t.tail_inputs[2], grad)?;
        g = act.backward(&t.tail_pre[1], &g);
        g = self.tail[1].backward(&t.tail_inputs[1], &g)?;
        g = act.backward(&t.tail_pre[0], &g);
        g = self.tail[0].backward(&t.tail_inputs[0], &g)?;
        for i in (0..self.blocks.len()).rev() {
            g = self.blocks[i].backward(&t.block_inputs[i], &t.caches[i], &g)?;
        }
        let g = area_downsample_backward(&g, self.r);
        debug_assert_eq!(g.shape(), t.head_full.shape());
        self.head.backward(pan, &g)?;
        Ok(())
    }
}

impl Regressor for PDegradeNet {
    fn predict(&self, pan: &Raster) -> Result<Raster> {
        Ok(self.trace(pan)?.0)
    }

    fn loss_and_grad(&mut self, pan: &Raster, target: &Raster) -> Result<f64> {
        let (out, trace) = self.trace(pan)?;
        let diff = out.sub(target)?;
        self.backward(pan, &trace, &diff.scale(2.0))?;
        Ok(diff.sum_sq())
    }
}

impl Parameterized for PDegradeNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.head.params();
        for b in &self.blocks {
            v.extend(b.params());
        }
        for t in &self.tail {
            v.extend(t.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.head.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        for t in &mut self.tail {
            v.extend(t.params_mut());
        }
        v
    }
}
