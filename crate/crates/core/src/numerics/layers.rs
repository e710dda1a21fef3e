//! Convolution, residual and dense layers with hand-written backward passes.
//!
//! Layers do not cache activations themselves: `forward` returns whatever
//! `backward` later needs, and the caller hands it back. This keeps layers
//! shareable across the samples of a batch.

use super::act::Activation;
use super::conv::{conv2d, conv2d_backward, ConvSpec, Kernel, Padding};
use super::optim::{Param, Parameterized};
use super::raster::Raster;
use super::rng::SeededRng;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub spec: ConvSpec,
    pub out: usize,
    pub inp: usize,
    pub size: usize,
}

impl Conv2d {
    /// Zero-initialised layer; `inp` is the total input channel count.
    pub fn zeros(id: &str, inp: usize, out: usize, size: usize, spec: ConvSpec) -> Self {
        let per_group = inp / spec.groups;
        Conv2d {
            weight: Param::zeros(format!("{id}.weight"), vec![out, per_group, size, size]),
            bias: Param::zeros(format!("{id}.bias"), vec![out]),
            spec,
            out,
            inp,
            size,
        }
    }

    /// He-normal initialisation, zero bias.
    pub fn new(
        id: &str,
        inp: usize,
        out: usize,
        size: usize,
        spec: ConvSpec,
        rng: &mut SeededRng,
    ) -> Self {
        let mut c = Self::zeros(id, inp, out, size, spec);
        let fan_in = (inp / spec.groups * size * size) as f64;
        let std = (2.0 / fan_in).sqrt();
        c.weight.value.iter_mut().for_each(|w| *w = std * rng.normal());
        c
    }

    /// Weights and bias uniform in `±1/√fan_in`; gentler than He-normal
    /// for deep multiplicative stacks.
    pub fn uniform(
        id: &str,
        inp: usize,
        out: usize,
        size: usize,
        spec: ConvSpec,
        rng: &mut SeededRng,
    ) -> Self {
        let mut c = Self::zeros(id, inp, out, size, spec);
        let bound = 1.0 / ((inp / spec.groups * size * size) as f64).sqrt();
        for p in [&mut c.weight, &mut c.bias] {
            p.value
                .iter_mut()
                .for_each(|w| *w = rng.uniform_range(-bound, bound));
        }
        c
    }

    /// Stride-1 "same" convolution.
    pub fn same(
        id: &str,
        inp: usize,
        out: usize,
        size: usize,
        padding: Padding,
        rng: &mut SeededRng,
    ) -> Self {
        Self::new(id, inp, out, size, ConvSpec::same(size, padding), rng)
    }

    pub fn kernel(&self) -> Kernel {
        Kernel {
            out: self.out,
            inp: self.inp / self.spec.groups,
            size: self.size,
            data: self.weight.value.clone(),
        }
    }

    /// Sets weight `[o, i, y, x]`.
    pub fn set_weight(&mut self, o: usize, i: usize, y: usize, x: usize, v: f64) {
        let k = self.kernel();
        let idx = k.idx(o, i, y, x);
        self.weight.value[idx] = v;
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

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, x: &Raster, grad: &Raster) -> Result<Raster> {
        let (gx, gw) = conv2d_backward(x, &self.kernel(), self.spec, grad)?;
        self.weight.accumulate(&gw);
        let n = grad.shape().plane();
        for o in 0..self.out {
            self.bias.grad[o] += grad.data()[o * n..(o + 1) * n].iter().sum::<f64>();
        }
        Ok(gx)
    }
}

impl Parameterized for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `x + conv₂(act(conv₁(x)))`, the second conv zero-initialised so the block
/// starts as the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub act: Activation,
}

pub struct ResCache {
    pre: Raster,
    hidden: Raster,
}

impl ResBlock {
    pub fn new(id: &str, width: usize, padding: Padding, act: Activation, rng: &mut SeededRng) -> Self {
        ResBlock {
            conv1: Conv2d::same(&format!("{id}.conv1"), width, width, 3, padding, rng),
            conv2: Conv2d::zeros(
                &format!("{id}.conv2"),
                width,
                width,
                3,
                ConvSpec::same(3, padding),
            ),
            act,
        }
    }

    pub fn forward(&self, x: &Raster) -> Result<(Raster, ResCache)> {
        let pre = self.conv1.forward(x)?;
        let hidden = self.act.forward(&pre);
        let mut y = self.conv2.forward(&hidden)?;
        y.add_assign(x)?;
        Ok((y, ResCache { pre, hidden }))
    }

    pub fn backward(&mut self, x: &Raster, cache: &ResCache, grad: &Raster) -> Result<Raster> {
        let gh = self.conv2.backward(&cache.hidden, grad)?;
        let gpre = self.act.backward(&cache.pre, &gh);
        let mut gx = self.conv1.backward(x, &gpre)?;
        gx.add_assign(grad)?;
        Ok(gx)
    }
}

impl Parameterized for ResBlock {
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

/// Dense layer `y = W x + b`, `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn zeros(id: &str, inp: usize, out: usize) -> Self {
        Linear {
            weight: Param::zeros(format!("{id}.weight"), vec![out, inp]),
            bias: Param::zeros(format!("{id}.bias"), vec![out]),
            inp,
            out,
        }
    }

    pub fn new(id: &str, inp: usize, out: usize, rng: &mut SeededRng) -> Self {
        let mut l = Self::zeros(id, inp, out);
        let std = (1.0 / inp as f64).sqrt();
        l.weight.value.iter_mut().for_each(|w| *w = std * rng.normal());
        l
    }

    /// Weights and bias uniform in `±1/√inp`.
    pub fn uniform(id: &str, inp: usize, out: usize, rng: &mut SeededRng) -> Self {
        let mut l = Self::zeros(id, inp, out);
        let bound = 1.0 / (inp as f64).sqrt();
        for p in [&mut l.weight, &mut l.bias] {
            p.value
                .iter_mut()
                .for_each(|w| *w = rng.uniform_range(-bound, bound));
        }
        l
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out)
            .map(|o| {
                let row = &self.weight.value[o * self.inp..(o + 1) * self.inp];
                self.bias.value[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&mut self, x: &[f64], grad: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.inp];
        for (o, &g) in grad.iter().enumerate() {
            self.bias.grad[o] += g;
            let row = o * self.inp;
            for i in 0..self.inp {
                self.weight.grad[row + i] += g * x[i];
                gx[i] += g * self.weight.value[row + i];
            }
        }
        gx
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{check_param_grads, rel_err};

    #[test]
    fn conv_layer_gradients() {
        let mut rng = SeededRng::new(21);
        let layer = Conv2d::new("c", 2, 3, 3, ConvSpec::same(3, Padding::Reflect), &mut rng);
        let x = rng.normal_raster(2, 6, 6);
        let gy = rng.normal_raster(3, 6, 6);
        let loss = |l: &Conv2d| l.forward(&x).unwrap().mul(&gy).unwrap().sum();
        let mut l = layer.clone();
        l.backward(&x, &gy).unwrap();
        check_param_grads(&l, &layer, loss, 1e-6);
    }

    #[test]
    fn resblock_gradients_and_identity_start() {
        let mut rng = SeededRng::new(22);
        let mut block = ResBlock::new("r", 2, Padding::Zero, Activation::Gelu, &mut rng);
        let x = rng.normal_raster(2, 5, 5);
        assert_eq!(block.forward(&x).unwrap().0, x);
        block
            .conv2
            .weight
            .value
            .iter_mut()
            .for_each(|w| *w = 0.3 * rng.normal());
        let gy = rng.normal_raster(2, 5, 5);
        let loss = |b: &ResBlock| b.forward(&x).unwrap().0.mul(&gy).unwrap().sum();
        let mut b = block.clone();
        let (_, cache) = b.forward(&x).unwrap();
        let gx = b.backward(&x, &cache, &gy).unwrap();
        check_param_grads(&b, &block, loss, 1e-6);
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (block.forward(&xp).unwrap().0.mul(&gy).unwrap().sum()
                - block.forward(&xm).unwrap().0.mul(&gy).unwrap().sum())
                / (2.0 * h);
            assert!(rel_err(fd, gx.data()[i]) < 1e-6);
        }
    }

    #[test]
    fn linear_gradients() {
        let mut rng = SeededRng::new(23);
        let lin = Linear::new("l", 4, 3, &mut rng);
        let x = rng.normal_vec(4);
        let gy = rng.normal_vec(3);
        let loss =
            |l: &Linear| l.forward(&x).iter().zip(&gy).map(|(a, b)| a * b).sum::<f64>();
        let mut l = lin.clone();
        l.backward(&x, &gy);
        check_param_grads(&l, &lin, loss, 1e-6);
    }
}
