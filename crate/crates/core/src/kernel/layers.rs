//! Forward and hand-derived backward passes for the layer types the model uses.
//!
//! Forward functions return whatever the matching backward needs; the caller
//! owns that cache, so one set of weights can be applied many times (across
//! glimpse steps, frames and Monte Carlo copies) before a single backward sweep.

use crate::error::{Error, Result};
use crate::kernel::rng::Rng;
use crate::kernel::tensor::{ParamSlot, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dense affine map `W x + b` with `W: [n_out, n_in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamSlot,
    pub bias: ParamSlot,
}

impl Linear {
    pub fn new(name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: ParamSlot::glorot(format!("{name}.weight"), &[n_out, n_in], n_in, n_out, rng),
            bias: ParamSlot::zeros(format!("{name}.bias"), &[n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        affine_forward(&self.weight, &self.bias, x)
    }

    /// Accumulates parameter gradients and returns `Wᵀ grad_out`.
    pub fn backward(&mut self, x: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
        affine_backward(&mut self.weight, &mut self.bias, x, grad_out)
    }

    pub fn params(&self) -> [&ParamSlot; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut ParamSlot; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

fn affine_dims(weight: &ParamSlot, bias: &ParamSlot) -> Result<(usize, usize)> {
    let ws = weight.value.shape();
    if ws.len() != 2 || bias.value.shape() != [ws[0]] {
        return Err(Error::Dimension(format!(
            "{}: weight {:?} and bias {:?} do not conform",
            weight.name,
            ws,
            bias.value.shape()
        )));
    }
    Ok((ws[0], ws[1]))
}

fn affine_forward(weight: &ParamSlot, bias: &ParamSlot, x: &[f64]) -> Result<Vec<f64>> {
    let (n_out, n_in) = affine_dims(weight, bias)?;
    if x.len() != n_in {
        return Err(Error::Dimension(format!(
            "{}: input has {} values, layer expects {n_in}",
            weight.name,
            x.len()
        )));
    }
    let w = weight.value.data();
    let b = bias.value.data();
    Ok((0..n_out)
        .map(|j| {
            let row = &w[j * n_in..(j + 1) * n_in];
            b[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect())
}

fn affine_backward(
    weight: &mut ParamSlot,
    bias: &mut ParamSlot,
    x: &[f64],
    grad_out: &[f64],
) -> Result<Vec<f64>> {
    let (n_out, n_in) = affine_dims(weight, bias)?;
    if x.len() != n_in || grad_out.len() != n_out {
        return Err(Error::Dimension(format!(
            "{}: backward got input {} / grad {}, layer is {n_in}->{n_out}",
            weight.name,
            x.len(),
            grad_out.len()
        )));
    }
    let mut grad_x = vec![0.0; n_in];
    let w = weight.value.data();
    let gw = weight.grad.data_mut();
    for (j, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = j * n_in;
        for i in 0..n_in {
            gw[row + i] += g * x[i];
            grad_x[i] += w[row + i] * g;
        }
    }
    for (gb, g) in bias.grad.data_mut().iter_mut().zip(grad_out) {
        *gb += g;
    }
    Ok(grad_x)
}

/// `out[j] = Σ_i W[j,i] x[i] + b[j]`.
pub fn linear_fwd(x: &Tensor, weight: &ParamSlot, bias: &ParamSlot) -> Result<Tensor> {
    affine_forward(weight, bias, x.data()).map(Tensor::vector)
}

/// Accumulates into `weight.grad`/`bias.grad` and returns the input gradient.
pub fn linear_bwd(
    grad_out: &Tensor,
    x: &Tensor,
    weight: &mut ParamSlot,
    bias: &mut ParamSlot,
) -> Result<Tensor> {
    affine_backward(weight, bias, x.data(), grad_out.data()).map(Tensor::vector)
}

pub fn relu_fwd(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient mask is 1 where `x > 0` and 0 elsewhere, including `x == 0`.
pub fn relu_bwd(grad_out: &[f64], x: &[f64]) -> Vec<f64> {
    grad_out
        .iter()
        .zip(x)
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// 3×3 cross-correlation with zero padding 1, so spatial size is preserved.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `[c_out, c_in, 3, 3]`
    pub kernels: ParamSlot,
    /// `[c_out]`
    pub bias: ParamSlot,
}

impl Conv2d {
    pub fn new(name: &str, c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        Conv2d {
            kernels: ParamSlot::glorot(
                format!("{name}.kernels"),
                &[c_out, c_in, 3, 3],
                c_in * 9,
                c_out * 9,
                rng,
            ),
            bias: ParamSlot::zeros(format!("{name}.bias"), &[c_out]),
        }
    }

    pub fn c_in(&self) -> usize {
        self.kernels.value.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.kernels.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_fwd(x, &self.kernels, &self.bias)
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        conv2d_bwd(grad_out, x, &mut self.kernels, &mut self.bias)
    }

    pub fn params(&self) -> [&ParamSlot; 2] {
        [&self.kernels, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut ParamSlot; 2] {
        [&mut self.kernels, &mut self.bias]
    }
}

fn conv_dims(x: &Tensor, kernels: &ParamSlot, bias: &ParamSlot) -> Result<(usize, usize, usize, usize)> {
    let xs = x.shape();
    let ks = kernels.value.shape();
    if xs.len() != 3 || ks.len() != 4 || ks[2] != 3 || ks[3] != 3 || ks[1] != xs[0] {
        return Err(Error::Dimension(format!(
            "conv2d: input {xs:?} does not conform to kernels {ks:?}"
        )));
    }
    if bias.value.shape() != [ks[0]] {
        return Err(Error::Dimension(format!(
            "conv2d: bias {:?} for {} output channels",
            bias.value.shape(),
            ks[0]
        )));
    }
    Ok((xs[0], ks[0], xs[1], xs[2]))
}

pub fn conv2d_fwd(x: &Tensor, kernels: &ParamSlot, bias: &ParamSlot) -> Result<Tensor> {
    let (c_in, c_out, h, w) = conv_dims(x, kernels, bias)?;
    let xd = x.data();
    let kd = kernels.value.data();
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        let plane = &mut out[o * h * w..(o + 1) * h * w];
        plane.fill(bias.value.data()[o]);
        for c in 0..c_in {
            let xin = &xd[c * h * w..(c + 1) * h * w];
            let k = &kd[(o * c_in + c) * 9..(o * c_in + c + 1) * 9];
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        let yy = y as isize + dy as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let row = yy as usize * w;
                        for dx in 0..3 {
                            let xs = xx as isize + dx as isize - 1;
                            if xs < 0 || xs >= w as isize {
                                continue;
                            }
                            acc += k[dy * 3 + dx] * xin[row + xs as usize];
                        }
                    }
                    plane[y * w + xx] += acc;
                }
            }
        }
    }
    Tensor::new(vec![c_out, h, w], out)
}

pub fn conv2d_bwd(
    grad_out: &Tensor,
    x: &Tensor,
    kernels: &mut ParamSlot,
    bias: &mut ParamSlot,
) -> Result<Tensor> {
    let (c_in, c_out, h, w) = conv_dims(x, kernels, bias)?;
    grad_out.expect_shape(&[c_out, h, w], "conv2d backward")?;
    let xd = x.data();
    let gd = grad_out.data();
    let mut grad_x = vec![0.0; c_in * h * w];
    for o in 0..c_out {
        let g = &gd[o * h * w..(o + 1) * h * w];
        bias.grad.data_mut()[o] += g.iter().sum::<f64>();
        for c in 0..c_in {
            let base = (o * c_in + c) * 9;
            let xin = &xd[c * h * w..(c + 1) * h * w];
            let gx = &mut grad_x[c * h * w..(c + 1) * h * w];
            let k: [f64; 9] = kernels.value.data()[base..base + 9].try_into().unwrap();
            let mut gk = [0.0; 9];
            for y in 0..h {
                for xx in 0..w {
                    let go = g[y * w + xx];
                    if go == 0.0 {
                        continue;
                    }
                    for dy in 0..3 {
                        let yy = y as isize + dy as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let row = yy as usize * w;
                        for dx in 0..3 {
                            let xs = xx as isize + dx as isize - 1;
                            if xs < 0 || xs >= w as isize {
                                continue;
                            }
                            let idx = row + xs as usize;
                            gk[dy * 3 + dx] += xin[idx] * go;
                            gx[idx] += k[dy * 3 + dx] * go;
                        }
                    }
                }
            }
            for (acc, v) in kernels.grad.data_mut()[base..base + 9].iter_mut().zip(gk) {
                *acc += v;
            }
        }
    }
    Tensor::new(vec![c_in, h, w], grad_x)
}

/// Max pooling over 1×3 windows with stride 1×3; trailing columns are dropped.
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

pub const POOL_WIDTH: usize = 3;

pub fn maxpool_fwd(x: &Tensor) -> Result<(Tensor, PoolCache)> {
    let xs = x.shape();
    if xs.len() != 3 || xs[2] < POOL_WIDTH {
        return Err(Error::Dimension(format!(
            "maxpool needs [C, H, W] with W >= {POOL_WIDTH}, got {xs:?}"
        )));
    }
    let (c, h, w) = (xs[0], xs[1], xs[2]);
    let wo = w / POOL_WIDTH;
    let xd = x.data();
    let mut out = Vec::with_capacity(c * h * wo);
    let mut argmax = Vec::with_capacity(c * h * wo);
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for k in 0..wo {
                let start = row + k * POOL_WIDTH;
                let mut best = start;
                for idx in start + 1..start + POOL_WIDTH {
                    // strict comparison: ties keep the lowest index
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![c, h, wo], out)?,
        PoolCache {
            input_shape: xs.to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_bwd(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    grad_out.expect_len(cache.argmax.len(), "maxpool backward")?;
    let mut grad_x = Tensor::zeros(&cache.input_shape);
    let gx = grad_x.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gx[idx] += g;
    }
    Ok(grad_x)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns `(probs, -log probs[true_class])`.
pub fn softmax_xent_fwd(logits: &[f64], true_class: usize) -> Result<(Vec<f64>, f64)> {
    if true_class >= logits.len() {
        return Err(Error::Argument(format!(
            "class index {true_class} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = -(logits[true_class] - max - log_total);
    Ok((softmax(logits), loss))
}

/// `probs - onehot(true_class)`.
pub fn softmax_xent_bwd(probs: &[f64], true_class: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[true_class] -= 1.0;
    g
}
