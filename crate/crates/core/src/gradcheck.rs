//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each layer is checked over a number of trials; a trial draws fresh
//! parameters, inputs and upstream weights, reduces the layer output to a
//! scalar `L = Σ c·out`, and compares the analytic gradient with
//! `(L(θ + h) − L(θ − h)) / 2h` on a set of coordinates.
//!
//! Coordinates where the loss is not smooth within `±h` (a ReLU or max-pool
//! switch, or a retina centre jumping a cell) have no derivative to compare.
//! They are detected by disagreement between the one-sided differences,
//! counted, and replaced by another coordinate.

use std::sync::Arc;

use crate::error::Result;
use crate::frames::{ActivityFrame, Sample};
use crate::glimpse::{extract_retina, GlimpseConfig, GlimpseNet, Location, RetinaConfig};
use crate::kernel::{
    conv2d_bwd, conv2d_fwd, maxpool_bwd, maxpool_fwd, relu_bwd, relu_fwd, softmax_xent_bwd,
    softmax_xent_fwd, Linear, LstmCell, ParamSlot, Rng, Tensor,
};
use crate::model::{copy_rngs, BackwardOptions, Encoder, Mode, ModelConfig, RaafModel};

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const DENOM_FLOOR: f64 = 1e-4;
/// One-sided differences further apart than this (relative) flag a kink.
const KINK: f64 = 1e-3;
const MAX_RESAMPLES: usize = 20;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub layer: &'static str,
    pub trials: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl LayerReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

#[derive(Default)]
struct Tally {
    checked: usize,
    skipped: usize,
    max_err: f64,
}

/// A perturbable copy of a layer's parameters and inputs.
trait System: Clone {
    fn tensors(&mut self) -> Vec<&mut [f64]>;
    fn loss(&self) -> Result<f64>;
}

/// How many coordinates of each tensor to probe per trial; `None` is all.
fn check<S: System>(
    base: &S,
    analytic: &[Vec<f64>],
    per_tensor: Option<usize>,
    rng: &mut Rng,
    tally: &mut Tally,
) -> Result<()> {
    let l0 = base.loss()?;
    let mut probe_sizes: Vec<usize> = base.clone().tensors().iter().map(|t| t.len()).collect();
    probe_sizes.truncate(analytic.len());
    for (ti, &n) in probe_sizes.iter().enumerate() {
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < n => (0..k).map(|_| rng.below(n)).collect(),
            _ => (0..n).collect(),
        };
        for mut k in coords {
            let mut attempts = 0;
            loop {
                let eval = |delta: f64| -> Result<f64> {
                    let mut s = base.clone();
                    s.tensors()[ti][k] += delta;
                    s.loss()
                };
                let (lp, lm) = (eval(STEP)?, eval(-STEP)?);
                let fwd = (lp - l0) / STEP;
                let bwd = (l0 - lm) / STEP;
                let central = (lp - lm) / (2.0 * STEP);
                if (fwd - bwd).abs() > KINK * central.abs().max(1.0) && attempts < MAX_RESAMPLES {
                    tally.skipped += 1;
                    attempts += 1;
                    k = rng.below(n);
                    continue;
                }
                tally.checked += 1;
                tally.max_err = tally.max_err.max(relative_error(analytic[ti][k], central));
                break;
            }
        }
    }
    Ok(())
}

fn randn(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn report(layer: &'static str, trials: usize, tolerance: f64, t: Tally) -> LayerReport {
    LayerReport {
        layer,
        trials,
        checked: t.checked,
        skipped_kinks: t.skipped,
        max_rel_error: t.max_err,
        tolerance,
    }
}

#[derive(Clone)]
struct LinearSys {
    layer: Linear,
    x: Vec<f64>,
    c: Vec<f64>,
}

impl System for LinearSys {
    fn tensors(&mut self) -> Vec<&mut [f64]> {
        vec![self.layer.weight.value.data_mut(), self.layer.bias.value.data_mut(), &mut self.x]
    }
    fn loss(&self) -> Result<f64> {
        Ok(dot(&self.c, &self.layer.forward(&self.x)?))
    }
}

pub fn check_linear(trials: usize, seed: u64) -> Result<LayerReport> {
    let mut rng = Rng::new(seed);
    let mut tally = Tally::default();
    for _ in 0..trials {
        let mut layer = Linear::new("l", 5, 4, &mut rng);
        for v in layer.bias.value.data_mut() {
            *v = rng.normal();
        }
        let sys = LinearSys {
            x: randn(&mut rng, 5),
            c: randn(&mut rng, 4),
            layer,
        };
        let mut work = sys.clone();
        let dx = work.layer.backward(&sys.x, &sys.c)?;
        let analytic = vec![
            work.layer.weight.grad.data().to_vec(),
            work.layer.bias.grad.data().to_vec(),
            dx,
        ];
        check(&sys, &analytic, None, &mut rng, &mut tally)?;
    }
    Ok(report("linear", trials, 1e-6, tally))
}

#[derive(Clone)]
struct ReluSys {
    x: Vec<f64>,
    c: Vec<f64>,
}

impl System for ReluSys {
    fn tensors(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.x]
    }
    fn loss(&self) -> Result<f64> {
        Ok(dot(&self.c, &relu_fwd(&self.x)))
    }
}

pub fn check_relu(trials: usize, seed: u64) -> Result<LayerReport> {
    let mut rng = Rng::new(seed);
    let mut tally = Tally::default();
    for _ in 0..trials {
        // keep inputs clear of the kink at 0
        let x = (0..8)
            .map(|_| {
                let v = rng.uniform(0.05, 2.0);
                if rng.bernoulli(0.5) { v } else { -v }
            })
            .collect();
        let sys = ReluSys { x, c: randn(&mut rng, 8) };
        let analytic = vec![relu_bwd(&sys.c, &sys.x)];
        check(&sys, &analytic, None, &mut rng, &mut tally)?;
    }
    Ok(report("relu", trials, 1e-6, tally))
}

#[derive(Clone)]
struct ConvSys {
    kernels: ParamSlot,
    bias: ParamSlot,
    x: Tensor,
    c: Vec<f64>,
}

impl System for ConvSys {
    fn tensors(&mut self) -> Vec<&mut [f64]> {
        vec![self.kernels.value.data_mut(), self.bias.value.data_mut(), self.x.data_mut()]
    }
    fn loss(&self) -> Result<f64> {
        Ok(dot(&self.c, conv2d_fwd(&self.x, &self.kernels, &self.bias)?.data()))
    }
}

pub fn check_conv2d(trials: usize, seed: u64) -> Result<LayerReport> {
    let mut rng = Rng::new(seed);
    let mut tally = Tally::default();
    for _ in 0..trials {
        let (ci, co, h, w) = (2, 3, 5, 7);
        let sys = ConvSys {
            kernels: ParamSlot::new("k", Tensor::new([co, ci, 3, 3], randn(&mut rng, co * ci * 9))?),
            bias: ParamSlot::new("b", Tensor::vector(randn(&mut rng, co))),
            x: Tensor::new([ci, h, w], randn(&mut rng, ci * h * w))?,
            c: randn(&mut rng, co * h * w),
        };
        let mut work = sys.clone();
        let grad_out = Tensor::new([co, h, w], sys.c.clone())?;
        let dx = conv2d_bwd(&grad_out, &sys.x, &mut work.kernels, &mut work.bias)?;
        let analytic = vec![
            work.kernels.grad.data().to_vec(),
            work.bias.grad.data().to_vec(),
            dx.into_data(),
        ];
        check(&sys, &analytic, Some(12), &mut rng, &mut tally)?;
    }
    Ok(report("conv2d", trials, 1e-5, tally))
}

#[derive(Clone)]
struct PoolSys {
    x: Tensor,
    c: Vec<f64>,
}

impl System for PoolSys {
    fn tensors(&mut self) -> Vec<&mut [f64]> {
        vec![self.x.data_mut()]
    }
    fn loss(&self) -> Result<f64> {
        Ok(dot(&self.c, maxpool_fwd(&self.x)?.0.data()))
    }
}

pub fn check_maxpool(trials: usize, seed: u64) -> Result<LayerReport> {
    let mut rng = Rng::new(seed);
    let mut tally = Tally::default();
    for _ in 0..trials {
        // distinct values at least 0.1 apart, so ±h never changes the argmax
        let n = 2 * 2 * 9;
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        rng.shuffle(&mut vals);
        let sys = PoolSys {
            x: Tensor::new([2, 2, 9], vals)?,
            c: randn(&mut rng, 2 * 2 * 3),
        };
        let (_, cache) = maxpool_fwd(&sys.x)?;
        let dx = maxpool_bwd(&Tensor::new([2, 2, 3], sys.c.clone())?, &cache)?;
        check(&sys, &[dx.into_data()], None, &mut rng, &mut tally)?;
    }
    Ok(report("maxpool", trials, 1e-6, tally))
}

const LSTM_STEPS: usize = 4;

#[derive(Clone)]
struct LstmSys {
    cell: LstmCell,
    xs: Vec<f64>,
    h0: Vec<f64>,
    c0: Vec<f64>,
    ch: Vec<f64>,
    cc: Vec<f64>,
}

impl System for LstmSys {
    fn tensors(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.cell.w_input.value.data_mut(),
            self.cell.w_hidden.value.data_mut(),
            self.cell.bias.value.data_mut(),
            &mut self.xs,
            &mut self.h0,
            &mut self.c0,
        ]
    }
    fn loss(&self) -> Result<f64> {
        let (n_in, n_h) = (self.cell.input_size(), self.cell.hidden_size());
        let (mut h, mut c) = (self.h0.clone(), self.c0.clone());
        let mut total = 0.0;
        for t in 0..LSTM_STEPS {
            let (h2, c2, _) = self.cell.forward(&self.xs[t * n_in..(t + 1) * n_in], &h, &c)?;
            total += dot(&self.ch[t * n_h..(t + 1) * n_h], &h2);
            h = h2;
            c = c2;
        }
        Ok(total + dot(&self.cc, &c))
    }
}

pub fn check_lstm(trials: usize, seed: u64) -> Result<LayerReport> {
    let mut rng = Rng::new(seed);
    let mut tally = Tally::default();
    let (n_in, n_h) = (3, 4);
    for _ in 0..trials {
        let mut cell = LstmCell::new("c", n_in, n_h, &mut rng);
        for v in cell.bias.value.data_mut() {
            *v += 0.5 * rng.normal();
        }
        let sys = LstmSys {
            cell,
            xs: randn(&mut rng, LSTM_STEPS * n_in),
            h0: randn(&mut rng, n_h),
            c0: randn(&mut rng, n_h),
            ch: randn(&mut rng, LSTM_STEPS * n_h),
            cc: randn(&mut rng, n_h),
        };
        let mut work = sys.clone();
        let (mut h, mut c) = (sys.h0.clone(), sys.c0.clone());
        let mut caches = Vec::new();
        for t in 0..LSTM_STEPS {
            let (h2, c2, cache) = work.cell.forward(&sys.xs[t * n_in..(t + 1) * n_in], &h, &c)?;
            caches.push(cache);
            h = h2;
            c = c2;
        }
        let mut dxs = vec![0.0; LSTM_STEPS * n_in];
        let mut dh = vec![0.0; n_h];
        let mut dc = sys.cc.clone();
        for t in (0..LSTM_STEPS).rev() {
            for (a, b) in dh.iter_mut().zip(&sys.ch[t * n_h..(t + 1) * n_h]) {
                *a += b;
            }
            let g = work.cell.backward(&caches[t], &dh, &dc)?;
            dxs[t * n_in..(t + 1) * n_in].copy_from_slice(&g.x);
            dh = g.h_prev;
            dc = g.c_prev;
        }
        let analytic = vec![
            work.cell.w_input.grad.data().to_vec(),
            work.cell.w_hidden.grad.data().to_vec(),
            work.cell.bias.grad.data().to_vec(),
            dxs,
            dh,
            dc,
        ];
        check(&sys, &analytic, None, &mut rng, &mut tally)?;
    }
    Ok(report("lstm (4-step BPTT)", trials, 1e-5, tally))
}

#[derive(Clone)]
struct XentSys {
    logits: Vec<f64>,
    class: usize,
}

impl System for XentSys {
    fn tensors(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.logits]
    }
    fn loss(&self) -> Result<f64> {
        Ok(softmax_xent_fwd(&self.logits, self.class)?.1)
    }
}

pub fn check_softmax_xent(trials: usize, seed: u64) -> Result<LayerReport> {
    let mut rng = Rng::new(seed);
    let mut tally = Tally::default();
    for _ in 0..trials {
        let sys = XentSys {
            logits: randn(&mut rng, 6).into_iter().map(|v| 2.0 * v).collect(),
            class: rng.below(6),
        };
        let (probs, _) = softmax_xent_fwd(&sys.logits, sys.class)?;
        check(&sys, &[softmax_xent_bwd(&probs, sys.class)], None, &mut rng, &mut tally)?;
    }
    Ok(report("softmax-xent", trials, 1e-6, tally))
}

#[derive(Clone)]
struct GlimpseSys {
    net: GlimpseNet,
    retina: RetinaConfig,
    frame: Tensor,
    loc: [f64; 2],
    c: Vec<f64>,
}

impl System for GlimpseSys {
    fn tensors(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.net.params_mut().into_iter().map(|p| p.value.data_mut()).collect();
        v.push(self.frame.data_mut());
        v.push(&mut self.loc);
        v
    }
    fn loss(&self) -> Result<f64> {
        let l = Location {
            row: self.loc[0],
            col: self.loc[1],
        };
        let patch = extract_retina(&self.frame, l, &self.retina)?;
        Ok(dot(&self.c, &self.net.forward(patch.data.data(), l)?.0))
    }
}

/// Retina plus glimpse network: gradients w.r.t. both branches' weights, the
/// frame under the retina, and the location through the "where" branch.
pub fn check_glimpse(trials: usize, seed: u64) -> Result<LayerReport> {
    let mut rng = Rng::new(seed);
    let mut tally = Tally::default();
    let cfg = GlimpseConfig {
        retina: RetinaConfig {
            height: 4,
            width: 2,
            scales: 3,
            scale_factor: 2,
        },
        branch_dim: 6,
        glimpse_dim: 5,
    };
    let (fh, fw) = (11, 9);
    for _ in 0..trials {
        let mut net = GlimpseNet::new("g", &cfg, &mut rng);
        for p in net.params_mut() {
            if p.name.ends_with("bias") {
                for v in p.value.data_mut() {
                    *v = 0.3 * rng.normal();
                }
            }
        }
        let sys = GlimpseSys {
            net,
            retina: cfg.retina,
            frame: Tensor::new([fh, fw], randn(&mut rng, fh * fw))?,
            loc: [rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)],
            c: randn(&mut rng, cfg.glimpse_dim),
        };
        let mut work = sys.clone();
        let l = Location {
            row: sys.loc[0],
            col: sys.loc[1],
        };
        let patch = extract_retina(&sys.frame, l, &cfg.retina)?;
        let (_, cache) = work.net.forward(patch.data.data(), l)?;
        let g = work.net.backward(&cache, patch.data.data(), &sys.c)?;
        let d_frame = crate::glimpse::retina_backward(&g.patch, patch.center, (fh, fw), &cfg.retina)?;
        let mut analytic: Vec<Vec<f64>> = work.net.params().iter().map(|p| p.grad.data().to_vec()).collect();
        analytic.push(d_frame.into_data());
        analytic.push(g.location.to_vec());
        check(&sys, &analytic, Some(10), &mut rng, &mut tally)?;
    }
    Ok(report("glimpse network + retina", trials, 1e-5, tally))
}

#[derive(Clone)]
struct EncoderSys {
    enc: Encoder,
    frame: Tensor,
    c: Tensor,
}

impl System for EncoderSys {
    fn tensors(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.enc.params_mut().into_iter().map(|p| p.value.data_mut()).collect();
        v.push(self.frame.data_mut());
        v
    }
    fn loss(&self) -> Result<f64> {
        Ok(dot(self.c.data(), self.enc.forward(&self.frame)?.0.data()))
    }
}

pub fn check_encoder(trials: usize, seed: u64) -> Result<LayerReport> {
    let mut rng = Rng::new(seed);
    let mut tally = Tally::default();
    let mut cfg = ModelConfig::new(13, 9, 1, 2);
    cfg.conv_channels = [3, 2];
    for _ in 0..trials {
        let mut enc = Encoder::new("e", &cfg, &mut rng)?;
        for p in enc.params_mut() {
            if p.name.ends_with("bias") {
                for v in p.value.data_mut() {
                    *v = 0.2 * rng.normal();
                }
            }
        }
        let sys = EncoderSys {
            enc,
            frame: Tensor::new([13, 9], randn(&mut rng, 117))?,
            c: Tensor::new([13, 9], randn(&mut rng, 117))?,
        };
        let mut work = sys.clone();
        let (_, cache) = work.enc.forward(&sys.frame)?;
        let d_frame = work.enc.backward(&cache, &sys.c)?;
        let mut analytic: Vec<Vec<f64>> = work.enc.params().iter().map(|p| p.grad.data().to_vec()).collect();
        analytic.push(d_frame.into_data());
        check(&sys, &analytic, Some(8), &mut rng, &mut tally)?;
    }
    Ok(report("encoder", trials, 1e-4, tally))
}

#[derive(Clone)]
struct ModelSys {
    model: RaafModel,
    sample: Sample,
    template: Arc<crate::model::SampleTrace>,
    opts: BackwardOptions,
    seed: u64,
}

impl System for ModelSys {
    fn tensors(&mut self) -> Vec<&mut [f64]> {
        self.model.params_mut().into_iter().map(|p| p.value.data_mut()).collect()
    }
    fn loss(&self) -> Result<f64> {
        let mut rngs = copy_rngs(self.seed, self.template.copies.len());
        let trace = self.model.forward_replay(&self.sample, &self.template, &mut rngs, Mode::Train)?;
        Ok(self.model.loss_parts(&trace, &self.opts).total())
    }
}

/// The tiny configuration used for whole-model checks: 13×9 frames, two
/// frames of two glimpses, hidden size 8.
pub fn tiny_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(13, 9, 2, 3);
    cfg.glimpses = 2;
    cfg.copies = 2;
    cfg.conv_channels = [2, 2];
    cfg.attention_hidden = 8;
    cfg.frame_hidden = 8;
    cfg.glimpse = GlimpseConfig {
        retina: RetinaConfig {
            height: 4,
            width: 2,
            scales: 2,
            scale_factor: 2,
        },
        branch_dim: 6,
        glimpse_dim: 7,
    };
    cfg
}

fn check_model(trials: usize, seed: u64, reinforce: bool) -> Result<Tally> {
    let mut rng = Rng::new(seed);
    let mut tally = Tally::default();
    let cfg = tiny_model_config();
    for trial in 0..trials {
        let model = RaafModel::new(cfg.clone(), &mut rng)?;
        let frames = (0..cfg.frames)
            .map(|f| {
                Ok(ActivityFrame {
                    matrix: Tensor::new([13, 9], randn(&mut rng, 117))?,
                    frame_index: f,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sample = Sample {
            frames,
            label: rng.below(cfg.num_classes),
            subject_id: "gradcheck".into(),
        };
        let copy_seed = seed ^ trial as u64;
        let template = model.forward_sample(&sample, &mut copy_rngs(copy_seed, cfg.copies), Mode::Train)?;
        let opts = BackwardOptions {
            scale: 1.0,
            baseline: if reinforce { 0.3 } else { 0.0 },
            reinforce,
        };
        let mut work = model.clone();
        work.backward(&template, &opts)?;
        let analytic: Vec<Vec<f64>> = work.params().iter().map(|p| p.grad.data().to_vec()).collect();
        let sys = ModelSys {
            model,
            sample,
            template: Arc::new(template),
            opts,
            seed: copy_seed,
        };
        check(&sys, &analytic, Some(3), &mut rng, &mut tally)?;
    }
    Ok(tally)
}

/// Classification and action losses through every parameter, locations frozen.
pub fn check_full_path(trials: usize, seed: u64) -> Result<LayerReport> {
    Ok(report("full classification path (frozen locations)", trials, 1e-3, check_model(trials, seed, false)?))
}

/// As [`check_full_path`] plus the REINFORCE surrogate with fixed rewards.
pub fn check_reinforce_path(trials: usize, seed: u64) -> Result<LayerReport> {
    Ok(report("classification + REINFORCE surrogate", trials, 1e-3, check_model(trials, seed, true)?))
}

/// Every check, each with `trials` trials.
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<LayerReport>> {
    Ok(vec![
        check_linear(trials, seed)?,
        check_relu(trials, seed + 1)?,
        check_conv2d(trials, seed + 2)?,
        check_maxpool(trials, seed + 3)?,
        check_lstm(trials, seed + 4)?,
        check_softmax_xent(trials, seed + 5)?,
        check_glimpse(trials, seed + 6)?,
        check_encoder(trials, seed + 7)?,
        check_full_path(trials, seed + 8)?,
        check_reinforce_path(trials, seed + 9)?,
    ])
}
