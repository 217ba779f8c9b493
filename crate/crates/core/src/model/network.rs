use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frames::Sample;
use crate::glimpse::{extract_retina, retina_backward, GlimpseCache, GlimpseNet, Location};
use crate::kernel::{checkpoint, softmax, softmax_xent_fwd, Linear, LstmCache, LstmCell, ParamSlot, Rng, Tensor};
use crate::model::config::{FrameInput, ModelConfig};
use crate::model::encoder::{Encoder, EncoderCache};
use crate::model::policy::{
    gaussian_log_density, initial_location, reinforce_term, sample_location, LocationRecord, UNIFORM_LOG_DENSITY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sampled locations, caches kept for backward.
    Train,
    /// No caches; locations sampled unless the config asks for greedy means.
    Eval,
}

/// LSTM-a state within one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub t: usize,
}

/// Result of one glimpse step.
#[derive(Debug, Clone)]
pub struct AttendOutput {
    pub state: AttentionState,
    pub action_logits: Vec<f64>,
    /// `tanh(Linear(h))`, the mean of the next location.
    pub next_mean: Location,
    cache: StepCache,
}

#[derive(Debug, Clone)]
struct StepCache {
    glimpse: GlimpseCache,
    lstm: LstmCache,
    h: Vec<f64>,
}

#[derive(Debug, Clone)]
struct FrameCache {
    steps: Vec<StepCache>,
    h_final: Vec<f64>,
}

#[derive(Debug, Clone)]
struct CopyCache {
    frames: Vec<FrameCache>,
    lstm_f: Vec<LstmCache>,
    r_final: Vec<f64>,
}

/// One Monte Carlo copy's attention sequence and outcome.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    /// `F · T` records, frame-major.
    pub locations: Vec<LocationRecord>,
    /// Final action distribution of each frame.
    pub actions: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub prediction: usize,
    /// 1 when this copy's own prediction is correct, else 0.
    pub reward: f64,
    cache: Option<CopyCache>,
}

/// Everything one `forward_sample` produced.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub label: usize,
    /// Mean of the copies' class distributions.
    pub probs: Vec<f64>,
    pub prediction: usize,
    pub copies: Vec<EpisodeTrace>,
    convs: Vec<Tensor>,
    encoder: Vec<EncoderCache>,
}

impl SampleTrace {
    pub fn conv_frames(&self) -> &[Tensor] {
        &self.convs
    }

    pub fn has_caches(&self) -> bool {
        !self.encoder.is_empty() && self.copies.iter().all(|c| c.cache.is_some())
    }

    /// Mean over copies of each copy's cross-entropy.
    pub fn classification_loss(&self) -> f64 {
        mean(self.copies.iter().map(|c| xent(&c.logits, self.label)))
    }

    pub fn mean_reward(&self) -> f64 {
        mean(self.copies.iter().map(|c| c.reward))
    }
}

/// Per-sample weights applied in [`RaafModel::backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardOptions {
    /// Multiplies every gradient, typically `1 / batch_size`.
    pub scale: f64,
    /// Subtracted from each copy's reward.
    pub baseline: f64,
    pub reinforce: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub classification: f64,
    pub action: f64,
    /// `-(1/M) Σ_i (R_i - b) Σ log π`, whose gradient is the REINFORCE term.
    pub reinforce: f64,
    pub mean_reward: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.classification + self.action + self.reinforce
    }
}

/// Convolutional encoder, glimpse network, attention LSTM with location and
/// action heads, frame LSTM and class head.
#[derive(Debug, Clone)]
pub struct RaafModel {
    config: ModelConfig,
    pub encoder: Encoder,
    pub glimpse: GlimpseNet,
    pub lstm_a: LstmCell,
    pub loc_head: Linear,
    pub action_head: Linear,
    pub lstm_f: LstmCell,
    pub class_head: Linear,
}

impl RaafModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let frame_in = match config.frame_input {
            FrameInput::Hidden => config.attention_hidden,
            FrameInput::Action => config.num_classes,
        };
        Ok(RaafModel {
            encoder: Encoder::new("encoder", &config, rng)?,
            glimpse: GlimpseNet::new("glimpse", &config.glimpse, rng),
            lstm_a: LstmCell::new("lstm_a", config.glimpse.glimpse_dim, config.attention_hidden, rng),
            loc_head: Linear::new("loc_head", config.attention_hidden, 2, rng),
            action_head: Linear::new("action_head", config.attention_hidden, config.num_classes, rng),
            lstm_f: LstmCell::new("lstm_f", frame_in, config.frame_hidden, rng),
            class_head: Linear::new("class_head", config.frame_hidden, config.num_classes, rng),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&ParamSlot> {
        let mut v = self.encoder.params();
        v.extend(self.glimpse.params());
        v.extend(self.lstm_a.params());
        v.extend(self.loc_head.params());
        v.extend(self.action_head.params());
        v.extend(self.lstm_f.params());
        v.extend(self.class_head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamSlot> {
        let mut v = self.encoder.params_mut();
        v.extend(self.glimpse.params_mut());
        v.extend(self.lstm_a.params_mut());
        v.extend(self.loc_head.params_mut());
        v.extend(self.action_head.params_mut());
        v.extend(self.lstm_f.params_mut());
        v.extend(self.class_head.params_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn encode_frame(&self, frame: &Tensor) -> Result<Tensor> {
        self.encoder.forward(frame).map(|(c, _)| c)
    }

    pub fn initial_attention_state(&self, rng: &mut Rng) -> AttentionState {
        let n = self.config.attention_hidden;
        let (h, c) = self.initial_state(n, rng);
        AttentionState { h, c, t: 0 }
    }

    fn initial_state(&self, n: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        if self.config.random_initial_state {
            let h = (0..n).map(|_| rng.uniform(-0.1, 0.1)).collect();
            let c = (0..n).map(|_| rng.uniform(-0.1, 0.1)).collect();
            (h, c)
        } else {
            (vec![0.0; n], vec![0.0; n])
        }
    }

    /// Glimpse at `l`, advance LSTM-a, and read both heads.
    pub fn attend_step(&self, conv: &Tensor, state: &AttentionState, l: Location) -> Result<AttendOutput> {
        let patch = extract_retina(conv, l, &self.config.glimpse.retina)?;
        let (g, glimpse) = self.glimpse.forward(patch.data.data(), l)?;
        let (h, c, lstm) = self.lstm_a.forward(&g, &state.h, &state.c)?;
        let action_logits = self.action_head.forward(&h)?;
        let m = self.loc_head.forward(&h)?;
        let next_mean = Location {
            row: m[0].tanh(),
            col: m[1].tanh(),
        };
        Ok(AttendOutput {
            state: AttentionState {
                h: h.clone(),
                c,
                t: state.t + 1,
            },
            action_logits,
            next_mean,
            cache: StepCache { glimpse, lstm, h },
        })
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        let cfg = &self.config;
        if sample.frames.len() != cfg.frames {
            return Err(Error::Dimension(format!(
                "sample has {} frames, model expects {}",
                sample.frames.len(),
                cfg.frames
            )));
        }
        if sample.frame_shape() != (cfg.frame_height, cfg.frame_width)
            || sample.frames.iter().any(|f| f.matrix.shape() != [cfg.frame_height, cfg.frame_width])
        {
            return Err(Error::Dimension(format!(
                "sample frames are {:?}, model expects {}x{}",
                sample.frame_shape(),
                cfg.frame_height,
                cfg.frame_width
            )));
        }
        if sample.label >= cfg.num_classes {
            return Err(Error::Argument(format!(
                "label {} out of range for {} classes",
                sample.label, cfg.num_classes
            )));
        }
        Ok(())
    }

    /// Runs one copy per entry of `copy_rngs`; each copy draws only from its
    /// own generator, so copies are independent of evaluation order.
    pub fn forward_sample(&self, sample: &Sample, copy_rngs: &mut [Rng], mode: Mode) -> Result<SampleTrace> {
        self.forward_impl(sample, copy_rngs, mode, None)
    }

    /// Re-runs `sample` attending exactly where `template` attended, with
    /// rewards held at the template's values. Log-densities are re-evaluated
    /// under the current policy, so the result is a differentiable function of
    /// the parameters with the locations frozen.
    pub fn forward_replay(
        &self,
        sample: &Sample,
        template: &SampleTrace,
        copy_rngs: &mut [Rng],
        mode: Mode,
    ) -> Result<SampleTrace> {
        if template.copies.len() != copy_rngs.len() {
            return Err(Error::Argument(format!(
                "replay of {} copies given {} generators",
                template.copies.len(),
                copy_rngs.len()
            )));
        }
        let expected = self.config.frames * self.config.glimpses;
        if template.copies.iter().any(|c| c.locations.len() != expected) {
            return Err(Error::State(format!("replay template lacks {expected} location records")));
        }
        self.forward_impl(sample, copy_rngs, mode, Some(template))
    }

    fn forward_impl(
        &self,
        sample: &Sample,
        copy_rngs: &mut [Rng],
        mode: Mode,
        template: Option<&SampleTrace>,
    ) -> Result<SampleTrace> {
        self.check_sample(sample)?;
        if copy_rngs.is_empty() {
            return Err(Error::Argument("forward needs at least one Monte Carlo copy".into()));
        }
        let mut convs = Vec::with_capacity(sample.frames.len());
        let mut encoder = Vec::new();
        for frame in &sample.frames {
            let (c, cache) = self.encoder.forward(&frame.matrix)?;
            convs.push(c);
            if mode == Mode::Train {
                encoder.push(cache);
            }
        }
        let copies = copy_rngs
            .par_iter_mut()
            .enumerate()
            .map(|(i, rng)| {
                let fixed = template.map(|t| &t.copies[i]);
                let mut copy = self.run_copy(&convs, sample.label, rng, mode, fixed)?;
                if let Some(f) = fixed {
                    copy.reward = f.reward;
                }
                Ok(copy)
            })
            .collect::<Result<Vec<_>>>()?;
        let c = self.config.num_classes;
        let mut probs = vec![0.0; c];
        for copy in &copies {
            for (p, q) in probs.iter_mut().zip(&copy.probs) {
                *p += q;
            }
        }
        let m = copies.len() as f64;
        probs.iter_mut().for_each(|p| *p /= m);
        Ok(SampleTrace {
            label: sample.label,
            prediction: argmax(&probs),
            probs,
            copies,
            convs,
            encoder,
        })
    }

    /// `config.copies` copies on streams `0..M` of `seed`.
    pub fn forward_seeded(&self, sample: &Sample, seed: u64, mode: Mode) -> Result<SampleTrace> {
        let mut rngs = copy_rngs(seed, self.config.copies);
        self.forward_sample(sample, &mut rngs, mode)
    }

    fn run_copy(
        &self,
        convs: &[Tensor],
        label: usize,
        rng: &mut Rng,
        mode: Mode,
        fixed: Option<&EpisodeTrace>,
    ) -> Result<EpisodeTrace> {
        let cfg = &self.config;
        let (t_max, keep) = (cfg.glimpses, mode == Mode::Train);
        let greedy = mode == Mode::Eval && cfg.greedy_eval;
        let mut locations = Vec::with_capacity(convs.len() * t_max);
        let mut actions = Vec::with_capacity(convs.len());
        let mut frame_caches = Vec::new();
        let mut lstm_f_caches = Vec::new();
        let (mut r, mut rc) = self.initial_state(cfg.frame_hidden, rng);
        for (f, conv) in convs.iter().enumerate() {
            let mut state = self.initial_attention_state(rng);
            let mut l = match fixed {
                Some(tr) => tr.locations[f * t_max].location,
                None => initial_location(rng),
            };
            let mut record = LocationRecord {
                frame: f,
                step: 0,
                mean: None,
                raw: l.to_array(),
                location: l,
                log_density: UNIFORM_LOG_DENSITY,
            };
            let mut steps = Vec::new();
            let mut last_logits = Vec::new();
            for t in 0..t_max {
                locations.push(record);
                let out = self.attend_step(conv, &state, l)?;
                if t + 1 < t_max {
                    let mean = out.next_mean;
                    let (next, raw, log_density) = if let Some(tr) = fixed {
                        let rec = &tr.locations[f * t_max + t + 1];
                        let lp = gaussian_log_density(rec.raw, mean, cfg.location_variance);
                        (rec.location, rec.raw, lp)
                    } else if greedy {
                        (mean, mean.to_array(), gaussian_log_density(mean.to_array(), mean, cfg.location_variance))
                    } else {
                        sample_location(mean, cfg.location_variance, rng)
                    };
                    l = next;
                    record = LocationRecord {
                        frame: f,
                        step: t + 1,
                        mean: Some(mean),
                        raw,
                        location: next,
                        log_density,
                    };
                }
                state = out.state;
                last_logits = out.action_logits;
                if keep {
                    steps.push(out.cache);
                }
            }
            let action = softmax(&last_logits);
            let frame_in = match cfg.frame_input {
                FrameInput::Hidden => state.h.clone(),
                FrameInput::Action => action.clone(),
            };
            let (r_next, rc_next, lstm_cache) = self.lstm_f.forward(&frame_in, &r, &rc)?;
            r = r_next;
            rc = rc_next;
            actions.push(action);
            if keep {
                frame_caches.push(FrameCache {
                    steps,
                    h_final: state.h,
                });
                lstm_f_caches.push(lstm_cache);
            }
        }
        let logits = self.class_head.forward(&r)?;
        let probs = softmax(&logits);
        let prediction = argmax(&probs);
        Ok(EpisodeTrace {
            locations,
            actions,
            logits,
            probs,
            prediction,
            reward: reward(prediction, label),
            cache: keep.then_some(CopyCache {
                frames: frame_caches,
                lstm_f: lstm_f_caches,
                r_final: r,
            }),
        })
    }

    /// Accumulates the gradient of classification + action + REINFORCE
    /// losses for one traced sample.
    ///
    /// The REINFORCE term reaches the location head and, through it, LSTM-a,
    /// the glimpse network and the encoder. No gradient passes through the
    /// sampled locations themselves.
    pub fn backward(&mut self, trace: &SampleTrace, opts: &BackwardOptions) -> Result<LossParts> {
        if !trace.has_caches() {
            return Err(Error::State(
                "backward needs a trace recorded in training mode".into(),
            ));
        }
        let cfg = self.config.clone();
        let (h_a, t_max, n_frames) = (cfg.attention_hidden, cfg.glimpses, cfg.frames);
        if trace.convs.len() != n_frames {
            return Err(Error::State("trace does not belong to this model".into()));
        }
        let m = trace.copies.len() as f64;
        let w = opts.scale / m;
        let y = trace.label;
        let mut d_convs: Vec<Tensor> = trace.convs.iter().map(|c| Tensor::zeros(c.shape())).collect();
        let parts = self.loss_parts(trace, opts);

        for copy in &trace.copies {
            let cache = copy.cache.as_ref().expect("checked above");
            let advantage = copy.reward - opts.baseline;

            let mut dz = copy.probs.clone();
            dz[y] -= 1.0;
            dz.iter_mut().for_each(|v| *v *= w);
            let mut dr = self.class_head.backward(&cache.r_final, &dz)?;
            let mut drc = vec![0.0; cfg.frame_hidden];
            let mut d_frame_in = vec![Vec::new(); n_frames];
            for f in (0..n_frames).rev() {
                let g = self.lstm_f.backward(&cache.lstm_f[f], &dr, &drc)?;
                dr = g.h_prev;
                drc = g.c_prev;
                d_frame_in[f] = g.x;
            }

            for (f, fc) in cache.frames.iter().enumerate() {
                let action = &copy.actions[f];
                let mut d_logits = vec![0.0; cfg.num_classes];
                let mut dh = vec![0.0; h_a];
                match cfg.frame_input {
                    FrameInput::Hidden => dh.copy_from_slice(&d_frame_in[f]),
                    FrameInput::Action => {
                        let da = &d_frame_in[f];
                        let dot: f64 = action.iter().zip(da).map(|(p, d)| p * d).sum();
                        for k in 0..d_logits.len() {
                            d_logits[k] += action[k] * (da[k] - dot);
                        }
                    }
                }
                if cfg.action_loss_weight > 0.0 {
                    let a = cfg.action_loss_weight / n_frames as f64;
                    for k in 0..d_logits.len() {
                        let onehot = if k == y { 1.0 } else { 0.0 };
                        d_logits[k] += w * a * (action[k] - onehot);
                    }
                }
                let from_action = self.action_head.backward(&fc.h_final, &d_logits)?;
                dh.iter_mut().zip(from_action).for_each(|(a, b)| *a += b);

                let mut dc = vec![0.0; h_a];
                for t in (0..t_max).rev() {
                    let step = &fc.steps[t];
                    if opts.reinforce && t + 1 < t_max {
                        let rec = &copy.locations[f * t_max + t + 1];
                        let mean = rec.mean.ok_or_else(|| {
                            Error::State(format!("frame {f} step {} lacks a policy mean", t + 1))
                        })?;
                        let term = reinforce_term(rec.raw, mean, cfg.location_variance, advantage);
                        let d_pre = [
                            -w * term[0] * (1.0 - mean.row * mean.row),
                            -w * term[1] * (1.0 - mean.col * mean.col),
                        ];
                        let from_loc = self.loc_head.backward(&step.h, &d_pre)?;
                        dh.iter_mut().zip(from_loc).for_each(|(a, b)| *a += b);
                    }
                    let g = self.lstm_a.backward(&step.lstm, &dh, &dc)?;
                    dh = g.h_prev;
                    dc = g.c_prev;
                    let l = copy.locations[f * t_max + t].location;
                    let patch = extract_retina(&trace.convs[f], l, &cfg.glimpse.retina)?;
                    let gg = self.glimpse.backward(&step.glimpse, patch.data.data(), &g.x)?;
                    let d_conv = retina_backward(
                        &gg.patch,
                        patch.center,
                        (cfg.frame_height, cfg.frame_width),
                        &cfg.glimpse.retina,
                    )?;
                    d_convs[f].add_assign(&d_conv)?;
                }
            }
        }
        for (cache, d) in trace.encoder.iter().zip(&d_convs) {
            self.encoder.backward(cache, d)?;
        }
        Ok(parts)
    }

    /// The objective [`RaafModel::backward`] differentiates, unscaled.
    pub fn loss_parts(&self, trace: &SampleTrace, opts: &BackwardOptions) -> LossParts {
        let cfg = &self.config;
        let m = trace.copies.len() as f64;
        let y = trace.label;
        let mut parts = LossParts {
            mean_reward: trace.mean_reward(),
            ..LossParts::default()
        };
        for copy in &trace.copies {
            parts.classification += xent(&copy.logits, y) / m;
            if cfg.action_loss_weight > 0.0 {
                let a = cfg.action_loss_weight / copy.actions.len() as f64;
                for action in &copy.actions {
                    parts.action += a * -action[y].max(f64::MIN_POSITIVE).ln() / m;
                }
            }
            if opts.reinforce {
                let advantage = copy.reward - opts.baseline;
                let log_pi: f64 = copy.locations.iter().filter(|r| r.is_policy()).map(|r| r.log_density).sum();
                parts.reinforce -= advantage * log_pi / m;
            }
        }
        parts
    }

    /// Writes the parameters to `path` and the config to [`config_path`]`(path)`.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, self.params())?;
        let side = config_path(path);
        std::fs::write(&side, self.config.to_toml()).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = config_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let config = ModelConfig::from_toml(&text)?;
        let records = checkpoint::read(path)?;
        let mut model = RaafModel::new(config, &mut Rng::new(0))?;
        checkpoint::restore(&mut model.params_mut(), records)?;
        Ok(model)
    }
}

/// Sidecar holding the model config of checkpoint `path`.
pub fn config_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".toml");
    path.with_file_name(name)
}

pub fn copy_rngs(seed: u64, copies: usize) -> Vec<Rng> {
    (0..copies as u64).map(|i| Rng::with_stream(seed, i)).collect()
}

/// Terminal reward: 1 for a correct prediction, 0 otherwise.
pub fn reward(prediction: usize, label: usize) -> f64 {
    if prediction == label {
        1.0
    } else {
        0.0
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn xent(logits: &[f64], label: usize) -> f64 {
    softmax_xent_fwd(logits, label).map(|(_, l)| l).unwrap_or(f64::NAN)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}
