use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{ChannelStats, Sample};
use crate::kernel::{Rng, SgdMomentum};
use crate::model::{copy_rngs, BackwardOptions, Mode, ModelConfig, RaafModel, SampleTrace};
use crate::train::config::TrainConfig;
use crate::train::metrics::{export_modality_involvement, ConfusionMatrix, GlimpseHeatmap, LatencyStats, ModalityShare};
use crate::train::reinforce::RewardBaseline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sample total objective.
    pub loss: f64,
    pub classification_loss: f64,
    pub action_loss: f64,
    pub reinforce_loss: f64,
    pub train_accuracy: f64,
    pub mean_reward: f64,
    /// Baseline value after the epoch's last update.
    pub baseline: f64,
    pub validation_accuracy: Option<f64>,
}

pub const HISTORY_HEADER: &str =
    "epoch,loss,classification_loss,action_loss,reinforce_loss,train_accuracy,mean_reward,baseline,validation_accuracy";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.loss,
            self.classification_loss,
            self.action_loss,
            self.reinforce_loss,
            self.train_accuracy,
            self.mean_reward,
            self.baseline,
            self.validation_accuracy.map_or(String::new(), |v| v.to_string())
        )
    }
}

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for m in history {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}

/// Copy-seed of sample `index` under `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    Rng::with_stream(seed, index as u64).next_u64()
}

/// A model with its optimiser state, reward baseline and sampling stream.
pub struct Trainer {
    pub model: RaafModel,
    pub config: TrainConfig,
    optimizer: SgdMomentum,
    baseline: RewardBaseline,
    rng: Rng,
}

impl Trainer {
    /// Parameters are drawn from stream 0 of `seed`; shuffling and location
    /// sampling use stream 1.
    pub fn new(model_config: ModelConfig, config: &TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = RaafModel::new(model_config, &mut Rng::with_stream(seed, 0))?;
        Ok(Trainer {
            model,
            config: config.clone(),
            optimizer: SgdMomentum::new(config.optimizer()),
            baseline: RewardBaseline::new(config.baseline_enabled, config.baseline_decay),
            rng: Rng::with_stream(seed, 1),
        })
    }

    pub fn baseline(&self) -> f64 {
        self.baseline.current()
    }

    /// One pass over `samples` in shuffled mini-batches, one optimiser step per batch.
    pub fn train_epoch(&mut self, samples: &[Sample], epoch: usize) -> Result<EpochMetrics> {
        if samples.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        self.rng.shuffle(&mut order);
        let copies = self.model.config().copies;
        let mut m = EpochMetrics {
            epoch,
            loss: 0.0,
            classification_loss: 0.0,
            action_loss: 0.0,
            reinforce_loss: 0.0,
            train_accuracy: 0.0,
            mean_reward: 0.0,
            baseline: 0.0,
            validation_accuracy: None,
        };
        let mut correct = 0usize;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            self.model.zero_grad();
            let opts = BackwardOptions {
                scale: 1.0 / batch.len() as f64,
                baseline: self.baseline.current(),
                reinforce: self.config.reinforce_enabled,
            };
            let mut batch_reward = 0.0;
            for &i in batch {
                let mut rngs = copy_rngs(self.rng.next_u64(), copies);
                let trace = self.model.forward_sample(&samples[i], &mut rngs, Mode::Train)?;
                let parts = self.model.backward(&trace, &opts)?;
                if !parts.total().is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, batch {b} ({parts:?}); parameter norms: {}",
                        self.parameter_norms()
                    )));
                }
                m.loss += parts.total();
                m.classification_loss += parts.classification;
                m.action_loss += parts.action;
                m.reinforce_loss += parts.reinforce;
                batch_reward += parts.mean_reward;
                correct += usize::from(trace.prediction == trace.label);
            }
            self.optimizer.step(&mut self.model.params_mut()).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            self.baseline.update(batch_reward / batch.len() as f64);
            m.mean_reward += batch_reward;
        }
        let n = samples.len() as f64;
        m.loss /= n;
        m.classification_loss /= n;
        m.action_loss /= n;
        m.reinforce_loss /= n;
        m.mean_reward /= n;
        m.train_accuracy = correct as f64 / n;
        m.baseline = self.baseline.current();
        Ok(m)
    }

    fn parameter_norms(&self) -> String {
        self.model
            .params()
            .iter()
            .map(|p| format!("{}={:.3e}", p.name, p.value.l2_norm()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub heatmap: GlimpseHeatmap,
    pub latency: LatencyStats,
    pub mean_reward: f64,
}

impl EvalReport {
    /// Checks the counting identities of an evaluation over `samples`:
    /// confusion rows equal class counts, accuracy equals the matrix trace
    /// share, the heatmap holds `samples · M · T · F` visits, and the modality
    /// shares close to 100 ± 0.1 %. Returns the modality shares.
    pub fn verify(&self, samples: &[Sample], row_groups: &[String]) -> Result<Vec<ModalityShare>> {
        let mut counts = vec![0u64; self.confusion.num_classes()];
        for s in samples {
            counts[s.label] += 1;
        }
        let fail = |what: String| Err(Error::State(format!("evaluation accounting: {what}")));
        if self.confusion.row_sums() != counts {
            return fail(format!("confusion rows {:?} vs class counts {counts:?}", self.confusion.row_sums()));
        }
        if self.confusion.accuracy() != self.accuracy {
            return fail(format!("accuracy {} vs matrix {}", self.accuracy, self.confusion.accuracy()));
        }
        if self.heatmap.samples != samples.len() || self.heatmap.total() != self.heatmap.expected_total() {
            return fail(format!(
                "heatmap holds {} visits over {} samples, expected {}",
                self.heatmap.total(),
                self.heatmap.samples,
                self.heatmap.expected_total()
            ));
        }
        let shares = export_modality_involvement(&self.heatmap, row_groups)?;
        let closure: f64 = shares.iter().map(|m| m.percent).sum();
        if (closure - 100.0).abs() > 0.1 {
            return fail(format!("modality shares sum to {closure}"));
        }
        Ok(shares)
    }
}

/// Evaluation-mode pass over `samples`. Sample `i` draws its copies from
/// [`sample_seed`]`(seed, i)`, so results do not depend on evaluation order.
pub fn evaluate(model: &RaafModel, samples: &[Sample], class_names: &[String], seed: u64) -> Result<EvalReport> {
    evaluate_with(model, samples, class_names, seed, |_, _| ())
}

/// As [`evaluate`], also handing every trace to `inspect`.
pub fn evaluate_with(
    model: &RaafModel,
    samples: &[Sample],
    class_names: &[String],
    seed: u64,
    mut inspect: impl FnMut(&Sample, &SampleTrace),
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    if class_names.len() != model.config().num_classes {
        return Err(Error::Dimension(format!(
            "{} class names for a {}-class model",
            class_names.len(),
            model.config().num_classes
        )));
    }
    let mut confusion = ConfusionMatrix::new(class_names);
    let mut heatmap = GlimpseHeatmap::new(model.config());
    let mut secs = Vec::with_capacity(samples.len());
    let mut correct = 0usize;
    let mut reward = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let mut rngs = copy_rngs(sample_seed(seed, i), model.config().copies);
        let start = Instant::now();
        let trace = model.forward_sample(s, &mut rngs, Mode::Eval)?;
        secs.push(start.elapsed().as_secs_f64());
        confusion.record(s.label, trace.prediction);
        heatmap.record(&trace);
        correct += usize::from(trace.prediction == s.label);
        reward += trace.mean_reward();
        inspect(s, &trace);
    }
    Ok(EvalReport {
        accuracy: correct as f64 / samples.len() as f64,
        confusion,
        heatmap,
        latency: LatencyStats::from_seconds(secs),
        mean_reward: reward / samples.len() as f64,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RaafModel,
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Trains for up to `config.epochs` epochs. With a validation set and a
/// positive patience, keeps the parameters of the best validation epoch and
/// stops after `patience` epochs without improvement.
pub fn train_model(
    model_config: ModelConfig,
    config: &TrainConfig,
    train: &[Sample],
    validation: &[Sample],
    class_names: &[String],
    seed: u64,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model_config, config, seed)?;
    let early_stop = !validation.is_empty() && config.patience > 0;
    let val_seed = Rng::with_stream(seed, 2).next_u64();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, RaafModel)> = None;
    for epoch in 1..=config.epochs {
        let mut m = trainer.train_epoch(train, epoch)?;
        if !validation.is_empty() {
            let acc = evaluate(&trainer.model, validation, class_names, val_seed)?.accuracy;
            m.validation_accuracy = Some(acc);
            if early_stop && best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, trainer.model.clone()));
            }
        }
        history.push(m);
        if let Some((_, best_epoch, _)) = &best {
            if epoch - best_epoch >= config.patience {
                break;
            }
        }
    }
    Ok(match best {
        Some((_, best_epoch, model)) => TrainOutcome {
            model,
            history,
            best_epoch,
        },
        None => TrainOutcome {
            best_epoch: history.len(),
            model: trainer.model,
            history,
        },
    })
}

/// A model plus the normalisation it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: RaafModel,
    pub stats: Option<ChannelStats>,
}

/// Location of the normalisation statistics stored next to a checkpoint.
pub fn stats_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".norm.toml");
    PathBuf::from(s)
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.model.save(path)?;
        let side = stats_path(path);
        match &self.stats {
            Some(stats) => {
                let text = toml::to_string(stats).map_err(|e| Error::State(format!("normalisation stats: {e}")))?;
                std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
            }
            None => match std::fs::remove_file(&side) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(&side, e)),
                _ => Ok(()),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model = RaafModel::load(path)?;
        let side = stats_path(path);
        let stats = match std::fs::read_to_string(&side) {
            Ok(text) => Some(toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", side.display())))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(&side, e)),
        };
        Ok(TrainedModel { model, stats })
    }
}
