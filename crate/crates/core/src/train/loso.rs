use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{fold_seed, loso_splits, subsample_indices, Dataset, LosoSplit, SubsampleSize};
use crate::error::{Error, Result};
use crate::frames::{normalize, ChannelStats, Sample};
use crate::kernel::Rng;
use crate::model::ModelConfig;
use crate::train::config::TrainConfig;
use crate::train::fit::{evaluate, history_csv, train_model, EpochMetrics, EvalReport, TrainedModel};
use crate::train::metrics::{
    export_modality_involvement, frame_row_groups, involvement_csv, ConfusionMatrix, GlimpseHeatmap, ModalityShare,
};

pub const CONFIG_ECHO: &str = "train_config.toml";
pub const DATASET_ECHO: &str = "dataset.toml";
pub const CHECKPOINT_FILE: &str = "model.raaf";

/// FNV-1a over labels, subjects and the bit patterns of every frame value.
pub fn checksum<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for s in samples {
        eat(&(s.label as u64).to_le_bytes());
        eat(s.subject_id.as_bytes());
        for f in &s.frames {
            for v in f.matrix.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
    }
    h
}

/// Which samples a fold trains, validates and tests on.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub split: LosoSplit,
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions by subject, optionally subsamples the training side to
/// `train_size` samples (all of them when larger), then holds out the
/// configured validation share.
pub fn plan_fold(dataset: &Dataset, split: &LosoSplit, config: &TrainConfig, train_size: Option<usize>) -> Result<FoldPlan> {
    let seed = fold_seed(config.seed, &split.held_out_subject);
    let (mut train, mut test) = split.partition(&dataset.samples)?;
    // subject-major order, so results do not depend on how subjects are interleaved
    let by_subject = |i: &usize| dataset.samples[*i].subject_id.clone();
    train.sort_by_key(by_subject);
    test.sort_by_key(by_subject);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!("fold {} has an empty side", split.held_out_subject)));
    }
    if let Some(n) = train_size {
        let labels: Vec<usize> = train.iter().map(|&i| dataset.samples[i].label).collect();
        let keep = subsample_indices(&labels, SubsampleSize::Total(n.min(train.len())), seed ^ 0x5ab5_a3b1)?;
        train = keep.into_iter().map(|k| train[k]).collect();
    }
    let n_val = (config.validation_fraction * train.len() as f64).floor() as usize;
    let mut validation = Vec::new();
    if n_val > 0 && n_val < train.len() {
        let mut shuffled = train.clone();
        Rng::with_stream(seed, 3).shuffle(&mut shuffled);
        let mut held: Vec<usize> = shuffled[..n_val].to_vec();
        held.sort_unstable();
        train.retain(|i| held.binary_search(i).is_err());
        held.sort_by_key(by_subject);
        validation = held;
    }
    Ok(FoldPlan {
        split: split.clone(),
        seed,
        train,
        validation,
        test,
    })
}

/// Owned, normalised copies of one fold's samples.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: Option<ChannelStats>,
}

/// Copies the planned samples and standardises them with statistics fitted
/// on the training side only, or with `stats` when given.
pub fn materialize(dataset: &Dataset, plan: &FoldPlan, normalize_frames: bool, stats: Option<&ChannelStats>) -> Result<FoldData> {
    let take = |idx: &[usize]| idx.iter().map(|&i| dataset.samples[i].clone()).collect::<Vec<_>>();
    let (mut train, mut validation, mut test) = (take(&plan.train), take(&plan.validation), take(&plan.test));
    let stats = match (normalize_frames, stats) {
        (_, Some(s)) => Some(s.clone()),
        (true, None) => Some(ChannelStats::fit(&dataset.geometry, train.iter().flat_map(|s| &s.frames))?),
        (false, None) => None,
    };
    if let Some(s) = &stats {
        for set in [&mut train, &mut validation, &mut test] {
            normalize(&dataset.geometry, set.iter_mut().flat_map(|s| &mut s.frames), s)?;
        }
    }
    Ok(FoldData {
        train,
        validation,
        test,
        stats,
    })
}

pub fn model_config_for(dataset: &Dataset, config: &TrainConfig) -> Result<ModelConfig> {
    config
        .model
        .model_config(dataset.frame_shape(), dataset.frames_per_sample(), dataset.num_classes())
}

/// Seed of the evaluation pass of a fold.
pub fn eval_seed(fold_seed: u64) -> u64 {
    Rng::with_stream(fold_seed, 4).next_u64()
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub subject: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub eval: EvalReport,
    pub trained: TrainedModel,
    pub test_checksum: u64,
}

/// Trains on one split and evaluates on its held-out subject. The test
/// samples are checksummed before training and after evaluation; a change
/// is reported as a state error.
pub fn run_fold(dataset: &Dataset, split: &LosoSplit, config: &TrainConfig, train_size: Option<usize>) -> Result<FoldResult> {
    let plan = plan_fold(dataset, split, config, train_size)?;
    let raw_before = checksum(plan.test.iter().map(|&i| &dataset.samples[i]));
    let data = materialize(dataset, &plan, config.normalize, None)?;
    let before = checksum(&data.test);
    let outcome = train_model(
        model_config_for(dataset, config)?,
        config,
        &data.train,
        &data.validation,
        dataset.class_names(),
        plan.seed,
    )?;
    let eval = evaluate(&outcome.model, &data.test, dataset.class_names(), eval_seed(plan.seed))?;
    eval.verify(&data.test, &frame_row_groups(&dataset.geometry, &dataset.row_groups()))?;
    if checksum(&data.test) != before || checksum(plan.test.iter().map(|&i| &dataset.samples[i])) != raw_before {
        return Err(Error::State(format!("test data of fold {} changed during training", split.held_out_subject)));
    }
    Ok(FoldResult {
        subject: split.held_out_subject.clone(),
        seed: plan.seed,
        n_train: data.train.len(),
        n_validation: data.validation.len(),
        n_test: data.test.len(),
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        eval,
        trained: TrainedModel {
            model: outcome.model,
            stats: data.stats,
        },
        test_checksum: before,
    })
}

#[derive(Debug, Clone)]
pub struct LosoReport {
    /// In held-out-subject order.
    pub folds: Vec<FoldResult>,
    /// Unweighted mean of the fold accuracies.
    pub mean_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub heatmap: GlimpseHeatmap,
    pub involvement: Vec<ModalityShare>,
}

impl LosoReport {
    pub fn mean_train_size(&self) -> f64 {
        self.folds.iter().map(|f| f.n_train as f64).sum::<f64>() / self.folds.len() as f64
    }
}

/// One fold per subject, folds in parallel. Writes artifacts under `out` when given.
pub fn run_loso(dataset: &Dataset, config: &TrainConfig, out: Option<&Path>) -> Result<LosoReport> {
    run_loso_sized(dataset, config, None, out)
}

pub fn run_loso_sized(
    dataset: &Dataset,
    config: &TrainConfig,
    train_size: Option<usize>,
    out: Option<&Path>,
) -> Result<LosoReport> {
    config.validate()?;
    let splits = loso_splits(&dataset.subjects())?;
    let folds = splits
        .par_iter()
        .map(|split| {
            let fold = run_fold(dataset, split, config, train_size)?;
            if let Some(dir) = out {
                write_fold_artifacts(&dir.join(format!("fold_{}", fold.subject)), &fold, dataset, config)?;
            }
            Ok(fold)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = ConfusionMatrix::new(dataset.class_names());
    let mut heatmap = GlimpseHeatmap::new(&folds[0].trained.model.config().clone());
    for f in &folds {
        confusion.merge(&f.eval.confusion)?;
        heatmap.merge(&f.eval.heatmap)?;
    }
    let involvement =
        export_modality_involvement(&heatmap, &frame_row_groups(&dataset.geometry, &dataset.row_groups()))?;
    let report = LosoReport {
        mean_accuracy: folds.iter().map(|f| f.eval.accuracy).sum::<f64>() / folds.len() as f64,
        folds,
        confusion,
        heatmap,
        involvement,
    };
    if let Some(dir) = out {
        write_loso_artifacts(dir, &report, dataset, config)?;
    }
    Ok(report)
}

/// A point of the labeled-data sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepSize {
    Count(usize),
    Full,
}

impl std::str::FromStr for SweepSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" | "all" => Ok(SweepSize::Full),
            t => t
                .parse()
                .map(SweepSize::Count)
                .map_err(|_| Error::Argument(format!("sweep size {t:?} is neither a count nor \"full\""))),
        }
    }
}

impl std::fmt::Display for SweepSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepSize::Count(n) => write!(f, "{n}"),
            SweepSize::Full => f.write_str("full"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub size: SweepSize,
    pub mean_train_samples: f64,
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
}

/// LOSO at each training-set size. Sizes must ascend and `Full` may only
/// come last. Every size draws from the same nested subsample order.
pub fn sweep_labeled_data(
    dataset: &Dataset,
    config: &TrainConfig,
    sizes: &[SweepSize],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() {
        return Err(Error::Argument("no sweep sizes".into()));
    }
    let key = |s: &SweepSize| match s {
        SweepSize::Count(n) => *n,
        SweepSize::Full => usize::MAX,
    };
    if sizes.windows(2).any(|w| key(&w[0]) >= key(&w[1])) || sizes.iter().any(|s| key(s) == 0) {
        return Err(Error::Argument("sweep sizes must be positive and strictly ascending".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let n = match size {
            SweepSize::Count(n) => Some(n),
            SweepSize::Full => None,
        };
        let dir = out.map(|d| d.join(format!("size_{size}")));
        let r = run_loso_sized(dataset, config, n, dir.as_deref())?;
        rows.push(SweepRow {
            size,
            mean_train_samples: r.mean_train_size(),
            mean_accuracy: r.mean_accuracy,
            fold_accuracies: r.folds.iter().map(|f| f.eval.accuracy).collect(),
        });
    }
    if let Some(dir) = out {
        write_file(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
        echo_configs(dir, dataset, config)?;
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("size,mean_train_samples,mean_accuracy\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.size, r.mean_train_samples, r.mean_accuracy).unwrap();
    }
    s
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Copies the training and dataset configuration into `dir`.
pub fn echo_configs(dir: &Path, dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    write_file(&dir.join(CONFIG_ECHO), &config.to_toml())?;
    write_file(&dir.join(DATASET_ECHO), &dataset.config.to_toml())
}

/// `confusion.csv`, `heatmap.csv`, `involvement.csv` and `latency.csv` for one evaluation.
pub fn write_eval_artifacts(dir: &Path, eval: &EvalReport, row_groups: &[String]) -> Result<()> {
    write_file(&dir.join("confusion.csv"), &eval.confusion.to_csv())?;
    write_file(&dir.join("heatmap.csv"), &eval.heatmap.to_csv())?;
    let shares = export_modality_involvement(&eval.heatmap, row_groups)?;

    write_file(&dir.join("involvement.csv"), &involvement_csv(&shares))?;
    write_file(
        &dir.join("latency.csv"),
        &format!(
            "samples,mean_s,p95_s\n{},{},{}\n",
            eval.latency.samples, eval.latency.mean_s, eval.latency.p95_s
        ),
    )?;
    write_file(
        &dir.join("metrics.csv"),
        &format!("accuracy,mean_reward,samples\n{},{},{}\n", eval.accuracy, eval.mean_reward, eval.confusion.total()),
    )
}

pub fn write_fold_artifacts(dir: &Path, fold: &FoldResult, dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    echo_configs(dir, dataset, config)?;
    write_file(&dir.join("history.csv"), &history_csv(&fold.history))?;
    write_eval_artifacts(dir, &fold.eval, &frame_row_groups(&dataset.geometry, &dataset.row_groups()))?;
    fold.trained.save(&dir.join(CHECKPOINT_FILE))
}

pub fn folds_csv(report: &LosoReport) -> String {
    let mut s = String::from(
        "subject,seed,n_train,n_validation,n_test,accuracy,best_epoch,epochs_run,latency_mean_s,latency_p95_s,test_checksum\n",
    );
    for f in &report.folds {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{:016x}",
            f.subject,
            f.seed,
            f.n_train,
            f.n_validation,
            f.n_test,
            f.eval.accuracy,
            f.best_epoch,
            f.history.len(),
            f.eval.latency.mean_s,
            f.eval.latency.p95_s,
            f.test_checksum
        )
        .unwrap();
    }
    s
}

pub fn write_loso_artifacts(dir: &Path, report: &LosoReport, dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    echo_configs(dir, dataset, config)?;
    write_file(&dir.join("folds.csv"), &folds_csv(report))?;
    write_file(
        &dir.join("summary.csv"),
        &format!(
            "folds,mean_accuracy,pooled_accuracy\n{},{},{}\n",
            report.folds.len(),
            report.mean_accuracy,
            report.confusion.accuracy()
        ),
    )?;
    write_file(&dir.join("confusion.csv"), &report.confusion.to_csv())?;
    write_file(&dir.join("heatmap.csv"), &report.heatmap.to_csv())?;
    write_file(&dir.join("involvement.csv"), &involvement_csv(&report.involvement))
}
