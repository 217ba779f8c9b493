use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use raaf_core::dataset::{fold_seed, loso_splits, write_ingest_report, Dataset, DatasetConfig, REPORT_FILE};
use raaf_core::frames::{normalize, ActivityFrame, Sample};
use raaf_core::gradcheck;
use raaf_core::kernel::{Rng, Tensor};
use raaf_core::model::{config_path, RaafModel};
use raaf_core::train::synthetic::{salient_quadrant_dataset, SalientQuadrantSpec};
use raaf_core::train::{
    eval_seed, evaluate, frame_row_groups, history_csv, involvement_csv, materialize, model_config_for, plan_fold,
    run_loso, sweep_csv, sweep_labeled_data, train_model, write_eval_artifacts, write_file, EvalReport, SweepSize,
    TrainConfig, TrainedModel, CONFIG_ECHO, DATASET_ECHO,
};
use raaf_core::{Error, Result};

const SEED_ENV: &str = "RAAF_SEED";

#[derive(Parser)]
#[command(name = "raaf", version, about = "Activity frames and recurrent attention for wearable-sensor activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read raw recordings, build framed samples and write a cache directory.
    Ingest {
        /// Dataset description (see configs/).
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the raw subject files; overrides the config's data_dir.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a salient-quadrant benchmark cache.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 2)]
        subjects: usize,
        #[arg(long, default_value_t = 1)]
        frames: usize,
        #[arg(long, default_value_t = 2.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on every subject but the held-out one.
    Train {
        /// Cache directory written by `ingest` or `synth`.
        #[arg(long)]
        dataset: PathBuf,
        /// Training configuration; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Held-out subject.
        #[arg(long)]
        fold: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint_out: PathBuf,
    },
    /// Evaluate a checkpoint on one subject, or on every sample without --fold.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        fold: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-subject-out training and evaluation.
    Loso {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// LOSO accuracy against the number of labelled training samples.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ascending comma-separated counts; `full` uses every sample.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-sample forward latency.
    Bench {
        /// Model to time; a freshly initialised one from --config otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Samples to time on; random frames of the model's shape otherwise.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Frame geometry of a fresh model without a dataset: height, width, frames, classes.
        #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [79, 9, 5, 6])]
        shape: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Glimpse heatmap and modality involvement of a checkpoint.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        fold: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// `--seed`, else `RAAF_SEED`, else `fallback`.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

fn load_train_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = resolve_seed(seed, cfg.seed)?;
    Ok(cfg)
}

fn split_for(dataset: &Dataset, subject: &str) -> Result<raaf_core::dataset::LosoSplit> {
    loso_splits(&dataset.subjects())?
        .into_iter()
        .find(|s| s.held_out_subject == subject)
        .ok_or_else(|| Error::Argument(format!("no subject {subject:?} in the dataset")))
}

/// Samples of `fold` (all samples without one), normalised with the checkpoint's statistics.
fn eval_samples(dataset: &Dataset, trained: &TrainedModel, fold: Option<&str>) -> Result<Vec<Sample>> {
    let mut samples: Vec<Sample> = match fold {
        Some(subject) => {
            split_for(dataset, subject)?;
            dataset.samples.iter().filter(|s| s.subject_id == subject).cloned().collect()
        }
        None => dataset.samples.clone(),
    };
    if let Some(stats) = &trained.stats {
        normalize(&dataset.geometry, samples.iter_mut().flat_map(|s| &mut s.frames), stats)?;
    }
    Ok(samples)
}

fn run_eval(
    checkpoint: &Path,
    dataset: &Path,
    fold: Option<&str>,
    seed: Option<u64>,
) -> Result<(Dataset, TrainedModel, EvalReport, Vec<raaf_core::train::ModalityShare>)> {
    let dataset = Dataset::read_cache(dataset)?;
    let trained = TrainedModel::load(checkpoint)?;
    let samples = eval_samples(&dataset, &trained, fold)?;
    let base = resolve_seed(seed, 0)?;
    let seed = eval_seed(fold_seed(base, fold.unwrap_or("")));
    let eval = evaluate(&trained.model, &samples, dataset.class_names(), seed)?;
    let shares = eval.verify(&samples, &frame_row_groups(&dataset.geometry, &dataset.row_groups()))?;
    Ok((dataset, trained, eval, shares))
}

fn echo_model_config(dir: &Path, checkpoint: &Path, dataset: &Dataset) -> Result<()> {
    let side = config_path(checkpoint);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;
    write_file(&dir.join("model_config.toml"), &text)?;
    write_file(&dir.join(DATASET_ECHO), &dataset.config.to_toml())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { config, dataset, out } => {
            let mut cfg = DatasetConfig::load(&config)?;
            if let Some(dir) = dataset {
                cfg.data_dir = Some(dir);
            }
            let (ds, reports) = Dataset::ingest(&cfg)?;
            ds.write_cache(&out)?;
            write_ingest_report(&out.join(REPORT_FILE), &reports)?;
            let (h, w) = ds.frame_shape();
            println!(
                "{}: {} samples from {} subjects, frames {h}x{w}, class counts {:?}",
                cfg.name,
                ds.samples.len(),
                ds.subjects().len(),
                ds.class_histogram()
            );
        }
        Command::Synth {
            out,
            samples,
            subjects,
            frames,
            amplitude,
            seed,
        } => {
            let spec = SalientQuadrantSpec {
                samples,
                subjects,
                frames,
                amplitude,
                ..SalientQuadrantSpec::default()
            };
            let ds = salient_quadrant_dataset(&spec, seed)?;
            ds.write_cache(&out)?;
            println!("wrote {} synthetic samples to {}", ds.samples.len(), out.display());
        }
        Command::Train {
            dataset,
            config,
            fold,
            seed,
            checkpoint_out,
        } => {
            let ds = Dataset::read_cache(&dataset)?;
            let cfg = load_train_config(config.as_deref(), seed)?;
            let split = split_for(&ds, &fold)?;
            let plan = plan_fold(&ds, &split, &cfg, None)?;
            let data = materialize(&ds, &plan, cfg.normalize, None)?;
            let outcome = train_model(
                model_config_for(&ds, &cfg)?,
                &cfg,
                &data.train,
                &data.validation,
                ds.class_names(),
                plan.seed,
            )?;
            let trained = TrainedModel {
                model: outcome.model,
                stats: data.stats,
            };
            trained.save(&checkpoint_out)?;
            let dir = checkpoint_out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            write_file(&dir.join(CONFIG_ECHO), &cfg.to_toml())?;
            write_file(&dir.join(DATASET_ECHO), &ds.config.to_toml())?;
            write_file(&dir.join("history.csv"), &history_csv(&outcome.history))?;
            let last = outcome.history.last().expect("at least one epoch");
            println!(
                "fold {fold}: {} train / {} validation samples, {} epochs, kept epoch {}, final train accuracy {:.4}",
                data.train.len(),
                data.validation.len(),
                outcome.history.len(),
                outcome.best_epoch,
                last.train_accuracy
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            fold,
            seed,
            out,
        } => {
            let (ds, _, eval, shares) = run_eval(&checkpoint, &dataset, fold.as_deref(), seed)?;
            println!(
                "accuracy {:.4} over {} samples; latency mean {:.4}s p95 {:.4}s",
                eval.accuracy,
                eval.confusion.total(),
                eval.latency.mean_s,
                eval.latency.p95_s
            );
            print!("{}", eval.confusion.to_csv());
            print!("{}", involvement_csv(&shares));
            if let Some(dir) = out {
                write_eval_artifacts(&dir, &eval, &frame_row_groups(&ds.geometry, &ds.row_groups()))?;
                echo_model_config(&dir, &checkpoint, &ds)?;
            }
        }
        Command::Loso {
            dataset,
            config,
            seed,
            out,
        } => {
            let ds = Dataset::read_cache(&dataset)?;
            let cfg = load_train_config(config.as_deref(), seed)?;
            let report = run_loso(&ds, &cfg, Some(&out))?;
            for f in &report.folds {
                println!("fold {}: accuracy {:.4} on {} samples", f.subject, f.eval.accuracy, f.n_test);
            }
            println!("mean accuracy {:.4} over {} folds", report.mean_accuracy, report.folds.len());
        }
        Command::Sweep {
            dataset,
            config,
            sizes,
            seed,
            out,
        } => {
            let ds = Dataset::read_cache(&dataset)?;
            let cfg = load_train_config(config.as_deref(), seed)?;
            let sizes = sizes.iter().map(|s| s.parse()).collect::<Result<Vec<SweepSize>>>()?;
            let rows = sweep_labeled_data(&ds, &cfg, &sizes, Some(&out))?;
            print!("{}", sweep_csv(&rows));
        }
        Command::Bench {
            checkpoint,
            config,
            dataset,
            shape,
            samples,
            seed,
            out,
        } => {
            let seed = resolve_seed(seed, 0)?;
            let ds = dataset.as_deref().map(Dataset::read_cache).transpose()?;
            let trained = match &checkpoint {
                Some(p) => TrainedModel::load(p)?,
                None => {
                    let cfg = load_train_config(config.as_deref(), Some(seed))?;
                    let mc = match &ds {
                        Some(d) => model_config_for(d, &cfg)?,
                        None => cfg.model.model_config((shape[0], shape[1]), shape[2], shape[3])?,
                    };
                    TrainedModel {
                        model: RaafModel::new(mc, &mut Rng::new(seed))?,
                        stats: None,
                    }
                }
            };
            let mc = trained.model.config().clone();
            let (bench_samples, names) = match &ds {
                Some(d) => {
                    let mut s = eval_samples(d, &trained, None)?;
                    s.truncate(samples.max(1));
                    (s, d.class_names().to_vec())
                }
                None => {
                    let mut rng = Rng::new(seed);
                    let s = (0..samples.max(1))
                        .map(|i| {
                            let frames = (0..mc.frames)
                                .map(|f| {
                                    let n = mc.frame_height * mc.frame_width;
                                    Ok(ActivityFrame {
                                        matrix: Tensor::new([mc.frame_height, mc.frame_width], (0..n).map(|_| rng.normal()).collect())?,
                                        frame_index: f,
                                    })
                                })
                                .collect::<Result<Vec<_>>>()?;
                            Ok(Sample {
                                frames,
                                label: i % mc.num_classes,
                                subject_id: "bench".into(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (s, (0..mc.num_classes).map(|c| format!("class{c}")).collect())
                }
            };
            let eval = evaluate(&trained.model, &bench_samples, &names, seed)?;
            let l = eval.latency;
            println!(
                "{} samples, frames {}x{} x{}, M={} T={}: mean {:.4}s, p95 {:.4}s per sample",
                l.samples, mc.frame_height, mc.frame_width, mc.frames, mc.copies, mc.glimpses, l.mean_s, l.p95_s
            );
            if let Some(dir) = out {
                write_file(
                    &dir.join("latency.csv"),
                    &format!("samples,mean_s,p95_s\n{},{},{}\n", l.samples, l.mean_s, l.p95_s),
                )?;
                write_file(&dir.join("model_config.toml"), &mc.to_toml())?;
            }
        }
        Command::Gradcheck { trials, seed } => {
            let reports = gradcheck::run_suite(trials, seed)?;
            let mut failed = 0;
            for r in &reports {
                println!(
                    "{} {}: max relative error {:.3e} (tolerance {:.0e}) over {} coordinates, {} kinks skipped",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.layer,
                    r.max_rel_error,
                    r.tolerance,
                    r.checked,
                    r.skipped_kinks
                );
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(Error::Numeric(format!("{failed} gradient checks failed")));
            }
        }
        Command::Heatmap {
            checkpoint,
            dataset,
            fold,
            seed,
            out,
        } => {
            let (ds, _, eval, shares) = run_eval(&checkpoint, &dataset, fold.as_deref(), seed)?;
            write_file(&out.join("heatmap.csv"), &eval.heatmap.to_csv())?;
            write_file(&out.join("involvement.csv"), &involvement_csv(&shares))?;
            echo_model_config(&out, &checkpoint, &ds)?;
            print!("{}", involvement_csv(&shares));
        }
    }
    Ok(())
}
