//! Hybrid cross-entropy and REINFORCE training, evaluation metrics,
//! leave-one-subject-out runs and the synthetic salient-quadrant benchmark.

mod config;
mod fit;
mod loso;
mod metrics;
mod reinforce;
pub mod synthetic;

pub use config::{ModelSettings, TrainConfig};
pub use fit::{
    evaluate, evaluate_with, history_csv, sample_seed, stats_path, train_model, EpochMetrics, EvalReport,
    TrainOutcome, TrainedModel, Trainer, HISTORY_HEADER,
};
pub use loso::{
    checksum, echo_configs, eval_seed, folds_csv, materialize, model_config_for, plan_fold, run_fold, run_loso,
    run_loso_sized, sweep_csv, sweep_labeled_data, write_eval_artifacts, write_file, write_fold_artifacts,
    write_loso_artifacts, FoldData, FoldPlan, FoldResult, LosoReport, SweepRow, SweepSize, CHECKPOINT_FILE,
    CONFIG_ECHO, DATASET_ECHO,
};
pub use metrics::{
    export_modality_involvement, frame_row_groups, involvement_csv, ConfusionMatrix, GlimpseHeatmap, LatencyStats,
    ModalityShare,
};
pub use reinforce::{default_bandit, BanditEstimate, BanditSurrogate, RewardBaseline};
