//! Training, cross-validation, metrics, bootstrap tests, timing and the ablation ladder.

mod config;
mod folds;
mod metrics;
mod optim;
mod run;
mod timing;
mod train;

pub use config::{RunConfig, TrainConfig};
pub use folds::{split_folds, FoldPlan};
pub use metrics::{auc, bootstrap_auc, bootstrap_auc_ci, compute_metrics, BootstrapResult, Metrics, MetricsReport, Spread};
pub use optim::{cosine_lr, Adam};
pub use run::{
    checkpoint_path, evaluate_run, read_predictions, run_ablation, run_data_dir, saliency, train_run, write_report,
    AblationRow,
};
pub use timing::time_inference;
pub use train::{
    class_weights, cross_validate, predict, prepare, sample_gradient, train_fold, EpochLog, FoldOutcome, Prediction,
};

#[cfg(test)]
mod tests;
