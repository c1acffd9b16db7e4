//! Experiment plumbing: configuration, data, training, evaluation,
//! checkpoints and metrics.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod runs;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use data::{gen_push_dataset, EvalSplit, PushData, PushDataSpec};
pub use metrics::MetricsRow;
pub use runs::{run_ablation, run_train, Ablation};
pub use train::{build_model, train_offline, train_onpolicy};
