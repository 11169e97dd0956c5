//! Training, evaluation, cost accounting and result emission.

pub mod config;
pub mod cost;
pub mod data;
pub mod evaluate;
pub mod metrics;
pub mod plot;
pub mod train;

pub use config::{SceneSpec, TrainConfig};
pub use cost::{cost_report, CostReport};
pub use data::{Corpus, SceneNorms};
pub use evaluate::{evaluate, EvalOptions, Evaluation, MetricsReport};
pub use metrics::{ade, best_of_k, constant_velocity_baseline, fde};
pub use train::{fit, train, TrainOptions, TrainOutcome, TrainReport};
