//! Data generation, energy/force pretraining, the stability-aware training
//! loop and trajectory evaluation.

pub mod dataset;
pub mod evaluate;
pub mod neighborhoods;
pub mod optim;
pub mod qm;
pub mod stable;

pub use dataset::{generate_dataset, Dataset, Frame, SamplingConfig};
pub use evaluate::{evaluate, EvaluationConfig, EvaluationReport, ObservableResult};
pub use neighborhoods::sample_local_neighborhoods;
pub use optim::{Optimizer, OptimizerKind};
pub use qm::{force_mae, pretrain, qm_loss, qm_loss_value, PretrainConfig, PretrainProgress};
pub use stable::{stable_train, LocalizedConfig, MetricsRow, Phase, StableConfig, StableProblem, TrainerState};
