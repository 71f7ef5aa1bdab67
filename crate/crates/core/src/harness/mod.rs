//! Synthetic multi-task experiments: tasks sharing a projection but with
//! conflicting residual maps, trained under frozen, LoRA, multi-LoRA and
//! routed adapters.

mod optim;
mod synergy;
mod tasks;
mod train;

pub use optim::{Adam, AdamConfig};
pub use synergy::{synergy_from_losses, synergy_report, Outcome, SynergySummary, TaskGain};
pub use tasks::{generate_tasks, orthonormal_rows, TaskGenConfig, TaskSpec, TaskSuite};
pub use train::{
    arm_config, eval_set, evaluate, matched_rank, train, train_run, LossPoint, ModelKind, RunResult, TrainConfig,
    TrainReport,
};

/// Relative band inside which a single-vs-multi loss difference is a tie.
pub const DEFAULT_TIE_TOLERANCE: f64 = 0.05;
