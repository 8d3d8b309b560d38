//! Optimisation: learning-rate schedule, Adam, per-bag gradient accumulation
//! and AUROC evaluation.

mod adam;
mod metrics;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use metrics::{auroc, auroc_binary, classification_auroc, macro_ovr_auroc, OvrAuroc};
pub use schedule::{lr_at, TrainConfig};
pub use trainer::{
    accumulate_batch, evaluate, predict_proba, train, train_manifest, EvalReport, Sample, TrainReport,
};
