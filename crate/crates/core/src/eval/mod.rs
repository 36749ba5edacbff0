//! AUPRC, the online evaluation protocol and the analysis tables.

mod metrics;
mod protocol;
mod report;

pub use metrics::auprc;
pub use protocol::{
    evaluate_models, AdaptationStats, EvalConfig, Evaluation, PredictionLog, PredictionRecord, SwitchLoss, Variant,
};
pub use report::*;
