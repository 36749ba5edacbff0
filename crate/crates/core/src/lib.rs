//! Online per-patient adaptation of GRU event-sequence predictors.
//!
//! A population model is trained on many patients. At prediction time a
//! patient-specific copy is fine-tuned on that patient's own history under an
//! exponentially discounted loss, and a switcher picks whichever of the two
//! models has the lower discounted loss on the history seen so far.

// `!(x > 0.0)` is deliberate throughout: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod adapt;
pub mod switching;

pub use error::{Error, Result};
