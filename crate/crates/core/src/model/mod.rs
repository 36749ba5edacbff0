//! The autoregressive predictor: parameters, forward/backward passes and
//! population training.

mod gru;
mod params;
mod train;

pub use gru::{
    backward, backward_history, bce_event_loss, embed, gru_step, losses_and_next_prediction, predict_sequence,
    predict_step, sequence_loss, step_losses, Backward, HiddenState, PROB_CLAMP,
};
pub use params::{Checkpoint, ModelParameters, ParamId, Signature, CHECKPOINT_VERSION};
pub use train::{mean_step_event_loss, train_population, LambdaRun, TrainingConfig, TrainingReport};
