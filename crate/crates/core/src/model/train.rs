//! Population training: mini-batched Adam with L2 decay, λ picked on a
//! held-out validation set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EventSequence;
use crate::error::{Error, Result};
use crate::model::gru::{backward_history, sequence_loss};
use crate::model::{ModelParameters, Signature};
use crate::optim::{adam_step, AdamConfig, OptimizerState, ParameterMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda_grid: Vec<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 64,
            learning_rate: 0.005,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            lambda_grid: vec![1e-4, 1e-5, 1e-6, 1e-7],
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("lambda_grid must not be empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("lambda values must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Loss curve for one λ candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRun {
    pub lambda: f64,
    /// Mean BCE per predicted step per target event, one entry per epoch.
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub chosen_lambda: f64,
    pub runs: Vec<LambdaRun>,
    pub signature: Signature,
    pub seed: u64,
}

/// Mean BCE per predicted step per target event.
pub fn mean_step_event_loss(p: &ModelParameters, data: &[EventSequence]) -> Result<f64> {
    let steps: usize = data.iter().map(|s| s.len() - 1).sum();
    if steps == 0 {
        return Ok(0.0);
    }
    Ok(sequence_loss(p, data)? / (steps * p.signature().n_targets) as f64)
}

/// Trains the population model once per λ in the grid and keeps the run with
/// the lowest validation loss. An empty validation set falls back to the
/// training loss.
pub fn train_population(
    train: &[EventSequence],
    valid: &[EventSequence],
    config: &TrainingConfig,
    seed: u64,
) -> Result<(ModelParameters, TrainingReport)> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::Validation("training set is empty".into()))?;
    let sig = Signature::new(config.embed_dim, config.hidden_dim, first.num_inputs(), first.num_targets())?;
    for s in train.iter().chain(valid) {
        s.validate()?;
        if s.num_inputs() != sig.n_inputs || s.num_targets() != sig.n_targets {
            return Err(Error::dim(
                "training sequence widths",
                (sig.n_inputs, sig.n_targets),
                (s.num_inputs(), s.num_targets()),
            ));
        }
    }

    let mut best: Option<(ModelParameters, f64, f64)> = None;
    let mut runs = Vec::with_capacity(config.lambda_grid.len());
    for (li, &lambda) in config.lambda_grid.iter().enumerate() {
        let (params, run) = train_one(train, valid, sig, config, lambda, seed, li as u64)?;
        log::info!(
            "lambda {lambda:e}: best valid {:.6} at epoch {}",
            run.best_valid_loss,
            run.best_epoch
        );
        if best.as_ref().is_none_or(|(_, v, _)| run.best_valid_loss < *v) {
            best = Some((params, run.best_valid_loss, lambda));
        }
        runs.push(run);
    }
    let (params, _, chosen_lambda) = best.expect("lambda grid is non-empty");
    Ok((
        params,
        TrainingReport {
            chosen_lambda,
            runs,
            signature: sig,
            seed,
        },
    ))
}

fn train_one(
    train: &[EventSequence],
    valid: &[EventSequence],
    sig: Signature,
    config: &TrainingConfig,
    lambda: f64,
    seed: u64,
    stream: u64,
) -> Result<(ModelParameters, LambdaRun)> {
    let mut params = ModelParameters::init(sig, seed);
    let mut state = OptimizerState::new(&params, AdamConfig::new(config.learning_rate, lambda))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mask = ParameterMask::all();
    let selection = if valid.is_empty() { train } else { valid };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut run = LambdaRun {
        lambda,
        train_loss: Vec::new(),
        valid_loss: Vec::new(),
        best_epoch: 0,
        best_valid_loss: f64::INFINITY,
    };
    let mut best_params = params.clone();
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for batch in order.chunks(config.batch_size) {
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let s = &train[i];
                    let w = vec![1.0; s.len() - 1];
                    backward_history(&params, &s.full_history(), &w, &mask)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
            let steps: usize = batch.iter().map(|&i| train[i].len() - 1).sum();
            let mut grad = ModelParameters::zeros(sig);
            for b in &parts {
                grad.add_scaled(&b.grads, 1.0)?;
                epoch_loss += b.loss;
            }
            grad.scale(1.0 / steps as f64);
            epoch_steps += steps;
            adam_step(&mut params, &grad, &mut state, &mask)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
        }
        let train_loss = epoch_loss / (epoch_steps * sig.n_targets) as f64;
        let valid_loss = mean_step_event_loss(&params, selection)?;
        if !train_loss.is_finite() || !valid_loss.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
        }
        run.train_loss.push(train_loss);
        run.valid_loss.push(valid_loss);
        log::debug!("lambda {lambda:e} epoch {epoch}: train {train_loss:.6} valid {valid_loss:.6}");
        if valid_loss < run.best_valid_loss {
            run.best_valid_loss = valid_loss;
            run.best_epoch = epoch;
            best_params.clone_from(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best_params, run))
}
