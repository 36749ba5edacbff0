//! Synthetic cohorts with latent regime shifts.
//!
//! Every patient follows a Markov path over a small set of regimes. Each
//! regime fixes a Bernoulli rate per input event; at every step the active
//! regime's rates generate the input vector, and the target vector is the
//! leading `n_targets` coordinates of the next step's input.
//!
//! `event_affinity` adds per-patient variability on top of the regimes: with
//! affinity `q < 1` each patient carries each event type with probability `q`
//! at rate `p / q` and never emits it otherwise, which keeps the population
//! rate `p` while making events strongly patient-specific and repetitive.
//! Only a share `idiosyncratic_fraction` of patients draws affinities, and
//! they apply only in regimes marked `personalized`; elsewhere patients
//! follow the regime rates directly.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{BinaryVector, EventSequence};
use super::vocab::EventVocabulary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeProfile {
    /// Bernoulli rate per input event.
    pub probs: Vec<f64>,
    /// Whether patient affinities apply while this regime is active.
    #[serde(default = "yes")]
    pub personalized: bool,
    /// Per-step probability of leaving this regime; falls back to the
    /// cohort-wide `switch_hazard`.
    #[serde(default)]
    pub leave_hazard: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub n_inputs: usize,
    pub n_targets: usize,
    pub regimes: Vec<RegimeProfile>,
    /// Distribution of the first step's regime; empty means uniform.
    pub initial_regime_probs: Vec<f64>,
    /// Per-step probability of leaving the current regime.
    pub switch_hazard: f64,
    /// Sequence lengths are uniform on `min_length..=max_length`.
    pub min_length: usize,
    pub max_length: usize,
    pub event_affinity: f64,
    pub idiosyncratic_fraction: f64,
    pub window_hours: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_patients == 0 || self.n_inputs == 0 || self.n_targets == 0 {
            return bad("patient and event counts must be positive".into());
        }
        if self.n_targets > self.n_inputs {
            return bad(format!("n_targets {} exceeds n_inputs {}", self.n_targets, self.n_inputs));
        }
        if self.regimes.is_empty() {
            return bad("at least one regime profile is required".into());
        }
        for (r, prof) in self.regimes.iter().enumerate() {
            if prof.probs.len() != self.n_inputs {
                return bad(format!("regime {r} has {} rates for {} inputs", prof.probs.len(), self.n_inputs));
            }
            if let Some(p) = prof.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return bad(format!("regime {r} rate {p} outside [0,1]"));
            }
            if let Some(h) = prof.leave_hazard.filter(|h| !(0.0..=1.0).contains(h)) {
                return bad(format!("regime {r} leave hazard {h} outside [0,1]"));
            }
        }
        if !self.initial_regime_probs.is_empty() {
            if self.initial_regime_probs.len() != self.regimes.len() {
                return bad("initial_regime_probs must have one entry per regime".into());
            }
            if self.initial_regime_probs.iter().any(|p| !(*p >= 0.0)) || self.initial_regime_probs.iter().sum::<f64>() <= 0.0 {
                return bad("initial_regime_probs must be non-negative with positive sum".into());
            }
        }
        if !(0.0..=1.0).contains(&self.switch_hazard) {
            return bad(format!("switch hazard {} outside [0,1]", self.switch_hazard));
        }
        if self.min_length < 2 || self.max_length < self.min_length {
            return bad(format!("length range {}..={} invalid (min 2)", self.min_length, self.max_length));
        }
        if !(self.event_affinity > 0.0 && self.event_affinity <= 1.0) {
            return bad(format!("event affinity {} outside (0,1]", self.event_affinity));
        }
        if !(0.0..=1.0).contains(&self.idiosyncratic_fraction) {
            return bad(format!("idiosyncratic fraction {} outside [0,1]", self.idiosyncratic_fraction));
        }
        if self.regimes.len() < 2 {
            log::warn!("single-regime cohort: no regime shifts will occur");
        }
        Ok(())
    }
}

/// Compact description of a regime-shift cohort, expanded by
/// [`RegimeShiftSpec::to_config`].
///
/// Input layout: `n_shared` events common to all regimes, then
/// `n_specific` events per regime that fire mostly in that regime, then
/// `n_context` non-target inputs whose rate depends on the regime. All but
/// the context events are targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeShiftSpec {
    pub n_patients: usize,
    pub n_regimes: usize,
    pub n_shared: usize,
    pub n_specific: usize,
    pub n_context: usize,
    pub shared_rate: f64,
    pub specific_on_rate: f64,
    pub specific_off_rate: f64,
    /// Context-event rate in regime 0; regime `r` uses `context_rate * (r + 1)`, capped at 1.
    pub context_rate: f64,
    /// Regimes in which patient affinities apply; empty means all.
    pub personalized_regimes: Vec<usize>,
    /// Per-regime leave hazards; empty means `switch_hazard` everywhere.
    pub regime_hazards: Vec<f64>,
    pub initial_regime_probs: Vec<f64>,
    pub switch_hazard: f64,
    pub min_length: usize,
    pub max_length: usize,
    pub event_affinity: f64,
    pub idiosyncratic_fraction: f64,
    pub seed: u64,
}

impl Default for RegimeShiftSpec {
    fn default() -> Self {
        Self {
            n_patients: 625,
            n_regimes: 2,
            n_shared: 10,
            n_specific: 10,
            n_context: 6,
            shared_rate: 0.15,
            specific_on_rate: 0.3,
            specific_off_rate: 0.02,
            context_rate: 0.15,
            personalized_regimes: vec![],
            regime_hazards: vec![],
            initial_regime_probs: vec![0.6, 0.4],
            switch_hazard: 0.08,
            min_length: 4,
            max_length: 20,
            event_affinity: 0.3,
            idiosyncratic_fraction: 1.0,
            seed: 7,
        }
    }
}

impl RegimeShiftSpec {
    pub fn n_targets(&self) -> usize {
        self.n_shared + self.n_regimes * self.n_specific
    }

    pub fn to_config(&self) -> SynthConfig {
        let n_targets = self.n_targets();
        let n_inputs = n_targets + self.n_context;
        let regimes = (0..self.n_regimes)
            .map(|r| {
                let mut probs = vec![self.shared_rate; self.n_shared];
                for owner in 0..self.n_regimes {
                    let rate = if owner == r {
                        self.specific_on_rate
                    } else {
                        self.specific_off_rate
                    };
                    probs.extend(std::iter::repeat_n(rate, self.n_specific));
                }
                let ctx = (self.context_rate * (r + 1) as f64).min(1.0);
                probs.extend(std::iter::repeat_n(ctx, self.n_context));
                RegimeProfile {
                    probs,
                    personalized: self.personalized_regimes.is_empty() || self.personalized_regimes.contains(&r),
                    leave_hazard: self.regime_hazards.get(r).copied(),
                }
            })
            .collect();
        SynthConfig {
            n_patients: self.n_patients,
            n_inputs,
            n_targets,
            regimes,
            initial_regime_probs: self.initial_regime_probs.clone(),
            switch_hazard: self.switch_hazard,
            min_length: self.min_length,
            max_length: self.max_length,
            event_affinity: self.event_affinity,
            idiosyncratic_fraction: self.idiosyncratic_fraction,
            window_hours: 24.0,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub vocabulary: EventVocabulary,
    pub sequences: Vec<EventSequence>,
    /// Active regime at every step, per patient.
    pub regime_paths: Vec<Vec<usize>>,
}

/// Samples a cohort; identical configs give bit-identical cohorts.
pub fn synthesize_cohort(config: &SynthConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let vocabulary = EventVocabulary::synthetic(config.n_inputs, config.n_targets)?;
    let n_regimes = config.regimes.len();
    let initial = if config.initial_regime_probs.is_empty() {
        vec![1.0; n_regimes]
    } else {
        config.initial_regime_probs.clone()
    };
    let initial = WeightedIndex::new(&initial).map_err(|e| Error::Validation(format!("initial regime distribution: {e}")))?;
    let width = (config.n_patients.max(1) - 1).to_string().len();

    let mut sequences = Vec::with_capacity(config.n_patients);
    let mut regime_paths = Vec::with_capacity(config.n_patients);
    for pidx in 0..config.n_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(pidx as u64);
        let len = rng.gen_range(config.min_length..=config.max_length);
        let mut regime = initial.sample(&mut rng);
        let idiosyncratic = rng.gen::<f64>() < config.idiosyncratic_fraction;
        let scale: Vec<f64> = (0..config.n_inputs)
            .map(|_| {
                if !idiosyncratic || config.event_affinity >= 1.0 {
                    1.0
                } else if rng.gen::<f64>() < config.event_affinity {
                    1.0 / config.event_affinity
                } else {
                    0.0
                }
            })
            .collect();
        let mut path = Vec::with_capacity(len);
        let mut inputs = Vec::with_capacity(len);
        for step in 0..len {
            let hazard = config.regimes[regime].leave_hazard.unwrap_or(config.switch_hazard);
            if step > 0 && n_regimes > 1 && rng.gen::<f64>() < hazard {
                let other = rng.gen_range(0..n_regimes - 1);
                regime = if other >= regime { other + 1 } else { other };
            }
            path.push(regime);
            let profile = &config.regimes[regime];
            let active: Vec<usize> = (0..config.n_inputs)
                .filter(|&e| {
                    let p = if profile.personalized {
                        (profile.probs[e] * scale[e]).min(1.0)
                    } else {
                        profile.probs[e]
                    };
                    rng.gen::<f64>() < p
                })
                .collect();
            inputs.push(BinaryVector::from_indices(config.n_inputs, active)?);
        }
        sequences.push(EventSequence::from_inputs_with_prefix_targets(
            format!("S{pidx:0width$}"),
            config.window_hours,
            inputs,
            config.n_targets,
        )?);
        regime_paths.push(path);
    }
    Ok(SyntheticCohort {
        vocabulary,
        sequences,
        regime_paths,
    })
}
