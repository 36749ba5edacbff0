use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_from, AdaptationConfig, MaskMode, Termination};
use crate::data::{BinaryVector, EventSequence};
use crate::error::{Error, Result};
use crate::model::{bce_event_loss, losses_and_next_prediction, predict_sequence, ModelParameters};
use crate::switching::{switch_from_losses, SwitchTrace};

/// A predictor evaluated on the test cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// The population model alone.
    Pop,
    /// Adapted with every tensor free.
    In,
    /// Adapted output layer only.
    InAo,
    /// Adapted recurrent transition only.
    InAt,
    /// Switching between `Pop` and `In`.
    InSw,
    /// Switching between `Pop` and `InAo`.
    InAoSw,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Pop,
        Variant::In,
        Variant::InAo,
        Variant::InAt,
        Variant::InSw,
        Variant::InAoSw,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Pop => "GRU-POP",
            Variant::In => "GRU-IN",
            Variant::InAo => "GRU-IN-AO",
            Variant::InAt => "GRU-IN-AT",
            Variant::InSw => "GRU-IN-SW",
            Variant::InAoSw => "GRU-IN-AO-SW",
        }
    }

    /// Mask of the adapted model this variant uses, if any.
    pub fn mask(self) -> Option<MaskMode> {
        match self {
            Variant::Pop => None,
            Variant::In | Variant::InSw => Some(MaskMode::All),
            Variant::InAo | Variant::InAoSw => Some(MaskMode::OutputOnly),
            Variant::InAt => Some(MaskMode::TransitionOnly),
        }
    }

    pub fn is_switching(self) -> bool {
        matches!(self, Variant::InSw | Variant::InAoSw)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.tag()).collect();
                Error::Config(format!("unknown model variant {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.tag().to_string()
    }
}

/// Which history losses the switcher compares for the patient-specific side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchLoss {
    /// The freshly adapted model's losses on the history it was fit to.
    InSample,
    /// The losses of the patient-specific predictions actually issued at
    /// earlier steps (population prediction at step 1, where no adapted model
    /// exists yet).
    #[default]
    Prequential,
}

impl FromStr for SwitchLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "in_sample" => Ok(SwitchLoss::InSample),
            "prequential" => Ok(SwitchLoss::Prequential),
            _ => Err(Error::Config(format!("unknown switch loss {s:?}; expected in_sample or prequential"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub variants: Vec<Variant>,
    /// Shared adaptation settings; the mask comes from each variant.
    pub adaptation: AdaptationConfig,
    pub switch_loss: SwitchLoss,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            adaptation: AdaptationConfig::default(),
            switch_loss: SwitchLoss::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("no model variants to evaluate".into()));
        }
        let mut seen = HashSet::new();
        if let Some(v) = self.variants.iter().find(|v| !seen.insert(**v)) {
            return Err(Error::Config(format!("variant {v} listed twice")));
        }
        self.adaptation.validate()
    }
}

/// One model's scores for the target at step `t + 1`, issued at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub patient_id: String,
    pub t: usize,
    pub tag: Variant,
    pub scores: Vec<f64>,
    pub labels: BinaryVector,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionLog {
    pub records: Vec<PredictionRecord>,
}

impl PredictionLog {
    pub fn validate(&self) -> Result<()> {
        let mut keys = HashSet::new();
        for r in &self.records {
            if r.scores.len() != r.labels.len() {
                return Err(Error::dim("prediction record scores vs labels", r.scores.len(), r.labels.len()));
            }
            if let Some(s) = r.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(Error::Validation(format!(
                    "{} step {} ({}): score {s} outside [0,1]",
                    r.patient_id, r.t, r.tag
                )));
            }
            if !keys.insert((r.patient_id.as_str(), r.t, r.tag)) {
                return Err(Error::Validation(format!(
                    "duplicate record for {} step {} ({})",
                    r.patient_id, r.t, r.tag
                )));
            }
        }
        Ok(())
    }

    pub fn tags(&self) -> Vec<Variant> {
        let mut v: Vec<_> = self.records.iter().map(|r| r.tag).collect();
        v.sort();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdaptationStats {
    pub calls: usize,
    pub epochs: usize,
    pub converged: usize,
}

impl AdaptationStats {
    pub fn mean_epochs(&self) -> f64 {
        if self.calls == 0 {
            0.0
        } else {
            self.epochs as f64 / self.calls as f64
        }
    }

    fn merge(&mut self, o: &AdaptationStats) {
        self.calls += o.calls;
        self.epochs += o.epochs;
        self.converged += o.converged;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub log: PredictionLog,
    /// Switching decisions per switching variant, one trace per test patient.
    pub switch_traces: BTreeMap<Variant, Vec<SwitchTrace>>,
    /// Adaptation effort per mask mode.
    pub adaptation: BTreeMap<MaskMode, AdaptationStats>,
}

struct PatientOutput {
    records: Vec<PredictionRecord>,
    traces: Vec<(Variant, SwitchTrace)>,
    stats: Vec<(MaskMode, AdaptationStats)>,
}

/// Runs the online protocol on every test patient: at each step
/// `t = 2..T−1` every configured variant predicts the target at `t + 1` from
/// the history through `t`. Patients run in parallel; the output order is
/// patient order, then step, then variant order.
pub fn evaluate_models(population: &ModelParameters, test: &[EventSequence], config: &EvalConfig) -> Result<Evaluation> {
    config.validate()?;
    let sig = population.signature();
    for s in test {
        if s.num_inputs() != sig.n_inputs || s.num_targets() != sig.n_targets {
            return Err(Error::Validation(format!(
                "patient {} has widths ({}, {}) but the population model expects ({}, {})",
                s.patient_id,
                s.num_inputs(),
                s.num_targets(),
                sig.n_inputs,
                sig.n_targets
            )));
        }
    }
    let outputs: Vec<PatientOutput> = test
        .par_iter()
        .map(|s| evaluate_patient(population, s, config))
        .collect::<Result<_>>()?;

    let mut eval = Evaluation::default();
    for v in config.variants.iter().filter(|v| v.is_switching()) {
        eval.switch_traces.insert(*v, Vec::new());
    }
    for out in outputs {
        eval.log.records.extend(out.records);
        for (v, tr) in out.traces {
            eval.switch_traces.entry(v).or_default().push(tr);
        }
        for (m, st) in out.stats {
            eval.adaptation.entry(m).or_default().merge(&st);
        }
    }
    Ok(eval)
}

fn evaluate_patient(population: &ModelParameters, seq: &EventSequence, config: &EvalConfig) -> Result<PatientOutput> {
    let len = seq.len();
    let mut out = PatientOutput {
        records: Vec::new(),
        traces: Vec::new(),
        stats: Vec::new(),
    };
    if len < 3 {
        return Ok(out);
    }
    let targets = seq.targets();
    // pop_preds[j] is issued at step j + 1 for targets[j]
    let pop_preds = predict_sequence(population, seq.inputs())?;
    let pop_losses = targets
        .iter()
        .zip(&pop_preds)
        .map(|(y, p)| bce_event_loss(y, p))
        .collect::<Result<Vec<f64>>>()?;

    let mut masks: Vec<MaskMode> = config.variants.iter().filter_map(|v| v.mask()).collect();
    masks.sort();
    masks.dedup();

    // per mask: patient-specific prediction and switch decision per step
    let mut adapted: BTreeMap<MaskMode, Vec<Vec<f64>>> = BTreeMap::new();
    let mut switched: BTreeMap<Variant, SwitchTrace> = BTreeMap::new();
    for mask in masks {
        let cfg = AdaptationConfig {
            mask,
            ..config.adaptation.clone()
        };
        let switcher = config
            .variants
            .iter()
            .copied()
            .find(|v| v.is_switching() && v.mask() == Some(mask));
        let mut stats = AdaptationStats::default();
        let mut trace = SwitchTrace::new(seq.patient_id.clone());
        // issued[i - 1] holds the patient-specific prediction made at step i
        let mut issued: Vec<Vec<f64>> = vec![pop_preds[0].clone()];
        let mut previous = population.clone();
        for t in 2..len {
            let history = seq.history(t)?;
            let start = if cfg.warm_start { &previous } else { population };
            let (phi, tr) = adapt_from(start, &history, &cfg)
                .map_err(|e| Error::Numeric(format!("patient {} step {t}: {e}", seq.patient_id)))?;
            stats.calls += 1;
            stats.epochs += tr.epochs;
            if tr.termination == Termination::Converged {
                stats.converged += 1;
            }
            let (in_sample, prediction) = losses_and_next_prediction(&phi, &history)?;
            if switcher.is_some() {
                let patient_losses = match config.switch_loss {
                    SwitchLoss::InSample => in_sample,
                    SwitchLoss::Prequential => issued
                        .iter()
                        .zip(targets)
                        .map(|(p, y)| bce_event_loss(y, p))
                        .collect::<Result<Vec<f64>>>()?,
                };
                let d = switch_from_losses(
                    t,
                    &pop_losses[..t - 1],
                    &patient_losses,
                    pop_preds[t - 1].clone(),
                    prediction.clone(),
                    cfg.gamma,
                )?;
                trace.push(d)?;
            }
            issued.push(prediction);
            if cfg.warm_start {
                previous = phi;
            }
        }
        out.stats.push((mask, stats));
        adapted.insert(mask, issued);
        if let Some(v) = switcher {
            switched.insert(v, trace);
        }
    }

    for t in 2..len {
        for &v in &config.variants {
            let scores = match v.mask() {
                None => pop_preds[t - 1].clone(),
                Some(_) if v.is_switching() => switched[&v].decisions[t - 2].prediction.clone(),
                Some(m) => adapted[&m][t - 1].clone(),
            };
            out.records.push(PredictionRecord {
                patient_id: seq.patient_id.clone(),
                t,
                tag: v,
                scores,
                labels: targets[t - 1].clone(),
            });
        }
    }
    out.traces.extend(switched);
    Ok(out)
}
