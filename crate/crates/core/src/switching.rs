//! Per-step choice between the population and the patient-specific model by
//! comparing their discounted losses on the observed history.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adapt::discount;
use crate::data::History;
use crate::error::{Error, Result};
use crate::model::{losses_and_next_prediction, ModelParameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelChoice {
    Population,
    PatientSpecific,
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelChoice::Population => "POPULATION",
            ModelChoice::PatientSpecific => "PATIENT_SPECIFIC",
        })
    }
}

/// `PATIENT_SPECIFIC` iff `L^P ≥ L^I`.
pub fn choose(loss_population: f64, loss_patient: f64) -> ModelChoice {
    if loss_population >= loss_patient {
        ModelChoice::PatientSpecific
    } else {
        ModelChoice::Population
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchDecision {
    pub t: usize,
    pub choice: ModelChoice,
    pub loss_population: f64,
    pub loss_patient: f64,
    /// The selected model's `ŷ′_{t+1}`.
    pub prediction: Vec<f64>,
}

/// Decision from precomputed per-step losses (`i = 1..t−1`) and both models'
/// next-step predictions.
pub fn switch_from_losses(
    t: usize,
    population_losses: &[f64],
    patient_losses: &[f64],
    population_prediction: Vec<f64>,
    patient_prediction: Vec<f64>,
    gamma: f64,
) -> Result<SwitchDecision> {
    if t < 2 {
        return Err(Error::InsufficientHistory { needed: 2, have: t });
    }
    if population_losses.len() != t - 1 || patient_losses.len() != t - 1 {
        return Err(Error::dim(
            "per-step loss records vs t-1",
            (population_losses.len(), patient_losses.len()),
            t - 1,
        ));
    }
    if population_prediction.len() != patient_prediction.len() {
        return Err(Error::dim(
            "switch predictions",
            population_prediction.len(),
            patient_prediction.len(),
        ));
    }
    let loss_population = discount(population_losses, gamma)?;
    let loss_patient = discount(patient_losses, gamma)?;
    let choice = choose(loss_population, loss_patient);
    let prediction = match choice {
        ModelChoice::PatientSpecific => patient_prediction,
        ModelChoice::Population => population_prediction,
    };
    Ok(SwitchDecision {
        t,
        choice,
        loss_population,
        loss_patient,
        prediction,
    })
}

/// Evaluates both models on the observed pairs `i = 1..t−1` of `history`
/// and emits the lower-loss model's prediction for step `t + 1`.
pub fn switch_predict(
    population: &ModelParameters,
    patient: &ModelParameters,
    history: &History<'_>,
    gamma: f64,
) -> Result<SwitchDecision> {
    population.check_same_signature(patient)?;
    let t = history.t();
    if t < 2 {
        return Err(Error::InsufficientHistory { needed: 2, have: t });
    }
    let (lp, pp) = losses_and_next_prediction(population, history)?;
    let (li, pi) = losses_and_next_prediction(patient, history)?;
    switch_from_losses(t, &lp, &li, pp, pi, gamma)
}

/// All decisions made for one patient, in step order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SwitchTrace {
    pub patient_id: String,
    pub decisions: Vec<SwitchDecision>,
}

impl SwitchTrace {
    pub fn new(patient_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            decisions: Vec::new(),
        }
    }

    pub fn push(&mut self, d: SwitchDecision) -> Result<()> {
        if let Some(last) = self.decisions.last() {
            if d.t <= last.t {
                return Err(Error::Validation(format!(
                    "switch trace for {}: step {} after step {}",
                    self.patient_id, d.t, last.t
                )));
            }
        }
        self.decisions.push(d);
        Ok(())
    }
}

pub const SWITCH_TRACE_HEADER: &str = "patient_id,t,choice,loss_population,loss_patient";

/// Delimited rows `patient_id,t,choice,L^P,L^I`, with header.
pub fn traces_to_csv<'a>(traces: impl IntoIterator<Item = &'a SwitchTrace>) -> String {
    let mut out = format!("{SWITCH_TRACE_HEADER}\n");
    for tr in traces {
        for d in &tr.decisions {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                tr.patient_id, d.t, d.choice, d.loss_population, d.loss_patient
            ));
        }
    }
    out
}

/// Fraction of `PATIENT_SPECIFIC` decisions at each step index that has at
/// least one decision.
pub fn switch_ratio<'a>(traces: impl IntoIterator<Item = &'a SwitchTrace>) -> BTreeMap<usize, f64> {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for tr in traces {
        for d in &tr.decisions {
            let e = counts.entry(d.t).or_default();
            e.1 += 1;
            if d.choice == ModelChoice::PatientSpecific {
                e.0 += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(t, (ps, n))| (t, ps as f64 / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::decay_weight;
    use crate::data::{BinaryVector, EventSequence};
    use crate::model::{bce_event_loss, Signature};

    fn patient() -> EventSequence {
        let inputs = (0..5)
            .map(|t| BinaryVector::from_indices(4, (0..4).filter(|k| (k * 7 + t) % 3 != 0)).unwrap())
            .collect();
        EventSequence::from_inputs_with_prefix_targets("p1", 24.0, inputs, 3).unwrap()
    }

    fn model(seed: u64) -> ModelParameters {
        ModelParameters::init(Signature::new(2, 3, 4, 3).unwrap(), seed)
    }

    fn decision(t: usize, choice: ModelChoice) -> SwitchDecision {
        SwitchDecision {
            t,
            choice,
            loss_population: 0.0,
            loss_patient: 0.0,
            prediction: vec![],
        }
    }

    #[test]
    fn identical_models_tie_to_patient_specific() {
        let s = patient();
        let p = model(1);
        let d = switch_predict(&p, &p.clone(), &s.history(4).unwrap(), 3.0).unwrap();
        assert_eq!(d.choice, ModelChoice::PatientSpecific);
        assert_eq!(d.loss_population, d.loss_patient);
        let (_, next) = losses_and_next_prediction(&p, &s.history(4).unwrap()).unwrap();
        assert_eq!(d.prediction, next);
    }

    #[test]
    fn dominating_patient_model_is_chosen() {
        let d = switch_from_losses(4, &[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5], vec![0.1], vec![0.9], 3.0).unwrap();
        assert_eq!(d.choice, ModelChoice::PatientSpecific);
        assert_eq!(d.prediction, vec![0.9]);
    }

    #[test]
    fn four_step_brute_force() {
        // hand-set predictions for i = 1..3, target step i+1
        let targets = [
            BinaryVector::from_indices(2, [0]).unwrap(),
            BinaryVector::from_indices(2, [1]).unwrap(),
            BinaryVector::from_indices(2, [0, 1]).unwrap(),
        ];
        let pop = [[0.6, 0.3], [0.2, 0.7], [0.6, 0.5]];
        let ind = [[0.2, 0.9], [0.5, 0.5], [0.9, 0.9]];
        let e = |p: &[f64; 2], y: &BinaryVector| bce_event_loss(y, p).unwrap();
        let lp: Vec<f64> = pop.iter().zip(&targets).map(|(p, y)| e(p, y)).collect();
        let li: Vec<f64> = ind.iter().zip(&targets).map(|(p, y)| e(p, y)).collect();
        let mut sp = 0.0;
        let mut si = 0.0;
        for i in 1..4 {
            let k = decay_weight(4, i, 3.0).unwrap();
            sp += lp[i - 1] * k;
            si += li[i - 1] * k;
        }
        let d = switch_from_losses(4, &lp, &li, vec![0.1, 0.1], vec![0.8, 0.8], 3.0).unwrap();
        assert!((d.loss_population - sp).abs() < 1e-12);
        assert!((d.loss_patient - si).abs() < 1e-12);
        let expect = if sp >= si { ModelChoice::PatientSpecific } else { ModelChoice::Population };
        assert_eq!(d.choice, expect);
        // hand evaluation: L^P ≈ 1.480, L^I ≈ 2.302
        assert_eq!(d.choice, ModelChoice::Population);
        assert_eq!(d.prediction, vec![0.1, 0.1]);
    }

    #[test]
    fn insufficient_history() {
        let s = patient();
        let p = model(2);
        assert!(matches!(
            switch_predict(&p, &p, &s.history(1).unwrap(), 3.0),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn ratios() {
        let mut all_pop = SwitchTrace::new("a");
        for t in 2..6 {
            all_pop.push(decision(t, ModelChoice::Population)).unwrap();
        }
        assert!(switch_ratio([&all_pop]).values().all(|&r| r == 0.0));

        let mut alt = SwitchTrace::new("b");
        for t in 2..7 {
            let c = if t % 2 == 0 { ModelChoice::Population } else { ModelChoice::PatientSpecific };
            alt.push(decision(t, c)).unwrap();
        }
        let r = switch_ratio([&alt]);
        assert_eq!(r.values().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 1.0, 0.0]);

        // three traces, hand count: t=2 → 1/3, t=3 → 2/2, t=4 → 0/1
        let mut a = SwitchTrace::new("x");
        a.push(decision(2, ModelChoice::PatientSpecific)).unwrap();
        a.push(decision(3, ModelChoice::PatientSpecific)).unwrap();
        let mut b = SwitchTrace::new("y");
        b.push(decision(2, ModelChoice::Population)).unwrap();
        b.push(decision(3, ModelChoice::PatientSpecific)).unwrap();
        b.push(decision(4, ModelChoice::Population)).unwrap();
        let mut c = SwitchTrace::new("z");
        c.push(decision(2, ModelChoice::Population)).unwrap();
        let r = switch_ratio([&a, &b, &c]);
        assert!((r[&2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r[&3], 1.0);
        assert_eq!(r[&4], 0.0);
        assert!(!r.contains_key(&5));
    }

    #[test]
    fn trace_rejects_out_of_order() {
        let mut tr = SwitchTrace::new("p");
        tr.push(decision(3, ModelChoice::Population)).unwrap();
        assert!(tr.push(decision(3, ModelChoice::Population)).is_err());
        assert!(tr.push(decision(2, ModelChoice::Population)).is_err());
    }

    #[test]
    fn csv_export() {
        let mut tr = SwitchTrace::new("p9");
        tr.push(SwitchDecision {
            t: 2,
            choice: ModelChoice::Population,
            loss_population: 1.5,
            loss_patient: 2.0,
            prediction: vec![],
        })
        .unwrap();
        assert_eq!(
            traces_to_csv([&tr]),
            "patient_id,t,choice,loss_population,loss_patient\np9,2,POPULATION,1.5,2\n"
        );
    }
}
