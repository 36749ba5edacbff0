use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::{group_by_patient, RawEvent};
use super::sequence::{BinaryVector, EventSequence};
use super::vocab::EventVocabulary;
use crate::error::{Error, Result};

/// Bins one patient's time-sorted events into fixed windows anchored at the
/// first event. Window `i` (1-based) covers
/// `[start + (i−1)·W, start + i·W)`; repeats within a window collapse, and
/// empty windows stay as all-zero steps.
pub fn windowize(events: &[RawEvent], vocab: &EventVocabulary, window_hours: f64) -> Result<EventSequence> {
    if !(window_hours > 0.0) {
        return Err(Error::Validation(format!("window length must be positive, got {window_hours}")));
    }
    let first = events
        .first()
        .ok_or_else(|| Error::Validation("patient has no events".into()))?;
    if events.iter().any(|e| e.patient_id != first.patient_id) {
        return Err(Error::Validation("windowize expects a single patient's events".into()));
    }
    let start = events.iter().map(|e| e.timestamp).min().expect("non-empty");
    let width_ms = window_hours * 3_600_000.0;
    let window_of = |e: &RawEvent| ((e.timestamp - start).num_milliseconds() as f64 / width_ms).floor() as usize;
    let n_windows = events.iter().map(window_of).max().expect("non-empty") + 1;
    if n_windows < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            have: n_windows,
        });
    }

    let mut inputs: Vec<Vec<usize>> = vec![Vec::new(); n_windows];
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); n_windows];
    for e in events {
        let w = window_of(e);
        if let Some(i) = vocab.input_for(e) {
            inputs[w].push(i);
        }
        if let Some(k) = vocab.target_for(e) {
            targets[w].push(k);
        }
    }
    let inputs = inputs
        .into_iter()
        .map(|a| BinaryVector::from_indices(vocab.n_inputs(), a))
        .collect::<Result<Vec<_>>>()?;
    let targets = targets
        .into_iter()
        .skip(1)
        .map(|a| BinaryVector::from_indices(vocab.n_targets(), a))
        .collect::<Result<Vec<_>>>()?;
    EventSequence::new(first.patient_id.clone(), window_hours, inputs, targets)
}

/// A patient left out of the cohort, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPatient {
    pub patient_id: String,
    pub reason: String,
}

/// Windowizes every patient of a `(patient_id, timestamp)`-sorted event list.
pub fn windowize_all(
    events: &[RawEvent],
    vocab: &EventVocabulary,
    window_hours: f64,
) -> Result<(Vec<EventSequence>, Vec<SkippedPatient>)> {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for group in group_by_patient(events) {
        match windowize(group, vocab, window_hours) {
            Ok(s) => out.push(s),
            Err(Error::InsufficientHistory { have, .. }) => {
                let reason = format!("events span {have} window(s), need at least 2");
                log::info!("skipping patient {}: {reason}", group[0].patient_id);
                skipped.push(SkippedPatient {
                    patient_id: group[0].patient_id.clone(),
                    reason,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Patient-level split; `floor(n · ratio)` sequences go to the training side
/// (kept within `1..n`). Each side keeps the input order.
pub fn split(dataset: Vec<EventSequence>, ratio: f64, seed: u64) -> Result<(Vec<EventSequence>, Vec<EventSequence>)> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Validation(format!("need at least 2 patients to split, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!("split ratio must lie in (0,1), got {ratio}")));
    }
    let mut ids: Vec<&str> = dataset.iter().map(|s| s.patient_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation("patient ids must be unique across the dataset".into()));
    }
    let n_train = ((n as f64 * ratio).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = dataset.into_iter().zip(is_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(s, _)| s).collect(),
        test.into_iter().map(|(s, _)| s).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest::{parse_timestamp, Category};
    use chrono::Duration;

    fn vocab() -> EventVocabulary {
        EventVocabulary::from_parts(
            vec!["A".into(), "B".into()],
            vec!["A".into(), "B".into()],
            Default::default(),
        )
        .unwrap()
    }

    fn at(pid: &str, hour: i64, kind: &str) -> RawEvent {
        RawEvent {
            patient_id: pid.into(),
            timestamp: parse_timestamp("2020-01-01T00:00:00").unwrap() + Duration::hours(hour),
            category: Category::Medication,
            event_type: kind.into(),
            value: None,
        }
    }

    fn seq(id: &str) -> EventSequence {
        EventSequence::new(id, 24.0, vec![BinaryVector::zeros(1); 2], vec![BinaryVector::zeros(1)]).unwrap()
    }

    #[test]
    fn single_window_is_skipped() {
        let e = vec![at("p", 1, "A"), at("p", 2, "A")];
        assert!(matches!(
            windowize(&e, &vocab(), 24.0),
            Err(Error::InsufficientHistory { have: 1, .. })
        ));
        let (seqs, skipped) = windowize_all(&e, &vocab(), 24.0).unwrap();
        assert!(seqs.is_empty());
        assert_eq!(skipped[0].patient_id, "p");
    }

    #[test]
    fn two_windows() {
        let e = vec![at("p", 1, "A"), at("p", 30, "B")];
        let s = windowize(&e, &vocab(), 24.0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.input(1).active().collect::<Vec<_>>(), vec![0]);
        assert_eq!(s.input(2).active().collect::<Vec<_>>(), vec![1]);
        assert_eq!(s.target(2).active().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn repeats_collapse_and_gaps_are_kept() {
        let e = vec![at("p", 0, "A"), at("p", 3, "A"), at("p", 20, "A"), at("p", 75, "B")];
        let s = windowize(&e, &vocab(), 24.0).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.input(1).count_active(), 1);
        assert_eq!(s.input(2).count_active(), 0);
        assert_eq!(s.input(3).count_active(), 0);
        assert!(s.input(4).get(1));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let data: Vec<_> = (0..10).map(|i| seq(&format!("p{i}"))).collect();
        let (tr, te) = split(data.clone(), 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, te2) = split(data.clone(), 0.8, 3).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        assert!(te.iter().all(|s| !tr.iter().any(|t| t.patient_id == s.patient_id)));
        assert!(split(data[..1].to_vec(), 0.8, 0).is_err());
    }

    #[test]
    fn split_full_scale_arithmetic() {
        let data: Vec<_> = (0..5137).map(|i| seq(&format!("p{i}"))).collect();
        let (tr, te) = split(data, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (4109, 1028));
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(split(vec![seq("a"), seq("a"), seq("b")], 0.5, 0).is_err());
    }
}
