use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ingest::{Category, RawEvent};
use crate::error::{Error, Result};

/// Closed normal interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalRange {
    pub low: f64,
    pub high: f64,
}

/// Event type → normal range, read from a JSON object
/// `{"GLUCOSE": {"low": 70, "high": 110}, ...}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RangeTable(pub BTreeMap<String, NormalRange>);

impl RangeTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: RangeTable = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("range file {}: {e}", path.display())))?;
        for (k, r) in &table.0 {
            if !(r.low <= r.high) {
                return Err(Error::Config(format!("range for {k}: low {} > high {}", r.low, r.high)));
            }
        }
        Ok(table)
    }

    pub fn get(&self, event_type: &str) -> Option<&NormalRange> {
        self.0.get(event_type)
    }
}

pub const LOW_SUFFIX: &str = "_LOW";
pub const NORMAL_SUFFIX: &str = "_NORMAL";
pub const HIGH_SUFFIX: &str = "_HIGH";

/// Input name for a valued measurement: `<type>_LOW`, `_NORMAL` or `_HIGH`.
/// Values equal to a bound count as normal.
pub fn discretize(event: &RawEvent, ranges: &RangeTable) -> Result<String> {
    let range = ranges
        .get(&event.event_type)
        .ok_or_else(|| Error::Config(format!("no normal range configured for {}", event.event_type)))?;
    let v = event
        .value
        .ok_or_else(|| Error::Validation(format!("event {} carries no value", event.event_type)))?;
    let suffix = if v < range.low {
        LOW_SUFFIX
    } else if v > range.high {
        HIGH_SUFFIX
    } else {
        NORMAL_SUFFIX
    };
    Ok(format!("{}{}", event.event_type, suffix))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabularyOptions {
    /// Drop medication/procedure/lab types seen in fewer distinct patients.
    pub min_patients: usize,
    /// Physiological types to keep. `None` applies `min_patients` instead.
    pub physiological_include: Option<BTreeSet<String>>,
}

impl Default for VocabularyOptions {
    fn default() -> Self {
        Self {
            min_patients: 500,
            physiological_include: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    inputs: Vec<String>,
    targets: Vec<String>,
    ranges: BTreeMap<String, NormalRange>,
}

/// Input set `E` and target set `E′`, indexed in sorted-name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct EventVocabulary {
    inputs: Vec<String>,
    targets: Vec<String>,
    /// Ranges of the continuous target families.
    ranges: BTreeMap<String, NormalRange>,
    input_index: HashMap<String, usize>,
    target_index: HashMap<String, usize>,
}

impl TryFrom<VocabularyRepr> for EventVocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Self::from_parts(r.inputs, r.targets, r.ranges)
    }
}

impl From<EventVocabulary> for VocabularyRepr {
    fn from(v: EventVocabulary) -> Self {
        Self {
            inputs: v.inputs,
            targets: v.targets,
            ranges: v.ranges,
        }
    }
}

impl EventVocabulary {
    pub fn from_parts(
        mut inputs: Vec<String>,
        mut targets: Vec<String>,
        ranges: BTreeMap<String, NormalRange>,
    ) -> Result<Self> {
        inputs.sort();
        targets.sort();
        let dedup_len = |v: &Vec<String>| v.windows(2).all(|w| w[0] != w[1]);
        if !dedup_len(&inputs) || !dedup_len(&targets) {
            return Err(Error::Validation("vocabulary names must be unique".into()));
        }
        if inputs.is_empty() || targets.is_empty() {
            return Err(Error::Validation("vocabulary has no surviving events".into()));
        }
        let input_index = inputs.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let target_index = targets.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            inputs,
            targets,
            ranges,
            input_index,
            target_index,
        })
    }

    /// `E000..` inputs whose first `n_targets` names double as targets.
    pub fn synthetic(n_inputs: usize, n_targets: usize) -> Result<Self> {
        if n_targets > n_inputs {
            return Err(Error::Validation("|E′| cannot exceed |E|".into()));
        }
        let name = |i: usize| format!("E{i:04}");
        Self::from_parts(
            (0..n_inputs).map(name).collect(),
            (0..n_targets).map(name).collect(),
            BTreeMap::new(),
        )
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.input_index.get(name).copied()
    }

    pub fn target_index(&self, name: &str) -> Option<usize> {
        self.target_index.get(name).copied()
    }

    pub fn is_continuous(&self, event_type: &str) -> bool {
        self.ranges.contains_key(event_type)
    }

    /// Input coordinate an event maps to, if any. Valued measurements of
    /// continuous types are discretized; a continuous type observed without
    /// a value contributes no input bit.
    pub fn input_for(&self, event: &RawEvent) -> Option<usize> {
        if let Some(range) = self.ranges.get(&event.event_type) {
            let table = RangeTable(BTreeMap::from([(event.event_type.clone(), *range)]));
            return discretize(event, &table).ok().and_then(|n| self.input_index(&n));
        }
        self.input_index(&event.event_type)
    }

    pub fn target_for(&self, event: &RawEvent) -> Option<usize> {
        self.target_index(&event.event_type)
    }

    pub fn content_hash(&self) -> String {
        let repr = VocabularyRepr::from(self.clone());
        let bytes = serde_json::to_vec(&repr).expect("vocabulary serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Builds `E` and `E′` from the surviving event types.
///
/// Medication, procedure and lab types survive when seen in at least
/// `min_patients` distinct patients; physiological types survive by
/// include-list when one is given. Lab and physiological types observed with
/// values are continuous: they need a normal range and expand into three
/// input entries, while the target set keeps one occurrence entry per type.
pub fn build_vocabulary(events: &[RawEvent], options: &VocabularyOptions, ranges: &RangeTable) -> Result<EventVocabulary> {
    if events.is_empty() {
        return Err(Error::Validation("cannot build a vocabulary from no events".into()));
    }
    struct Stats<'a> {
        category: Category,
        patients: BTreeSet<&'a str>,
        valued: bool,
    }
    let mut stats: BTreeMap<&str, Stats<'_>> = BTreeMap::new();
    for e in events {
        let s = stats.entry(&e.event_type).or_insert_with(|| Stats {
            category: e.category,
            patients: BTreeSet::new(),
            valued: false,
        });
        if s.category != e.category {
            return Err(Error::Validation(format!(
                "event type {} appears under categories {} and {}",
                e.event_type, s.category, e.category
            )));
        }
        s.patients.insert(&e.patient_id);
        s.valued |= e.value.is_some();
    }

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut kept_ranges = BTreeMap::new();
    for (name, s) in &stats {
        let keep = match (s.category, &options.physiological_include) {
            (Category::Physiological, Some(list)) => list.contains(*name),
            _ => s.patients.len() >= options.min_patients,
        };
        if !keep {
            continue;
        }
        targets.push(name.to_string());
        if s.category.may_be_continuous() && s.valued {
            let r = ranges
                .get(name)
                .ok_or_else(|| Error::Config(format!("no normal range configured for continuous event {name}")))?;
            kept_ranges.insert(name.to_string(), *r);
            for suffix in [LOW_SUFFIX, NORMAL_SUFFIX, HIGH_SUFFIX] {
                inputs.push(format!("{name}{suffix}"));
            }
        } else {
            inputs.push(name.to_string());
        }
    }
    EventVocabulary::from_parts(inputs, targets, kept_ranges)
}
