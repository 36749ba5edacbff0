use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A {0,1} vector stored as its sorted set of active coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryVector {
    len: usize,
    active: Vec<u32>,
}

impl BinaryVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            active: Vec::new(),
        }
    }

    /// Duplicates collapse to a single 1.
    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut active: Vec<u32> = Vec::new();
        for i in indices {
            if i >= len {
                return Err(Error::dim("BinaryVector index", i, len));
            }
            active.push(i as u32);
        }
        active.sort_unstable();
        active.dedup();
        Ok(Self { len, active })
    }

    pub fn from_dense(values: &[u8]) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::Validation(format!("binary vector entry {v} is not 0/1")));
        }
        Self::from_indices(
            values.len(),
            values.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i),
        )
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().map(|&i| i as usize)
    }

    pub fn count_active(&self) -> usize {
        self.active.len()
    }

    pub fn get(&self, i: usize) -> bool {
        self.active.binary_search(&(i as u32)).is_ok()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for i in self.active() {
            out[i] = 1.0;
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.active.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("binary vector indices not strictly increasing".into()));
        }
        if self.active.last().is_some_and(|&i| i as usize >= self.len) {
            return Err(Error::Validation("binary vector index out of range".into()));
        }
        Ok(())
    }
}

/// One patient's windowed event stream.
///
/// `inputs[j]` is the input vector of step `j + 1` and `targets[j]` the
/// target vector of step `j + 2`, so a sequence of `T` steps has `T` inputs
/// and `T − 1` targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub patient_id: String,
    pub window_hours: f64,
    inputs: Vec<BinaryVector>,
    targets: Vec<BinaryVector>,
}

impl EventSequence {
    pub fn new(
        patient_id: impl Into<String>,
        window_hours: f64,
        inputs: Vec<BinaryVector>,
        targets: Vec<BinaryVector>,
    ) -> Result<Self> {
        let s = Self {
            patient_id: patient_id.into(),
            window_hours,
            inputs,
            targets,
        };
        s.validate()?;
        Ok(s)
    }

    /// Builds a sequence whose targets are the leading `n_targets`
    /// coordinates of the next step's input.
    pub fn from_inputs_with_prefix_targets(
        patient_id: impl Into<String>,
        window_hours: f64,
        inputs: Vec<BinaryVector>,
        n_targets: usize,
    ) -> Result<Self> {
        let targets = inputs
            .iter()
            .skip(1)
            .map(|y| BinaryVector::from_indices(n_targets, y.active().filter(|&i| i < n_targets)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(patient_id, window_hours, inputs, targets)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() < 2 {
            return Err(Error::Validation(format!(
                "sequence {} has {} steps, need at least 2",
                self.patient_id,
                self.inputs.len()
            )));
        }
        if self.targets.len() + 1 != self.inputs.len() {
            return Err(Error::Validation(format!(
                "sequence {}: {} inputs but {} targets",
                self.patient_id,
                self.inputs.len(),
                self.targets.len()
            )));
        }
        let ni = self.inputs[0].len();
        let nt = self.targets[0].len();
        for v in &self.inputs {
            v.validate()?;
            if v.len() != ni {
                return Err(Error::dim("sequence input width", ni, v.len()));
            }
        }
        for v in &self.targets {
            v.validate()?;
            if v.len() != nt {
                return Err(Error::dim("sequence target width", nt, v.len()));
            }
        }
        Ok(())
    }

    /// Number of windows `T`.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn num_targets(&self) -> usize {
        self.targets[0].len()
    }

    pub fn inputs(&self) -> &[BinaryVector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[BinaryVector] {
        &self.targets
    }

    /// Input vector `y_step`, 1-based.
    pub fn input(&self, step: usize) -> &BinaryVector {
        &self.inputs[step - 1]
    }

    /// Target vector `y′_step`, 1-based, defined for `step ≥ 2`.
    pub fn target(&self, step: usize) -> &BinaryVector {
        &self.targets[step - 2]
    }

    /// Everything observed through step `t`: inputs `y_1..y_t` and
    /// targets `y′_2..y′_t`.
    pub fn history(&self, t: usize) -> Result<History<'_>> {
        if t == 0 || t > self.len() {
            return Err(Error::Validation(format!(
                "step {t} outside 1..={} for {}",
                self.len(),
                self.patient_id
            )));
        }
        Ok(History {
            inputs: &self.inputs[..t],
            targets: &self.targets[..t - 1],
        })
    }

    /// The whole sequence as a history through `T`.
    pub fn full_history(&self) -> History<'_> {
        History {
            inputs: &self.inputs,
            targets: &self.targets,
        }
    }
}

/// A view of a patient's record through step `t`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub inputs: &'a [BinaryVector],
    pub targets: &'a [BinaryVector],
}

impl<'a> History<'a> {
    pub fn new(inputs: &'a [BinaryVector], targets: &'a [BinaryVector]) -> Result<Self> {
        if inputs.is_empty() || targets.len() + 1 != inputs.len() {
            return Err(Error::Validation(format!(
                "history needs t inputs and t-1 targets, got {} and {}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    /// Current step `t`.
    pub fn t(&self) -> usize {
        self.inputs.len()
    }

    /// Number of observed (input prefix, next target) pairs, `t − 1`.
    pub fn num_observed(&self) -> usize {
        self.targets.len()
    }
}
