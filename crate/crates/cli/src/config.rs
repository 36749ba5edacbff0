//! Experiment configuration: named presets, a TOML file on top, then
//! `key=value` overrides on top of that.

use std::path::{Path, PathBuf};

use eventadapt::adapt::AdaptationConfig;
use eventadapt::data::RegimeShiftSpec;
use eventadapt::eval::{EvalConfig, SwitchLoss, Variant};
use eventadapt::model::TrainingConfig;
use eventadapt::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synthetic,
    Events,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// Event file for `source = "events"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events_path: Option<PathBuf>,
    /// Normal-range file; required when continuous events are present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges_path: Option<PathBuf>,
    /// Newline-separated physiological event types to keep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physiological_include_path: Option<PathBuf>,
    pub min_patients: usize,
    pub window_hours: f64,
    /// Share of patients in the training split.
    pub split_ratio: f64,
    /// Share of the training split held out for choosing λ.
    pub validation_fraction: f64,
    pub synthetic: RegimeShiftSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationSection {
    pub gamma: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub variants: Vec<Variant>,
    pub switch_loss: SwitchLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub adaptation: AdaptationSection,
    pub evaluation: EvaluationSection,
}

/// Desk-scale synthetic cohort: 625 patients (500 train / 125 test), two
/// regimes. Patients start in a shared "admission" regime and drift into a
/// personalized one where each patient carries its own subset of events.
pub fn desk_cohort() -> RegimeShiftSpec {
    RegimeShiftSpec {
        n_patients: 625,
        n_regimes: 2,
        n_shared: 10,
        n_specific: 10,
        n_context: 6,
        shared_rate: 0.06,
        specific_on_rate: 0.15,
        specific_off_rate: 0.02,
        context_rate: 0.15,
        personalized_regimes: vec![1],
        regime_hazards: vec![0.08, 0.04],
        initial_regime_probs: vec![0.9, 0.1],
        switch_hazard: 0.08,
        min_length: 4,
        max_length: 20,
        event_affinity: 0.3,
        idiosyncratic_fraction: 1.0,
        seed: 0,
    }
}

impl ExperimentConfig {
    /// Synthetic cohort, embed 16 / hidden 64, three seeds.
    pub fn desk() -> Self {
        let adapt = AdaptationConfig::default();
        Self {
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs"),
            data: DataConfig {
                source: SourceKind::Synthetic,
                events_path: None,
                ranges_path: None,
                physiological_include_path: None,
                min_patients: 500,
                window_hours: 24.0,
                split_ratio: 0.8,
                validation_fraction: 0.1,
                synthetic: desk_cohort(),
            },
            model: ModelConfig {
                embed_dim: 16,
                hidden_dim: 64,
            },
            training: TrainingSection {
                learning_rate: 0.005,
                batch_size: 32,
                max_epochs: 100,
                patience: 10,
                lambda_grid: vec![1e-6],
            },
            adaptation: AdaptationSection {
                gamma: adapt.gamma,
                epsilon: adapt.epsilon,
                learning_rate: adapt.learning_rate,
                max_epochs: 10,
                warm_start: false,
            },
            evaluation: EvaluationSection {
                variants: Variant::ALL.to_vec(),
                switch_loss: SwitchLoss::Prequential,
            },
        }
    }

    /// Event-file input, embed 64 / hidden 512, the full λ grid.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.seeds = vec![1];
        c.data.source = SourceKind::Events;
        c.data.events_path = Some(PathBuf::from("events.csv"));
        c.data.ranges_path = Some(PathBuf::from("ranges.json"));
        c.model = ModelConfig {
            embed_dim: 64,
            hidden_dim: 512,
        };
        c.training.lambda_grid = vec![1e-4, 1e-5, 1e-6, 1e-7];
        c.training.patience = 5;
        c.adaptation.max_epochs = AdaptationConfig::default().max_epochs;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => Err(Error::Config(format!("unknown preset {name:?}; expected desk or full"))),
        }
    }

    /// Preset, then the file's keys, then each `key=value` override.
    pub fn resolve(preset: &str, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(Self::preset(preset)?).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let layer: toml::Value = text
                .parse::<toml::Table>()
                .map(toml::Value::Table)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, layer);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let c: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// A copy with `key=value` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let c: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 12 hex digits of the SHA-256 of the canonical TOML.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))[..12].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.data.source == SourceKind::Events && self.data.events_path.is_none() {
            return Err(Error::Config("data.events_path is required for source = \"events\"".into()));
        }
        if !(self.data.split_ratio > 0.0 && self.data.split_ratio < 1.0) {
            return Err(Error::Config("data.split_ratio must lie in (0,1)".into()));
        }
        if !(self.data.validation_fraction >= 0.0 && self.data.validation_fraction < 1.0) {
            return Err(Error::Config("data.validation_fraction must lie in [0,1)".into()));
        }
        if self.data.window_hours.is_nan() || self.data.window_hours <= 0.0 {
            return Err(Error::Config("data.window_hours must be positive".into()));
        }
        if self.model.embed_dim == 0 || self.model.hidden_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        self.training_config().validate()?;
        self.eval_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.data.source == SourceKind::Synthetic {
            self.data.synthetic.to_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            learning_rate: self.training.learning_rate,
            batch_size: self.training.batch_size,
            max_epochs: self.training.max_epochs,
            patience: self.training.patience,
            lambda_grid: self.training.lambda_grid.clone(),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        let a = &self.adaptation;
        EvalConfig {
            variants: self.evaluation.variants.clone(),
            adaptation: AdaptationConfig {
                gamma: a.gamma,
                epsilon: a.epsilon,
                learning_rate: a.learning_rate,
                max_epochs: a.max_epochs,
                warm_start: a.warm_start,
                ..AdaptationConfig::default()
            },
            switch_loss: self.evaluation.switch_loss,
        }
    }
}

fn merge(base: &mut toml::Value, layer: toml::Value) {
    match (base, layer) {
        (toml::Value::Table(b), toml::Value::Table(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`, with `value` read as a TOML literal and taken as a plain
/// string when it does not parse.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("override {key}: unknown section {part}")))?;
    }
    Err(Error::Config(format!("override {spec:?} has an empty key")))
}
