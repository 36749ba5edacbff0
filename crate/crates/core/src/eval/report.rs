use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::auprc;
use super::protocol::{Evaluation, PredictionLog, PredictionRecord, Variant};
use crate::data::EventSequence;
use crate::error::{Error, Result};
use crate::switching::switch_ratio;

fn pooled<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> (Vec<f64>, Vec<bool>) {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        scores.extend_from_slice(&r.scores);
        labels.extend((0..r.labels.len()).map(|k| r.labels.get(k)));
    }
    (scores, labels)
}

/// `Ok(None)` when the stratum has no positives.
fn defined(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    match auprc(scores, labels) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn by_tag(log: &PredictionLog) -> BTreeMap<Variant, Vec<&PredictionRecord>> {
    let mut m: BTreeMap<Variant, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in &log.records {
        m.entry(r.tag).or_default().push(r);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimestepSeries {
    /// Micro-pooled AUPRC keyed by the step `t` at which predictions were issued.
    pub values: BTreeMap<usize, f64>,
    /// Steps with scored pairs but no positive label.
    pub omitted: Vec<usize>,
}

impl TimestepSeries {
    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.values().sum::<f64>() / self.values.len() as f64)
        }
    }
}

pub fn per_timestep_auprc(log: &PredictionLog) -> Result<BTreeMap<Variant, TimestepSeries>> {
    if log.records.is_empty() {
        return Err(Error::Validation("per-timestep AUPRC of an empty prediction log".into()));
    }
    let mut out = BTreeMap::new();
    for (tag, recs) in by_tag(log) {
        let mut steps: BTreeMap<usize, Vec<&PredictionRecord>> = BTreeMap::new();
        for r in recs {
            steps.entry(r.t).or_default().push(r);
        }
        let mut series = TimestepSeries::default();
        for (t, rs) in steps {
            let (s, l) = pooled(rs);
            match defined(&s, &l)? {
                Some(v) => {
                    series.values.insert(t, v);
                }
                None => series.omitted.push(t),
            }
        }
        if !series.omitted.is_empty() {
            log::warn!("{tag}: steps {:?} have no positive labels and are left out", series.omitted);
        }
        out.insert(tag, series);
    }
    Ok(out)
}

/// Micro-pooled AUPRC over every scored pair, per model.
pub fn overall_auprc(log: &PredictionLog) -> Result<BTreeMap<Variant, Option<f64>>> {
    by_tag(log)
        .into_iter()
        .map(|(tag, recs)| {
            let (s, l) = pooled(recs);
            Ok((tag, defined(&s, &l)?))
        })
        .collect()
}

/// Mean over event coordinates with at least one positive of the
/// per-event AUPRC, per model.
pub fn macro_auprc(log: &PredictionLog) -> Result<BTreeMap<Variant, Option<f64>>> {
    let mut out = BTreeMap::new();
    for (tag, recs) in by_tag(log) {
        let width = recs.first().map_or(0, |r| r.scores.len());
        let mut total = 0.0;
        let mut n = 0;
        for k in 0..width {
            let s: Vec<f64> = recs.iter().map(|r| r.scores[k]).collect();
            let l: Vec<bool> = recs.iter().map(|r| r.labels.get(k)).collect();
            if let Some(v) = defined(&s, &l)? {
                total += v;
                n += 1;
            }
        }
        out.insert(tag, (n > 0).then(|| total / n as f64));
    }
    Ok(out)
}

/// For the target at step `t + 1`: whether each target event already
/// occurred as a target at some step `≤ t`.
pub fn repetition_flags(seq: &EventSequence, t: usize) -> Vec<bool> {
    let mut seen = vec![false; seq.num_targets()];
    for step in 2..=t.min(seq.len()) {
        for k in seq.target(step).active() {
            seen[k] = true;
        }
    }
    seen
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RepetitiveSplit {
    pub repetitive: Option<f64>,
    pub non_repetitive: Option<f64>,
    pub n_repetitive: usize,
    pub n_non_repetitive: usize,
}

pub fn repetitive_split(log: &PredictionLog, sequences: &[EventSequence]) -> Result<BTreeMap<Variant, RepetitiveSplit>> {
    let index: HashMap<&str, &EventSequence> = sequences.iter().map(|s| (s.patient_id.as_str(), s)).collect();
    let mut out = BTreeMap::new();
    for (tag, recs) in by_tag(log) {
        let (mut rs, mut rl, mut ns, mut nl) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for r in recs {
            let seq = index.get(r.patient_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("prediction for unknown patient {}", r.patient_id))
            })?;
            let flags = repetition_flags(seq, r.t);
            if flags.len() != r.scores.len() {
                return Err(Error::dim("repetition flags vs scores", flags.len(), r.scores.len()));
            }
            for (k, &rep) in flags.iter().enumerate() {
                let (s, l) = if rep { (&mut rs, &mut rl) } else { (&mut ns, &mut nl) };
                s.push(r.scores[k]);
                l.push(r.labels.get(k));
            }
        }
        out.insert(
            tag,
            RepetitiveSplit {
                repetitive: defined(&rs, &rl)?,
                non_repetitive: defined(&ns, &nl)?,
                n_repetitive: rs.len(),
                n_non_repetitive: ns.len(),
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatientCounts {
    /// `(step, number of patients with at least that many steps)`.
    pub counts: Vec<(usize, usize)>,
    pub n_patients: usize,
    /// Share of patients with more than 13 steps.
    pub fraction_longer_than_13: f64,
}

pub fn patients_per_timestep(test: &[EventSequence]) -> PatientCounts {
    let max_len = test.iter().map(|s| s.len()).max().unwrap_or(0);
    let counts = (1..=max_len)
        .map(|step| (step, test.iter().filter(|s| s.len() >= step).count()))
        .collect();
    let long = test.iter().filter(|s| s.len() > 13).count();
    PatientCounts {
        counts,
        n_patients: test.len(),
        fraction_longer_than_13: if test.is_empty() { 0.0 } else { long as f64 / test.len() as f64 },
    }
}

/// Means over the early, middle and late thirds of the series' steps.
/// Needs at least three steps.
pub fn third_means(series: &BTreeMap<usize, f64>) -> Option<[f64; 3]> {
    let v: Vec<f64> = series.values().copied().collect();
    let n = v.len();
    if n < 3 {
        return None;
    }
    let cut = |k: usize| (k * n + 1) / 3;
    let mean = |a: usize, b: usize| v[a..b].iter().sum::<f64>() / (b - a) as f64;
    Some([mean(0, cut(1)), mean(cut(1), cut(2)), mean(cut(2), n)])
}

/// Pointwise `a − b` over the steps both series define.
pub fn series_gap(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    a.iter().filter_map(|(t, x)| b.get(t).map(|y| (*t, x - y))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub tag: Variant,
    /// Unweighted mean of the per-step micro AUPRCs (headline).
    pub mean_timestep_auprc: Option<f64>,
    pub micro_auprc: Option<f64>,
    pub macro_auprc: Option<f64>,
    pub repetitive_auprc: Option<f64>,
    pub non_repetitive_auprc: Option<f64>,
    pub mean_adaptation_epochs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub models: Vec<ModelSummary>,
    pub timestep: BTreeMap<Variant, TimestepSeries>,
    pub patients: PatientCounts,
    pub repetitive: BTreeMap<Variant, RepetitiveSplit>,
    pub switch_ratio: BTreeMap<Variant, BTreeMap<usize, f64>>,
}

impl EvalReport {
    pub fn build(eval: &Evaluation, test: &[EventSequence]) -> Result<Self> {
        eval.log.validate()?;
        let timestep = per_timestep_auprc(&eval.log)?;
        let micro = overall_auprc(&eval.log)?;
        let macro_ = macro_auprc(&eval.log)?;
        let repetitive = repetitive_split(&eval.log, test)?;
        let models = timestep
            .iter()
            .map(|(tag, series)| ModelSummary {
                tag: *tag,
                mean_timestep_auprc: series.mean(),
                micro_auprc: micro[tag],
                macro_auprc: macro_[tag],
                repetitive_auprc: repetitive[tag].repetitive,
                non_repetitive_auprc: repetitive[tag].non_repetitive,
                mean_adaptation_epochs: tag.mask().and_then(|m| eval.adaptation.get(&m)).map(|s| s.mean_epochs()),
            })
            .collect();
        let switch_ratio = eval
            .switch_traces
            .iter()
            .map(|(v, traces)| (*v, switch_ratio(traces)))
            .collect();
        Ok(Self {
            models,
            timestep,
            patients: patients_per_timestep(test),
            repetitive,
            switch_ratio,
        })
    }

    pub fn model(&self, tag: Variant) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.tag == tag)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("model,mean_timestep_auprc,micro_auprc,macro_auprc,repetitive_auprc,non_repetitive_auprc,mean_adaptation_epochs\n");
        for m in &self.models {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                m.tag,
                fmt_opt(m.mean_timestep_auprc),
                fmt_opt(m.micro_auprc),
                fmt_opt(m.macro_auprc),
                fmt_opt(m.repetitive_auprc),
                fmt_opt(m.non_repetitive_auprc),
                fmt_opt(m.mean_adaptation_epochs)
            );
        }
        s
    }

    pub fn timestep_csv(&self) -> String {
        let mut s = String::from("model,t,auprc\n");
        for (tag, series) in &self.timestep {
            for (t, v) in &series.values {
                let _ = writeln!(s, "{tag},{t},{v:.6}");
            }
            for t in &series.omitted {
                let _ = writeln!(s, "{tag},{t},");
            }
        }
        s
    }

    pub fn patients_csv(&self) -> String {
        let mut s = String::from("step,patients\n");
        for (t, n) in &self.patients.counts {
            let _ = writeln!(s, "{t},{n}");
        }
        s
    }

    pub fn repetitive_csv(&self) -> String {
        let mut s = String::from("model,repetitive_auprc,non_repetitive_auprc,repetitive_pairs,non_repetitive_pairs\n");
        for (tag, r) in &self.repetitive {
            let _ = writeln!(
                s,
                "{tag},{},{},{},{}",
                fmt_opt(r.repetitive),
                fmt_opt(r.non_repetitive),
                r.n_repetitive,
                r.n_non_repetitive
            );
        }
        s
    }

    pub fn switch_ratio_csv(&self) -> String {
        let mut s = String::from("model,t,patient_specific_ratio\n");
        for (tag, series) in &self.switch_ratio {
            for (t, v) in series {
                let _ = writeln!(s, "{tag},{t},{v:.6}");
            }
        }
        s
    }

    /// Every table as `(file name, contents)`.
    pub fn tables(&self) -> Vec<(&'static str, String)> {
        vec![
            ("summary.csv", self.summary_csv()),
            ("timestep_auprc.csv", self.timestep_csv()),
            ("patients_per_timestep.csv", self.patients_csv()),
            ("repetitive.csv", self.repetitive_csv()),
            ("switch_ratio.csv", self.switch_ratio_csv()),
        ]
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Across-seed mean and sample standard deviation of each headline metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub tag: Variant,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn aggregate_reports(reports: &[EvalReport]) -> Vec<AggregateRow> {
    type Getter = fn(&ModelSummary) -> Option<f64>;
    let metrics: [(&str, Getter); 5] = [
        ("mean_timestep_auprc", |m| m.mean_timestep_auprc),
        ("micro_auprc", |m| m.micro_auprc),
        ("macro_auprc", |m| m.macro_auprc),
        ("repetitive_auprc", |m| m.repetitive_auprc),
        ("non_repetitive_auprc", |m| m.non_repetitive_auprc),
    ];
    let mut tags: Vec<Variant> = reports.iter().flat_map(|r| r.models.iter().map(|m| m.tag)).collect();
    tags.sort();
    tags.dedup();
    let mut rows = Vec::new();
    for tag in tags {
        for (name, get) in metrics {
            let xs: Vec<f64> = reports.iter().filter_map(|r| r.model(tag).and_then(get)).collect();
            if xs.is_empty() {
                continue;
            }
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            rows.push(AggregateRow {
                tag,
                metric: name.to_string(),
                mean,
                std,
                n,
            });
        }
    }
    rows
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("model,metric,mean,std,seeds\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6},{}", r.tag, r.metric, r.mean, r.std, r.n);
    }
    s
}
