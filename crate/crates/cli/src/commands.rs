//! The pipeline stages. Every stage reads and writes inside one run directory:
//!
//! ```text
//! <run>/config.toml            resolved configuration
//! <run>/manifest-<cmd>.json    one per command
//! <run>/eventadapt.log
//! <run>/seed-<s>/cohort.json   prepare
//! <run>/seed-<s>/model.ckpt    train
//! <run>/seed-<s>/training_report.json
//! <run>/seed-<s>/predictions.jsonl, switch_traces.csv, report.json, report/*.csv   evaluate
//! <run>/report/*.csv           report (across seeds)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use eventadapt::data::{
    build_vocabulary, ingest, split, synthesize_cohort, windowize_all, CohortArchive, EventSequence, EventVocabulary,
    RangeTable, VocabularyOptions,
};
use eventadapt::eval::{
    aggregate_csv, aggregate_reports, evaluate_models, series_gap, third_means, EvalReport, Variant,
};
use eventadapt::model::{train_population, Checkpoint};
use eventadapt::switching::{traces_to_csv, SWITCH_TRACE_HEADER};
use eventadapt::{Error, Result};

use crate::config::{ExperimentConfig, SourceKind};
use crate::manifest::{file_sha256, RunManifest};

pub struct RunDir {
    pub root: PathBuf,
    pub config: ExperimentConfig,
}

impl RunDir {
    /// Creates `<output_dir>/<UTC timestamp>-<config hash>` unless `explicit`
    /// names the directory, and snapshots the configuration into it.
    pub fn create(config: ExperimentConfig, explicit: Option<&Path>) -> Result<Self> {
        let root = match explicit {
            Some(p) => p.to_path_buf(),
            None => config.output_dir.join(format!(
                "{}-{}",
                chrono::Utc::now().format("%Y%m%dT%H%M%SZ"),
                config.hash()
            )),
        };
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        write(&root.join("config.toml"), config.to_toml().as_bytes())?;
        crate::logging::attach_file(&root.join("eventadapt.log"));
        Ok(Self { root, config })
    }

    /// Opens an existing run; `overrides` apply on top of its snapshot.
    pub fn open(root: &Path, overrides: &[String]) -> Result<Self> {
        let path = root.join("config.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut config = ExperimentConfig::from_toml(&text)?;
        if !overrides.is_empty() {
            config = config.with_overrides(overrides)?;
            write(&path, config.to_toml().as_bytes())?;
        }
        crate::logging::attach_file(&root.join("eventadapt.log"));
        Ok(Self {
            root: root.to_path_buf(),
            config,
        })
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed-{seed}"))
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.config.to_toml(), self.config.hash())
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).display().to_string()
    }

    fn record_output(&self, m: &mut RunManifest, p: &Path) -> Result<()> {
        m.outputs.insert(self.rel(p), file_sha256(p)?);
        Ok(())
    }

    fn record_input(&self, m: &mut RunManifest, p: &Path) -> Result<()> {
        m.inputs.insert(self.rel(p), file_sha256(p)?);
        Ok(())
    }

    fn finish(&self, m: &RunManifest) -> Result<()> {
        m.save(&self.root.join(format!("manifest-{}.json", m.command)))
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Ingests or synthesizes the cohort and writes one split archive per seed.
pub fn prepare(run: &RunDir) -> Result<()> {
    let cfg = &run.config;
    let mut m = run.manifest("prepare");
    let t0 = Instant::now();
    let loaded = match cfg.data.source {
        SourceKind::Events => Some(load_events(run, &mut m)?),
        SourceKind::Synthetic => None,
    };
    for &seed in &cfg.seeds {
        let (vocab, sequences) = match &loaded {
            Some((v, s)) => (v.clone(), s.clone()),
            None => {
                let mut spec = cfg.data.synthetic.clone();
                spec.seed = seed;
                let c = synthesize_cohort(&spec.to_config())?;
                (c.vocabulary, c.sequences)
            }
        };
        let (train, test) = split(sequences, cfg.data.split_ratio, seed)?;
        log::info!("seed {seed}: {} train / {} test patients", train.len(), test.len());
        let archive = CohortArchive::new(vocab, train, test)?;
        let dir = run.seed_dir(seed);
        mkdir(&dir)?;
        let path = dir.join("cohort.json");
        archive.save(&path)?;
        run.record_output(&mut m, &path)?;
    }
    m.timings.insert("prepare".into(), t0.elapsed().as_secs_f64());
    run.finish(&m)
}

fn load_events(run: &RunDir, m: &mut RunManifest) -> Result<(EventVocabulary, Vec<EventSequence>)> {
    let d = &run.config.data;
    let path = d.events_path.as_ref().expect("validated");
    let events = ingest(path)?.into_strict(path)?;
    run.record_input(m, path)?;
    log::info!("ingested {} events from {}", events.len(), path.display());

    let ranges = match &d.ranges_path {
        Some(p) if p.exists() => {
            run.record_input(m, p)?;
            RangeTable::load(p)?
        }
        Some(p) => return Err(Error::Config(format!("range file {} does not exist", p.display()))),
        None => RangeTable::default(),
    };
    let physiological_include = match &d.physiological_include_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            run.record_input(m, p)?;
            Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect::<BTreeSet<_>>())
        }
        None => None,
    };
    let options = VocabularyOptions {
        min_patients: d.min_patients,
        physiological_include,
    };
    let vocab = build_vocabulary(&events, &options, &ranges)?;
    log::info!("vocabulary: {} inputs, {} targets", vocab.n_inputs(), vocab.n_targets());
    let (sequences, skipped) = windowize_all(&events, &vocab, d.window_hours)?;
    if !skipped.is_empty() {
        log::warn!("{} patient(s) skipped for short history", skipped.len());
    }
    Ok((vocab, sequences))
}

/// Trains the population model for every seed.
pub fn train(run: &RunDir) -> Result<()> {
    let cfg = &run.config;
    let tc = cfg.training_config();
    let mut m = run.manifest("train");
    for &seed in &cfg.seeds {
        let t0 = Instant::now();
        let dir = run.seed_dir(seed);
        let cohort_path = dir.join("cohort.json");
        let archive = CohortArchive::load(&cohort_path)?;
        run.record_input(&mut m, &cohort_path)?;
        let (fit, valid) = if cfg.data.validation_fraction > 0.0 && archive.train.len() >= 2 {
            split(archive.train.clone(), 1.0 - cfg.data.validation_fraction, seed)?
        } else {
            (archive.train.clone(), Vec::new())
        };
        log::info!("seed {seed}: training on {} patients, {} held out for lambda", fit.len(), valid.len());
        let (params, report) = train_population(&fit, &valid, &tc, seed)?;
        let ckpt = Checkpoint {
            vocabulary_hash: archive.vocabulary.content_hash(),
            params,
        };
        let ckpt_path = dir.join("model.ckpt");
        ckpt.save(&ckpt_path)?;
        let report_path = dir.join("training_report.json");
        write(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
        log::info!("seed {seed}: chose lambda {:e}", report.chosen_lambda);
        run.record_output(&mut m, &ckpt_path)?;
        run.record_output(&mut m, &report_path)?;
        m.timings.insert(format!("train seed {seed}"), t0.elapsed().as_secs_f64());
    }
    run.finish(&m)
}

/// Runs every configured variant over each seed's test set.
pub fn evaluate(run: &RunDir) -> Result<()> {
    let cfg = &run.config;
    let ec = cfg.eval_config();
    let mut m = run.manifest("evaluate");
    for &seed in &cfg.seeds {
        let t0 = Instant::now();
        let dir = run.seed_dir(seed);
        let cohort_path = dir.join("cohort.json");
        let ckpt_path = dir.join("model.ckpt");
        let archive = CohortArchive::load(&cohort_path)?;
        let ckpt = Checkpoint::load(&ckpt_path)?;
        run.record_input(&mut m, &cohort_path)?;
        run.record_input(&mut m, &ckpt_path)?;
        if ckpt.vocabulary_hash != archive.vocabulary.content_hash() {
            return Err(Error::Validation(format!(
                "seed {seed}: checkpoint was trained on vocabulary {} but the cohort has {}",
                ckpt.vocabulary_hash,
                archive.vocabulary.content_hash()
            )));
        }
        let evaluation = evaluate_models(&ckpt.params, &archive.test, &ec)?;
        let report = EvalReport::build(&evaluation, &archive.test)?;

        let pred_path = dir.join("predictions.jsonl");
        let mut buf = Vec::new();
        for r in &evaluation.log.records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        write(&pred_path, &buf)?;
        run.record_output(&mut m, &pred_path)?;
        if !evaluation.switch_traces.is_empty() {
            let mut csv = format!("model,{SWITCH_TRACE_HEADER}\n");
            for (v, traces) in &evaluation.switch_traces {
                for line in traces_to_csv(traces).lines().skip(1) {
                    let _ = writeln!(csv, "{v},{line}");
                }
            }
            let p = dir.join("switch_traces.csv");
            write(&p, csv.as_bytes())?;
            run.record_output(&mut m, &p)?;
        }
        let p = dir.join("report.json");
        write(&p, serde_json::to_string_pretty(&report)?.as_bytes())?;
        run.record_output(&mut m, &p)?;
        let tables = dir.join("report");
        mkdir(&tables)?;
        for (name, body) in report.tables() {
            if name == "switch_ratio.csv" && report.switch_ratio.is_empty() {
                continue;
            }
            let p = tables.join(name);
            write(&p, body.as_bytes())?;
            run.record_output(&mut m, &p)?;
        }
        m.timings.insert(format!("evaluate seed {seed}"), t0.elapsed().as_secs_f64());
        log::info!("seed {seed}: evaluated {} records", evaluation.log.records.len());
    }
    run.finish(&m)
}

/// Cross-seed tables plus the per-seed trend summary; returns the text
/// printed to stdout.
pub fn report(run: &RunDir) -> Result<String> {
    let cfg = &run.config;
    let mut m = run.manifest("report");
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let p = run.seed_dir(seed).join("report.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        reports.push(serde_json::from_str::<EvalReport>(&text)?);
        run.record_input(&mut m, &p)?;
    }
    let dir = run.root.join("report");
    mkdir(&dir)?;
    let rows = aggregate_reports(&reports);
    let p = dir.join("aggregate.csv");
    write(&p, aggregate_csv(&rows).as_bytes())?;
    run.record_output(&mut m, &p)?;
    let p = dir.join("trends.csv");
    write(&p, trends_csv(&cfg.seeds, &reports).as_bytes())?;
    run.record_output(&mut m, &p)?;
    run.finish(&m)?;

    let mut out = String::from("model          mean_timestep_auprc   micro_auprc\n");
    let by_metric: BTreeMap<(Variant, &str), (f64, f64)> = rows
        .iter()
        .map(|r| ((r.tag, r.metric.as_str()), (r.mean, r.std)))
        .collect();
    for v in &cfg.evaluation.variants {
        let cell = |metric: &str| {
            by_metric
                .get(&(*v, metric))
                .map(|(mu, sd)| format!("{mu:.4} ± {sd:.4}"))
                .unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(out, "{:<14} {:<21} {}", v.tag(), cell("mean_timestep_auprc"), cell("micro_auprc"));
    }
    Ok(out)
}

/// Early/mid/late means of the adapted-minus-population AUPRC gap and of
/// each switcher's patient-specific ratio, per seed and averaged.
pub fn trends_csv(seeds: &[u64], reports: &[EvalReport]) -> String {
    let mut rows: Vec<(String, String, [f64; 3])> = Vec::new();
    for (seed, r) in seeds.iter().zip(reports) {
        if let (Some(pop), Some(adapted)) = (r.timestep.get(&Variant::Pop), r.timestep.get(&Variant::In)) {
            if let Some(t) = third_means(&series_gap(&adapted.values, &pop.values)) {
                rows.push((seed.to_string(), "gap GRU-IN minus GRU-POP".into(), t));
            }
        }
        for (v, ratio) in &r.switch_ratio {
            if let Some(t) = third_means(ratio) {
                rows.push((seed.to_string(), format!("switch ratio {v}"), t));
            }
        }
    }
    let mut metrics: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
    metrics.sort();
    metrics.dedup();
    let mut s = String::from("seed,quantity,early,mid,late\n");
    for (seed, q, t) in &rows {
        let _ = writeln!(s, "{seed},{q},{:.6},{:.6},{:.6}", t[0], t[1], t[2]);
    }
    for q in metrics {
        let sel: Vec<&[f64; 3]> = rows.iter().filter(|r| r.1 == q).map(|r| &r.2).collect();
        let n = sel.len() as f64;
        let mean = |k: usize| sel.iter().map(|t| t[k]).sum::<f64>() / n;
        let _ = writeln!(s, "mean,{q},{:.6},{:.6},{:.6}", mean(0), mean(1), mean(2));
    }
    s
}

/// prepare, train, evaluate and report in sequence.
pub fn run_all(run: &RunDir) -> Result<String> {
    prepare(run)?;
    train(run)?;
    evaluate(run)?;
    let out = report(run)?;
    let _ = std::io::stderr().flush();
    Ok(out)
}
