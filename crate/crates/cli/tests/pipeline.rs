use std::path::Path;
use std::process::Command;

use eventadapt::data::CohortArchive;
use eventadapt::model::TrainingReport;
use eventadapt_cli::commands::{evaluate, prepare, report, train, RunDir};
use eventadapt_cli::config::ExperimentConfig;

const SMALL: &[&str] = &[
    "seeds=[1]",
    "data.synthetic.n_patients=30",
    "training.max_epochs=2",
    "model.hidden_dim=8",
    "model.embed_dim=4",
    "adaptation.max_epochs=3",
];

fn small(extra: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = SMALL.iter().chain(extra).map(|s| s.to_string()).collect();
    ExperimentConfig::resolve("desk", None, &o).unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn summary_models(run: &Path, seed: u64) -> Vec<String> {
    String::from_utf8(read(run.join(format!("seed-{seed}/report/summary.csv"))))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect()
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_eventadapt")).args(args).output().unwrap()
}

#[test]
fn prepare_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for name in ["a", "b"] {
        let run = RunDir::create(small(&[]), Some(&tmp.path().join(name))).unwrap();
        prepare(&run).unwrap();
        let archive = CohortArchive::load(&run.seed_dir(1).join("cohort.json")).unwrap();
        assert_eq!(archive.train.len() + archive.test.len(), 30);
        assert_eq!(archive.test.len(), 6);
        hashes.push((archive.content_hash, read(run.seed_dir(1).join("cohort.json"))));
    }
    assert_eq!(hashes[0], hashes[1]);

    // another seed gives another cohort
    let run = RunDir::create(small(&["seeds=[2]"]), Some(&tmp.path().join("c"))).unwrap();
    prepare(&run).unwrap();
    let other = CohortArchive::load(&run.seed_dir(2).join("cohort.json")).unwrap();
    assert_ne!(other.content_hash, hashes[0].0);
}

#[test]
fn training_is_deterministic_with_one_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ckpts = Vec::new();
    for name in ["a", "b"] {
        let run = RunDir::create(small(&[]), Some(&tmp.path().join(name))).unwrap();
        prepare(&run).unwrap();
        train(&run).unwrap();
        let rep: TrainingReport =
            serde_json::from_slice(&read(run.seed_dir(1).join("training_report.json"))).unwrap();
        assert_eq!(rep.runs.len(), 1);
        assert_eq!(rep.chosen_lambda, 1e-6);
        assert!(rep.runs[0].train_loss.len() <= 2);
        ckpts.push(read(run.seed_dir(1).join("model.ckpt")));
    }
    assert_eq!(ckpts[0], ckpts[1]);
}

#[test]
fn variant_subset_controls_report_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let run = RunDir::create(small(&[r#"evaluation.variants=["GRU-POP"]"#]), Some(tmp.path())).unwrap();
    prepare(&run).unwrap();
    train(&run).unwrap();
    evaluate(&run).unwrap();
    assert_eq!(summary_models(tmp.path(), 1), vec!["GRU-POP"]);
    assert!(!run.seed_dir(1).join("report/switch_ratio.csv").exists());
    assert!(!run.seed_dir(1).join("switch_traces.csv").exists());

    // same run, full variant set
    let run = RunDir::open(
        tmp.path(),
        &[r#"evaluation.variants=["GRU-POP","GRU-IN","GRU-IN-AO","GRU-IN-AT","GRU-IN-SW","GRU-IN-AO-SW"]"#.into()],
    )
    .unwrap();
    evaluate(&run).unwrap();
    assert_eq!(
        summary_models(tmp.path(), 1),
        vec!["GRU-POP", "GRU-IN", "GRU-IN-AO", "GRU-IN-AT", "GRU-IN-SW", "GRU-IN-AO-SW"]
    );
    let ratio = String::from_utf8(read(run.seed_dir(1).join("report/switch_ratio.csv"))).unwrap();
    assert!(ratio.starts_with("model,t,patient_specific_ratio\n"), "{ratio}");
    assert!(ratio.lines().any(|l| l.starts_with("GRU-IN-SW,")));
    assert!(ratio.lines().any(|l| l.starts_with("GRU-IN-AO-SW,")));
    let traces = String::from_utf8(read(run.seed_dir(1).join("switch_traces.csv"))).unwrap();
    assert!(traces.starts_with("model,patient_id,t,choice"));

    let printed = report(&run).unwrap();
    assert!(printed.contains("GRU-IN-AO-SW"));
    assert!(tmp.path().join("report/aggregate.csv").exists());
    assert!(tmp.path().join("report/trends.csv").exists());
    for cmd in ["prepare", "train", "evaluate", "report"] {
        assert!(tmp.path().join(format!("manifest-{cmd}.json")).exists(), "{cmd}");
    }
}

const EVENTS: &str = "\
patient_id,timestamp,category,event_type,value
p1,2020-01-01 08:00,medication,HEPARIN,
p1,2020-01-01 09:00,lab,GLUCOSE,140
p1,2020-01-02 08:00,medication,HEPARIN,
p1,2020-01-03 10:00,procedure,XRAY,
p1,2020-01-04 10:00,lab,GLUCOSE,90
p1,2020-01-05 11:00,medication,INSULIN,
p2,2020-02-01 00:00,medication,INSULIN,
p2,2020-02-02 00:00,lab,GLUCOSE,60
p2,2020-02-03 00:00,medication,HEPARIN,
p2,2020-02-04 00:00,procedure,XRAY,
p2,2020-02-05 00:00,medication,INSULIN,
p3,2020-03-01 00:00,procedure,XRAY,
p3,2020-03-02 00:00,medication,HEPARIN,
p3,2020-03-03 00:00,lab,GLUCOSE,100
p3,2020-03-04 00:00,medication,INSULIN,
p3,2020-03-05 00:00,medication,HEPARIN,
";

fn events_config(dir: &Path, ranges: Option<&Path>) -> ExperimentConfig {
    std::fs::write(dir.join("events.csv"), EVENTS).unwrap();
    let mut o = vec![
        "data.source=\"events\"".to_string(),
        format!("data.events_path={:?}", dir.join("events.csv").display().to_string()),
        "data.min_patients=1".into(),
        "data.split_ratio=0.7".into(),
        "data.validation_fraction=0".into(),
        r#"evaluation.variants=["GRU-POP","GRU-IN"]"#.into(),
    ];
    if let Some(r) = ranges {
        o.push(format!("data.ranges_path={:?}", r.display().to_string()));
    }
    small(&[]).with_overrides(&o).unwrap()
}

#[test]
fn event_file_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let ranges = tmp.path().join("ranges.json");
    std::fs::write(&ranges, r#"{"GLUCOSE": {"low": 70, "high": 110}}"#).unwrap();
    let run = RunDir::create(events_config(tmp.path(), Some(&ranges)), Some(&tmp.path().join("run"))).unwrap();
    prepare(&run).unwrap();
    let archive = CohortArchive::load(&run.seed_dir(1).join("cohort.json")).unwrap();
    assert_eq!(
        archive.vocabulary.inputs(),
        ["GLUCOSE_HIGH", "GLUCOSE_LOW", "GLUCOSE_NORMAL", "HEPARIN", "INSULIN", "XRAY"]
    );
    assert_eq!(archive.vocabulary.targets(), ["GLUCOSE", "HEPARIN", "INSULIN", "XRAY"]);
    assert_eq!((archive.train.len(), archive.test.len()), (2, 1));
    assert!(archive.train.iter().chain(&archive.test).all(|s| s.len() == 5));
    train(&run).unwrap();
    evaluate(&run).unwrap();
    assert_eq!(summary_models(&run.root, 1), vec!["GRU-POP", "GRU-IN"]);
    let manifest = String::from_utf8(read(run.root.join("manifest-prepare.json"))).unwrap();
    assert!(manifest.contains("events.csv"));
}

#[test]
fn missing_range_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run = RunDir::create(
        events_config(tmp.path(), Some(&tmp.path().join("absent.json"))),
        Some(&tmp.path().join("run")),
    )
    .unwrap();
    assert!(matches!(prepare(&run), Err(eventadapt::Error::Config(_))));

    // a valued lab with no configured range
    let run = RunDir::create(events_config(tmp.path(), None), Some(&tmp.path().join("run2"))).unwrap();
    assert!(matches!(prepare(&run), Err(eventadapt::Error::Config(_))));
}

#[test]
fn checkpoint_from_another_vocabulary_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let a = RunDir::create(small(&[]), Some(&tmp.path().join("a"))).unwrap();
    let b = RunDir::create(small(&["data.synthetic.n_context=3"]), Some(&tmp.path().join("b"))).unwrap();
    for r in [&a, &b] {
        prepare(r).unwrap();
        train(r).unwrap();
    }
    std::fs::copy(b.seed_dir(1).join("model.ckpt"), a.seed_dir(1).join("model.ckpt")).unwrap();
    assert!(matches!(evaluate(&a), Err(eventadapt::Error::Validation(_))));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["prepare", "--preset", "nope", "--run-dir", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&["prepare", "--set", "training.no_such_key=1", "--run-dir", tmp.path().join("y").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&["train", "--run-dir", tmp.path().join("missing").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));

    let dir = tmp.path().join("ok");
    let mut args = vec!["-q", "run", "--run-dir", dir.to_str().unwrap()];
    for s in SMALL {
        args.extend(["--set", s]);
    }
    let out = cli(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("GRU-POP") && stdout.contains("GRU-IN-AO-SW"), "{stdout}");
}
