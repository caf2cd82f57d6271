use std::fs;
use std::path::Path;

use gaitlab::auth::auth_msm;
use gaitlab::dataset::{load_dataset, load_sequence, split_with, ClaimProtocol, DatasetIndex, SplitOptions};
use gaitlab::harness::{read_claims_csv, run_experiment, write_claims_csv, Enrollment, ExperimentConfig, ENROLLMENT_KIND};
use gaitlab::persist;
use gaitlab::preprocess::{normalize_sequence, CycleConfig};
use gaitlab::synth::{generate_synthetic_dataset, SynthSpec, SynthWorld};
use gaitlab::templates::{sequence_template, GaitTemplate, TemplateKind};

fn run_twice(toml: &str) -> (String, String) {
    let config = ExperimentConfig::from_toml(toml).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let read = |sub: &str| {
        let out = dir.path().join(sub);
        let report = run_experiment(&config, &out).unwrap();
        assert!(report.succeeded(), "{:?}", report.failure);
        assert!(out.join("report.json").exists());
        fs::read_to_string(out.join("metrics.csv")).unwrap()
    };
    (read("a"), read("b"))
}

#[test]
fn auth_experiment_is_reproducible() {
    let (a, b) = run_twice(
        r#"
name = "auth"
pipeline = "auth-bt"
[dataset]
source = "synthetic"
seed = 7
[dataset.spec]
subjects = 14
[split]
seed = 2
n_authorized = [10, 5]
protocol = "exhaustive"
"#,
    );
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 3);
    assert!(a.starts_with("n_authorized,paradigm,ccr"));
}

#[test]
fn planted_gts_experiment_is_reproducible() {
    let (a, b) = run_twice(
        r#"
pipeline = "gts-recognition"
[dataset]
source = "planted"
seed = 1
[gts]
seed = 4
population = 10
generations = 5
"#,
    );
    assert_eq!(a, b);
    let stages: Vec<&str> = a.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(stages, ["full", "ga", "refined"]);
}

#[test]
fn pbv_experiment_reports_every_fraction() {
    let (a, b) = run_twice(
        r#"
pipeline = "pbv"
[dataset]
source = "synthetic"
seed = 3
[dataset.spec]
subjects = 12
normal_runs = 1
[sweep]
fractions = [0.5, 1.0]
[pbv]
folds = 3
"#,
    );
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 3);
}

#[test]
fn failed_stage_still_writes_a_report() {
    let empty = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_toml(&format!(
        "pipeline = \"auth-msm\"\n[dataset]\nsource = \"directory\"\npath = {:?}\n[split]\nseed = 1\nn_authorized = [3]\n",
        empty.path()
    ))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config, dir.path()).unwrap();
    assert!(!report.succeeded());
    assert!(report.failure.unwrap().starts_with("stage "));
    assert!(dir.path().join("report.json").exists());
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn written_dataset_loads_back_identically() {
    let spec = SynthSpec {
        subjects: 2,
        frames: 24,
        ..SynthSpec::default()
    };
    let data = generate_synthetic_dataset(&spec, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    let (index, report) = load_dataset(dir.path()).unwrap();
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    assert_eq!(index.len(), data.index.len());
    for seq in &data.sequences {
        let loaded = load_sequence(dir.path(), index.get(&seq.key).unwrap()).unwrap();
        assert_eq!(&loaded, seq);
    }
}

#[test]
fn exported_templates_round_trip() {
    let world = SynthWorld::new(SynthSpec { subjects: 1, ..SynthSpec::default() }, 2).unwrap();
    let key = world.keys()[0];
    let frames = normalize_sequence(&world.render(&key).unwrap().frames).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for kind in [TemplateKind::Gei, TemplateKind::Aei, TemplateKind::GEnI] {
        let (t, _) = sequence_template(kind, &frames, &CycleConfig::default()).unwrap();
        let path = dir.path().join(format!("{kind}.png"));
        t.export(&path).unwrap();
        let back = GaitTemplate::import(&path).unwrap();
        assert_eq!(back.kind, kind);
        // 8-bit quantization
        assert!(back.values().iter().zip(t.values()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
    }
}

fn enroll(dir: &Path) -> (Enrollment, Vec<gaitlab::dataset::ClaimSpec>) {
    let world = SynthWorld::new(SynthSpec { subjects: 8, ..SynthSpec::default() }, 5).unwrap();
    let features = world.templates(TemplateKind::Gei, &CycleConfig::default()).unwrap();
    let index = DatasetIndex::from_keys(features.keys().map(|&k| (k, 1))).unwrap();
    let split = split_with(
        &index,
        &SplitOptions {
            n_authorized: 5,
            n_outsiders: None,
            protocol: ClaimProtocol::Exhaustive,
            seed: 1,
        },
    )
    .unwrap();
    let (e, specs) = Enrollment::build(&features, split, 0.99).unwrap();
    persist::save(&dir.join("g.json"), ENROLLMENT_KIND, &e).unwrap();
    (e, specs)
}

#[test]
fn saved_enrollment_gives_the_same_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let (e, specs) = enroll(dir.path());
    let mut csv = Vec::new();
    write_claims_csv(&specs, &mut csv).unwrap();
    let specs_back = read_claims_csv(csv.as_slice()).unwrap();
    assert_eq!(specs_back, specs);

    let loaded: Enrollment = persist::load(&dir.path().join("g.json"), ENROLLMENT_KIND).unwrap();
    assert_eq!(loaded, e);
    let before: Vec<bool> = e.claims(&specs).unwrap().iter().map(|c| auth_msm(c, &e.recognizer).unwrap().accept).collect();
    let after: Vec<bool> = loaded.claims(&specs_back).unwrap().iter().map(|c| auth_msm(c, &loaded.recognizer).unwrap().accept).collect();
    assert_eq!(before, after);
    assert!(persist::load::<Enrollment>(&dir.path().join("g.json"), "pbv").is_err());
}
