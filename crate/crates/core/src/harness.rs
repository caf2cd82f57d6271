//! Declarative experiments: a TOML config names a data source and a pipeline,
//! and a run writes its metrics, artifacts and a report into one directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auth::{
    auth_bt, auth_bt_2p, auth_msm, auth_msm_2p, auth_threshold_nn, bt_threshold_for_far, compute_error_rates, outcomes,
    roc_and_eer, theoretical_msm_rates, Claim, ErrorRates, Gallery, Paradigm, Population, PosteriorThreshold, Recognizer,
    ScoreSense,
};
use crate::dataset::{
    load_dataset, load_sequence, ClaimProtocol, ClaimSpec, ClaimTruth, Covariate, DatasetIndex, GaitSequence, Gender,
    GalleryProbeSplit, SampleKey, SplitOptions, SubjectId, ViewAngle,
};
use crate::error::{GaitError, Result};
use crate::features::FeatureKind;
use crate::gts::planted::{planted_tuning_set, PlantedSpec};
use crate::gts::{
    ga_optimize, render_mask, sequential_refine, FitnessEngine, FitnessWeights, GaParams, GtsBounds, MaskSpec, TuningSet,
};
use crate::pbv::{accuracy_by_fraction, gender_corpus, partial_sweep_cv};
use crate::preprocess::{normalize_sequence, CycleConfig};
use crate::synth::{SynthSpec, SynthWorld};
use crate::templates::{apply_mask_flat, sequence_template, GaitTemplate, MaskImage, TemplateKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Pbv,
    GtsRecognition,
    AuthNn,
    AuthMsm,
    AuthBt,
    AuthMsm2p,
    AuthBt2p,
}

impl Pipeline {
    pub fn paradigm(self) -> Option<Paradigm> {
        Some(match self {
            Pipeline::AuthNn => Paradigm::Nn,
            Pipeline::AuthMsm => Paradigm::Msm,
            Pipeline::AuthBt => Paradigm::Bt,
            Pipeline::AuthMsm2p => Paradigm::Msm2p,
            Pipeline::AuthBt2p => Paradigm::Bt2p,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// A tree in the CASIA-B layout. PBV also reads `genders.json` from it.
    Directory { path: PathBuf },
    Synthetic {
        seed: u64,
        #[serde(default)]
        spec: SynthSpec,
    },
    /// Template-level tuning set with known best splits; GTS only.
    Planted {
        seed: u64,
        #[serde(default)]
        spec: PlantedSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskSource {
    File { path: PathBuf },
    Spec(MaskSpec),
}

impl MaskSource {
    pub fn load(&self) -> Result<MaskImage> {
        match self {
            MaskSource::File { path } => MaskImage::load_png(path),
            MaskSource::Spec(spec) => Ok(render_mask(spec)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub n_authorized: Vec<usize>,
    #[serde(default)]
    pub n_outsiders: Option<usize>,
    #[serde(default)]
    pub protocol: ClaimProtocol,
}

fn default_far_target() -> f64 {
    0.01
}

fn default_fractions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Mean FAR that BT thresholds are tuned to.
    #[serde(default = "default_far_target")]
    pub far_target: f64,
    /// Population size the BT thresholds are tuned at; defaults to the
    /// largest in the grid.
    #[serde(default)]
    pub tune_at: Option<usize>,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            far_target: default_far_target(),
            tune_at: None,
            fractions: default_fractions(),
        }
    }
}

fn default_features() -> String {
    "rcs".into()
}

fn default_folds() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbvConfig {
    /// `rcs` or `efd<N>`.
    #[serde(default = "default_features")]
    pub features: String,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

impl Default for PbvConfig {
    fn default() -> Self {
        Self {
            features: default_features(),
            folds: default_folds(),
        }
    }
}

fn default_weights() -> String {
    "half-sixth-third".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtsConfig {
    pub seed: u64,
    #[serde(default = "default_weights")]
    pub weights: String,
    #[serde(default)]
    pub population: Option<usize>,
    #[serde(default)]
    pub generations: Option<usize>,
    #[serde(default = "yes")]
    pub refine: bool,
}

impl GtsConfig {
    pub fn params(&self) -> GaParams {
        let d = GaParams::default();
        GaParams {
            population: self.population.unwrap_or(d.population),
            generations: self.generations.unwrap_or(d.generations),
            seed: self.seed,
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondPassConfig {
    #[serde(default)]
    pub template: Option<TemplateKind>,
    #[serde(default)]
    pub mask: Option<MaskSource>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_template() -> TemplateKind {
    TemplateKind::Gei
}

fn default_retention() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub pipeline: Pipeline,
    pub dataset: DatasetSource,
    #[serde(default = "default_template")]
    pub template: TemplateKind,
    /// Applied to first-pass templates before recognition.
    #[serde(default)]
    pub mask: Option<MaskSource>,
    #[serde(default = "default_retention")]
    pub retention: f64,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub pbv: PbvConfig,
    #[serde(default)]
    pub gts: Option<GtsConfig>,
    #[serde(default)]
    pub second_pass: Option<SecondPassConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| GaitError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| GaitError::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GaitError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GaitError::Config(m));
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return bad(format!("retention {} must lie in (0, 1]", self.retention));
        }
        if matches!(self.dataset, DatasetSource::Planted { .. }) && self.pipeline != Pipeline::GtsRecognition {
            return bad("planted data only feeds the gts-recognition pipeline".into());
        }
        if let DatasetSource::Directory { path } = &self.dataset {
            if !path.is_dir() {
                return bad(format!("dataset directory {} does not exist", path.display()));
            }
        }
        let masks = self.mask.iter().chain(self.second_pass.as_ref().and_then(|s| s.mask.as_ref()));
        for m in masks {
            if let MaskSource::File { path } = m {
                if !path.is_file() {
                    return bad(format!("mask file {} does not exist", path.display()));
                }
            }
        }
        match self.pipeline {
            Pipeline::Pbv => {
                self.pbv.features.parse::<FeatureKind>()?;
                if self.pbv.folds < 2 {
                    return bad("PBV cross-validation needs at least two folds".into());
                }
                if self.sweep.fractions.is_empty() || self.sweep.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                    return bad("partial-cycle fractions must lie in (0, 1]".into());
                }
            }
            Pipeline::GtsRecognition => {
                let Some(g) = &self.gts else {
                    return bad("gts-recognition needs a [gts] section with a seed".into());
                };
                g.weights.parse::<FitnessWeights>()?;
                g.params().validate()?;
            }
            p => {
                let Some(split) = &self.split else {
                    return bad("authentication pipelines need a [split] section with a seed".into());
                };
                if split.n_authorized.is_empty() || split.n_authorized.contains(&0) {
                    return bad("n_authorized must list positive population sizes".into());
                }
                if !(self.sweep.far_target > 0.0 && self.sweep.far_target < 1.0) {
                    return bad(format!("FAR target {} must lie in (0, 1)", self.sweep.far_target));
                }
                if p.paradigm().is_some_and(Paradigm::two_pass) && self.second_pass.is_none() {
                    return bad("two-pass pipelines need a [second_pass] section".into());
                }
            }
        }
        Ok(())
    }

    /// Every seed the run depends on, by stage.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        match &self.dataset {
            DatasetSource::Synthetic { seed, .. } | DatasetSource::Planted { seed, .. } => {
                out.insert("dataset".into(), *seed);
            }
            DatasetSource::Directory { .. } => {}
        }
        if let Some(s) = &self.split {
            out.insert("split".into(), s.seed);
        }
        if let Some(g) = &self.gts {
            out.insert("gts".into(), g.seed);
        }
        out
    }
}

/// A table of formatted values that serializes to the same bytes on every
/// rerun.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| GaitError::io("writing metrics", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }

    /// Rows as objects keyed by column name.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.rows
                .iter()
                .map(|r| serde_json::Value::Object(self.columns.iter().cloned().zip(r.iter().map(|v| json_cell(v))).collect()))
                .collect(),
        )
    }
}

/// Numeric cells become JSON numbers, empty cells null, the rest strings.
fn json_cell(v: &str) -> serde_json::Value {
    if v.is_empty() {
        return serde_json::Value::Null;
    }
    match v.parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
        Some(n) => serde_json::Value::Number(n),
        None => serde_json::Value::String(v.to_string()),
    }
}

pub fn fmt_f(v: f64) -> String {
    v.to_string()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub timings: Vec<StageTiming>,
    pub metrics: MetricsTable,
    pub warnings: Vec<String>,
    pub artifacts: Vec<PathBuf>,
    /// Cause of the first failed stage.
    pub failure: Option<String>,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

struct Run<'a> {
    out: &'a Path,
    timings: Vec<StageTiming>,
    warnings: Vec<String>,
    artifacts: Vec<PathBuf>,
    failed: Option<String>,
}

impl Run<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        info!("stage {name}");
        let r = f(self);
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        if r.is_err() && self.failed.is_none() {
            self.failed = Some(name.to_string());
        }
        r
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, body).map_err(|e| GaitError::io(format!("writing {}", path.display()), e))?;
        self.artifacts.push(PathBuf::from(name));
        Ok(())
    }
}

/// Runs the configured pipeline and writes `metrics.csv`, `report.json` and
/// any pipeline artifacts into `out_dir`. A failing stage still produces a
/// report, with the cause in [`RunReport::failure`].
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    fs::create_dir_all(out_dir).map_err(|e| GaitError::io(format!("creating {}", out_dir.display()), e))?;
    let mut run = Run {
        out: out_dir,
        timings: Vec::new(),
        warnings: Vec::new(),
        artifacts: Vec::new(),
        failed: None,
    };
    let result = config.validate().and_then(|_| match config.pipeline {
        Pipeline::Pbv => run_pbv(config, &mut run),
        Pipeline::GtsRecognition => run_gts(config, &mut run),
        p => run_auth(config, p.paradigm().expect("auth pipeline"), &mut run),
    });
    let (metrics, failure) = match result {
        Ok(m) => (m, None),
        Err(e) => (
            MetricsTable::default(),
            Some(match &run.failed {
                Some(stage) => format!("stage {stage}: {e}"),
                None => e.to_string(),
            }),
        ),
    };
    if failure.is_none() {
        run.write("metrics.csv", metrics.to_csv()?.as_bytes())?;
    }
    let mut report = RunReport {
        config: config.clone(),
        seeds: config.seeds(),
        timings: run.timings,
        metrics,
        warnings: run.warnings,
        artifacts: run.artifacts,
        failure,
    };
    report.artifacts.push(PathBuf::from("report.json"));
    let body = serde_json::to_string_pretty(&report)?;
    let path = out_dir.join("report.json");
    fs::write(&path, body).map_err(|e| GaitError::io(format!("writing {}", path.display()), e))?;
    Ok(report)
}

/// Normalized sequences of a directory dataset that pass `keep`, in key
/// order. Sequences that cannot be read or normalized become warnings.
pub fn directory_sequences(root: &Path, keep: impl Fn(&SampleKey) -> bool, warnings: &mut Vec<String>) -> Result<Vec<GaitSequence>> {
    let (index, report) = load_dataset(root)?;
    warnings.extend(report.warnings);
    let entries: Vec<_> = index.keys().filter(|k| keep(k)).map(|k| index.get(&k).expect("indexed").clone()).collect();
    let loaded: Vec<(SampleKey, Result<GaitSequence>)> = entries
        .par_iter()
        .map(|e| {
            let r = load_sequence(root, e).and_then(|raw| GaitSequence::new(e.key, normalize_sequence(&raw.frames)?));
            (e.key, r)
        })
        .collect();
    let mut out = Vec::new();
    for (key, r) in loaded {
        match r {
            Ok(s) => out.push(s),
            Err(e) => warnings.push(format!("{key}: {e}")),
        }
    }
    Ok(out)
}

/// One flattened template per sequence of the source.
pub fn source_templates(source: &DatasetSource, kind: TemplateKind, warnings: &mut Vec<String>) -> Result<BTreeMap<SampleKey, Vec<f64>>> {
    let cfg = CycleConfig::default();
    match source {
        DatasetSource::Synthetic { seed, spec } => SynthWorld::new(spec.clone(), *seed)?.templates(kind, &cfg),
        DatasetSource::Directory { path } => {
            let seqs = directory_sequences(path, |_| true, warnings)?;
            let made: Vec<(SampleKey, Result<Vec<f64>>)> = seqs
                .par_iter()
                .map(|s| (s.key, sequence_template(kind, &s.frames, &cfg).map(|t| t.0.into_vec())))
                .collect();
            let mut out = BTreeMap::new();
            for (key, r) in made {
                match r {
                    Ok(v) => {
                        out.insert(key, v);
                    }
                    Err(e) => warnings.push(format!("{key}: {e}")),
                }
            }
            Ok(out)
        }
        DatasetSource::Planted { .. } => Err(GaitError::Config("planted data holds no sequences".into())),
    }
}

fn masked(mut features: BTreeMap<SampleKey, Vec<f64>>, mask: Option<&MaskSource>) -> Result<BTreeMap<SampleKey, Vec<f64>>> {
    if let Some(m) = mask {
        let m = m.load()?;
        for v in features.values_mut() {
            *v = apply_mask_flat(v, &m)?;
        }
    }
    Ok(features)
}

fn run_pbv(config: &ExperimentConfig, run: &mut Run) -> Result<MetricsTable> {
    let kind: FeatureKind = config.pbv.features.parse()?;
    let (seqs, genders) = run.stage("load", |run| match &config.dataset {
        DatasetSource::Synthetic { seed, spec } => gender_corpus(spec.subjects, spec.normal_runs, spec.frames, *seed),
        DatasetSource::Directory { path } => {
            let table = path.join("genders.json");
            let s = fs::read_to_string(&table).map_err(|e| GaitError::io(format!("reading {}", table.display()), e))?;
            let genders: BTreeMap<SubjectId, Gender> = serde_json::from_str(&s)?;
            let seqs = directory_sequences(
                path,
                |k| k.covariate == Covariate::Normal && k.view == ViewAngle::SAGITTAL && genders.contains_key(&k.subject),
                &mut run.warnings,
            )?;
            let g = seqs.iter().map(|s| genders[&s.key.subject]).collect();
            Ok((seqs, g))
        }
        DatasetSource::Planted { .. } => unreachable!("rejected by validation"),
    })?;
    let sweep = run.stage("partial-sweep", |_| {
        partial_sweep_cv(&seqs, &genders, config.pbv.folds, kind, &config.sweep.fractions, &CycleConfig::default())
    })?;
    let pbv = accuracy_by_fraction(&sweep.pbv);
    let gei = accuracy_by_fraction(&sweep.gei);
    let mut t = MetricsTable::new(&["fraction", "pbv_accuracy", "gei_accuracy", "probes"]);
    for ((f, a), (_, b)) in pbv.iter().zip(&gei) {
        let n = sweep.pbv.iter().filter(|r| r.fraction == *f).count();
        t.push(vec![fmt_f(*f), fmt_f(*a), fmt_f(*b), n.to_string()]);
    }
    Ok(t)
}

fn run_gts(config: &ExperimentConfig, run: &mut Run) -> Result<MetricsTable> {
    let g = config.gts.as_ref().expect("validated");
    let weights: FitnessWeights = g.weights.parse()?;
    if config.mask.is_some() {
        run.warnings.push("the mask setting is ignored by gts-recognition".into());
    }
    let set = run.stage("tuning-set", |run| match &config.dataset {
        DatasetSource::Planted { seed, spec } => planted_tuning_set(spec, *seed),
        source => {
            let feats = source_templates(source, config.template, &mut run.warnings)?;
            TuningSet::from_templates(
                feats
                    .into_iter()
                    .map(|(k, v)| Ok((k, GaitTemplate::reshape(config.template, &v)?)))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    })?;
    let engine = run.stage("fitness-engine", |_| FitnessEngine::new(&set))?;
    let bounds = GtsBounds::default();
    let ga = run.stage("ga", |_| ga_optimize(&engine, &g.params(), &weights, &bounds))?;
    let mut stages = vec![("full", MaskSpec::head_feet(240, 240)?), ("ga", ga.spec)];
    if g.refine {
        let (spec, _) = run.stage("refine", |_| Ok(sequential_refine(|s| engine.fitness(s, &weights), &ga.spec, &bounds)))?;
        stages.push(("refined", spec));
    }
    let best = stages.last().expect("non-empty").1;
    run.write("fitness_trace.csv", ga.trace_csv().as_bytes())?;
    run.write("mask.json", serde_json::to_string_pretty(&best)?.as_bytes())?;
    render_mask(&best).save_png(&run.out.join("mask.png"))?;
    run.artifacts.push(PathBuf::from("mask.png"));

    let mut t = MetricsTable::new(&[
        "stage", "fitness", "s_h", "s_m", "s_f", "w_h", "w_l", "w_r", "w_f", "area", "ccr_normal", "ccr_bag", "ccr_coat",
    ]);
    for (name, spec) in stages {
        let ccr = engine.scores(&spec).ccr;
        let w = spec.weights().map(|b| u8::from(b).to_string());
        let mut row = vec![name.to_string(), fmt_f(weights.fitness(ccr)), spec.s_h.to_string(), spec.s_m.to_string(), spec.s_f.to_string()];
        row.extend(w);
        row.push(spec.area().to_string());
        row.extend(ccr.iter().map(|c| fmt_f(*c)));
        t.push(row);
    }
    Ok(t)
}

const AUTH_COLUMNS: [&str; 18] = [
    "n_authorized", "paradigm", "ccr", "ccr_second", "frr", "far_type1", "far_type2", "far_mean", "aer", "eer", "threshold",
    "theory_frr", "theory_far", "theory_far_type2", "theory_aer", "genuine", "type1", "type2",
];

struct Passes {
    first: Population,
    second: Option<Population>,
}

fn run_auth(config: &ExperimentConfig, paradigm: Paradigm, run: &mut Run) -> Result<MetricsTable> {
    let split = config.split.as_ref().expect("validated");
    let first = run.stage("templates", |run| {
        let f = source_templates(&config.dataset, config.template, &mut run.warnings)?;
        masked(f, config.mask.as_ref())
    })?;
    let second = match (&config.second_pass, paradigm.two_pass()) {
        (Some(sp), true) => Some(run.stage("templates-second", |run| {
            let kind = sp.template.unwrap_or(config.template);
            let f = source_templates(&config.dataset, kind, &mut run.warnings)?;
            masked(f, sp.mask.as_ref())
        })?),
        _ => None,
    };
    let index = DatasetIndex::from_keys(first.keys().map(|&k| (k, 1)))?;
    let build = |n: usize| -> Result<Passes> {
        let s = crate::dataset::split_with(
            &index,
            &SplitOptions {
                n_authorized: n,
                n_outsiders: split.n_outsiders,
                protocol: split.protocol,
                seed: split.seed,
            },
        )?;
        let second = match &second {
            Some(f) => Some(Population::from_split(f, s.clone(), config.retention)?),
            None => None,
        };
        Ok(Passes {
            first: Population::from_split(&first, s, config.retention)?,
            second,
        })
    };

    let mut thresholds: Option<(PosteriorThreshold, Option<PosteriorThreshold>)> = None;
    if matches!(paradigm, Paradigm::Bt | Paradigm::Bt2p) {
        let n = config.sweep.tune_at.unwrap_or_else(|| *split.n_authorized.iter().max().expect("non-empty"));
        thresholds = Some(run.stage("tune", |_| {
            let p = build(n)?;
            let tune = |pop: &Population| bt_threshold_for_far(&roc_and_eer(&pop.scores(Paradigm::Bt)?, ScoreSense::Above)?, config.sweep.far_target);
            Ok((tune(&p.first)?, p.second.as_ref().map(tune).transpose()?))
        })?);
    }

    let mut t = MetricsTable::new(&AUTH_COLUMNS);
    for &n in &split.n_authorized {
        let row = run.stage(&format!("population-{n}"), |run| {
            let p = build(n)?;
            let (rates, threshold) = evaluate(&p, paradigm, thresholds, run, n)?;
            let theory = theoretical_msm_rates(p.first.ccr, n)?;
            let c = rates.counts;
            Ok(vec![
                n.to_string(),
                paradigm.to_string(),
                fmt_f(p.first.ccr),
                fmt_opt(p.second.as_ref().map(|s| s.ccr)),
                fmt_opt(rates.frr),
                fmt_opt(rates.far_type1),
                fmt_opt(rates.far_type2),
                fmt_opt(rates.far_mean),
                fmt_opt(rates.aer),
                fmt_opt(rates.eer),
                fmt_opt(threshold),
                fmt_f(theory.frr),
                fmt_f(theory.far),
                fmt_f(theory.far_type2),
                fmt_f(theory.aer),
                c.genuine.to_string(),
                c.type1.to_string(),
                c.type2.to_string(),
            ])
        })?;
        t.push(row);
    }
    Ok(t)
}

/// Error rates of one population; the threshold column holds the NN
/// distance or the first-pass BT log threshold.
fn evaluate(
    p: &Passes,
    paradigm: Paradigm,
    thresholds: Option<(PosteriorThreshold, Option<PosteriorThreshold>)>,
    run: &mut Run,
    n: usize,
) -> Result<(ErrorRates, Option<f64>)> {
    let pop = &p.first;
    let pair = |c: usize| -> (&Claim, &Claim, &Recognizer) {
        let s = p.second.as_ref().expect("two-pass population");
        (&pop.claims[c], &s.claims[c], &s.recognizer)
    };
    let idx: Vec<usize> = (0..pop.claims.len()).collect();
    Ok(match paradigm {
        Paradigm::Nn => {
            let roc = roc_and_eer(&pop.scores(Paradigm::Nn)?, ScoreSense::Below)?;
            run.write(&format!("roc_nn_n{n}.csv"), roc.to_csv().as_bytes())?;
            let theta = roc.best.threshold;
            let d = pop.decide(|c| auth_threshold_nn(c, &pop.gallery, theta))?;
            let mut r = compute_error_rates(&outcomes(&d, &pop.claims));
            r.eer = Some(roc.eer);
            r.roc = roc.points;
            (r, Some(theta))
        }
        Paradigm::Msm => (compute_error_rates(&outcomes(&pop.decide(|c| auth_msm(c, &pop.recognizer))?, &pop.claims)), None),
        Paradigm::Msm2p => {
            let d = idx
                .par_iter()
                .map(|&i| {
                    let (a, b, r2) = pair(i);
                    auth_msm_2p(a, &pop.recognizer, b, r2)
                })
                .collect::<Result<Vec<_>>>()?;
            (compute_error_rates(&outcomes(&d, &pop.claims)), None)
        }
        Paradigm::Bt => {
            let (theta, _) = thresholds.expect("tuned");
            let roc = roc_and_eer(&pop.scores(Paradigm::Bt)?, ScoreSense::Above)?;
            run.write(&format!("roc_bt_n{n}.csv"), roc.to_csv().as_bytes())?;
            let d = pop.decide(|c| auth_bt(c, &pop.recognizer, theta))?;
            let mut r = compute_error_rates(&outcomes(&d, &pop.claims));
            r.eer = Some(roc.eer);
            (r, Some(theta.log()))
        }
        Paradigm::Bt2p => {
            let (tp, tq) = thresholds.expect("tuned");
            let tq = tq.expect("second pass tuned");
            let d = idx
                .par_iter()
                .map(|&i| {
                    let (a, b, r2) = pair(i);
                    auth_bt_2p(a, &pop.recognizer, tp, b, r2, tq)
                })
                .collect::<Result<Vec<_>>>()?;
            (compute_error_rates(&outcomes(&d, &pop.claims)), Some(tp.log()))
        }
    })
}

/// Everything a standalone authentication run needs: the recognizer, the
/// projected gallery and the projected probes by key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrollment {
    pub recognizer: Recognizer,
    pub gallery: Gallery,
    #[serde(with = "keyed_rows")]
    pub probes: BTreeMap<SampleKey, Vec<f64>>,
}

/// JSON object keys must be strings, so keyed rows travel as a list of pairs.
mod keyed_rows {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::dataset::SampleKey;

    pub fn serialize<S: Serializer>(map: &BTreeMap<SampleKey, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<SampleKey, Vec<f64>>, D::Error> {
        Ok(Vec::<(SampleKey, Vec<f64>)>::deserialize(d)?.into_iter().collect())
    }
}

pub const ENROLLMENT_KIND: &str = "enrollment";

impl Enrollment {
    /// Trains on the split's gallery and projects its probes.
    pub fn build(features: &BTreeMap<SampleKey, Vec<f64>>, split: GalleryProbeSplit, retention: f64) -> Result<(Self, Vec<ClaimSpec>)> {
        let claims = split.claims.clone();
        let probes_keys = split.probes.clone();
        let pop = Population::from_split(features, split, retention)?;
        let rows: Vec<Vec<f64>> = probes_keys
            .iter()
            .map(|k| features.get(k).cloned().ok_or_else(|| GaitError::InsufficientData(format!("no features for {k}"))))
            .collect::<Result<_>>()?;
        let z = pop.recognizer.project(&crate::subspace::matrix_from_rows(&rows)?)?;
        let probes = probes_keys.iter().enumerate().map(|(i, &k)| (k, z.row(i).iter().copied().collect())).collect();
        Ok((
            Self {
                recognizer: pop.recognizer,
                gallery: pop.gallery,
                probes,
            },
            claims,
        ))
    }

    /// Resolves claim specs against the stored probes.
    pub fn claims(&self, specs: &[ClaimSpec]) -> Result<Vec<Claim>> {
        specs
            .iter()
            .map(|c| {
                let f = self.probes.get(&c.probe).ok_or_else(|| GaitError::InsufficientData(format!("probe {} is not enrolled", c.probe)))?;
                Ok(Claim {
                    features: f.clone(),
                    claimed: c.claimed,
                    truth: c.truth,
                })
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ClaimRow {
    probe: String,
    claimed: SubjectId,
    truth: String,
}

pub fn write_claims_csv<W: std::io::Write>(claims: &[ClaimSpec], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in claims {
        w.serialize(ClaimRow {
            probe: c.probe.to_string(),
            claimed: c.claimed,
            truth: c.truth.as_str().to_string(),
        })?;
    }
    w.flush().map_err(|e| GaitError::io("writing claims", e))
}

pub fn read_claims_csv<R: std::io::Read>(input: R) -> Result<Vec<ClaimSpec>> {
    csv::Reader::from_reader(input)
        .deserialize::<ClaimRow>()
        .map(|r| {
            let r = r?;
            Ok(ClaimSpec {
                probe: r.probe.parse()?,
                claimed: r.claimed,
                truth: r.truth.parse::<ClaimTruth>()?,
            })
        })
        .collect()
}

/// Error rates as a single-row table, for CSV output.
pub fn error_rates_table(r: &ErrorRates) -> MetricsTable {
    let mut t = MetricsTable::new(&["frr", "far_type1", "far_type2", "far_mean", "aer", "eer", "genuine", "type1", "type2"]);
    t.push(vec![
        fmt_opt(r.frr),
        fmt_opt(r.far_type1),
        fmt_opt(r.far_type2),
        fmt_opt(r.far_mean),
        fmt_opt(r.aer),
        fmt_opt(r.eer),
        r.counts.genuine.to_string(),
        r.counts.type1.to_string(),
        r.counts.type2.to_string(),
    ]);
    t
}

/// Default exhaustive split options for a population size.
pub fn exhaustive(n_authorized: usize, n_outsiders: Option<usize>, seed: u64) -> SplitOptions {
    SplitOptions {
        n_authorized,
        n_outsiders,
        protocol: ClaimProtocol::Exhaustive,
        seed,
    }
}
