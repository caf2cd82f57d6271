//! `gaitlab` command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use rayon::prelude::*;

use gaitlab::auth::{
    auth_bt, auth_bt_2p, auth_msm, auth_msm_2p, auth_threshold_nn, bt_threshold_for_far, compute_error_rates, outcomes,
    roc_and_eer, AuthDecision, Claim, ErrorRates, PosteriorThreshold, ScoreSense,
};
use gaitlab::dataset::{load_dataset, load_sequence, ClaimProtocol, Covariate, Gender, SampleKey, SplitOptions, SubjectId, ViewAngle};
use gaitlab::features::FeatureKind;
use gaitlab::harness::{
    directory_sequences, error_rates_table, fmt_f, read_claims_csv, run_experiment, source_templates, write_claims_csv,
    DatasetSource, Enrollment, ExperimentConfig, GtsConfig, MetricsTable, Pipeline, RunReport, ENROLLMENT_KIND,
};
use gaitlab::pbv::{accuracy_by_fraction, gender_corpus, partial_sweep_cv, pbv_train, pbv_vote, PbvModel};
use gaitlab::persist;
use gaitlab::preprocess::{cycle_from_frames, lower_limb_signal, normalize_sequence, CycleConfig};
use gaitlab::synth::{generate_synthetic_dataset, SynthSpec};
use gaitlab::templates::{sequence_template, TemplateKind};
use gaitlab::viewest::{boundary_grid, slope_features, view_corpus, view_fit, view_predict, write_boundary_csv, SlopePair, ViewModel};
use gaitlab::{GaitError, Result};

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Parser)]
#[command(name = "gaitlab", version, about = "Gait biometrics toolkit")]
struct Cli {
    /// Output format for tables and metrics.
    #[arg(long, value_enum, global = true, default_value = "json")]
    format: Format,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset in the CASIA-B layout.
    Synth(SynthArgs),
    /// Normalize silhouettes and detect gait cycles.
    Preprocess(PreprocessArgs),
    /// Collate one template per sequence.
    Template(TemplateArgs),
    /// Pose-based-voting gender classification.
    #[command(subcommand)]
    Pbv(PbvCommand),
    /// Genetic template segmentation.
    #[command(subcommand)]
    Gts(GtsCommand),
    /// View-angle estimation.
    #[command(subcommand)]
    View(ViewCommand),
    /// Enrollment and recognition.
    #[command(subcommand)]
    Recognize(RecognizeCommand),
    /// Verify identity claims against an enrollment.
    Auth(AuthArgs),
    /// Config-driven experiments.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    subjects: u32,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated view angles in degrees.
    #[arg(long, value_delimiter = ',', default_value = "90")]
    views: Vec<u16>,
    #[arg(long, default_value_t = 40)]
    frames: usize,
    #[arg(long, default_value_t = 6)]
    normal_runs: u8,
    #[arg(long, default_value_t = 2)]
    bag_runs: u8,
    #[arg(long, default_value_t = 2)]
    coat_runs: u8,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Write normalized frames under this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump each lower-limb signal as `frame,value` CSV under this directory.
    #[arg(long)]
    signals: Option<PathBuf>,
}

#[derive(Args)]
struct TemplateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "gei")]
    kind: TemplateKind,
    #[arg(long)]
    out: PathBuf,
}

/// Training data: a directory dataset or a synthetic population.
#[derive(Args)]
struct Source {
    #[arg(long, conflicts_with = "subjects")]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "seed")]
    subjects: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    fn synthetic(&self) -> Option<(u32, u64)> {
        Some((self.subjects?, self.seed?))
    }

    fn describe(&self) -> Result<DatasetSource> {
        match (&self.dataset, self.synthetic()) {
            (Some(path), _) => Ok(DatasetSource::Directory { path: path.clone() }),
            (None, Some((subjects, seed))) => Ok(DatasetSource::Synthetic {
                seed,
                spec: SynthSpec {
                    subjects,
                    ..SynthSpec::default()
                },
            }),
            (None, None) => Err(usage("give --dataset or --subjects with --seed")),
        }
    }
}

#[derive(Args)]
struct FeatureArgs {
    #[arg(long, default_value = "rcs")]
    features: FeatureName,
    /// EFD harmonics.
    #[arg(long, default_value_t = 40)]
    harmonics: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FeatureName {
    Efd,
    Rcs,
}

impl FeatureArgs {
    fn kind(&self) -> FeatureKind {
        match self.features {
            FeatureName::Rcs => FeatureKind::Rcs,
            FeatureName::Efd => FeatureKind::Efd { harmonics: self.harmonics },
        }
    }
}

#[derive(Subcommand)]
enum PbvCommand {
    /// Train on the sagittal normal walks of a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// JSON map from subject id to gender; defaults to genders.json in the dataset.
        #[arg(long)]
        genders: Option<PathBuf>,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Predict the gender of every sagittal sequence of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Subject-disjoint cross-validated accuracy against the fraction of a cycle seen.
    PartialSweep {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
        fractions: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum GtsCommand {
    /// Search a mask and write mask.png, mask.json and fitness_trace.csv.
    Optimize {
        #[command(flatten)]
        source: Source,
        /// Use a planted tuning set generated from --seed.
        #[arg(long, conflicts_with_all = ["dataset", "subjects"])]
        planted: bool,
        #[arg(long, default_value = "gei")]
        template: TemplateKind,
        #[arg(long, default_value = "half-sixth-third")]
        weights: String,
        /// GA seed.
        #[arg(long)]
        ga_seed: u64,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        no_refine: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ViewCommand {
    /// Fit the slope classifier on non-coronal walks.
    Fit {
        #[command(flatten)]
        source: Source,
        /// Multiplicative slope noise for synthetic training data.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        model: PathBuf,
        /// Write predicted views over a slope grid as CSV.
        #[arg(long)]
        boundary_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 101)]
        grid_steps: usize,
    },
    /// Estimate the view of every sequence of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolName {
    Forged,
    Exhaustive,
}

#[derive(Subcommand)]
enum RecognizeCommand {
    /// Split a population, train on its gallery and write the enrollment and claims.
    Enroll {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "gei")]
        template: TemplateKind,
        #[arg(long)]
        n_authorized: usize,
        #[arg(long)]
        n_outsiders: Option<usize>,
        #[arg(long, value_enum, default_value = "forged")]
        protocol: ProtocolName,
        #[arg(long)]
        split_seed: u64,
        #[arg(long, default_value_t = 0.99)]
        retention: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        claims: PathBuf,
    },
    /// Recognition accuracy on the enrolled subjects' probes, by covariate.
    Eval {
        #[arg(long)]
        gallery: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ParadigmName {
    Nn,
    Msm,
    Bt,
    Msm2p,
    Bt2p,
}

#[derive(Args)]
struct AuthArgs {
    #[arg(value_enum)]
    paradigm: ParadigmName,
    #[arg(long)]
    gallery: PathBuf,
    /// Second enrollment for two-pass paradigms, built on the same split.
    #[arg(long)]
    gallery2: Option<PathBuf>,
    #[arg(long)]
    claims: PathBuf,
    /// NN distance threshold; defaults to the least-AER threshold.
    #[arg(long)]
    theta_d: Option<f64>,
    /// BT posterior threshold in (0, 1).
    #[arg(long, conflicts_with = "log_theta")]
    theta_p: Option<f64>,
    /// BT threshold as a log posterior.
    #[arg(long, allow_hyphen_values = true)]
    log_theta: Option<f64>,
    /// Otherwise BT thresholds are tuned to this mean FAR on the claims.
    #[arg(long, default_value_t = 0.01)]
    far_target: f64,
    #[arg(long)]
    roc_csv: Option<PathBuf>,
    #[arg(long)]
    decisions_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Run an experiment config into an output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the metrics of a finished run.
    Show { dir: PathBuf },
}

fn usage(msg: &str) -> GaitError {
    GaitError::InvalidArgument(msg.to_string())
}

fn emit(table: &MetricsTable, format: Format) -> Result<()> {
    match format {
        Format::Json => out(&format!("{}\n", serde_json::to_string_pretty(&table.to_json())?)),
        Format::Csv => out(&table.to_csv()?),
    }
}

/// Writes to stdout, treating a closed pipe as success.
fn out(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(GaitError::io("writing stdout", e)),
        _ => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GaitError::io(format!("creating {}", dir.display()), e))
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    fs::write(path, body).map_err(|e| GaitError::io(format!("writing {}", path.display()), e))
}

fn synth(a: SynthArgs, format: Format) -> Result<()> {
    let views = a.views.iter().map(|&v| ViewAngle::new(v)).collect::<Result<Vec<_>>>()?;
    let spec = SynthSpec {
        subjects: a.subjects,
        normal_runs: a.normal_runs,
        bag_runs: a.bag_runs,
        coat_runs: a.coat_runs,
        views,
        frames: a.frames,
        ..SynthSpec::default()
    };
    let data = generate_synthetic_dataset(&spec, a.seed)?;
    create_dir(&a.out)?;
    data.write(&a.out)?;
    let mut t = MetricsTable::new(&["subjects", "sequences", "frames", "root"]);
    t.push(vec![
        a.subjects.to_string(),
        data.index.len().to_string(),
        data.sequences.iter().map(|s| s.frames.len()).sum::<usize>().to_string(),
        a.out.display().to_string(),
    ]);
    emit(&t, format)
}

fn preprocess(a: PreprocessArgs, format: Format) -> Result<()> {
    let (index, report) = load_dataset(&a.dataset)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    let cfg = CycleConfig::default();
    let keys: Vec<SampleKey> = index.keys().collect();
    let rows = keys
        .par_iter()
        .map(|k| -> Result<Vec<String>> {
            let raw = load_sequence(&a.dataset, index.get(k).expect("indexed"))?;
            let frames = match normalize_sequence(&raw.frames) {
                Ok(f) => f,
                Err(e) => return Ok(vec![k.to_string(), raw.frames.len().to_string(), String::new(), String::new(), String::new(), e.to_string()]),
            };
            if let Some(dir) = &a.out {
                let d = dir.join(k.relative_dir());
                create_dir(&d)?;
                for (i, f) in frames.iter().enumerate() {
                    f.image().save_png(&d.join(format!("{:04}.png", i + 1)))?;
                }
            }
            if let Some(dir) = &a.signals {
                create_dir(dir)?;
                write_file(&dir.join(format!("{k}.csv")), lower_limb_signal(&frames).to_csv().as_bytes())?;
            }
            Ok(match cycle_from_frames(&frames, &cfg) {
                Ok(c) => vec![k.to_string(), frames.len().to_string(), c.start.to_string(), c.mid.to_string(), c.end.to_string(), "ok".into()],
                Err(e) => vec![k.to_string(), frames.len().to_string(), String::new(), String::new(), String::new(), e.to_string()],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = MetricsTable::new(&["key", "frames", "cycle_start", "cycle_mid", "cycle_end", "status"]);
    rows.into_iter().for_each(|r| t.push(r));
    emit(&t, format)
}

fn template(a: TemplateArgs, format: Format) -> Result<()> {
    let mut warnings = Vec::new();
    let seqs = directory_sequences(&a.dataset, |_| true, &mut warnings)?;
    for w in &warnings {
        warn!("{w}");
    }
    create_dir(&a.out)?;
    let cfg = CycleConfig::default();
    let rows = seqs
        .par_iter()
        .map(|s| -> Result<Vec<String>> {
            let (t, cycle) = sequence_template(a.kind, &s.frames, &cfg)?;
            let name = format!("{}-{}.png", s.key, a.kind);
            t.export(&a.out.join(&name))?;
            let range = cycle.map(|c| format!("{}..{}", c.start, c.end)).unwrap_or_else(|| "whole".into());
            Ok(vec![s.key.to_string(), name, range])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = MetricsTable::new(&["key", "file", "frames_used"]);
    rows.into_iter().for_each(|r| t.push(r));
    emit(&t, format)
}

fn read_genders(path: &Path) -> Result<BTreeMap<SubjectId, Gender>> {
    let s = fs::read_to_string(path).map_err(|e| GaitError::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&s)?)
}

fn sagittal_normal(k: &SampleKey) -> bool {
    k.covariate == Covariate::Normal && k.view == ViewAngle::SAGITTAL
}

fn pbv(cmd: PbvCommand, format: Format) -> Result<()> {
    match cmd {
        PbvCommand::Train { dataset, genders, features, model } => {
            let genders = read_genders(&genders.unwrap_or_else(|| dataset.join("genders.json")))?;
            let mut warnings = Vec::new();
            let seqs = directory_sequences(&dataset, |k| sagittal_normal(k) && genders.contains_key(&k.subject), &mut warnings)?;
            warnings.iter().for_each(|w| warn!("{w}"));
            let labels: Vec<Gender> = seqs.iter().map(|s| genders[&s.key.subject]).collect();
            let m = pbv_train(&seqs, &labels, features.kind())?;
            persist::save(&model, "pbv", &m)?;
            let mut t = MetricsTable::new(&["sequences", "training_frames", "skipped_frames", "features"]);
            t.push(vec![seqs.len().to_string(), m.training_frames.to_string(), m.skipped_frames.to_string(), m.kind.to_string()]);
            emit(&t, format)
        }
        PbvCommand::Predict { model, dataset } => {
            let m: PbvModel = persist::load(&model, "pbv")?;
            let genders = read_genders(&dataset.join("genders.json")).ok();
            let mut warnings = Vec::new();
            let seqs = directory_sequences(&dataset, |k| k.view == ViewAngle::SAGITTAL, &mut warnings)?;
            warnings.iter().for_each(|w| warn!("{w}"));
            let mut t = MetricsTable::new(&["key", "predicted", "truth", "male_votes", "female_votes", "skipped"]);
            for s in &seqs {
                let o = pbv_vote(&m, &s.frames)?;
                let truth = genders.as_ref().and_then(|g| g.get(&s.key.subject)).map(|g| g.to_string()).unwrap_or_default();
                t.push(vec![
                    s.key.to_string(),
                    o.gender.to_string(),
                    truth,
                    o.count(Gender::Male).to_string(),
                    o.count(Gender::Female).to_string(),
                    o.skipped.to_string(),
                ]);
            }
            emit(&t, format)
        }
        PbvCommand::PartialSweep { source, features, folds, fractions } => {
            let (seqs, genders) = match (&source.dataset, source.synthetic()) {
                (Some(root), _) => {
                    let table = read_genders(&root.join("genders.json"))?;
                    let mut warnings = Vec::new();
                    let seqs = directory_sequences(root, |k| sagittal_normal(k) && table.contains_key(&k.subject), &mut warnings)?;
                    let g = seqs.iter().map(|s| table[&s.key.subject]).collect();
                    (seqs, g)
                }
                (None, Some((subjects, seed))) => gender_corpus(subjects, 1, 40, seed)?,
                (None, None) => return Err(usage("give --dataset or --subjects with --seed")),
            };
            let sweep = partial_sweep_cv(&seqs, &genders, folds, features.kind(), &fractions, &CycleConfig::default())?;
            let mut t = MetricsTable::new(&["fraction", "pbv_accuracy", "gei_accuracy"]);
            for ((f, a), (_, b)) in accuracy_by_fraction(&sweep.pbv).iter().zip(accuracy_by_fraction(&sweep.gei)) {
                t.push(vec![fmt_f(*f), fmt_f(*a), fmt_f(b)]);
            }
            emit(&t, format)
        }
    }
}

fn report_outcome(report: &RunReport, format: Format) -> Result<()> {
    if let Some(f) = &report.failure {
        return Err(GaitError::InsufficientData(f.clone()));
    }
    emit(&report.metrics, format)
}

fn gts(cmd: GtsCommand, format: Format) -> Result<()> {
    let GtsCommand::Optimize {
        source,
        planted,
        template,
        weights,
        ga_seed,
        population,
        generations,
        no_refine,
        out,
    } = cmd;
    let dataset = if planted {
        DatasetSource::Planted {
            seed: source.seed.ok_or_else(|| usage("--planted needs --seed"))?,
            spec: Default::default(),
        }
    } else {
        source.describe()?
    };
    let config = ExperimentConfig {
        name: "gts-optimize".into(),
        pipeline: Pipeline::GtsRecognition,
        dataset,
        template,
        mask: None,
        retention: 0.99,
        split: None,
        sweep: Default::default(),
        pbv: Default::default(),
        gts: Some(GtsConfig {
            seed: ga_seed,
            weights,
            population,
            generations,
            refine: !no_refine,
        }),
        second_pass: None,
    };
    config.validate()?;
    report_outcome(&run_experiment(&config, &out)?, format)
}

fn view(cmd: ViewCommand, format: Format) -> Result<()> {
    match cmd {
        ViewCommand::Fit {
            source,
            noise,
            model,
            boundary_csv,
            grid_steps,
        } => {
            let samples: Vec<(SlopePair, ViewAngle)> = match (&source.dataset, source.synthetic()) {
                (Some(root), _) => {
                    let (index, _) = load_dataset(root)?;
                    let keys: Vec<SampleKey> = index.keys().filter(|k| !k.view.is_coronal()).collect();
                    keys.par_iter()
                        .map(|k| Ok((slope_features(&load_sequence(root, index.get(k).expect("indexed"))?.frames)?, k.view)))
                        .collect::<Result<_>>()?
                }
                (None, Some((subjects, seed))) => view_corpus(subjects, 2, noise, seed)?,
                (None, None) => return Err(usage("give --dataset or --subjects with --seed")),
            };
            let m = view_fit(&samples)?;
            persist::save(&model, "view", &m)?;
            if let Some(path) = boundary_csv {
                let (p, q) = slope_range(&samples);
                let grid = boundary_grid(&m, p, q, grid_steps)?;
                let file = fs::File::create(&path).map_err(|e| GaitError::io(format!("creating {}", path.display()), e))?;
                write_boundary_csv(&grid, file)?;
            }
            let mut t = MetricsTable::new(&["samples", "angles"]);
            let angles: Vec<String> = m.angles().iter().map(|a| a.degrees().to_string()).collect();
            t.push(vec![samples.len().to_string(), angles.join(" ")]);
            emit(&t, format)
        }
        ViewCommand::Predict { model, dataset } => {
            let m: ViewModel = persist::load(&model, "view")?;
            let (index, _) = load_dataset(&dataset)?;
            let keys: Vec<SampleKey> = index.keys().collect();
            let rows = keys
                .par_iter()
                .map(|k| {
                    let raw = load_sequence(&dataset, index.get(k).expect("indexed"))?;
                    let v = view_predict(&m, &raw.frames)?;
                    Ok(vec![k.to_string(), k.view.degrees().to_string(), v.degrees().to_string()])
                })
                .collect::<Result<Vec<_>>>()?;
            let mut t = MetricsTable::new(&["key", "recorded_view", "predicted_view"]);
            rows.into_iter().for_each(|r| t.push(r));
            emit(&t, format)
        }
    }
}

/// Observed slope ranges padded by a tenth on each side.
fn slope_range(samples: &[(SlopePair, ViewAngle)]) -> ((f64, f64), (f64, f64)) {
    let span = |f: fn(&SlopePair) -> f64| {
        let lo = samples.iter().map(|(s, _)| f(s)).fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(|(s, _)| f(s)).fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-3);
        (lo - pad, hi + pad)
    };
    (span(|s| s.m_p), span(|s| s.m_q))
}

fn recognize(cmd: RecognizeCommand, format: Format) -> Result<()> {
    match cmd {
        RecognizeCommand::Enroll {
            source,
            template,
            n_authorized,
            n_outsiders,
            protocol,
            split_seed,
            retention,
            out,
            claims,
        } => {
            let mut warnings = Vec::new();
            let features = source_templates(&source.describe()?, template, &mut warnings)?;
            warnings.iter().for_each(|w| warn!("{w}"));
            let index = gaitlab::dataset::DatasetIndex::from_keys(features.keys().map(|&k| (k, 1)))?;
            let opts = SplitOptions {
                n_authorized,
                n_outsiders,
                protocol: match protocol {
                    ProtocolName::Forged => ClaimProtocol::Forged,
                    ProtocolName::Exhaustive => ClaimProtocol::Exhaustive,
                },
                seed: split_seed,
            };
            let split = gaitlab::dataset::split_with(&index, &opts)?;
            let (enrollment, specs) = Enrollment::build(&features, split, retention)?;
            persist::save(&out, ENROLLMENT_KIND, &enrollment)?;
            let file = fs::File::create(&claims).map_err(|e| GaitError::io(format!("creating {}", claims.display()), e))?;
            write_claims_csv(&specs, file)?;
            let mut t = MetricsTable::new(&["gallery", "probes", "claims", "dimension"]);
            t.push(vec![
                enrollment.gallery.labels.len().to_string(),
                enrollment.probes.len().to_string(),
                specs.len().to_string(),
                enrollment.gallery.dim().to_string(),
            ]);
            emit(&t, format)
        }
        RecognizeCommand::Eval { gallery } => {
            let e: Enrollment = persist::load(&gallery, ENROLLMENT_KIND)?;
            let mut t = MetricsTable::new(&["covariate", "probes", "ccr"]);
            for cov in Covariate::ALL {
                let probes: Vec<(&SampleKey, &Vec<f64>)> = e
                    .probes
                    .iter()
                    .filter(|(k, _)| k.covariate == cov && e.recognizer.enrolled(k.subject))
                    .collect();
                if probes.is_empty() {
                    continue;
                }
                let hits = probes
                    .iter()
                    .map(|(k, z)| Ok(usize::from(e.recognizer.bayes.predict(z)? == k.subject)))
                    .sum::<Result<usize>>()?;
                t.push(vec![cov.to_string(), probes.len().to_string(), fmt_f(hits as f64 / probes.len() as f64)]);
            }
            emit(&t, format)
        }
    }
}

fn auth(a: AuthArgs, format: Format) -> Result<()> {
    let first: Enrollment = persist::load(&a.gallery, ENROLLMENT_KIND)?;
    let file = fs::File::open(&a.claims).map_err(|e| GaitError::io(format!("opening {}", a.claims.display()), e))?;
    let specs = read_claims_csv(file)?;
    let claims = first.claims(&specs)?;
    let second = match (&a.gallery2, matches!(a.paradigm, ParadigmName::Msm2p | ParadigmName::Bt2p)) {
        (Some(p), true) => {
            let e: Enrollment = persist::load(p, ENROLLMENT_KIND)?;
            let c = e.claims(&specs)?;
            Some((e, c))
        }
        (None, true) => return Err(usage("two-pass paradigms need --gallery2")),
        _ => None,
    };

    let bt_threshold = |e: &Enrollment, c: &[Claim]| -> Result<PosteriorThreshold> {
        match (a.theta_p, a.log_theta) {
            (Some(p), _) => PosteriorThreshold::new(p),
            (None, Some(l)) => PosteriorThreshold::from_log(l),
            (None, None) => {
                let scores = scores_of(c, |c| auth_bt(c, &e.recognizer, PosteriorThreshold::from_log(0.0)?))?;
                bt_threshold_for_far(&roc_and_eer(&scores, ScoreSense::Above)?, a.far_target)
            }
        }
    };

    let mut roc = None;
    let decisions: Vec<AuthDecision> = match a.paradigm {
        ParadigmName::Nn => {
            let sweep = roc_and_eer(&scores_of(&claims, |c| auth_threshold_nn(c, &first.gallery, 0.0))?, ScoreSense::Below)?;
            let theta = a.theta_d.unwrap_or(sweep.best.threshold);
            roc = Some(sweep);
            decide(&claims, |c| auth_threshold_nn(c, &first.gallery, theta))?
        }
        ParadigmName::Msm => decide(&claims, |c| auth_msm(c, &first.recognizer))?,
        ParadigmName::Bt => {
            roc = Some(roc_and_eer(
                &scores_of(&claims, |c| auth_bt(c, &first.recognizer, PosteriorThreshold::from_log(0.0)?))?,
                ScoreSense::Above,
            )?);
            let theta = bt_threshold(&first, &claims)?;
            decide(&claims, |c| auth_bt(c, &first.recognizer, theta))?
        }
        ParadigmName::Msm2p => {
            let (e2, c2) = second.as_ref().expect("checked above");
            (0..claims.len())
                .into_par_iter()
                .map(|i| auth_msm_2p(&claims[i], &first.recognizer, &c2[i], &e2.recognizer))
                .collect::<Result<_>>()?
        }
        ParadigmName::Bt2p => {
            let (e2, c2) = second.as_ref().expect("checked above");
            let (tp, tq) = (bt_threshold(&first, &claims)?, bt_threshold(e2, c2)?);
            (0..claims.len())
                .into_par_iter()
                .map(|i| auth_bt_2p(&claims[i], &first.recognizer, tp, &c2[i], &e2.recognizer, tq))
                .collect::<Result<_>>()?
        }
    };

    let mut rates: ErrorRates = compute_error_rates(&outcomes(&decisions, &claims));
    if let Some(r) = &roc {
        rates.eer = Some(r.eer);
        if let Some(path) = &a.roc_csv {
            write_file(path, r.to_csv().as_bytes())?;
        }
    }
    if let Some(path) = &a.decisions_csv {
        let mut t = MetricsTable::new(&["probe", "claimed", "truth", "accept", "score"]);
        for (s, d) in specs.iter().zip(&decisions) {
            t.push(vec![s.probe.to_string(), s.claimed.to_string(), s.truth.as_str().into(), d.accept.to_string(), fmt_f(d.score)]);
        }
        write_file(path, t.to_csv()?.as_bytes())?;
    }
    match format {
        Format::Json => {
            out(&format!("{}\n", serde_json::to_string_pretty(&rates)?))
        }
        Format::Csv => emit(&error_rates_table(&rates), format),
    }
}

fn decide<F>(claims: &[Claim], rule: F) -> Result<Vec<AuthDecision>>
where
    F: Fn(&Claim) -> Result<AuthDecision> + Sync + Send,
{
    claims.par_iter().map(rule).collect()
}

fn scores_of<F>(claims: &[Claim], rule: F) -> Result<Vec<(f64, gaitlab::dataset::ClaimTruth)>>
where
    F: Fn(&Claim) -> Result<AuthDecision> + Sync + Send,
{
    Ok(decide(claims, rule)?.iter().zip(claims).map(|(d, c)| (d.score, c.truth)).collect())
}

fn report(cmd: ReportCommand, format: Format) -> Result<()> {
    match cmd {
        ReportCommand::Run { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            report_outcome(&run_experiment(&config, &out)?, format)
        }
        ReportCommand::Show { dir } => {
            let path = dir.join("report.json");
            let s = fs::read_to_string(&path).map_err(|e| GaitError::io(format!("reading {}", path.display()), e))?;
            let r: RunReport = serde_json::from_str(&s)?;
            report_outcome(&r, format)
        }
    }
}

fn error_kind(e: &GaitError) -> &'static str {
    match e {
        GaitError::MissingRoot(_) => "missing_root",
        GaitError::EmptySilhouette => "empty_silhouette",
        GaitError::IncompleteCycle { .. } => "incomplete_cycle",
        GaitError::DegenerateContour(_) => "degenerate_contour",
        GaitError::DimensionMismatch { .. } => "dimension_mismatch",
        GaitError::InvalidArgument(_) => "invalid_argument",
        GaitError::InsufficientData(_) => "insufficient_data",
        GaitError::UnknownIdentity(_) => "unknown_identity",
        GaitError::Io { .. } => "io",
        GaitError::Image { .. } => "image",
        GaitError::Json(_) => "json",
        GaitError::Csv(_) => "csv",
        GaitError::Config(_) => "config",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_env("GAITLAB_LOG")
        .init();
    if let Some(n) = std::env::var("GAITLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not cap threads: {e}");
        }
    }
    let format = cli.format;
    let result = match cli.command {
        Command::Synth(a) => synth(a, format),
        Command::Preprocess(a) => preprocess(a, format),
        Command::Template(a) => template(a, format),
        Command::Pbv(c) => pbv(c, format),
        Command::Gts(c) => gts(c, format),
        Command::View(c) => view(c, format),
        Command::Recognize(c) => recognize(c, format),
        Command::Auth(a) => auth(a, format),
        Command::Report(c) => report(c, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": error_kind(&e), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}
