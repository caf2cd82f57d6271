//! Pose-based voting for gender: every silhouette is classified on its own
//! and the sequence takes the majority label, so no full gait cycle is needed.

use std::cmp::Ordering;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{argmax, majority_vote, CovarianceMode, MgBayesModel};
use crate::dataset::{Covariate, GaitSequence, Gender, SampleKey, ViewAngle};
use crate::error::{GaitError, Result};
use crate::features::{frame_features, FeatureKind};
use crate::image::SilhouetteFrame;
use crate::preprocess::{cycle_from_frames, normalize_sequence, CycleConfig};
use crate::subspace::{cda_fit, cda_transform, lda_fit, lda_transform, matrix_from_rows, CdaModel, Label, LdaModel};
use crate::synth::{SynthSpec, SynthWorld};
use crate::templates::{compute_gei, sequence_template, TemplateKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbvModel {
    pub kind: FeatureKind,
    pub lda: LdaModel,
    pub bayes: MgBayesModel,
    pub training_frames: usize,
    /// Training frames dropped for lack of a usable contour.
    pub skipped_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameVote {
    pub frame: usize,
    pub gender: Gender,
    /// Posterior of the voted gender.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbvOutcome {
    pub gender: Gender,
    pub votes: Vec<FrameVote>,
    pub skipped: usize,
}

impl PbvOutcome {
    pub fn count(&self, gender: Gender) -> usize {
        self.votes.iter().filter(|v| v.gender == gender).count()
    }
}

/// Features of every usable frame with its index, plus the number skipped.
fn frame_samples(frames: &[SilhouetteFrame], kind: FeatureKind) -> (Vec<(usize, Vec<f64>)>, usize) {
    let found: Vec<Option<Vec<f64>>> = frames.par_iter().map(|f| frame_features(f, kind).ok()).collect();
    let skipped = found.iter().filter(|f| f.is_none()).count();
    let kept = found.into_iter().enumerate().filter_map(|(i, f)| f.map(|v| (i, v))).collect();
    (kept, skipped)
}

fn gender_of(label: Label) -> Result<Gender> {
    Gender::from_label(label).ok_or_else(|| GaitError::invalid(format!("label {label} is not a gender")))
}

fn check_labels(n: usize, genders: &[Gender]) -> Result<()> {
    if n != genders.len() {
        return Err(GaitError::dims(format!("{n} genders"), genders.len()));
    }
    for g in [Gender::Male, Gender::Female] {
        if !genders.contains(&g) {
            return Err(GaitError::InsufficientData(format!("no {g} training sequence")));
        }
    }
    Ok(())
}

/// Every usable frame of every sequence becomes one labelled sample; LDA is
/// fitted on the raw features and the Bayes classifier on its output.
pub fn pbv_train(sequences: &[GaitSequence], genders: &[Gender], kind: FeatureKind) -> Result<PbvModel> {
    check_labels(sequences.len(), genders)?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0;
    for (seq, g) in sequences.iter().zip(genders) {
        let (kept, s) = frame_samples(&seq.frames, kind);
        skipped += s;
        labels.extend(std::iter::repeat_n(g.label(), kept.len()));
        rows.extend(kept.into_iter().map(|(_, v)| v));
    }
    if skipped > 0 {
        debug!("PBV training skipped {skipped} degenerate frames");
    }
    let x = matrix_from_rows(&rows)?;
    let lda = lda_fit(&x, &labels)?;
    let bayes = MgBayesModel::fit(&lda_transform(&lda, &x)?, &labels, CovarianceMode::Shared)?;
    Ok(PbvModel {
        kind,
        lda,
        bayes,
        training_frames: rows.len(),
        skipped_frames: skipped,
    })
}

/// Per-frame votes and their majority. Frames are tallied irrespective of
/// order; a tied count goes to the gender with the higher mean posterior.
pub fn pbv_vote(model: &PbvModel, frames: &[SilhouetteFrame]) -> Result<PbvOutcome> {
    let (kept, skipped) = frame_samples(frames, model.kind);
    if kept.is_empty() {
        return Err(GaitError::InsufficientData(format!("all {skipped} frames are degenerate")));
    }
    let x = matrix_from_rows(&kept.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>())?;
    let post = model.bayes.log_posterior_batch(&lda_transform(&model.lda, &x)?)?;
    let mut votes = Vec::with_capacity(kept.len());
    for (r, (frame, _)) in kept.iter().enumerate() {
        let lp: Vec<f64> = post.row(r).iter().copied().collect();
        let k = argmax(&lp);
        votes.push(FrameVote {
            frame: *frame,
            gender: gender_of(model.bayes.classes[k])?,
            confidence: lp[k].exp(),
        });
    }
    let mut tally: Vec<(Label, f64)> = votes.iter().map(|v| (v.gender.label(), v.confidence)).collect();
    tally.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (labels, conf): (Vec<Label>, Vec<f64>) = tally.into_iter().unzip();
    Ok(PbvOutcome {
        gender: gender_of(majority_vote(&labels, Some(&conf))?)?,
        votes,
        skipped,
    })
}

pub fn pbv_predict(model: &PbvModel, sequence: &GaitSequence) -> Result<Gender> {
    Ok(pbv_vote(model, &sequence.frames)?.gender)
}

/// Frames covering `fraction` of a cycle of `len` frames, at least one.
pub fn partial_frames(len: usize, fraction: f64) -> usize {
    ((fraction * len as f64 - 1e-9).ceil() as usize).clamp(1, len.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialResult {
    pub fraction: f64,
    pub frames: usize,
    pub predicted: Gender,
    pub correct: bool,
}

/// Runs `predict` on the first `⌈f·cycle⌉` frames of the detected cycle for
/// each fraction `f`; without a full cycle the whole sequence stands in.
pub fn partial_eval_with<F>(sequence: &GaitSequence, truth: Gender, fractions: &[f64], cfg: &CycleConfig, predict: F) -> Result<Vec<PartialResult>>
where
    F: Fn(&[SilhouetteFrame]) -> Result<Gender>,
{
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(GaitError::invalid(format!("fraction {f} is outside (0, 1]")));
    }
    let range = match cycle_from_frames(&sequence.frames, cfg) {
        Ok(c) => c.frames(),
        Err(GaitError::IncompleteCycle { .. }) => 0..sequence.len(),
        Err(e) => return Err(e),
    };
    let cycle = &sequence.frames[range];
    fractions
        .iter()
        .map(|&fraction| {
            let frames = partial_frames(cycle.len(), fraction);
            let predicted = predict(&cycle[..frames])?;
            Ok(PartialResult {
                fraction,
                frames,
                predicted,
                correct: predicted == truth,
            })
        })
        .collect()
}

pub fn pbv_partial_eval(model: &PbvModel, sequence: &GaitSequence, truth: Gender, fractions: &[f64], cfg: &CycleConfig) -> Result<Vec<PartialResult>> {
    partial_eval_with(sequence, truth, fractions, cfg, |frames| Ok(pbv_vote(model, frames)?.gender))
}

/// PCA variance retention of the GEI baseline.
pub const GEI_RETENTION: f64 = 0.99;

/// Single-template baseline: one GEI per sequence, CDA then Bayes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeiGenderModel {
    pub cda: CdaModel,
    pub bayes: MgBayesModel,
}

impl GeiGenderModel {
    pub fn fit(sequences: &[GaitSequence], genders: &[Gender], retention: f64, cfg: &CycleConfig) -> Result<Self> {
        check_labels(sequences.len(), genders)?;
        let rows: Vec<Vec<f64>> = sequences
            .par_iter()
            .map(|s| Ok(sequence_template(TemplateKind::Gei, &s.frames, cfg)?.0.into_vec()))
            .collect::<Result<_>>()?;
        let labels: Vec<Label> = genders.iter().map(|g| g.label()).collect();
        let x = matrix_from_rows(&rows)?;
        let cda = cda_fit(&x, &labels, retention)?;
        let bayes = MgBayesModel::fit(&cda_transform(&cda, &x)?, &labels, CovarianceMode::Shared)?;
        Ok(Self { cda, bayes })
    }

    /// Classifies the GEI of whatever frames are given.
    pub fn predict(&self, frames: &[SilhouetteFrame]) -> Result<Gender> {
        let gei = compute_gei(frames)?;
        let z = self.cda.transform_one(gei.values())?;
        gender_of(self.bayes.predict(&z)?)
    }
}

/// Partial-cycle rows of PBV and of the GEI baseline over the same probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSweep {
    pub pbv: Vec<PartialResult>,
    pub gei: Vec<PartialResult>,
}

/// Subject-disjoint k-fold sweep: subject `s` is tested in fold `s mod k`
/// with PBV and the GEI baseline trained on the other folds.
pub fn partial_sweep_cv(
    sequences: &[GaitSequence],
    genders: &[Gender],
    folds: usize,
    kind: FeatureKind,
    fractions: &[f64],
    cfg: &CycleConfig,
) -> Result<PartialSweep> {
    if sequences.len() != genders.len() {
        return Err(GaitError::dims(format!("{} genders", sequences.len()), genders.len()));
    }
    if folds < 2 {
        return Err(GaitError::invalid("cross-validation needs at least two folds"));
    }
    let mut sweep = PartialSweep { pbv: Vec::new(), gei: Vec::new() };
    for fold in 0..folds {
        let test = |i: usize| sequences[i].key.subject as usize % folds == fold;
        let (tr, te): (Vec<usize>, Vec<usize>) = (0..sequences.len()).partition(|&i| !test(i));
        if te.is_empty() {
            continue;
        }
        let tr_seq: Vec<GaitSequence> = tr.iter().map(|&i| sequences[i].clone()).collect();
        let tr_gen: Vec<Gender> = tr.iter().map(|&i| genders[i]).collect();
        let model = pbv_train(&tr_seq, &tr_gen, kind)?;
        let gei = GeiGenderModel::fit(&tr_seq, &tr_gen, GEI_RETENTION, cfg)?;
        for &i in &te {
            sweep.pbv.extend(pbv_partial_eval(&model, &sequences[i], genders[i], fractions, cfg)?);
            sweep.gei.extend(partial_eval_with(&sequences[i], genders[i], fractions, cfg, |f| gei.predict(f))?);
        }
    }
    Ok(sweep)
}

/// Mean accuracy per fraction, in the order the fractions first appear.
pub fn accuracy_by_fraction(results: &[PartialResult]) -> Vec<(f64, f64)> {
    let mut acc: Vec<(f64, usize, usize)> = Vec::new();
    for r in results {
        match acc.iter_mut().find(|a| a.0.total_cmp(&r.fraction) == Ordering::Equal) {
            Some(a) => {
                a.1 += usize::from(r.correct);
                a.2 += 1;
            }
            None => acc.push((r.fraction, usize::from(r.correct), 1)),
        }
    }
    acc.into_iter().map(|(f, c, n)| (f, c as f64 / n as f64)).collect()
}

/// Normal-walk sagittal sequences of a synthetic population with their
/// genders, in subject then run order.
pub fn gender_corpus(subjects: u32, runs: u8, frames: usize, seed: u64) -> Result<(Vec<GaitSequence>, Vec<Gender>)> {
    let world = SynthWorld::new(
        SynthSpec {
            subjects,
            normal_runs: runs,
            bag_runs: 0,
            coat_runs: 0,
            views: vec![ViewAngle::SAGITTAL],
            frames,
            ..SynthSpec::default()
        },
        seed,
    )?;
    let keys: Vec<SampleKey> = world.keys().into_iter().filter(|k| k.covariate == Covariate::Normal).collect();
    let sequences: Vec<GaitSequence> = keys
        .par_iter()
        .map(|k| GaitSequence::new(*k, normalize_sequence(&world.render(k)?.frames)?))
        .collect::<Result<_>>()?;
    let genders = keys
        .iter()
        .map(|k| world.gender(k.subject).expect("key drawn from the world"))
        .collect();
    Ok((sequences, genders))
}
