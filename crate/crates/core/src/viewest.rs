//! View-angle estimation from the drift of the top-most and bottom-most
//! silhouette points between the first and last frames of a walk.

use std::io::Write;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{CovarianceMode, MgBayesModel};
use crate::dataset::{Covariate, SampleKey, ViewAngle};
use crate::error::{GaitError, Result};
use crate::image::BinaryImage;
use crate::rng;
use crate::subspace::{lda_fit, lda_transform, Label, LdaModel};
use crate::synth::{coronal_walk, SynthSpec, SynthWorld};

/// Stand-in for the slope of a vertical line.
pub const VERTICAL_SLOPE: f64 = 1e3;

/// Default bounding-box IoU above which a walk counts as coronal.
pub const CORONAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopePair {
    /// Slope of the line through the top-most points.
    pub m_p: f64,
    /// Slope of the line through the bottom-most points.
    pub m_q: f64,
}

impl SlopePair {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.m_p, self.m_q]
    }
}

/// Top-most and bottom-most foreground pixels, ties to the leftmost.
fn extreme_points(img: &BinaryImage) -> Option<((usize, usize), (usize, usize))> {
    let bb = img.bounding_box()?;
    let row_first = |y: usize| (0..img.width()).find(|&x| img.get(x, y)).map(|x| (x, y));
    Some((row_first(bb.y0)?, row_first(bb.y1)?))
}

fn slope(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = b.0 as f64 - a.0 as f64;
    let dy = b.1 as f64 - a.1 as f64;
    if dx == 0.0 {
        if dy == 0.0 {
            0.0
        } else {
            VERTICAL_SLOPE.copysign(dy)
        }
    } else {
        (dy / dx).clamp(-VERTICAL_SLOPE, VERTICAL_SLOPE)
    }
}

fn first_and_last(frames: &[BinaryImage]) -> Result<(&BinaryImage, &BinaryImage)> {
    let first = frames.iter().position(|f| !f.is_empty());
    let last = frames.iter().rposition(|f| !f.is_empty());
    match (first, last) {
        (Some(a), Some(b)) if a < b => Ok((&frames[a], &frames[b])),
        _ => Err(GaitError::InsufficientData("slopes need two frames with foreground".into())),
    }
}

/// Slopes between the first and last frames holding foreground, measured in
/// camera-frame pixel coordinates (y grows downwards). Frames must not be
/// size-normalized.
pub fn slope_features(frames: &[BinaryImage]) -> Result<SlopePair> {
    let (a, b) = first_and_last(frames)?;
    let (p1, q1) = extreme_points(a).ok_or(GaitError::EmptySilhouette)?;
    let (pn, qn) = extreme_points(b).ok_or(GaitError::EmptySilhouette)?;
    Ok(SlopePair {
        m_p: slope(p1, pn),
        m_q: slope(q1, qn),
    })
}

/// 0° when the first and last bounding boxes overlap by at least `iou` and
/// the subject grows, 180° when it shrinks, otherwise `None`.
pub fn coronal_check(frames: &[BinaryImage], iou: f64) -> Result<Option<ViewAngle>> {
    let (a, b) = first_and_last(frames)?;
    let (ba, bb) = (a.bounding_box().expect("non-empty"), b.bounding_box().expect("non-empty"));
    if ba.iou(&bb) < iou {
        return Ok(None);
    }
    let degrees = if bb.height() > ba.height() { 0 } else { 180 };
    Ok(Some(ViewAngle::new(degrees)?))
}

/// LDA on the slope pair followed by a Gaussian Bayes classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewModel {
    pub lda: LdaModel,
    pub bayes: MgBayesModel,
    pub coronal_iou: f64,
}

impl ViewModel {
    pub fn angles(&self) -> Vec<ViewAngle> {
        self.bayes.classes.iter().map(|&c| ViewAngle::new(c as u16).expect("trained on valid angles")).collect()
    }

    pub fn classify(&self, slopes: SlopePair) -> Result<ViewAngle> {
        let z = lda_transform(&self.lda, &DMatrix::from_row_slice(1, 2, &slopes.to_vec()))?;
        let label = self.bayes.predict(&z.row(0).iter().copied().collect::<Vec<_>>())?;
        ViewAngle::new(label as u16)
    }
}

pub fn view_fit(samples: &[(SlopePair, ViewAngle)]) -> Result<ViewModel> {
    if let Some((_, v)) = samples.iter().find(|(_, v)| v.is_coronal()) {
        return Err(GaitError::invalid(format!("coronal view {v} is handled by the overlap test, not the classifier")));
    }
    let x = DMatrix::from_fn(samples.len(), 2, |i, j| samples[i].0.to_vec()[j]);
    let y: Vec<Label> = samples.iter().map(|(_, v)| v.degrees() as Label).collect();
    let lda = lda_fit(&x, &y)?;
    let bayes = MgBayesModel::fit(&lda_transform(&lda, &x)?, &y, CovarianceMode::PerClass)?;
    Ok(ViewModel {
        lda,
        bayes,
        coronal_iou: CORONAL_IOU,
    })
}

/// Coronal walks short-circuit; everything else goes to the classifier.
pub fn view_predict(model: &ViewModel, frames: &[BinaryImage]) -> Result<ViewAngle> {
    match coronal_check(frames, model.coronal_iou)? {
        Some(v) => Ok(v),
        None => model.classify(slope_features(frames)?),
    }
}

/// Fraction of samples classified correctly; every true angle must be one
/// the model was trained on.
pub fn view_accuracy(model: &ViewModel, samples: &[(SlopePair, ViewAngle)]) -> Result<f64> {
    let trained = model.angles();
    let mut hits = 0;
    for (s, v) in samples {
        if !trained.contains(v) {
            return Err(GaitError::invalid(format!("view {v} was not trained")));
        }
        hits += usize::from(model.classify(*s)? == *v);
    }
    Ok(hits as f64 / samples.len().max(1) as f64)
}

/// Predicted angle over a regular slope grid, for plotting decision regions.
pub fn boundary_grid(model: &ViewModel, m_p: (f64, f64), m_q: (f64, f64), steps: usize) -> Result<Vec<(f64, f64, ViewAngle)>> {
    if steps < 2 {
        return Err(GaitError::invalid("boundary grid needs at least two steps per axis"));
    }
    let at = |r: (f64, f64), i: usize| r.0 + (r.1 - r.0) * i as f64 / (steps - 1) as f64;
    let mut out = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        for j in 0..steps {
            let s = SlopePair {
                m_p: at(m_p, i),
                m_q: at(m_q, j),
            };
            out.push((s.m_p, s.m_q, model.classify(s)?));
        }
    }
    Ok(out)
}

pub fn write_boundary_csv<W: Write>(grid: &[(f64, f64, ViewAngle)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m_p", "m_q", "view"])?;
    for (p, q, v) in grid {
        w.write_record([p.to_string(), q.to_string(), v.degrees().to_string()])?;
    }
    w.flush().map_err(|e| GaitError::io("writing boundary grid", e))
}

/// Slope pairs of normal walks of a synthetic population at the nine
/// non-coronal views. Each slope is scaled by `1 + noise·N(0, 1)`.
pub fn view_corpus(subjects: u32, runs: u8, noise: f64, seed: u64) -> Result<Vec<(SlopePair, ViewAngle)>> {
    let world = SynthWorld::new(
        SynthSpec {
            subjects,
            normal_runs: runs,
            bag_runs: 0,
            coat_runs: 0,
            views: ViewAngle::non_coronal().collect(),
            ..SynthSpec::default()
        },
        seed,
    )?;
    let keys: Vec<SampleKey> = world.keys().into_iter().filter(|k| k.covariate == Covariate::Normal).collect();
    let jitter = Normal::new(0.0, noise).map_err(|e| GaitError::invalid(e.to_string()))?;
    keys.par_iter()
        .map(|k| {
            let s = slope_features(&world.render(k)?.frames)?;
            let mut rng = rng::stream(seed, &[7, k.subject as u64, k.run as u64, k.view.degrees() as u64]);
            let mut scale = || 1.0 + jitter.sample(&mut rng);
            Ok((
                SlopePair {
                    m_p: s.m_p * scale(),
                    m_q: s.m_q * scale(),
                },
                k.view,
            ))
        })
        .collect()
}

/// Approach and recede walks of a synthetic population, with their angle.
pub fn coronal_corpus(subjects: u32, frames: usize, seed: u64) -> Result<Vec<(Vec<BinaryImage>, ViewAngle)>> {
    let world = SynthWorld::new(
        SynthSpec {
            subjects,
            ..SynthSpec::default()
        },
        seed,
    )?;
    (1..=subjects)
        .into_par_iter()
        .flat_map_iter(|s| [(s, true), (s, false)])
        .map(|(s, approaching)| {
            let mut rng = rng::stream(seed, &[8, s as u64, u64::from(approaching)]);
            let body = world.body(s).expect("subject in range");
            let frames = coronal_walk(body, &world.spec.camera, approaching, frames, &mut rng);
            Ok((frames, ViewAngle::new(if approaching { 0 } else { 180 })?))
        })
        .collect()
}
