//! Mask fitness on a tuning set: CDA (PCA then LDA) followed by a shared
//! covariance Gaussian Bayes classifier, evaluated per covariate.
//!
//! Masking selects columns, so the centred gallery Gram matrix of a mask is a
//! sum of per-pixel outer products. Head and feet bands are full rows and come
//! from row prefix sums; a split mid band is accumulated row by row. PCA is
//! then done on the Gram matrix (kernel form), which gives the same scores as
//! explicit PCA up to per-component sign.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classify::{CovarianceMode, MgBayesModel};
use crate::dataset::{Covariate, SampleKey};
use crate::error::{GaitError, Result};
use crate::image::{FRAME_PIXELS, FRAME_SIZE};
use crate::subspace::{lda_fit, lda_transform, retained_count, sorted_eigen, Label};
use crate::templates::GaitTemplate;

use super::{FitnessWeights, MaskSpec};

/// PCA variance retention used before LDA.
pub const RETENTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSample {
    pub label: Label,
    pub covariate: Covariate,
    pub features: Vec<f64>,
}

/// Gallery templates plus covariate-tagged probes of the tuning subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSet {
    pub gallery: Vec<TuningSample>,
    pub probes: Vec<TuningSample>,
}

impl TuningSet {
    pub fn new(gallery: Vec<TuningSample>, probes: Vec<TuningSample>) -> Result<Self> {
        for s in gallery.iter().chain(&probes) {
            if s.features.len() != FRAME_PIXELS {
                return Err(GaitError::dims(format!("{FRAME_PIXELS} template values"), format!("{}", s.features.len())));
            }
        }
        let groups = crate::subspace::group_by_label(&gallery.iter().map(|s| s.label).collect::<Vec<_>>());
        if groups.len() < 2 || groups.values().any(|v| v.len() < 2) {
            return Err(GaitError::InsufficientData(
                "tuning gallery needs at least two subjects with two templates each".into(),
            ));
        }
        for cov in Covariate::ALL {
            if !probes.iter().any(|p| p.covariate == cov) {
                return Err(GaitError::InsufficientData(format!("tuning set has no {cov} probes")));
            }
        }
        Ok(Self { gallery, probes })
    }

    /// Gallery runs of the normal walk go to the gallery, everything else
    /// becomes a probe.
    pub fn from_templates(items: impl IntoIterator<Item = (SampleKey, GaitTemplate)>) -> Result<Self> {
        let (mut gallery, mut probes) = (Vec::new(), Vec::new());
        for (key, t) in items {
            let s = TuningSample {
                label: key.subject,
                covariate: key.covariate,
                features: t.into_vec(),
            };
            if key.is_gallery_run() {
                gallery.push(s);
            } else {
                probes.push(s);
            }
        }
        Self::new(gallery, probes)
    }
}

/// Correct classification rates on normal, bag and coat probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateScores {
    pub ccr: [f64; 3],
}

impl CovariateScores {
    pub const ZERO: Self = Self { ccr: [0.0; 3] };
}

/// Precomputed Gram sums for fast mask evaluation.
#[derive(Debug, Clone)]
pub struct FitnessEngine {
    n_gallery: usize,
    labels: Vec<Label>,
    covariates: Vec<Covariate>,
    /// All samples (gallery first) centred on the gallery mean, one per row.
    data: DMatrix<f64>,
    /// `prefix[r]` sums the sample-by-gallery Gram contributions of rows `< r`.
    prefix: Vec<DMatrix<f64>>,
}

impl FitnessEngine {
    pub fn new(set: &TuningSet) -> Result<Self> {
        let samples: Vec<&TuningSample> = set.gallery.iter().chain(&set.probes).collect();
        let n = samples.len();
        let ng = set.gallery.len();
        let mut mean = DVector::zeros(FRAME_PIXELS);
        for s in &set.gallery {
            mean += DVector::from_column_slice(&s.features);
        }
        mean /= ng as f64;
        let data = DMatrix::from_fn(n, FRAME_PIXELS, |i, j| samples[i].features[j] - mean[j]);

        let mut prefix = Vec::with_capacity(FRAME_SIZE + 1);
        let mut acc = DMatrix::zeros(n, ng);
        prefix.push(acc.clone());
        for r in 0..FRAME_SIZE {
            let block = data.columns(r * FRAME_SIZE, FRAME_SIZE);
            acc += block * block.rows(0, ng).transpose();
            prefix.push(acc.clone());
        }
        Ok(Self {
            n_gallery: ng,
            labels: samples.iter().map(|s| s.label).collect(),
            covariates: samples.iter().map(|s| s.covariate).collect(),
            data,
            prefix,
        })
    }

    fn band(&self, r0: usize, r1: usize) -> DMatrix<f64> {
        &self.prefix[r1] - &self.prefix[r0]
    }

    /// Gram contribution of rows `[r0, r1)`, columns `[c0, c1)`.
    fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.data.nrows(), self.n_gallery);
        if c1 > c0 {
            for r in r0..r1 {
                let cols = self.data.columns(r * FRAME_SIZE + c0, c1 - c0);
                acc.gemm(1.0, &cols, &cols.rows(0, self.n_gallery).transpose(), 1.0);
            }
        }
        acc
    }

    /// Sample-by-gallery inner products of masked, centred templates.
    pub fn masked_gram(&self, spec: &MaskSpec) -> DMatrix<f64> {
        let (h, m, f) = (spec.s_h as usize, spec.s_m as usize, spec.s_f as usize);
        let mut k = DMatrix::zeros(self.data.nrows(), self.n_gallery);
        if spec.w_h {
            k += self.band(0, h);
        }
        if spec.w_f {
            k += self.band(f, FRAME_SIZE);
        }
        match (spec.w_l, spec.w_r) {
            (true, true) => k += self.band(h, f),
            (true, false) => k += self.block(h, f, 0, m),
            (false, true) => k += self.block(h, f, m, FRAME_SIZE),
            (false, false) => {}
        }
        k
    }

    /// Predicted label for every probe, in tuning-set order.
    pub fn predict_probes(&self, spec: &MaskSpec) -> Result<Vec<Label>> {
        if spec.area() == 0 {
            return Err(GaitError::InsufficientData("mask excludes every pixel".into()));
        }
        let ng = self.n_gallery;
        let k_all = self.masked_gram(spec);
        let k = k_all.rows(0, ng).into_owned();
        let k = (&k + k.transpose()) * 0.5;
        let (vals, vecs) = sorted_eigen(k);
        let r = retained_count(&vals, RETENTION);
        if r == 0 {
            return Err(GaitError::InsufficientData("masked gallery has zero variance".into()));
        }
        let mut proj = vecs.columns(0, r).into_owned();
        for (j, mut c) in proj.column_iter_mut().enumerate() {
            c /= vals[j].sqrt();
        }
        let scores = &k_all * proj;
        let gallery = scores.rows(0, ng).into_owned();
        let lda = lda_fit(&gallery, &self.labels[..ng])?;
        let z_gallery = lda_transform(&lda, &gallery)?;
        let bayes = MgBayesModel::fit(&z_gallery, &self.labels[..ng], CovarianceMode::Shared)?;
        let z_probes = lda_transform(&lda, &scores.rows(ng, scores.nrows() - ng).into_owned())?;
        bayes.predict_batch(&z_probes)
    }

    /// CCR per covariate; a degenerate recognizer scores zero everywhere.
    pub fn scores(&self, spec: &MaskSpec) -> CovariateScores {
        let Ok(pred) = self.predict_probes(spec) else {
            return CovariateScores::ZERO;
        };
        let mut hit = [0usize; 3];
        let mut total = [0usize; 3];
        for (i, p) in pred.iter().enumerate() {
            let j = self.n_gallery + i;
            let c = self.covariates[j].index();
            total[c] += 1;
            hit[c] += usize::from(*p == self.labels[j]);
        }
        CovariateScores {
            ccr: std::array::from_fn(|c| hit[c] as f64 / total[c].max(1) as f64),
        }
    }

    pub fn fitness(&self, spec: &MaskSpec, weights: &FitnessWeights) -> f64 {
        weights.fitness(self.scores(spec).ccr)
    }
}
