//! Multivariate Gaussian Bayes, nearest-neighbour baseline and majority voting.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::subspace::{group_by_label, pooled_covariance, Label};

/// Default weight of the diagonal in covariance shrinkage.
pub const DEFAULT_SHRINKAGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    #[default]
    Shared,
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgBayesModel {
    pub classes: Vec<Label>,
    /// Class means, one row per class.
    pub means: DMatrix<f64>,
    pub mode: CovarianceMode,
    /// One matrix in shared mode, one per class otherwise.
    pub covariances: Vec<DMatrix<f64>>,
    pub priors: Vec<f64>,
    /// Lower Cholesky factors of `covariances`.
    factors: Vec<DMatrix<f64>>,
    log_dets: Vec<f64>,
    /// Class means premultiplied by the inverse shared factor.
    whitened_means: Option<DMatrix<f64>>,
}

/// `(1 − λ)Σ + λ·diag(Σ)`.
pub fn shrink(sigma: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut out = sigma * (1.0 - lambda);
    for i in 0..sigma.nrows() {
        out[(i, i)] += lambda * sigma[(i, i)];
    }
    out
}

/// Cholesky factor, adding an escalating ridge until the matrix is
/// numerically positive definite.
fn robust_cholesky(sigma: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = sigma.nrows();
    let scale = (sigma.trace() / d.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for attempt in 0..30 {
        let mut s = sigma.clone();
        for i in 0..d {
            s[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::<f64, Dyn>::new(s.clone()) {
            if attempt > 0 {
                warn!("covariance was singular; added ridge {ridge:.3e}");
            }
            return Ok((s, ch.l()));
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
    }
    Err(GaitError::InsufficientData("covariance could not be regularized".into()))
}

fn forward_solve(l: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(v).expect("Cholesky factor has a positive diagonal")
}

impl MgBayesModel {
    pub fn fit(x: &DMatrix<f64>, y: &[Label], mode: CovarianceMode) -> Result<Self> {
        Self::fit_with(x, y, mode, DEFAULT_SHRINKAGE)
    }

    pub fn fit_with(x: &DMatrix<f64>, y: &[Label], mode: CovarianceMode, shrinkage: f64) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(GaitError::dims(format!("{n} labels"), format!("{} labels", y.len())));
        }
        if n == 0 || d == 0 {
            return Err(GaitError::InsufficientData("Bayes classifier needs samples and features".into()));
        }
        let groups = group_by_label(y);
        let classes: Vec<Label> = groups.keys().copied().collect();
        let mut means = DMatrix::zeros(classes.len(), d);
        for (k, idx) in groups.values().enumerate() {
            for &i in idx {
                let r = x.row(i).into_owned();
                let mut m = means.row_mut(k);
                m += r;
            }
            let mut m = means.row_mut(k);
            m /= idx.len() as f64;
        }
        let priors = groups.values().map(|v| v.len() as f64 / n as f64).collect();

        let raw: Vec<DMatrix<f64>> = match mode {
            CovarianceMode::Shared => {
                if n > classes.len() {
                    vec![pooled_covariance(x, y)]
                } else {
                    warn!("one sample per class; shared covariance estimated from the whole set");
                    vec![whole_covariance(x)]
                }
            }
            CovarianceMode::PerClass => groups
                .iter()
                .map(|(l, idx)| {
                    if idx.len() < 2 {
                        return Err(GaitError::InsufficientData(format!(
                            "class {l} needs two samples for its own covariance"
                        )));
                    }
                    let rows: Vec<usize> = idx.clone();
                    Ok(whole_covariance(&x.select_rows(&rows)))
                })
                .collect::<Result<_>>()?,
        };
        let mut covariances = Vec::with_capacity(raw.len());
        let mut factors = Vec::with_capacity(raw.len());
        let mut log_dets = Vec::with_capacity(raw.len());
        for s in raw {
            let (s, l) = robust_cholesky(shrink(&s, shrinkage))?;
            log_dets.push(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>());
            covariances.push(s);
            factors.push(l);
        }
        let whitened_means = (mode == CovarianceMode::Shared).then(|| {
            let l = &factors[0];
            let mt = means.transpose();
            l.solve_lower_triangular(&mt).expect("positive diagonal").transpose()
        });
        Ok(Self {
            classes,
            means,
            mode,
            covariances,
            priors,
            factors,
            log_dets,
            whitened_means,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn class_index(&self, label: Label) -> Option<usize> {
        self.classes.binary_search(&label).ok()
    }

    /// Unnormalized log joint `log Pr(y = k) + log N(x; μ_k, Σ_k)`.
    pub fn log_joint(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(GaitError::dims(self.dim(), x.len()));
        }
        let d = self.dim() as f64;
        let v = DVector::from_column_slice(x);
        let norm = -0.5 * d * (2.0 * PI).ln();
        Ok(match &self.whitened_means {
            Some(wm) => {
                let z = forward_solve(&self.factors[0], &v);
                (0..self.classes.len())
                    .map(|k| {
                        let q: f64 = wm.row(k).iter().zip(z.iter()).map(|(m, z)| (z - m).powi(2)).sum();
                        self.priors[k].ln() + norm - 0.5 * self.log_dets[0] - 0.5 * q
                    })
                    .collect()
            }
            None => (0..self.classes.len())
                .map(|k| {
                    let diff = &v - self.means.row(k).transpose();
                    let z = forward_solve(&self.factors[k], &diff);
                    self.priors[k].ln() + norm - 0.5 * self.log_dets[k] - 0.5 * z.norm_squared()
                })
                .collect(),
        })
    }

    /// Log posteriors, normalized with log-sum-exp.
    pub fn log_posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut lj = self.log_joint(x)?;
        let lse = log_sum_exp(&lj);
        lj.iter_mut().for_each(|v| *v -= lse);
        Ok(lj)
    }

    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_posterior(x)?.into_iter().map(f64::exp).collect())
    }

    /// Most probable class and its posterior; ties go to the lowest index.
    pub fn predict_with_confidence(&self, x: &[f64]) -> Result<(Label, f64)> {
        let lp = self.log_posterior(x)?;
        let k = argmax(&lp);
        Ok((self.classes[k], lp[k].exp()))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(self.predict_with_confidence(x)?.0)
    }

    /// Log posteriors for every row of `x`, one row per sample.
    pub fn log_posterior_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.nrows(), self.classes.len());
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let lp = self.log_posterior(&row)?;
            out.row_mut(i).copy_from_slice(&lp);
        }
        Ok(out)
    }

    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<Vec<Label>> {
        let lp = self.log_posterior_batch(x)?;
        Ok(lp
            .row_iter()
            .map(|r| self.classes[argmax(&r.iter().copied().collect::<Vec<_>>())])
            .collect())
    }
}

/// Sample covariance with an `n − 1` denominator.
pub fn whole_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mean = crate::subspace::column_means(x);
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    (c.transpose() * &c) / (n.saturating_sub(1)).max(1) as f64
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Index of the largest value; the first wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub points: DMatrix<f64>,
    pub labels: Vec<Label>,
    pub k: usize,
}

impl KnnModel {
    pub fn fit(points: DMatrix<f64>, labels: Vec<Label>, k: usize) -> Result<Self> {
        if labels.len() != points.nrows() {
            return Err(GaitError::dims(points.nrows(), labels.len()));
        }
        if k == 0 || k > labels.len() {
            return Err(GaitError::invalid(format!("k = {k} must lie in 1..={}", labels.len())));
        }
        Ok(Self { points, labels, k })
    }

    /// Squared distances from `x` to every stored point.
    pub fn distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.points.ncols() {
            return Err(GaitError::dims(self.points.ncols(), x.len()));
        }
        Ok(self
            .points
            .row_iter()
            .map(|r| r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum())
            .collect())
    }

    /// Majority label of the `k` nearest points. Distance ties keep gallery
    /// order; vote ties go to the label met first among the neighbours.
    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let d = self.distances(x)?;
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
        let nearest = &order[..self.k];
        let mut counts: Vec<(Label, usize)> = Vec::new();
        for &i in nearest {
            match counts.iter_mut().find(|(l, _)| *l == self.labels[i]) {
                Some(c) => c.1 += 1,
                None => counts.push((self.labels[i], 1)),
            }
        }
        let top = counts.iter().map(|c| c.1).max().unwrap_or(0);
        Ok(counts.into_iter().find(|c| c.1 == top).map(|c| c.0).expect("k >= 1"))
    }

    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<Vec<Label>> {
        x.row_iter()
            .map(|r| self.predict(&r.iter().copied().collect::<Vec<_>>()))
            .collect()
    }
}

/// Statistical mode of `labels`. Frequency ties go to the label with the
/// higher mean confidence, then to the lower label.
pub fn majority_vote(labels: &[Label], confidences: Option<&[f64]>) -> Result<Label> {
    if labels.is_empty() {
        return Err(GaitError::InsufficientData("cannot vote over zero labels".into()));
    }
    if let Some(c) = confidences {
        if c.len() != labels.len() {
            return Err(GaitError::dims(labels.len(), c.len()));
        }
    }
    let mut tally: BTreeMap<Label, (usize, f64)> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let e = tally.entry(l).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += confidences.map_or(0.0, |c| c[i]);
    }
    let mut best: Option<(Label, usize, f64)> = None;
    for (&l, &(count, sum)) in &tally {
        let mean = sum / count as f64;
        let better = match best {
            None => true,
            Some((_, bc, bm)) => count > bc || (count == bc && mean > bm),
        };
        if better {
            best = Some((l, count, mean));
        }
    }
    Ok(best.expect("non-empty").0)
}
