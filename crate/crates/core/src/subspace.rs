//! PCA, multi-class LDA and their composition (CDA).
//!
//! Sample matrices hold one sample per row.

use std::collections::BTreeMap;

use log::debug;
use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};

pub type Label = u32;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(GaitError::dims(d, r.len()));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn centered(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}

/// Flips `v` so that its first clearly nonzero entry is positive.
pub(crate) fn fix_sign(mut v: nalgebra::DVectorViewMut<'_, f64>) {
    let scale = v.amax();
    if let Some(first) = v.iter().find(|e| e.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn check_width(expected: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(GaitError::dims(format!("{expected} columns"), format!("{} columns", x.ncols())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// Retained principal directions, one per row.
    pub components: DMatrix<f64>,
    /// Variance along each retained direction.
    pub variances: Vec<f64>,
    /// Explained-variance ratio of each retained direction.
    pub ratios: Vec<f64>,
}

impl PcaModel {
    pub fn retained(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }
}

/// Number of leading eigenvalues (sorted descending) whose cumulative share
/// of the positive total reaches `retention`, ignoring numerically null ones.
pub(crate) fn retained_count(eigvals: &[f64], retention: f64) -> usize {
    let top = eigvals.first().copied().unwrap_or(0.0).max(0.0);
    let total: f64 = eigvals.iter().filter(|&&v| v > 0.0).sum();
    if top <= 0.0 || total <= 0.0 {
        return 0;
    }
    let rank = eigvals.iter().take_while(|&&v| v > RANK_TOL * top).count();
    let mut cum = 0.0;
    let mut k = 0;
    while k < rank {
        cum += eigvals[k];
        k += 1;
        if cum / total >= retention - 1e-12 {
            break;
        }
    }
    k
}

/// Keeps the fewest leading components whose cumulative explained variance
/// reaches `retention`.
pub fn pca_fit(x: &DMatrix<f64>, retention: f64) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(GaitError::InsufficientData("PCA needs at least two samples".into()));
    }
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(GaitError::invalid(format!("retention {retention} outside (0, 1]")));
    }
    let mean = column_means(x);
    let xc = centered(x, &mean);
    let denom = (n - 1) as f64;

    // Work in whichever of the sample or feature space is smaller.
    let gram_side = n <= d;
    let inner = if gram_side { &xc * xc.transpose() } else { xc.transpose() * &xc };
    let (eigvals, eigvecs) = sorted_eigen(inner);
    let top = eigvals.first().copied().unwrap_or(0.0).max(0.0);
    let total: f64 = eigvals.iter().filter(|&&v| v > 0.0).sum();
    if top <= 0.0 || total <= 0.0 {
        return Err(GaitError::InsufficientData(
            "PCA input has zero variance; no informative component can be retained".into(),
        ));
    }
    let k = retained_count(&eigvals, retention);

    let mut components = if gram_side {
        let mut c = eigvecs.columns(0, k).transpose() * &xc;
        for (i, mut row) in c.row_iter_mut().enumerate() {
            row /= eigvals[i].sqrt();
        }
        c
    } else {
        eigvecs.columns(0, k).transpose()
    };
    for i in 0..k {
        let mut dir = components.row(i).transpose();
        fix_sign(dir.column_mut(0));
        components.row_mut(i).copy_from(&dir.transpose());
    }
    Ok(PcaModel {
        mean,
        components,
        variances: eigvals[..k].iter().map(|v| v / denom).collect(),
        ratios: eigvals[..k].iter().map(|v| v / total).collect(),
    })
}

pub fn pca_transform(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_width(model.input_dim(), x)?;
    Ok((&model.components * centered(x, &model.mean).transpose()).transpose())
}

/// Maps scores back to the input space.
pub fn pca_inverse(model: &PcaModel, scores: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = scores * &model.components;
    for mut row in out.row_iter_mut() {
        row += model.mean.transpose();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub mean: DVector<f64>,
    /// Input-to-discriminant projection, one column per output axis.
    pub projection: DMatrix<f64>,
    pub classes: Vec<Label>,
    /// Projected class means, one row per class in `classes` order.
    pub class_means: DMatrix<f64>,
    /// Pooled within-class covariance of the projected training data.
    pub covariance: DMatrix<f64>,
    /// Set when the within-class scatter was rank deficient.
    pub regularized: bool,
}

impl LdaModel {
    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }
}

/// Groups row indices by label, with labels in ascending order.
pub fn group_by_label(y: &[Label]) -> BTreeMap<Label, Vec<usize>> {
    let mut groups: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &l) in y.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
}

fn class_means(x: &DMatrix<f64>, groups: &BTreeMap<Label, Vec<usize>>) -> DMatrix<f64> {
    let mut means = DMatrix::zeros(groups.len(), x.ncols());
    for (k, idx) in groups.values().enumerate() {
        for &i in idx {
            let r = x.row(i).into_owned();
            let mut m = means.row_mut(k);
            m += r;
        }
        let mut m = means.row_mut(k);
        m /= idx.len() as f64;
    }
    means
}

/// Pooled within-class covariance, divided by `n - c`.
pub fn pooled_covariance(x: &DMatrix<f64>, y: &[Label]) -> DMatrix<f64> {
    let groups = group_by_label(y);
    let means = class_means(x, &groups);
    let mut resid = x.clone();
    for (k, idx) in groups.values().enumerate() {
        for &i in idx {
            let m = means.row(k).into_owned();
            let mut r = resid.row_mut(i);
            r -= m;
        }
    }
    let dof = (x.nrows().saturating_sub(groups.len())).max(1) as f64;
    (resid.transpose() * &resid) / dof
}

/// Fisher discriminant fitted in the range of the within-class scatter.
pub fn lda_fit(x: &DMatrix<f64>, y: &[Label]) -> Result<LdaModel> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(GaitError::dims(format!("{n} labels"), format!("{} labels", y.len())));
    }
    let groups = group_by_label(y);
    if groups.len() < 2 {
        return Err(GaitError::InsufficientData("LDA needs at least two classes".into()));
    }
    if let Some((l, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(GaitError::InsufficientData(format!("class {l} has fewer than two samples")));
    }
    let mean = column_means(x);
    let means = class_means(x, &groups);

    let mut within = x.clone();
    for (k, idx) in groups.values().enumerate() {
        for &i in idx {
            let m = means.row(k).into_owned();
            let mut r = within.row_mut(i);
            r -= m;
        }
    }
    let mut between = DMatrix::zeros(groups.len(), d);
    for (k, idx) in groups.values().enumerate() {
        let diff: RowDVector<f64> = means.row(k) - mean.transpose();
        between.row_mut(k).copy_from(&(diff * (idx.len() as f64).sqrt()));
    }
    let sw = within.transpose() * &within;
    let sb = between.transpose() * &between;

    let (w_vals, w_vecs) = sorted_eigen(sw);
    let top = w_vals.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(GaitError::InsufficientData("within-class scatter is zero".into()));
    }
    let r = w_vals.iter().take_while(|&&v| v > RANK_TOL * top).count();
    let regularized = r < d;
    if regularized {
        debug!("within-class scatter has rank {r} < {d}; discriminant restricted to its range");
    }
    let mut whiten = DMatrix::zeros(d, r);
    for (j, v) in w_vals.iter().take(r).enumerate() {
        whiten.set_column(j, &(w_vecs.column(j) / v.sqrt()));
    }
    let sb_w = whiten.transpose() * sb * &whiten;
    let (b_vals, b_vecs) = sorted_eigen(sb_w);
    let b_top = b_vals.first().copied().unwrap_or(0.0);
    let m = b_vals
        .iter()
        .take(groups.len() - 1)
        .take_while(|&&v| b_top > 0.0 && v > RANK_TOL * b_top)
        .count();
    if m == 0 {
        return Err(GaitError::InsufficientData("class means coincide; no discriminant direction".into()));
    }
    let mut projection = &whiten * b_vecs.columns(0, m);
    for j in 0..m {
        fix_sign(projection.column_mut(j));
    }

    let classes: Vec<Label> = groups.keys().copied().collect();
    let z = centered(x, &mean) * &projection;
    let class_means = class_means(&z, &groups);
    let covariance = pooled_covariance(&z, y);
    Ok(LdaModel {
        mean,
        projection,
        classes,
        class_means,
        covariance,
        regularized,
    })
}

pub fn lda_transform(model: &LdaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_width(model.input_dim(), x)?;
    Ok(centered(x, &model.mean) * &model.projection)
}

/// PCA followed by LDA on the PCA scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdaModel {
    pub pca: PcaModel,
    pub lda: LdaModel,
}

impl CdaModel {
    pub fn output_dim(&self) -> usize {
        self.lda.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.pca.input_dim()
    }

    /// Projects a single sample.
    pub fn transform_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        Ok(cda_transform(self, &m)?.iter().copied().collect())
    }
}

pub fn cda_fit(x: &DMatrix<f64>, y: &[Label], retention: f64) -> Result<CdaModel> {
    let pca = pca_fit(x, retention)?;
    let scores = pca_transform(&pca, x)?;
    let lda = lda_fit(&scores, y)?;
    Ok(CdaModel { pca, lda })
}

pub fn cda_transform(model: &CdaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    lda_transform(&model.lda, &pca_transform(&model.pca, x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut impl Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
    }

    fn clusters(rng: &mut impl Rng, classes: usize, per: usize, d: usize, sep: f64) -> (DMatrix<f64>, Vec<Label>) {
        let centres = randn(rng, classes, d) * sep;
        let mut x = DMatrix::zeros(classes * per, d);
        let mut y = Vec::new();
        for c in 0..classes {
            for i in 0..per {
                let noise: RowDVector<f64> = RowDVector::from_fn(d, |_, _| StandardNormal.sample(rng));
                x.row_mut(c * per + i).copy_from(&(centres.row(c) + noise));
                y.push(c as Label);
            }
        }
        (x, y)
    }

    #[test]
    fn line_needs_one_component() {
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0, 3.0, 6.0, -1.0, -2.0]);
        let m = pca_fit(&x, 0.99).unwrap();
        assert_eq!(m.retained(), 1);
        assert!(m.components[(0, 0)] > 0.0);
    }

    #[test]
    fn full_retention_keeps_rank() {
        let mut rng = crate::rng::seeded(1);
        let basis = randn(&mut rng, 3, 8);
        let coef = randn(&mut rng, 20, 3);
        let x = coef * basis;
        assert_eq!(pca_fit(&x, 1.0).unwrap().retained(), 3);
        let wide = randn(&mut rng, 6, 40);
        assert_eq!(pca_fit(&wide, 1.0).unwrap().retained(), 5);
    }

    #[test]
    fn constant_data_is_rejected() {
        let x = DMatrix::from_element(4, 3, 2.5);
        assert!(pca_fit(&x, 0.9).is_err());
    }

    #[test]
    fn reconstruction_error_is_bounded_by_discarded_variance() {
        let mut rng = crate::rng::seeded(2);
        let x = randn(&mut rng, 50, 30);
        for retention in [0.5, 0.8, 0.95] {
            let m = pca_fit(&x, retention).unwrap();
            let recon = pca_inverse(&m, &pca_transform(&m, &x).unwrap());
            let err = (&x - recon).norm_squared();
            let mean = column_means(&x);
            let total = centered(&x, &mean).norm_squared();
            assert!(err <= (1.0 - retention) * total + 1e-9, "{err} vs {total}");
        }
    }

    #[test]
    fn components_are_orthonormal_and_variances_match() {
        let mut rng = crate::rng::seeded(3);
        for (n, d) in [(40, 10), (12, 60)] {
            let x = randn(&mut rng, n, d);
            let m = pca_fit(&x, 1.0).unwrap();
            let gram = &m.components * m.components.transpose();
            assert!((gram - DMatrix::identity(m.retained(), m.retained())).amax() < 1e-8);
            let z = pca_transform(&m, &x).unwrap();
            for (j, v) in m.variances.iter().enumerate() {
                let col = z.column(j);
                let var = col.norm_squared() / (n - 1) as f64;
                assert!((var - v).abs() < 1e-6 * v.max(1.0));
            }
            assert!(m.ratios.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn transform_of_mean_is_zero_and_batches_agree() {
        let mut rng = crate::rng::seeded(4);
        let x = randn(&mut rng, 20, 6);
        let m = pca_fit(&x, 0.9).unwrap();
        let mean_row = DMatrix::from_row_slice(1, 6, m.mean.as_slice());
        assert!(pca_transform(&m, &mean_row).unwrap().amax() < 1e-12);
        let batch = pca_transform(&m, &x).unwrap();
        let single = pca_transform(&m, &x.rows(3, 1).into_owned()).unwrap();
        assert!((batch.row(3) - single.row(0)).amax() < 1e-12);
        assert!(pca_transform(&m, &DMatrix::zeros(1, 5)).is_err());
    }

    #[test]
    fn full_retention_preserves_inner_products() {
        let mut rng = crate::rng::seeded(5);
        let x = randn(&mut rng, 15, 9);
        let m = pca_fit(&x, 1.0).unwrap();
        let z = pca_transform(&m, &x).unwrap();
        let xc = centered(&x, &m.mean);
        assert!((&xc * xc.transpose() - &z * z.transpose()).amax() < 1e-8);
    }

    #[test]
    fn two_class_fisher_separation() {
        let mut rng = crate::rng::seeded(6);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (c, mu) in [(0, 0.0), (1, 10.0)] {
            for _ in 0..100 {
                let v: f64 = StandardNormal.sample(&mut rng);
                rows.push(vec![mu + v]);
                y.push(c);
            }
        }
        let x = matrix_from_rows(&rows).unwrap();
        let m = lda_fit(&x, &y).unwrap();
        assert_eq!(m.output_dim(), 1);
        let sep = (m.class_means[(1, 0)] - m.class_means[(0, 0)]).abs();
        assert!(sep / m.covariance[(0, 0)].sqrt() >= 5.0);
    }

    #[test]
    fn output_dimension_bounded_by_classes() {
        let mut rng = crate::rng::seeded(7);
        let (x, y) = clusters(&mut rng, 3, 10, 6, 4.0);
        assert!(lda_fit(&x, &y).unwrap().output_dim() <= 2);
    }

    #[test]
    fn duplication_keeps_directions() {
        let mut rng = crate::rng::seeded(8);
        let (x, y) = clusters(&mut rng, 4, 8, 5, 3.0);
        let a = lda_fit(&x, &y).unwrap();
        let mut x2 = DMatrix::zeros(2 * x.nrows(), x.ncols());
        x2.rows_mut(0, x.nrows()).copy_from(&x);
        x2.rows_mut(x.nrows(), x.nrows()).copy_from(&x);
        let y2: Vec<Label> = y.iter().chain(&y).copied().collect();
        let b = lda_fit(&x2, &y2).unwrap();
        for j in 0..a.output_dim() {
            let (u, v) = (a.projection.column(j).normalize(), b.projection.column(j).normalize());
            assert!((u.dot(&v).abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn lda_transform_maps_class_mean_to_stored_mean() {
        let mut rng = crate::rng::seeded(9);
        let (x, y) = clusters(&mut rng, 3, 6, 4, 3.0);
        let m = lda_fit(&x, &y).unwrap();
        let groups = group_by_label(&y);
        let raw_means = class_means(&x, &groups);
        let z = lda_transform(&m, &raw_means).unwrap();
        assert!((z - &m.class_means).amax() < 1e-9);
        let batch = lda_transform(&m, &x).unwrap();
        let one = lda_transform(&m, &x.rows(2, 1).into_owned()).unwrap();
        assert!((batch.row(2) - one.row(0)).amax() < 1e-12);
    }

    #[test]
    fn singular_scatter_is_restricted_to_its_range() {
        let mut rng = crate::rng::seeded(10);
        let (x, y) = clusters(&mut rng, 3, 3, 20, 2.0);
        let m = lda_fit(&x, &y).unwrap();
        assert!(m.regularized);
        assert_eq!(m.output_dim(), 2);
        assert!(m.projection.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lda_preconditions() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(lda_fit(&x, &[0, 0, 0]).is_err());
        assert!(lda_fit(&x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn cda_is_the_composition() {
        let mut rng = crate::rng::seeded(11);
        let (x, y) = clusters(&mut rng, 5, 6, 40, 3.0);
        let cda = cda_fit(&x, &y, 0.99).unwrap();
        let direct = cda_transform(&cda, &x).unwrap();
        let manual = lda_transform(&cda.lda, &pca_transform(&cda.pca, &x).unwrap()).unwrap();
        assert!((direct.clone() - manual).amax() < 1e-12);
        assert_eq!(direct.ncols(), 4);
        assert_eq!(cda.lda.input_dim(), cda.pca.retained());
        let one = cda.transform_one(x.row(0).iter().copied().collect::<Vec<_>>().as_slice()).unwrap();
        assert!(one.iter().zip(direct.row(0).iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn models_serialize() {
        let mut rng = crate::rng::seeded(12);
        let (x, y) = clusters(&mut rng, 3, 5, 6, 3.0);
        let cda = cda_fit(&x, &y, 0.95).unwrap();
        let back: CdaModel = serde_json::from_str(&serde_json::to_string(&cda).unwrap()).unwrap();
        assert!((cda_transform(&back, &x).unwrap() - cda_transform(&cda, &x).unwrap()).amax() < 1e-12);
    }
}
