//! Gait authentication: nearest-neighbour thresholding, the multiclass
//! recognizer used as a verifier (MSM), Bayesian posterior thresholding (BT),
//! their two-pass ensembles and the error-rate bookkeeping around them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{CovarianceMode, MgBayesModel};
use crate::dataset::{ClaimTruth, DatasetIndex, GalleryProbeSplit, SampleKey, SplitOptions, SubjectId};
use crate::error::{GaitError, Result};
use crate::subspace::{cda_fit, cda_transform, matrix_from_rows, CdaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Nn,
    Msm,
    Msm2p,
    Bt,
    Bt2p,
}

impl Paradigm {
    pub const ALL: [Paradigm; 5] = [Paradigm::Nn, Paradigm::Msm, Paradigm::Msm2p, Paradigm::Bt, Paradigm::Bt2p];

    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Nn => "nn",
            Paradigm::Msm => "msm",
            Paradigm::Msm2p => "msm2p",
            Paradigm::Bt => "bt",
            Paradigm::Bt2p => "bt2p",
        }
    }

    /// Whether the paradigm uses a second recognizer.
    pub fn two_pass(self) -> bool {
        matches!(self, Paradigm::Msm2p | Paradigm::Bt2p)
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Paradigm {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        Paradigm::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| GaitError::invalid(format!("unknown paradigm '{s}'")))
    }
}

/// A probe in a recognizer's projected space together with the identity it
/// claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub features: Vec<f64>,
    pub claimed: SubjectId,
    pub truth: ClaimTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub paradigm: Paradigm,
    pub accept: bool,
    /// Distance for NN, match bit for MSM, log posterior for BT. Two-pass
    /// decisions carry the more favourable of the two scores.
    pub score: f64,
    /// The claimed id is not enrolled; such claims are always rejected.
    pub unknown_identity: bool,
}

impl AuthDecision {
    fn unknown(paradigm: Paradigm, score: f64) -> Self {
        Self {
            paradigm,
            accept: false,
            score,
            unknown_identity: true,
        }
    }
}

/// Gallery instances for nearest-neighbour thresholding, one row each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gallery {
    pub features: DMatrix<f64>,
    pub labels: Vec<SubjectId>,
}

impl Gallery {
    pub fn new(features: DMatrix<f64>, labels: Vec<SubjectId>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(GaitError::dims(features.nrows(), labels.len()));
        }
        if labels.is_empty() {
            return Err(GaitError::InsufficientData("empty gallery".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn contains(&self, id: SubjectId) -> bool {
        self.labels.contains(&id)
    }

    /// Euclidean distance to the closest instance of `id`.
    pub fn nearest_distance(&self, x: &[f64], id: SubjectId) -> Result<Option<f64>> {
        if x.len() != self.dim() {
            return Err(GaitError::dims(self.dim(), x.len()));
        }
        Ok(self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == id)
            .map(|(i, _)| self.features.row(i).iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .min_by(f64::total_cmp)
            .map(f64::sqrt))
    }
}

/// CDA projection followed by a shared-covariance Bayes classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recognizer {
    pub cda: CdaModel,
    pub bayes: MgBayesModel,
}

impl Recognizer {
    pub fn fit(x: &DMatrix<f64>, labels: &[SubjectId], retention: f64) -> Result<Self> {
        let cda = cda_fit(x, labels, retention)?;
        let bayes = MgBayesModel::fit(&cda_transform(&cda, x)?, labels, CovarianceMode::Shared)?;
        Ok(Self { cda, bayes })
    }

    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        cda_transform(&self.cda, x)
    }

    pub fn enrolled(&self, id: SubjectId) -> bool {
        self.bayes.class_index(id).is_some()
    }

    /// Log posterior of `id`, or `None` when it is not enrolled.
    pub fn log_posterior_of(&self, z: &[f64], id: SubjectId) -> Result<Option<f64>> {
        let Some(k) = self.bayes.class_index(id) else {
            return Ok(None);
        };
        Ok(Some(self.bayes.log_posterior(z)?[k]))
    }
}

/// Accepts iff some gallery instance of the claimed id lies closer than
/// `theta_d`.
pub fn auth_threshold_nn(claim: &Claim, gallery: &Gallery, theta_d: f64) -> Result<AuthDecision> {
    if theta_d.is_nan() || theta_d < 0.0 {
        return Err(GaitError::invalid(format!("distance threshold {theta_d} must be non-negative")));
    }
    Ok(match gallery.nearest_distance(&claim.features, claim.claimed)? {
        None => AuthDecision::unknown(Paradigm::Nn, f64::INFINITY),
        Some(d) => AuthDecision {
            paradigm: Paradigm::Nn,
            accept: d < theta_d,
            score: d,
            unknown_identity: false,
        },
    })
}

/// Accepts iff the recognizer names the claimed id.
pub fn auth_msm(claim: &Claim, recognizer: &Recognizer) -> Result<AuthDecision> {
    let predicted = recognizer.bayes.predict(&claim.features)?;
    let accept = predicted == claim.claimed;
    Ok(AuthDecision {
        paradigm: Paradigm::Msm,
        accept,
        score: if accept { 1.0 } else { 0.0 },
        unknown_identity: !recognizer.enrolled(claim.claimed),
    })
}

fn check_pair(a: &Claim, b: &Claim) -> Result<()> {
    if a.claimed != b.claimed || a.truth != b.truth {
        return Err(GaitError::invalid("two-pass claims must agree on the claimed id and truth"));
    }
    Ok(())
}

fn either(paradigm: Paradigm, a: AuthDecision, b: AuthDecision) -> AuthDecision {
    AuthDecision {
        paradigm,
        accept: a.accept || b.accept,
        score: a.score.max(b.score),
        unknown_identity: a.unknown_identity && b.unknown_identity,
    }
}

/// MSM with two recognizers: the claim passes if either one names it. Each
/// claim carries the probe in its own recognizer's space.
pub fn auth_msm_2p(claim1: &Claim, recognizer1: &Recognizer, claim2: &Claim, recognizer2: &Recognizer) -> Result<AuthDecision> {
    check_pair(claim1, claim2)?;
    Ok(either(Paradigm::Msm2p, auth_msm(claim1, recognizer1)?, auth_msm(claim2, recognizer2)?))
}

/// Posterior threshold held as a log probability, so thresholds far below
/// the smallest positive `f64` stay usable.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PosteriorThreshold(f64);

impl PosteriorThreshold {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(GaitError::invalid(format!("posterior threshold {theta} must lie in (0, 1)")));
        }
        Ok(Self(theta.ln()))
    }

    /// A log threshold of zero rejects every claim.
    pub fn from_log(log_theta: f64) -> Result<Self> {
        if log_theta.is_nan() || log_theta > 0.0 {
            return Err(GaitError::invalid(format!("log posterior threshold {log_theta} must be at most 0")));
        }
        Ok(Self(log_theta))
    }

    pub fn log(self) -> f64 {
        self.0
    }

    /// May underflow to zero.
    pub fn probability(self) -> f64 {
        self.0.exp()
    }
}

/// Accepts iff `log Pr(claimed | probe)` exceeds the log threshold.
pub fn auth_bt(claim: &Claim, recognizer: &Recognizer, theta_p: PosteriorThreshold) -> Result<AuthDecision> {
    Ok(match recognizer.log_posterior_of(&claim.features, claim.claimed)? {
        None => AuthDecision::unknown(Paradigm::Bt, f64::NEG_INFINITY),
        Some(lp) => AuthDecision {
            paradigm: Paradigm::Bt,
            accept: lp > theta_p.log(),
            score: lp,
            unknown_identity: false,
        },
    })
}

pub fn auth_bt_2p(
    claim1: &Claim,
    recognizer1: &Recognizer,
    theta_p: PosteriorThreshold,
    claim2: &Claim,
    recognizer2: &Recognizer,
    theta_q: PosteriorThreshold,
) -> Result<AuthDecision> {
    check_pair(claim1, claim2)?;
    Ok(either(
        Paradigm::Bt2p,
        auth_bt(claim1, recognizer1, theta_p)?,
        auth_bt(claim2, recognizer2, theta_q)?,
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClaimCounts {
    pub genuine: usize,
    pub genuine_rejected: usize,
    pub type1: usize,
    pub type1_accepted: usize,
    pub type2: usize,
    pub type2_accepted: usize,
}

impl ClaimCounts {
    pub fn tally(outcomes: &[(bool, ClaimTruth)]) -> Self {
        let mut c = Self::default();
        for &(accept, truth) in outcomes {
            match truth {
                ClaimTruth::Genuine => {
                    c.genuine += 1;
                    c.genuine_rejected += usize::from(!accept);
                }
                ClaimTruth::Type1 => {
                    c.type1 += 1;
                    c.type1_accepted += usize::from(accept);
                }
                ClaimTruth::Type2 => {
                    c.type2 += 1;
                    c.type2_accepted += usize::from(accept);
                }
            }
        }
        c
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Error rates of one operating point. A rate over an empty claim category
/// is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub counts: ClaimCounts,
    pub frr: Option<f64>,
    pub far_type1: Option<f64>,
    pub far_type2: Option<f64>,
    /// Mean of the type-1 and type-2 rates that are defined.
    pub far_mean: Option<f64>,
    pub aer: Option<f64>,
    pub eer: Option<f64>,
    pub roc: Vec<RocPoint>,
}

impl ErrorRates {
    pub fn from_counts(counts: ClaimCounts) -> Self {
        let frr = ratio(counts.genuine_rejected, counts.genuine);
        let far_type1 = ratio(counts.type1_accepted, counts.type1);
        let far_type2 = ratio(counts.type2_accepted, counts.type2);
        let far_mean = mean_defined(far_type1, far_type2);
        Self {
            counts,
            frr,
            far_type1,
            far_type2,
            far_mean,
            aer: frr.zip(far_mean).map(|(r, a)| (r + a) / 2.0),
            eer: None,
            roc: Vec::new(),
        }
    }
}

fn mean_defined(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        (a, b) => a.or(b),
    }
}

pub fn compute_error_rates(outcomes: &[(bool, ClaimTruth)]) -> ErrorRates {
    ErrorRates::from_counts(ClaimCounts::tally(outcomes))
}

/// Which side of the threshold accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSense {
    /// Accept iff `score < threshold` (distances).
    Below,
    /// Accept iff `score > threshold` (posteriors).
    Above,
}

impl Paradigm {
    pub fn score_sense(self) -> ScoreSense {
        match self {
            Paradigm::Nn => ScoreSense::Below,
            _ => ScoreSense::Above,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub frr: f64,
    pub far_type1: Option<f64>,
    pub far_type2: Option<f64>,
    pub far: f64,
}

impl RocPoint {
    pub fn aer(&self) -> f64 {
        (self.frr + self.far) / 2.0
    }

    pub fn verification_rate(&self) -> f64 {
        1.0 - self.frr
    }
}

/// Threshold sweep, ordered from the strictest to the most lenient
/// threshold, so FAR never decreases and FRR never increases along it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSweep {
    pub sense: ScoreSense,
    pub points: Vec<RocPoint>,
    pub eer: f64,
    /// Point of least average error.
    pub best: RocPoint,
}

impl RocSweep {
    /// The most lenient point whose mean FAR does not exceed `target`.
    pub fn at_far(&self, target: f64) -> RocPoint {
        *self.points.iter().rev().find(|p| p.far <= target).unwrap_or(&self.points[0])
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("threshold,far,frr,far_type1,far_type2,verification_rate\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.threshold,
                p.far,
                p.frr,
                opt(p.far_type1),
                opt(p.far_type2),
                p.verification_rate()
            ));
        }
        out
    }
}

struct Sorted {
    genuine: Vec<f64>,
    type1: Vec<f64>,
    type2: Vec<f64>,
}

impl Sorted {
    fn accepted(v: &[f64], t: f64, sense: ScoreSense) -> usize {
        match sense {
            ScoreSense::Below => v.partition_point(|&s| s < t),
            ScoreSense::Above => v.len() - v.partition_point(|&s| s <= t),
        }
    }

    fn point(&self, t: f64, sense: ScoreSense) -> RocPoint {
        let g = Self::accepted(&self.genuine, t, sense);
        let rate = |v: &Vec<f64>| ratio(Self::accepted(v, t, sense), v.len());
        let (far_type1, far_type2) = (rate(&self.type1), rate(&self.type2));
        RocPoint {
            threshold: t,
            frr: 1.0 - g as f64 / self.genuine.len() as f64,
            far_type1,
            far_type2,
            far: mean_defined(far_type1, far_type2).expect("at least one impostor"),
        }
    }
}

/// Sweeps the threshold over the observed scores: one point rejecting
/// everything, one between each pair of neighbouring distinct scores and one
/// accepting everything finite. Constant scores give a single point.
pub fn roc_and_eer(scores: &[(f64, ClaimTruth)], sense: ScoreSense) -> Result<RocSweep> {
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(GaitError::invalid("scores must not be NaN"));
    }
    let pick = |want: fn(ClaimTruth) -> bool| {
        let mut v: Vec<f64> = scores.iter().filter(|(_, t)| want(*t)).map(|(s, _)| *s).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let sorted = Sorted {
        genuine: pick(|t| t == ClaimTruth::Genuine),
        type1: pick(|t| t == ClaimTruth::Type1),
        type2: pick(|t| t == ClaimTruth::Type2),
    };
    if sorted.genuine.is_empty() || sorted.type1.len() + sorted.type2.len() == 0 {
        return Err(GaitError::InsufficientData("ROC needs genuine and impostor claims".into()));
    }

    let mut distinct: Vec<f64> = scores.iter().map(|(s, _)| *s).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if sense == ScoreSense::Above {
        distinct.reverse();
    }
    let mut thresholds = vec![distinct[0]];
    if distinct.len() > 1 {
        thresholds.extend(distinct.windows(2).map(|w| w[0] / 2.0 + w[1] / 2.0));
        thresholds.push(match sense {
            ScoreSense::Below => f64::INFINITY,
            ScoreSense::Above => f64::NEG_INFINITY,
        });
    }
    let points: Vec<RocPoint> = thresholds.iter().map(|&t| sorted.point(t, sense)).collect();

    let eer = match points.iter().position(|p| p.far >= p.frr) {
        None => points.last().map(|p| p.aer()).expect("non-empty"),
        Some(0) => points[0].aer(),
        Some(i) => {
            let (a, b) = (&points[i - 1], &points[i]);
            let (d0, d1) = (a.frr - a.far, b.frr - b.far);
            let t = d0 / (d0 - d1);
            a.far + t * (b.far - a.far)
        }
    };
    let best = *points
        .iter()
        .min_by(|a, b| a.aer().total_cmp(&b.aer()))
        .expect("non-empty");
    Ok(RocSweep { sense, points, eer, best })
}

/// Error rates predicted for MSM by a recognizer of accuracy `ccr` over `n`
/// enrolled ids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsmTheory {
    pub frr: f64,
    pub far: f64,
    pub aer: f64,
    /// Chance that a misrecognized enrolled impostor is named as the id
    /// they claim.
    pub far_type2: f64,
}

pub fn theoretical_msm_rates(ccr: f64, n: usize) -> Result<MsmTheory> {
    if !(0.0..=1.0).contains(&ccr) || n == 0 {
        return Err(GaitError::invalid(format!("need 0 <= ccr <= 1 and n >= 1, got ccr {ccr}, n {n}")));
    }
    let frr = 1.0 - ccr;
    let far = 1.0 / n as f64;
    Ok(MsmTheory {
        frr,
        far,
        aer: (frr + far) / 2.0,
        far_type2: frr / n as f64,
    })
}

/// One enrolled population: the recognizer trained on its gallery, the
/// projected gallery and every claim of the split in projected form.
#[derive(Debug, Clone)]
pub struct Population {
    pub split: GalleryProbeSplit,
    pub recognizer: Recognizer,
    pub gallery: Gallery,
    pub claims: Vec<Claim>,
    /// Recognition accuracy on the enrolled subjects' probes.
    pub ccr: f64,
}

impl Population {
    /// Splits `features`, trains on the gallery and projects every probe.
    pub fn build(features: &BTreeMap<SampleKey, Vec<f64>>, opts: &SplitOptions, retention: f64) -> Result<Self> {
        let index = DatasetIndex::from_keys(features.keys().map(|&k| (k, 1)))?;
        let split = crate::dataset::split_with(&index, opts)?;
        Self::from_split(features, split, retention)
    }

    pub fn from_split(features: &BTreeMap<SampleKey, Vec<f64>>, split: GalleryProbeSplit, retention: f64) -> Result<Self> {
        let rows = |keys: &[SampleKey]| -> Result<DMatrix<f64>> {
            let v: Vec<Vec<f64>> = keys
                .iter()
                .map(|k| features.get(k).cloned().ok_or_else(|| GaitError::InsufficientData(format!("no features for {k}"))))
                .collect::<Result<_>>()?;
            matrix_from_rows(&v)
        };
        let gx = rows(&split.gallery)?;
        let gy: Vec<SubjectId> = split.gallery.iter().map(|k| k.subject).collect();
        let recognizer = Recognizer::fit(&gx, &gy, retention)?;
        let gallery = Gallery::new(recognizer.project(&gx)?, gy)?;
        drop(gx);

        let projected = recognizer.project(&rows(&split.probes)?)?;
        let at: BTreeMap<SampleKey, usize> = split.probes.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let row = |k: &SampleKey| projected.row(at[k]).iter().copied().collect::<Vec<f64>>();

        let enrolled: Vec<usize> = (0..split.probes.len()).filter(|&i| split.authorized.contains(&split.probes[i].subject)).collect();
        let hits = enrolled
            .par_iter()
            .map(|&i| Ok(usize::from(recognizer.bayes.predict(&row(&split.probes[i]))? == split.probes[i].subject)))
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum::<usize>();
        let claims = split
            .claims
            .iter()
            .map(|c| Claim {
                features: row(&c.probe),
                claimed: c.claimed,
                truth: c.truth,
            })
            .collect();
        Ok(Self {
            ccr: hits as f64 / enrolled.len().max(1) as f64,
            split,
            recognizer,
            gallery,
            claims,
        })
    }

    pub fn n_authorized(&self) -> usize {
        self.split.authorized.len()
    }

    /// Applies a decision rule to every claim.
    pub fn decide<F>(&self, rule: F) -> Result<Vec<AuthDecision>>
    where
        F: Fn(&Claim) -> Result<AuthDecision> + Sync + Send,
    {
        self.claims.par_iter().map(rule).collect()
    }

    /// NN distances and BT log posteriors of every claim.
    pub fn scores(&self, paradigm: Paradigm) -> Result<Vec<(f64, ClaimTruth)>> {
        let decisions = match paradigm {
            Paradigm::Nn => self.decide(|c| auth_threshold_nn(c, &self.gallery, 0.0))?,
            Paradigm::Bt => self.decide(|c| auth_bt(c, &self.recognizer, PosteriorThreshold(0.0)))?,
            p => return Err(GaitError::invalid(format!("paradigm {p} has no threshold to sweep"))),
        };
        Ok(decisions.iter().zip(&self.claims).map(|(d, c)| (d.score, c.truth)).collect())
    }
}

/// Outcomes of `decisions` paired with the truths of `claims`.
pub fn outcomes(decisions: &[AuthDecision], claims: &[Claim]) -> Vec<(bool, ClaimTruth)> {
    decisions.iter().zip(claims).map(|(d, c)| (d.accept, c.truth)).collect()
}

/// Log posterior threshold at which the BT sweep's mean FAR is at most
/// `target`.
pub fn bt_threshold_for_far(sweep: &RocSweep, target: f64) -> Result<PosteriorThreshold> {
    if sweep.sense != ScoreSense::Above {
        return Err(GaitError::invalid("posterior thresholds come from an accept-above sweep"));
    }
    PosteriorThreshold::from_log(sweep.at_far(target).threshold.min(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn claim(features: Vec<f64>, claimed: SubjectId, truth: ClaimTruth) -> Claim {
        Claim { features, claimed, truth }
    }

    fn half() -> PosteriorThreshold {
        PosteriorThreshold::new(0.5).unwrap()
    }

    fn toy_gallery() -> Gallery {
        Gallery::new(DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 1.0, 5.0, 5.0]), vec![1, 1, 2]).unwrap()
    }

    #[test]
    fn nn_thresholds() {
        let g = toy_gallery();
        let c = claim(vec![0.0, 1.0], 1, ClaimTruth::Genuine);
        let d = auth_threshold_nn(&c, &g, 0.5).unwrap();
        assert!(d.accept && d.score == 0.0);
        assert!(!auth_threshold_nn(&c, &g, 0.0).unwrap().accept);
        let far = claim(vec![5.0, 2.0], 2, ClaimTruth::Genuine);
        assert_eq!(auth_threshold_nn(&far, &g, 10.0).unwrap().score, 3.0);
        let unknown = auth_threshold_nn(&claim(vec![0.0, 0.0], 9, ClaimTruth::Type1), &g, 1e9).unwrap();
        assert!(!unknown.accept && unknown.unknown_identity);
        assert!(auth_threshold_nn(&claim(vec![0.0], 1, ClaimTruth::Genuine), &g, 1.0).is_err());
    }

    fn toy_recognizer() -> (Recognizer, DMatrix<f64>, Vec<SubjectId>) {
        let mut rng = rng::seeded(5);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centres = [[0.0, 0.0, 0.0], [3.0, 0.0, 1.0], [0.0, 3.0, -1.0]];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..10 {
                rows.push(centre.iter().map(|m| m + noise.sample(&mut rng)).collect::<Vec<f64>>());
                y.push(c as SubjectId + 1);
            }
        }
        let x = matrix_from_rows(&rows).unwrap();
        (Recognizer::fit(&x, &y, 0.999).unwrap(), x, y)
    }

    #[test]
    fn msm_and_bt_follow_the_recognizer() {
        let (r, x, y) = toy_recognizer();
        let z = r.project(&x).unwrap();
        let probe: Vec<f64> = z.row(0).iter().copied().collect();
        assert_eq!(r.bayes.predict(&probe).unwrap(), y[0]);
        assert!(auth_msm(&claim(probe.clone(), 1, ClaimTruth::Genuine), &r).unwrap().accept);
        let forged = auth_msm(&claim(probe.clone(), 2, ClaimTruth::Type2), &r).unwrap();
        assert!(!forged.accept && forged.score == 0.0);

        let post = r.bayes.posterior(&probe).unwrap()[0];
        assert!(post > 0.9);
        assert!(auth_bt(&claim(probe.clone(), 1, ClaimTruth::Genuine), &r, half()).unwrap().accept);
        for theta in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(PosteriorThreshold::new(theta).is_err());
        }
        assert!(PosteriorThreshold::from_log(0.1).is_err());
        let never = PosteriorThreshold::from_log(0.0).unwrap();
        assert!(!auth_bt(&claim(probe.clone(), 1, ClaimTruth::Genuine), &r, never).unwrap().accept);
        let unknown = auth_bt(&claim(probe, 7, ClaimTruth::Type1), &r, PosteriorThreshold::new(0.01).unwrap()).unwrap();
        assert!(!unknown.accept && unknown.unknown_identity);
    }

    #[test]
    fn bt_acceptance_is_monotone_in_the_threshold() {
        let (r, x, _) = toy_recognizer();
        let z = r.project(&x).unwrap();
        for i in 0..z.nrows() {
            let f: Vec<f64> = z.row(i).iter().copied().collect();
            for claimed in 1..=3 {
                let c = claim(f.clone(), claimed, ClaimTruth::Genuine);
                let acc: Vec<bool> = [0.01, 0.1, 0.5, 0.9, 0.999].iter().map(|&t| auth_bt(&c, &r, PosteriorThreshold::new(t).unwrap()).unwrap().accept).collect();
                assert!(acc.windows(2).all(|w| w[0] >= w[1]), "{acc:?}");
            }
        }
    }

    #[test]
    fn two_pass_is_an_or() {
        let (r, x, _) = toy_recognizer();
        let z = r.project(&x).unwrap();
        let f: Vec<f64> = z.row(0).iter().copied().collect();
        let good = claim(f.clone(), 1, ClaimTruth::Genuine);
        assert!(auth_msm_2p(&good, &r, &good, &r).unwrap().accept);
        let bad = claim(f.clone(), 2, ClaimTruth::Genuine);
        assert!(!auth_msm_2p(&bad, &r, &bad, &r).unwrap().accept);
        let strict = PosteriorThreshold::new(0.999).unwrap();
        assert!(!auth_bt_2p(&bad, &r, strict, &bad, &r, strict).unwrap().accept);
        let elsewhere = claim(z.row(15).iter().copied().collect(), 1, ClaimTruth::Genuine);
        assert!(!auth_bt(&elsewhere, &r, half()).unwrap().accept);
        assert!(auth_bt_2p(&elsewhere, &r, half(), &good, &r, half()).unwrap().accept);
        assert!(auth_msm_2p(&good, &r, &bad, &r).is_err());
    }

    #[test]
    fn error_rate_counting() {
        let mut outcomes = Vec::new();
        outcomes.extend((0..200).map(|i| (i < 190, ClaimTruth::Genuine)));
        outcomes.extend((0..100).map(|i| (i < 1, ClaimTruth::Type1)));
        outcomes.extend((0..100).map(|i| (i < 1, ClaimTruth::Type2)));
        let e = compute_error_rates(&outcomes);
        assert!((e.frr.unwrap() - 0.05).abs() < 1e-12);
        assert!((e.far_mean.unwrap() - 0.01).abs() < 1e-12);
        assert!((e.aer.unwrap() - 0.03).abs() < 1e-12);

        let only_genuine = compute_error_rates(&[(true, ClaimTruth::Genuine)]);
        assert_eq!(only_genuine.frr, Some(0.0));
        assert_eq!((only_genuine.far_type1, only_genuine.far_mean, only_genuine.aer), (None, None, None));
        let no_type2 = compute_error_rates(&[(true, ClaimTruth::Genuine), (true, ClaimTruth::Type1)]);
        assert_eq!(no_type2.far_mean, Some(1.0));
    }

    #[test]
    fn counts_match_a_per_claim_tally() {
        let mut rng = rng::seeded(11);
        let truths = [ClaimTruth::Genuine, ClaimTruth::Type1, ClaimTruth::Type2];
        for _ in 0..20 {
            let outcomes: Vec<(bool, ClaimTruth)> = (0..rng.random_range(3..300))
                .map(|_| (rng.random_bool(0.5), truths[rng.random_range(0..3)]))
                .collect();
            let e = compute_error_rates(&outcomes);
            let count = |t: ClaimTruth, a: bool| outcomes.iter().filter(|o| o.1 == t && o.0 == a).count() as f64;
            let total = |t: ClaimTruth| count(t, true) + count(t, false);
            if total(ClaimTruth::Genuine) > 0.0 {
                assert_eq!(e.frr.unwrap(), count(ClaimTruth::Genuine, false) / total(ClaimTruth::Genuine));
            }
            if total(ClaimTruth::Type1) > 0.0 {
                assert_eq!(e.far_type1.unwrap(), count(ClaimTruth::Type1, true) / total(ClaimTruth::Type1));
            }
        }
    }

    #[test]
    fn separated_scores_have_zero_eer() {
        let s: Vec<(f64, ClaimTruth)> = (0..10)
            .map(|i| (i as f64, ClaimTruth::Genuine))
            .chain((0..10).map(|i| (20.0 + i as f64, ClaimTruth::Type1)))
            .collect();
        let roc = roc_and_eer(&s, ScoreSense::Below).unwrap();
        assert_eq!(roc.eer, 0.0);
        assert_eq!(roc.best.aer(), 0.0);
        assert_eq!(roc.points.first().map(|p| (p.far, p.frr)), Some((0.0, 1.0)));
        assert_eq!(roc.points.last().map(|p| (p.far, p.frr)), Some((1.0, 0.0)));
        let flipped: Vec<(f64, ClaimTruth)> = s.iter().map(|&(v, t)| (-v, t)).collect();
        assert_eq!(roc_and_eer(&flipped, ScoreSense::Above).unwrap().eer, 0.0);
    }

    #[test]
    fn constant_scores_give_one_point() {
        let s = [(1.0, ClaimTruth::Genuine), (1.0, ClaimTruth::Type2)];
        let roc = roc_and_eer(&s, ScoreSense::Below).unwrap();
        assert_eq!(roc.points.len(), 1);
        assert_eq!(roc.eer, 0.5);
        assert!(roc_and_eer(&[(1.0, ClaimTruth::Genuine)], ScoreSense::Below).is_err());
    }

    #[test]
    fn optimal_aer_never_exceeds_eer() {
        let mut rng = rng::seeded(3);
        for _ in 0..50 {
            let s: Vec<(f64, ClaimTruth)> = (0..rng.random_range(2..60))
                .map(|i| {
                    let t = if i == 0 { ClaimTruth::Genuine } else if i == 1 { ClaimTruth::Type1 } else if rng.random_bool(0.5) { ClaimTruth::Genuine } else { ClaimTruth::Type2 };
                    ((rng.random_range(0..8) as f64) + if t == ClaimTruth::Genuine { 0.0 } else { 2.0 }, t)
                })
                .collect();
            let roc = roc_and_eer(&s, ScoreSense::Below).unwrap();
            assert!(roc.best.aer() <= roc.eer + 1e-12, "{} > {}", roc.best.aer(), roc.eer);
            assert!(roc.points.windows(2).all(|w| w[1].far >= w[0].far && w[1].frr <= w[0].frr));
        }
    }

    #[test]
    fn msm_theory() {
        let t = theoretical_msm_rates(0.95, 100).unwrap();
        assert!((t.far - 0.01).abs() < 1e-15);
        assert!((t.far_type2 - 0.0005).abs() < 1e-15);
        assert!((theoretical_msm_rates(0.9, 10).unwrap().aer - 0.1).abs() < 1e-15);
        assert!(theoretical_msm_rates(1.1, 10).is_err());
        assert!(theoretical_msm_rates(0.5, 0).is_err());
    }

    #[test]
    fn paradigm_names_round_trip() {
        for p in Paradigm::ALL {
            assert_eq!(p.as_str().parse::<Paradigm>().unwrap(), p);
        }
        assert!("knn".parse::<Paradigm>().is_err());
    }
}
