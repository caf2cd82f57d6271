//! Template-level tuning sets with a known answer.
//!
//! Subjects are identified by a two-part code: the head strip just above the
//! head boundary carries one part and the feet strip just below the feet
//! boundary the other, so both strips are needed. Mid rows carry a weaker
//! full identity, but bag and coat probes show a decoy subject there. The
//! nuisance is a small set of shared random patterns plus light pixel jitter.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Covariate;
use crate::error::{GaitError, Result};
use crate::image::{FRAME_PIXELS, FRAME_SIZE};
use crate::rng::{self, GaitRng};

use super::{TuningSample, TuningSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub subjects: u32,
    pub gallery_per_subject: usize,
    pub probes_per_covariate: usize,
    /// First row after the head band.
    pub head_boundary: u16,
    /// First row of the feet band.
    pub feet_boundary: u16,
    /// Height of the identity strips next to each boundary.
    pub strip_rows: u16,
    pub identity_amp: f64,
    /// Identity amplitude in the mid rows.
    pub mid_amp: f64,
    /// Per-pixel std of the per-sample nuisance.
    pub noise: f64,
    /// Number of shared nuisance patterns.
    pub factors: usize,
    pub jitter: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            subjects: 20,
            gallery_per_subject: 4,
            probes_per_covariate: 2,
            head_boundary: 48,
            feet_boundary: 192,
            strip_rows: 8,
            identity_amp: 0.1,
            mid_amp: 0.05,
            noise: 0.1,
            factors: 20,
            jitter: 0.01,
        }
    }
}

impl PlantedSpec {
    fn validate(&self) -> Result<()> {
        let (h, f, s) = (self.head_boundary, self.feet_boundary, self.strip_rows);
        if s == 0 || h < s || h > f || f as usize + s as usize > FRAME_SIZE {
            return Err(GaitError::invalid("planted strips must fit inside 0 <= head <= feet <= 240"));
        }
        if self.subjects < 2 || self.gallery_per_subject < 2 || self.probes_per_covariate == 0 {
            return Err(GaitError::invalid("planted corpus needs two subjects, two gallery samples and one probe"));
        }
        if self.factors == 0 {
            return Err(GaitError::invalid("planted corpus needs at least one nuisance factor"));
        }
        Ok(())
    }

    /// Side of the code grid: head code `i / k`, feet code `i % k`.
    fn code_side(&self) -> usize {
        (self.subjects as f64).sqrt().ceil() as usize
    }

    fn head_rows(&self) -> std::ops::Range<usize> {
        (self.head_boundary - self.strip_rows) as usize..self.head_boundary as usize
    }

    fn feet_rows(&self) -> std::ops::Range<usize> {
        self.feet_boundary as usize..(self.feet_boundary + self.strip_rows) as usize
    }

    fn mid_rows(&self) -> std::ops::Range<usize> {
        self.head_boundary as usize..self.feet_boundary as usize
    }
}

fn gaussian_field(rng: &mut GaitRng, rows: std::ops::Range<usize>, amp: f64) -> Vec<f64> {
    (0..rows.len() * FRAME_SIZE)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            amp * z
        })
        .collect()
}

fn add_rows(v: &mut [f64], rows: std::ops::Range<usize>, field: &[f64]) {
    let start = rows.start * FRAME_SIZE;
    v[start..start + field.len()].iter_mut().zip(field).for_each(|(x, d)| *x += d);
}

pub fn planted_tuning_set(spec: &PlantedSpec, seed: u64) -> Result<TuningSet> {
    spec.validate()?;
    let jitter = Normal::new(0.0, spec.jitter).map_err(|e| GaitError::invalid(e.to_string()))?;
    let coef = Normal::new(0.0, spec.noise / (spec.factors as f64).sqrt()).map_err(|e| GaitError::invalid(e.to_string()))?;
    let k = spec.code_side();
    let n = spec.subjects as usize;

    let head_codes: Vec<Vec<f64>> = (0..k)
        .map(|c| gaussian_field(&mut rng::stream(seed, &[0, 0, c as u64]), spec.head_rows(), spec.identity_amp))
        .collect();
    let feet_codes: Vec<Vec<f64>> = (0..k)
        .map(|c| gaussian_field(&mut rng::stream(seed, &[0, 1, c as u64]), spec.feet_rows(), spec.identity_amp))
        .collect();
    let mids: Vec<Vec<f64>> = (0..n)
        .map(|i| gaussian_field(&mut rng::stream(seed, &[0, 2, i as u64]), spec.mid_rows(), spec.mid_amp))
        .collect();
    let patterns: Vec<Vec<f64>> = (0..spec.factors)
        .map(|f| {
            let mut rng = rng::stream(seed, &[3, f as u64]);
            (0..FRAME_PIXELS).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect();

    let sample = |i: usize, cov: Covariate, path: &[u64]| -> Vec<f64> {
        let mut rng = rng::stream(seed, path);
        let mut v = vec![0.5; FRAME_PIXELS];
        add_rows(&mut v, spec.head_rows(), &head_codes[i / k]);
        add_rows(&mut v, spec.feet_rows(), &feet_codes[i % k]);
        let mid = if cov == Covariate::Normal {
            i
        } else {
            (i + rng.random_range(1..n)) % n
        };
        add_rows(&mut v, spec.mid_rows(), &mids[mid]);
        for p in &patterns {
            let a = coef.sample(&mut rng);
            v.iter_mut().zip(p).for_each(|(x, q)| *x += a * q);
        }
        v.iter_mut().for_each(|x| *x += jitter.sample(&mut rng));
        v
    };

    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for i in 0..n {
        let label = i as u32 + 1;
        for g in 0..spec.gallery_per_subject {
            gallery.push(TuningSample {
                label,
                covariate: Covariate::Normal,
                features: sample(i, Covariate::Normal, &[1, i as u64, g as u64]),
            });
        }
        for cov in Covariate::ALL {
            for p in 0..spec.probes_per_covariate {
                probes.push(TuningSample {
                    label,
                    covariate: cov,
                    features: sample(i, cov, &[2, i as u64, cov.index() as u64, p as u64]),
                });
            }
        }
    }
    TuningSet::new(gallery, probes)
}
