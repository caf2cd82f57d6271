//! Genetic template segmentation: masks built from three split lines and four
//! region inclusion bits, searched with a GA over a tuning set.

mod engine;
mod ga;
pub mod planted;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::image::FRAME_SIZE;
use crate::templates::MaskImage;

pub use engine::{CovariateScores, FitnessEngine, TuningSample, TuningSet};
pub use ga::{ga_optimize, sequential_refine, GaParams, GaResult, GenerationStats};

pub const CHROMOSOME_BITS: usize = 28;
const MASK: u32 = (1 << CHROMOSOME_BITS) - 1;

/// 28 genes laid out most significant first as
/// `[S_H:8][S_M:8][S_F:8][W_H][W_L][W_R][W_F]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Chromosome(u32);

/// Chromosome fields as plain integers and flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genes {
    pub d_h: u8,
    pub d_m: u8,
    pub d_f: u8,
    pub w: [bool; 4],
}

impl Chromosome {
    pub fn from_bits(bits: u32) -> Result<Self> {
        if bits & !MASK != 0 {
            return Err(GaitError::invalid(format!("chromosome {bits:#x} has more than 28 bits")));
        }
        Ok(Self(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    /// Gene `i`, counted from the most significant end.
    pub fn bit(self, i: usize) -> bool {
        assert!(i < CHROMOSOME_BITS);
        (self.0 >> (CHROMOSOME_BITS - 1 - i)) & 1 == 1
    }

    pub fn with_bit(self, i: usize, on: bool) -> Self {
        assert!(i < CHROMOSOME_BITS);
        let m = 1 << (CHROMOSOME_BITS - 1 - i);
        Self(if on { self.0 | m } else { self.0 & !m })
    }

    pub fn encode(g: &Genes) -> Self {
        let w = g.w.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b));
        Self((g.d_h as u32) << 20 | (g.d_m as u32) << 12 | (g.d_f as u32) << 4 | w)
    }

    pub fn genes(self) -> Genes {
        Genes {
            d_h: (self.0 >> 20) as u8,
            d_m: (self.0 >> 12) as u8,
            d_f: (self.0 >> 4) as u8,
            w: [self.bit(24), self.bit(25), self.bit(26), self.bit(27)],
        }
    }
}

impl TryFrom<u32> for Chromosome {
    type Error = GaitError;

    fn try_from(v: u32) -> Result<Self> {
        Self::from_bits(v)
    }
}

impl From<Chromosome> for u32 {
    fn from(c: Chromosome) -> u32 {
        c.0
    }
}

impl fmt::Display for Chromosome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:028b}", self.0)
    }
}

/// Inclusive integer range of one split variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub min: u16,
    pub max: u16,
}

impl SplitBounds {
    pub fn new(min: u16, max: u16) -> Result<Self> {
        if min > max || max as usize > FRAME_SIZE {
            return Err(GaitError::invalid(format!("invalid split bounds [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    /// `min + floor((max - min) * d / 255)`.
    pub fn decode(self, d: u8) -> u16 {
        self.min + ((self.max - self.min) as u32 * d as u32 / 255) as u16
    }

    /// Smallest gene whose decoded value is at least `value`.
    pub fn encode(self, value: u16) -> u8 {
        let v = value.clamp(self.min, self.max);
        (0..=255u8).find(|&d| self.decode(d) >= v).unwrap_or(255)
    }

    /// Distinct decoded values in increasing order.
    pub fn grid(self) -> Vec<u16> {
        let mut g: Vec<u16> = (0..=255u8).map(|d| self.decode(d)).collect();
        g.dedup();
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtsBounds {
    pub h: SplitBounds,
    pub m: SplitBounds,
    pub f: SplitBounds,
}

impl Default for GtsBounds {
    fn default() -> Self {
        let half = (FRAME_SIZE / 2) as u16;
        let full = FRAME_SIZE as u16;
        Self {
            h: SplitBounds { min: 0, max: half },
            m: SplitBounds { min: 0, max: full },
            f: SplitBounds { min: half, max: full },
        }
    }
}

/// Decoded split lines and region inclusion bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MaskSpec {
    pub s_h: u16,
    pub s_m: u16,
    pub s_f: u16,
    pub w_h: bool,
    pub w_l: bool,
    pub w_r: bool,
    pub w_f: bool,
}

impl MaskSpec {
    pub fn new(s_h: u16, s_m: u16, s_f: u16, w: [bool; 4]) -> Result<Self> {
        let n = FRAME_SIZE as u16;
        if s_h > s_f || s_f > n || s_m > n {
            return Err(GaitError::invalid(format!("mask splits violate 0 <= sH <= sF <= 240, sM <= 240: ({s_h}, {s_m}, {s_f})")));
        }
        Ok(Self {
            s_h,
            s_m,
            s_f,
            w_h: w[0],
            w_l: w[1],
            w_r: w[2],
            w_f: w[3],
        })
    }

    pub fn weights(&self) -> [bool; 4] {
        [self.w_h, self.w_l, self.w_r, self.w_f]
    }

    /// Head and feet bands only.
    pub fn head_feet(s_h: u16, s_f: u16) -> Result<Self> {
        Self::new(s_h, (FRAME_SIZE / 2) as u16, s_f, [true, false, false, true])
    }

    /// Number of pixels let through.
    pub fn area(&self) -> usize {
        let n = FRAME_SIZE;
        let (h, m, f) = (self.s_h as usize, self.s_m as usize, self.s_f as usize);
        let mid = f - h;
        usize::from(self.w_h) * h * n + usize::from(self.w_f) * (n - f) * n + usize::from(self.w_l) * mid * m + usize::from(self.w_r) * mid * (n - m)
    }

    pub fn encode(&self, bounds: &GtsBounds) -> Chromosome {
        Chromosome::encode(&Genes {
            d_h: bounds.h.encode(self.s_h),
            d_m: bounds.m.encode(self.s_m),
            d_f: bounds.f.encode(self.s_f),
            w: self.weights(),
        })
    }
}

/// Decodes split genes; `sH` is clamped so it never exceeds `sF`, and the
/// weight bit of an empty region reads as zero.
pub fn decode_chromosome(c: Chromosome, bounds: &GtsBounds) -> MaskSpec {
    let g = c.genes();
    let s_f = bounds.f.decode(g.d_f);
    let s_h = bounds.h.decode(g.d_h).min(s_f);
    let s_m = bounds.m.decode(g.d_m);
    let n = FRAME_SIZE as u16;
    let mid = s_f > s_h;
    MaskSpec {
        s_h,
        s_m,
        s_f,
        w_h: g.w[0] && s_h > 0,
        w_l: g.w[1] && mid && s_m > 0,
        w_r: g.w[2] && mid && s_m < n,
        w_f: g.w[3] && s_f < n,
    }
}

/// Region containing pixel `(x, y)`: 0 head, 1 mid-left, 2 mid-right, 3 feet.
pub fn region_of(spec: &MaskSpec, x: usize, y: usize) -> usize {
    if y < spec.s_h as usize {
        0
    } else if y >= spec.s_f as usize {
        3
    } else if x < spec.s_m as usize {
        1
    } else {
        2
    }
}

pub fn render_mask(spec: &MaskSpec) -> MaskImage {
    let w = spec.weights();
    MaskImage::from_fn(|x, y| w[region_of(spec, x, y)])
}

/// Covariate weights of the squared weighted-CCR fitness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessWeights {
    pub normal: f64,
    pub bag: f64,
    pub coat: f64,
}

impl FitnessWeights {
    pub fn new(normal: f64, bag: f64, coat: f64) -> Result<Self> {
        if [normal, bag, coat].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(GaitError::invalid("fitness weights must be finite and non-negative"));
        }
        Ok(Self { normal, bag, coat })
    }

    /// Normal walking dominates, then clothing, then carrying.
    pub fn half_sixth_third() -> Self {
        Self {
            normal: 0.5,
            bag: 1.0 / 6.0,
            coat: 1.0 / 3.0,
        }
    }

    pub fn equal() -> Self {
        Self {
            normal: 1.0,
            bag: 1.0,
            coat: 1.0,
        }
    }

    /// `(wA·CCR_A + wB·CCR_B + wC·CCR_C)²`.
    pub fn fitness(&self, ccr: [f64; 3]) -> f64 {
        let s = self.normal * ccr[0] + self.bag * ccr[1] + self.coat * ccr[2];
        s * s
    }
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self::half_sixth_third()
    }
}

impl FromStr for FitnessWeights {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-sixth-third" => Ok(Self::half_sixth_third()),
            "equal" => Ok(Self::equal()),
            _ => Err(GaitError::invalid(format!("unknown fitness weights '{s}' (expected half-sixth-third or equal)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_endpoints() {
        let b = SplitBounds::new(0, 240).unwrap();
        assert_eq!(b.decode(0), 0);
        assert_eq!(b.decode(255), 240);
        assert_eq!(b.decode(128), 120);
        let f = GtsBounds::default().f;
        assert_eq!((f.decode(0), f.decode(255)), (120, 240));
    }

    #[test]
    fn bit_layout() {
        let c = Chromosome::encode(&Genes {
            d_h: 0xff,
            d_m: 0,
            d_f: 0x81,
            w: [true, false, false, true],
        });
        assert_eq!(c.to_string(), "1111111100000000100000011001");
        assert!(c.bit(0) && !c.bit(8) && c.bit(16) && c.bit(24) && !c.bit(25) && c.bit(27));
        assert!(Chromosome::from_bits(1 << 28).is_err());
    }

    #[test]
    fn paper_weight_bits_keep_head_and_feet() {
        let spec = MaskSpec::head_feet(40, 200).unwrap();
        let m = render_mask(&spec);
        for y in 0..FRAME_SIZE {
            let row: usize = (0..FRAME_SIZE).filter(|&x| m.get(x, y)).count();
            assert_eq!(row, if (40..200).contains(&y) { 0 } else { FRAME_SIZE });
        }
        let all = MaskSpec::new(40, 100, 200, [true; 4]).unwrap();
        assert_eq!(render_mask(&all).count(), FRAME_SIZE * FRAME_SIZE);
    }

    #[test]
    fn fitness_formula() {
        let w = FitnessWeights::half_sixth_third();
        assert!((w.fitness([1.0; 3]) - 1.0).abs() < 1e-15);
        assert!((w.fitness([0.98, 0.955, 0.93]) - 0.92).abs() < 1e-4);
        assert_eq!(FitnessWeights::equal().fitness([0.5; 3]), 2.25);
        assert!("thirds".parse::<FitnessWeights>().is_err());
    }

    proptest! {
        #[test]
        fn genes_round_trip(bits in 0u32..(1 << 28)) {
            let c = Chromosome::from_bits(bits).unwrap();
            prop_assert_eq!(Chromosome::encode(&c.genes()), c);
            let b = GtsBounds::default();
            let spec = decode_chromosome(c, &b);
            prop_assert_eq!(decode_chromosome(spec.encode(&b), &b), spec);
        }

        #[test]
        fn regions_partition_and_area_matches(bits in 0u32..(1 << 28)) {
            let spec = decode_chromosome(Chromosome::from_bits(bits).unwrap(), &GtsBounds::default());
            prop_assert!(spec.s_h <= spec.s_f);
            let mut counts = [0usize; 4];
            for y in 0..FRAME_SIZE {
                for x in 0..FRAME_SIZE {
                    counts[region_of(&spec, x, y)] += 1;
                }
            }
            prop_assert_eq!(counts.iter().sum::<usize>(), FRAME_SIZE * FRAME_SIZE);
            prop_assert_eq!(render_mask(&spec).count(), spec.area());
        }
    }
}
