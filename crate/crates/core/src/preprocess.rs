//! Foreground extraction, silhouette normalization and gait-cycle detection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::image::{BinaryImage, RawFrame, SilhouetteFrame, FRAME_SIZE};

/// First row of the lower half of a normalized frame.
pub const LOWER_LIMB_ROW: usize = FRAME_SIZE / 2;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(frame: &RawFrame, sigma: f64) -> Vec<f64> {
    let (w, h) = (frame.width(), frame.height());
    let src: Vec<f64> = frame.data().iter().map(|&v| v as f64).collect();
    if sigma <= 0.0 {
        return src;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * src[y * w + clamp(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Marks pixels whose blurred intensity differs from the blurred background
/// by more than `threshold`.
pub fn background_subtract(frame: &RawFrame, background: &RawFrame, blur_sigma: f64, threshold: u8) -> Result<BinaryImage> {
    if frame.width() != background.width() || frame.height() != background.height() {
        return Err(GaitError::dims(
            format!("{}x{}", background.width(), background.height()),
            format!("{}x{}", frame.width(), frame.height()),
        ));
    }
    if blur_sigma.is_nan() || blur_sigma < 0.0 {
        return Err(GaitError::invalid("blur sigma must be non-negative"));
    }
    let f = gaussian_blur(frame, blur_sigma);
    let b = gaussian_blur(background, blur_sigma);
    let data = f
        .iter()
        .zip(&b)
        .map(|(a, b)| u8::from((a - b).abs() > threshold as f64))
        .collect();
    BinaryImage::from_vec(frame.width(), frame.height(), data)
}

/// Scales the foreground so its bounding box is 240 rows tall and centres
/// the foreground centroid column horizontally (nearest-neighbour sampling).
pub fn normalize_silhouette(image: &BinaryImage) -> Result<SilhouetteFrame> {
    let bb = image.bounding_box().ok_or(GaitError::EmptySilhouette)?;
    let cx = image.centroid_column().ok_or(GaitError::EmptySilhouette)? + 0.5;
    let scale = FRAME_SIZE as f64 / bb.height() as f64;
    let half = FRAME_SIZE as f64 / 2.0;
    let cols: Vec<Option<usize>> = (0..FRAME_SIZE)
        .map(|x| {
            let sx = (cx + (x as f64 + 0.5 - half) / scale).floor();
            (sx >= 0.0 && (sx as usize) < image.width()).then_some(sx as usize)
        })
        .collect();
    let mut out = BinaryImage::new(FRAME_SIZE, FRAME_SIZE);
    for y in 0..FRAME_SIZE {
        let sy = ((bb.y0 as f64 + (y as f64 + 0.5) / scale).floor() as usize).min(bb.y1);
        for (x, sx) in cols.iter().enumerate() {
            if let Some(sx) = *sx {
                if image.get(sx, sy) {
                    out.set(x, y, true);
                }
            }
        }
    }
    SilhouetteFrame::new(out)
}

pub fn normalize_sequence(frames: &[BinaryImage]) -> Result<Vec<SilhouetteFrame>> {
    frames.iter().map(normalize_silhouette).collect()
}

/// Per-frame foreground count; the index of a value is its frame number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationSignal {
    pub values: Vec<f64>,
}

impl OscillationSignal {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,value\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }
}

/// Foreground pixels below the half-way row of each frame.
pub fn lower_limb_signal(frames: &[SilhouetteFrame]) -> OscillationSignal {
    let lo = LOWER_LIMB_ROW * FRAME_SIZE;
    OscillationSignal::new(
        frames
            .iter()
            .map(|f| f.data()[lo..].iter().map(|&v| v as usize).sum::<usize>() as f64)
            .collect(),
    )
}

/// Weights that evaluate, at `target`, the least-squares polynomial of order
/// `polyorder` fitted to samples at offsets `0..window`.
fn savgol_weights(window: usize, polyorder: usize, target: f64) -> Vec<f64> {
    let centre = (window - 1) as f64 / 2.0;
    let v = DMatrix::from_fn(window, polyorder + 1, |i, j| (i as f64 - centre).powi(j as i32));
    let e = DVector::from_fn(polyorder + 1, |j, _| (target - centre).powi(j as i32));
    let vtv = v.transpose() * &v;
    let coef = vtv
        .cholesky()
        .expect("Vandermonde normal matrix is positive definite for polyorder < window")
        .solve(&e);
    (&v * coef).iter().copied().collect()
}

/// Savitzky-Golay smoothing; the first and last half-windows are evaluated
/// from the polynomial fitted to the outermost full window.
pub fn smooth_signal(signal: &OscillationSignal, window: usize, polyorder: usize) -> Result<OscillationSignal> {
    let n = signal.len();
    if window.is_multiple_of(2) || polyorder >= window || window > n {
        return Err(GaitError::invalid(format!(
            "Savitzky-Golay needs an odd window > polyorder and <= signal length (window {window}, polyorder {polyorder}, length {n})"
        )));
    }
    let half = window / 2;
    let y = &signal.values;
    let dot = |w: &[f64], start: usize| w.iter().zip(&y[start..start + window]).map(|(a, b)| a * b).sum::<f64>();
    let centre = savgol_weights(window, polyorder, half as f64);
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate().take(n - half).skip(half) {
        *o = dot(&centre, i - half);
    }
    for i in 0..half {
        out[i] = dot(&savgol_weights(window, polyorder, i as f64), 0);
        let t = window - 1 - i;
        out[n - 1 - i] = dot(&savgol_weights(window, polyorder, t as f64), n - window);
    }
    Ok(OscillationSignal::new(out))
}

/// Frame indices of three consecutive troughs bracketing one gait cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleRange {
    pub start: usize,
    pub mid: usize,
    pub end: usize,
}

impl CycleRange {
    /// Frames `[start, end)`.
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    pub window: usize,
    pub polyorder: usize,
    /// Minimum trough spacing as a fraction of the median spacing.
    pub min_gap_fraction: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            window: 11,
            polyorder: 3,
            min_gap_fraction: 0.4,
        }
    }
}

/// Strict local minima lying in the lower half of the signal's range, with
/// near-duplicates closer than `min_gap_fraction` of the median spacing
/// merged into the lower one.
pub fn find_troughs(signal: &OscillationSignal, min_gap_fraction: f64) -> Vec<usize> {
    let v = &signal.values;
    let n = v.len();
    if n < 2 {
        return Vec::new();
    }
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let midline = (lo + hi) / 2.0;
    let mut cand: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || v[i] < v[i - 1];
            let right = i == n - 1 || v[i] < v[i + 1];
            left && right && v[i] <= midline
        })
        .collect();
    if cand.len() < 2 {
        return cand;
    }
    let mut gaps: Vec<usize> = cand.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_unstable();
    let median = if gaps.len() % 2 == 1 {
        gaps[gaps.len() / 2] as f64
    } else {
        (gaps[gaps.len() / 2 - 1] + gaps[gaps.len() / 2]) as f64 / 2.0
    };
    let min_gap = min_gap_fraction * median;
    let mut kept: Vec<usize> = Vec::with_capacity(cand.len());
    for i in cand.drain(..) {
        match kept.last_mut() {
            Some(last) if ((i - *last) as f64) < min_gap => {
                if v[i] < v[*last] {
                    *last = i;
                }
            }
            _ => kept.push(i),
        }
    }
    kept
}

/// The first three troughs of a smoothed lower-limb signal.
pub fn detect_gait_cycle(smoothed: &OscillationSignal, min_gap_fraction: f64) -> Result<CycleRange> {
    let t = find_troughs(smoothed, min_gap_fraction);
    if t.len() < 3 {
        return Err(GaitError::IncompleteCycle { found: t.len() });
    }
    Ok(CycleRange {
        start: t[0],
        mid: t[1],
        end: t[2],
    })
}

/// Signal extraction, smoothing and trough detection in one step. The
/// smoothing window shrinks to fit sequences shorter than it.
pub fn cycle_from_frames(frames: &[SilhouetteFrame], cfg: &CycleConfig) -> Result<CycleRange> {
    let signal = lower_limb_signal(frames);
    let mut window = cfg.window.min(signal.len());
    if window.is_multiple_of(2) {
        window = window.saturating_sub(1);
    }
    if window <= cfg.polyorder {
        return Err(GaitError::IncompleteCycle { found: 0 });
    }
    let smoothed = smooth_signal(&signal, window, cfg.polyorder)?;
    detect_gait_cycle(&smoothed, cfg.min_gap_fraction)
}
