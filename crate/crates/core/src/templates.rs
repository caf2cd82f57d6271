//! Gait templates collated from one cycle of normalized silhouettes.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::image::{RawFrame, SilhouetteFrame, FRAME_PIXELS, FRAME_SIZE};
use crate::preprocess::{cycle_from_frames, CycleConfig, CycleRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateKind {
    #[serde(rename = "gei")]
    Gei,
    #[serde(rename = "geni")]
    GEnI,
    #[serde(rename = "aei")]
    Aei,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Gei => "gei",
            TemplateKind::GEnI => "geni",
            TemplateKind::Aei => "aei",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateKind {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gei" => Ok(TemplateKind::Gei),
            "geni" => Ok(TemplateKind::GEnI),
            "aei" => Ok(TemplateKind::Aei),
            _ => Err(GaitError::invalid(format!("unknown template kind '{s}'"))),
        }
    }
}

/// Real-valued 240×240 template with cells in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitTemplate {
    pub kind: TemplateKind,
    values: Vec<f64>,
}

impl GaitTemplate {
    pub fn new(kind: TemplateKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != FRAME_PIXELS {
            return Err(GaitError::dims(FRAME_PIXELS, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(GaitError::invalid(format!("template value {v} outside [0, 1]")));
        }
        Ok(Self { kind, values })
    }

    pub fn zeros(kind: TemplateKind) -> Self {
        Self {
            kind,
            values: vec![0.0; FRAME_PIXELS],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * FRAME_SIZE + x]
    }

    /// Row-major feature vector of length 57600.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Inverse of [`GaitTemplate::flatten`].
    pub fn reshape(kind: TemplateKind, features: &[f64]) -> Result<Self> {
        Self::new(kind, features.to_vec())
    }

    pub fn to_raw(&self) -> RawFrame {
        let data = self.values.iter().map(|v| (v * 255.0).round() as u8).collect();
        RawFrame::new(FRAME_SIZE, FRAME_SIZE, data).expect("fixed template size")
    }

    /// Writes `<stem>.png` (value × 255, rounded) and `<stem>.json` holding the kind.
    pub fn export(&self, png: &Path) -> Result<()> {
        self.to_raw().save_png(png)?;
        let sidecar = png.with_extension("json");
        let body = serde_json::to_string(&serde_json::json!({ "kind": self.kind }))?;
        fs::write(&sidecar, body).map_err(|e| GaitError::io(format!("writing {}", sidecar.display()), e))
    }

    pub fn import(png: &Path) -> Result<Self> {
        let raw = RawFrame::load_png(png)?;
        if raw.width() != FRAME_SIZE || raw.height() != FRAME_SIZE {
            return Err(GaitError::dims(
                format!("{FRAME_SIZE}x{FRAME_SIZE}"),
                format!("{}x{}", raw.width(), raw.height()),
            ));
        }
        let sidecar = png.with_extension("json");
        let kind = match fs::read_to_string(&sidecar) {
            Ok(s) => {
                #[derive(Deserialize)]
                struct Sidecar {
                    kind: TemplateKind,
                }
                serde_json::from_str::<Sidecar>(&s)?.kind
            }
            Err(_) => TemplateKind::Gei,
        };
        Self::new(kind, raw.data().iter().map(|&v| v as f64 / 255.0).collect())
    }
}

fn check_cycle(frames: &[SilhouetteFrame]) -> Result<()> {
    if frames.is_empty() {
        Err(GaitError::InsufficientData("cannot collate a template from zero frames".into()))
    } else {
        Ok(())
    }
}

fn foreground_counts(frames: &[SilhouetteFrame]) -> Vec<u32> {
    let mut counts = vec![0u32; FRAME_PIXELS];
    for f in frames {
        for (c, &v) in counts.iter_mut().zip(f.data()) {
            *c += v as u32;
        }
    }
    counts
}

/// Per-pixel mean of the silhouettes.
pub fn compute_gei(frames: &[SilhouetteFrame]) -> Result<GaitTemplate> {
    check_cycle(frames)?;
    let n = frames.len() as f64;
    let values = foreground_counts(frames).into_iter().map(|c| c as f64 / n).collect();
    Ok(GaitTemplate {
        kind: TemplateKind::Gei,
        values,
    })
}

/// Per-pixel mean of `|B_t − B_{t−1}|` with an all-background `B_0`.
pub fn compute_aei(frames: &[SilhouetteFrame]) -> Result<GaitTemplate> {
    check_cycle(frames)?;
    let mut counts = vec![0u32; FRAME_PIXELS];
    let blank = SilhouetteFrame::empty();
    let mut prev = &blank;
    for f in frames {
        for ((c, &a), &b) in counts.iter_mut().zip(f.data()).zip(prev.data()) {
            *c += (a ^ b) as u32;
        }
        prev = f;
    }
    let n = frames.len() as f64;
    Ok(GaitTemplate {
        kind: TemplateKind::Aei,
        values: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Base-2 binary entropy with `0 · log 0 = 0`.
pub fn binary_entropy(z: f64) -> f64 {
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * p.log2() };
    term(z) + term(1.0 - z)
}

/// Per-pixel binary entropy of the foreground frequency.
pub fn compute_geni(frames: &[SilhouetteFrame]) -> Result<GaitTemplate> {
    check_cycle(frames)?;
    let n = frames.len() as f64;
    let values = foreground_counts(frames)
        .into_iter()
        .map(|c| binary_entropy(c as f64 / n).clamp(0.0, 1.0))
        .collect();
    Ok(GaitTemplate {
        kind: TemplateKind::GEnI,
        values,
    })
}

pub fn compute_template(kind: TemplateKind, frames: &[SilhouetteFrame]) -> Result<GaitTemplate> {
    match kind {
        TemplateKind::Gei => compute_gei(frames),
        TemplateKind::GEnI => compute_geni(frames),
        TemplateKind::Aei => compute_aei(frames),
    }
}

/// Template over the first detected gait cycle, or over the whole sequence
/// when no full cycle is found. Also returns the cycle that was used.
pub fn sequence_template(kind: TemplateKind, frames: &[SilhouetteFrame], cfg: &CycleConfig) -> Result<(GaitTemplate, Option<CycleRange>)> {
    match cycle_from_frames(frames, cfg) {
        Ok(cycle) => Ok((compute_template(kind, &frames[cycle.frames()])?, Some(cycle))),
        Err(GaitError::IncompleteCycle { .. }) => Ok((compute_template(kind, frames)?, None)),
        Err(e) => Err(e),
    }
}

/// Binary 240×240 selection mask, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskImage {
    values: Vec<u8>,
}

impl MaskImage {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if values.len() != FRAME_PIXELS {
            return Err(GaitError::dims(FRAME_PIXELS, values.len()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = vec![0u8; FRAME_PIXELS];
        for y in 0..FRAME_SIZE {
            for x in 0..FRAME_SIZE {
                values[y * FRAME_SIZE + x] = u8::from(f(x, y));
            }
        }
        Self { values }
    }

    pub fn ones() -> Self {
        Self {
            values: vec![1; FRAME_PIXELS],
        }
    }

    pub fn zeros() -> Self {
        Self {
            values: vec![0; FRAME_PIXELS],
        }
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * FRAME_SIZE + x] != 0
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        RawFrame::new(FRAME_SIZE, FRAME_SIZE, self.values.iter().map(|v| v * 255).collect())?.save_png(path)
    }

    /// Pixels `>= 128` are selected.
    pub fn load_png(path: &Path) -> Result<Self> {
        let raw = RawFrame::load_png(path)?;
        if raw.width() != FRAME_SIZE || raw.height() != FRAME_SIZE {
            return Err(GaitError::dims(
                format!("{FRAME_SIZE}x{FRAME_SIZE}"),
                format!("{}x{}", raw.width(), raw.height()),
            ));
        }
        Self::new(raw.data().iter().map(|&v| u8::from(v >= 128)).collect())
    }
}

pub fn apply_mask(template: &GaitTemplate, mask: &MaskImage) -> GaitTemplate {
    GaitTemplate {
        kind: template.kind,
        values: template
            .values
            .iter()
            .zip(&mask.values)
            .map(|(v, &m)| if m != 0 { *v } else { 0.0 })
            .collect(),
    }
}

/// Masks a flattened template given as a raw feature vector.
pub fn apply_mask_flat(features: &[f64], mask: &MaskImage) -> Result<Vec<f64>> {
    if features.len() != FRAME_PIXELS {
        return Err(GaitError::dims(FRAME_PIXELS, features.len()));
    }
    Ok(features
        .iter()
        .zip(&mask.values)
        .map(|(v, &m)| if m != 0 { *v } else { 0.0 })
        .collect())
}
