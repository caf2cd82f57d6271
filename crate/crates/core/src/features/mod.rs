//! Per-silhouette pose features.

pub mod chain;
pub mod efd;
pub mod rcs;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use chain::{trace_contour, ChainCode};
pub use efd::{efd_coefficients, efd_reconstruct, link_time, EfdDescriptor};
pub use rcs::{rcs_features, RcsVector};

use crate::error::{GaitError, Result};
use crate::image::SilhouetteFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Efd { harmonics: usize },
    Rcs,
}

impl FeatureKind {
    pub fn dimension(self) -> usize {
        match self {
            FeatureKind::Efd { harmonics } => 4 * harmonics + 2,
            FeatureKind::Rcs => 480,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Efd { harmonics } => write!(f, "efd{harmonics}"),
            FeatureKind::Rcs => f.write_str("rcs"),
        }
    }
}

impl FromStr for FeatureKind {
    type Err = GaitError;

    /// Accepts `rcs`, `efd` (12 harmonics) or `efd<N>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rcs" => Ok(FeatureKind::Rcs),
            "efd" => Ok(FeatureKind::Efd { harmonics: efd::DEFAULT_HARMONICS }),
            _ => s
                .strip_prefix("efd")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n > 0)
                .map(|harmonics| FeatureKind::Efd { harmonics })
                .ok_or_else(|| GaitError::invalid(format!("unknown feature kind '{s}'"))),
        }
    }
}

/// Feature vector of one frame; EFD fails on frames without a usable contour.
pub fn frame_features(frame: &SilhouetteFrame, kind: FeatureKind) -> Result<Vec<f64>> {
    match kind {
        FeatureKind::Rcs => Ok(rcs_features(frame).to_features()),
        FeatureKind::Efd { harmonics } => Ok(efd_coefficients(&trace_contour(frame.image())?, harmonics)?.to_features()),
    }
}
