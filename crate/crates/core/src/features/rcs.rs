//! Row-column summation features.

use serde::{Deserialize, Serialize};

use crate::image::{BinaryImage, SilhouetteFrame};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcsVector {
    pub rows: Vec<u32>,
    pub cols: Vec<u32>,
}

impl RcsVector {
    pub fn of_image(image: &BinaryImage) -> Self {
        let mut rows = vec![0u32; image.height()];
        let mut cols = vec![0u32; image.width()];
        for (y, row) in rows.iter_mut().enumerate() {
            for (x, col) in cols.iter_mut().enumerate() {
                if image.get(x, y) {
                    *row += 1;
                    *col += 1;
                }
            }
        }
        Self { rows, cols }
    }

    /// Row sums followed by column sums.
    pub fn to_features(&self) -> Vec<f64> {
        self.rows.iter().chain(&self.cols).map(|&v| v as f64).collect()
    }
}

/// Row sums concatenated with column sums (length 480).
pub fn rcs_features(frame: &SilhouetteFrame) -> RcsVector {
    RcsVector::of_image(frame.image())
}
