//! Versioned JSON envelopes for fitted models.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    model: T,
}

pub fn to_json<T: Serialize>(kind: &str, model: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        model,
    })?)
}

/// Rejects envelopes of another kind or format version.
pub fn from_json<T: DeserializeOwned>(kind: &str, s: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Header {
        format_version: u32,
        kind: String,
    }
    let h: Header = serde_json::from_str(s)?;
    if h.format_version != FORMAT_VERSION {
        return Err(GaitError::Config(format!("model format version {} is not supported (expected {FORMAT_VERSION})", h.format_version)));
    }
    if h.kind != kind {
        return Err(GaitError::Config(format!("expected a {kind} model, found {}", h.kind)));
    }
    Ok(serde_json::from_str::<Envelope<T>>(s)?.model)
}

pub fn save<T: Serialize>(path: &Path, kind: &str, model: &T) -> Result<()> {
    fs::write(path, to_json(kind, model)?).map_err(|e| GaitError::io(format!("writing {}", path.display()), e))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| GaitError::io(format!("reading {}", path.display()), e))?;
    from_json(kind, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::{pca_fit, PcaModel};
    use nalgebra::DMatrix;

    #[test]
    fn round_trip_and_guards() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.5, 2.0, 2.5, 3.0, 2.0]);
        let pca = pca_fit(&x, 0.99).unwrap();
        let s = to_json("pca", &pca).unwrap();
        assert!(s.contains("\"format_version\":1"));
        assert_eq!(from_json::<PcaModel>("pca", &s).unwrap(), pca);
        assert!(from_json::<PcaModel>("lda", &s).is_err());
        let bumped = s.replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(from_json::<PcaModel>("pca", &bumped), Err(GaitError::Config(_))));
    }
}
