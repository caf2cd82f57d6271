//! Gait biometrics toolkit: silhouette preprocessing, gait templates, pose
//! features, subspace learning, recognition and authentication.

pub mod auth;
pub mod classify;
pub mod dataset;
pub mod error;
pub mod features;
pub mod gts;
pub mod harness;
pub mod image;
pub mod pbv;
pub mod persist;
pub mod preprocess;
pub mod rng;
pub mod subspace;
pub mod synth;
pub mod templates;
pub mod viewest;

pub use error::{GaitError, Result};
