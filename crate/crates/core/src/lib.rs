//! Cross-sensor methane plume detection on synthetic column-matched-filter
//! tiles: scene simulation, dataset curation, normalization, an antialiased
//! inception classifier, block-freezing transfer learning and CycleGAN
//! domain translation, plus the experiment harness that ties them together.

pub mod adaptation;
pub mod classifier;
pub mod config;
pub mod cmft;
pub mod curation;
pub mod data;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod metrics;
pub mod normalization;
pub mod rng;
pub mod synthkit;
pub mod translation;
pub mod types;

pub use error::{Error, Result};
pub use types::{Domain, Label, Split};
