//! Device-free sleep sensing from uplink sounding CSI.
//!
//! The crate is organised along the processing chain:
//!
//! - [`csi`]: CSI tensors, per-frame channel estimation, antenna-ratio
//!   normalisation and amplitude/phase features.
//! - [`trace`]: the little-endian `CSI5` binary trace format.
//! - [`sim`]: a seeded bistatic CSI generator with ground truth labels.
//! - [`resp`]: respiration-rate estimation (bandpass, subcarrier selection,
//!   peak detection, spectral concentration, modality selection).
//! - [`movement`]: movement energy statistics, event segmentation and
//!   fixed-shape classifier samples.
//! - [`dataset`]: on-disk sample tensors and their JSON manifest.
//! - [`nn`]: a small CNN with hand-written forward/backward passes.

pub mod csi;
pub mod dataset;
pub mod error;
pub mod movement;
pub mod nn;
pub mod resp;
pub mod rng;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
