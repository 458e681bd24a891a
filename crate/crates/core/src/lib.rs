//! Post-network stages of a joint detection and segmentation cell tracker.
//!
//! Class-probability maps produced by an external detector are turned into
//! cell detections ([`detection`]), linked into trajectories with IOU
//! association and mitosis detection ([`tracker`]), and split into per-cell
//! instance masks with nearest-centroid assignment ([`segmentation`]).
//! [`synth`] generates ground-truth sequences for testing, [`metrics`]
//! scores results, and [`ctc_io`] reads and writes Cell Tracking Challenge
//! file conventions. [`dataprep`] holds the training-side arithmetic
//! (weighted loss, weight maps, mitotic relabeling, cropping).

pub mod ctc_io;
pub mod dataprep;
pub mod detection;
mod error;
pub mod imaging;
pub mod metrics;
pub mod segmentation;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
