//! Online multi-object tracking by detection.
//!
//! Trajectories are linked to per-frame detections with a Hungarian solve
//! over a weighted mix of box overlap and identity-embedding similarity.
//! Trajectories that lose their detection are paused in a bounded buffer
//! and can be recovered later by appearance alone.
//!
//! Alongside the tracker the crate ships a CLEAR-MOT evaluator, a
//! deterministic scene simulator for frame-rate experiments, MOT-format
//! readers/writers and a set of numerical kernels (correlation layer,
//! inter-frame regression targets, loss terms, OIM look-up table).

pub mod affinity;
pub mod assignment;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod pipeline;
pub mod sim;
pub mod tracker;

pub use affinity::{AffinityMatrix, AffinityWeights};
pub use assignment::Assignment;
pub use error::{Error, Result};
pub use geometry::{BBox, Detection, LossWeights};
pub use metrics::MotReport;
pub use sim::SimConfig;
pub use tracker::{TrackOutput, Tracker, TrackerConfig, Trajectory};
