//! Detection and decoding of planar fiducial tags in multi-beam LiDAR scans.
//!
//! The pipeline runs edge detection, clustering, cluster validation, partial pose
//! estimation, template alignment and weighted voting over a [`Scan`]. The [`synth`]
//! module renders ground-truth scans used throughout the tests.
//!
//! Geometric code is generic over [`Real`] (`f32` or `f64`); the aliases below name the
//! common concrete types.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod codebook;
pub mod detection;
pub mod pipeline;
pub mod pointcloud;
pub mod pose;
pub mod scalar;
pub mod synth;
pub mod voting;

pub use pipeline::{DetectionReport, Detector, DetectorConfig, StageTimings};
pub use scalar::Real;

pub type PointF64 = pointcloud::Point<f64>;
pub type PointF32 = pointcloud::Point<f32>;
pub type ScanF64 = pointcloud::Scan<f64>;
pub type ScanF32 = pointcloud::Scan<f32>;
