//! Toolkit for scoring class-agnostic and panoptic segmentation, suppressing
//! camera-induced optical flow, analysing class prototypes, and training a
//! prototype-distance open-set segmentation head on ingested embeddings.
//!
//! Modules map one-to-one onto the toolkit's subsystems:
//!
//! - [`label`]: label maps, segment extraction, IoU, contingency tables, PNG codec
//! - [`metrics`]: IoU > 0.5 matching, SQ/RQ/CAQ, PQ (All/Th/St), CA-IoU
//! - [`egoflow`]: ego flow from depth + pose, suppression, flow codecs, colorization
//! - [`prototypes`]: masked average pooling, distances, agglomerative clustering
//! - [`openset`]: distance head, losses, analytic gradients, SGD training
//! - [`harness`]: manifests, synthetic scenes, dataset evaluation, statistics

pub mod egoflow;
mod error;
pub mod harness;
pub mod label;
pub mod metrics;
pub mod openset;
pub(crate) mod pngio;
pub mod prototypes;

pub use error::{Error, Result};
