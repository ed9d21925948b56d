//! Panoptic segmentation fusion and evaluation on run-length-encoded masks.
//!
//! Instance predictions from category experts are merged by routing, semantic
//! confidence maps from several models are averaged, and the two are fused
//! into non-overlapping panoptic segments. PQ, mIoU and COCO-style mAP score
//! the results against COCO panoptic ground truth.
//!
//! Per-image work runs on rayon when the `parallel` feature is on (the
//! default). Results never depend on the worker count.

pub mod coco;
pub mod ensemble;
pub mod error;
pub mod expert;
pub mod fusion;
pub mod mask;
pub mod metrics;
pub mod par;
pub mod synth;
pub mod visual;

pub use error::{Error, Result};
pub use mask::{BBox, BinaryMask, LabelMap, ScoredInstance, VOID};
