//! Sequence-level semantic aggregation for video object detection, at desk scale.
//!
//! Proposal features from many frames of a video are linked by a learned
//! similarity, normalized with a softmax over the joint pool, and averaged into
//! each reference proposal before classification. The crate also carries the
//! random-walk / normalized-cut view of that similarity graph, a synthetic
//! multi-shot video benchmark, detection metrics with a motion split, Seq-NMS,
//! and an experiment runner.

pub mod config;
pub mod error;
pub mod eval;
pub mod proposal;
pub mod runner;
pub mod seed;
pub mod selsa;
pub mod spectral;
pub mod synthetic;
pub mod training;

pub use error::{Result, SelsaError};
