//! Unsupervised remote photoplethysmography by hierarchical self-distillation
//! of temporal self-similarity.
//!
//! The pipeline: [`data`] yields video records, [`augment`] turns clips into
//! masked and clean difference views, [`model`] maps them to a pulse signal
//! and a similarity pyramid, [`distill`] trains an online network against an
//! EMA target, and [`eval`] scores heart rate on fixed-length clips.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod model;
pub mod signal;

pub use error::{Result, SspdError};
