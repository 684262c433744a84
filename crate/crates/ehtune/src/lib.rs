//! Two-stage head-first finetuning for small transformer encoders.
//!
//! Stage 1 trains a fresh classification head (plus a parameter-efficient
//! attachment: bias-only, low-rank, or prefix) on a frozen-body backbone;
//! the backbone is then restored to its pretrained weights and stage 2 runs
//! a full finetune with the stage-1 head. The crate also ships the
//! measurement side: feature drift, parameter distance, convergence
//! statistics, and 2-D projections.

pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod head;
pub mod metrics;
pub mod numcore;
pub mod pet;
pub mod report;
pub mod tasks;
pub mod trainer;

pub use error::{EhError, Result};
