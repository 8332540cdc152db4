//! Semi-supervised image classification with MixMatch and a pseudo-label
//! based balance correction, plus the experiment harness that measures the
//! correction's effect under labelled-set class imbalance.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`tape`] — a minimal reverse-mode autodiff substrate.
//! - [`model`] — a small configurable CNN classifier.
//! - [`augment`] — flip/right-angle-rotation image transforms.
//! - [`optim`] — Adam with decoupled weight decay and a 1-cycle schedule.
//! - [`mixmatch`] — pseudo-labelling, sharpening, MixUp and the composite
//!   semi-supervised objective.
//! - [`pbc`] — inverse-frequency class weights applied to both loss terms.
//! - [`data`] — synthetic data, image-directory loading and imbalance
//!   scenario sampling.
//! - [`stats`] — the Wilcoxon signed-rank test.
//! - [`experiment`] / [`summary`] — the multi-seed training grid and its
//!   statistical reports.
//! - [`cli`] — the `sslb` command-line front end.
//!
//! The `examples/` directory holds one runnable walk-through per capability;
//! start with `autodiff_gradcheck` and `mixmatch_pipeline`.

pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod mixmatch;
pub mod model;
pub mod optim;
pub mod pbc;
pub mod stats;
pub mod summary;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};

/// Entry point for the `sslb` binary; returns the process exit code.
pub fn run() -> i32 {
    cli::run()
}
