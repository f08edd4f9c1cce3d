//! Desk-scale laboratory for LLM watermarking and spoofing.
//!
//! Everything runs over a seeded, order-k toy language model with exact
//! next-token distributions, so watermark generation and detection, the
//! local-capacity mathematics, and the full reward-and-training stack are
//! executable and property-testable on a laptop:
//!
//! - [`toylm`] — the toy model: exact, reproducible next-token laws.
//! - [`watermark`] — KGW / Unigram / SWEET / EWD logit watermarks and a
//!   keyed distortion-free sampling scheme, with their detectors.
//! - [`capacity`] — binary-KL machinery, the capacity supremum, and the
//!   local redistribution bound.
//! - [`reward`] — surrogate distributions, capacity-aware token rewards,
//!   sigmoid-scaled semantic rewards, group normalization.
//! - [`policy`] — tabular softmax policy with analytic gradients, trained
//!   by a group-ratio objective with exact KL regularization and a
//!   cross-entropy anchor.
//! - [`evalkit`] — pair datasets, spoof-rate metrics, score distributions,
//!   ablation grids.
//! - [`config`] / [`cli`] — run configuration files and the command-line
//!   pipeline.
//!
//! See the crate examples for one runnable walkthrough per capability.

pub mod capacity;
pub mod cli;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod hashing;
pub mod policy;
pub mod reward;
pub mod toylm;
pub mod watermark;

pub use error::{Error, Result};
