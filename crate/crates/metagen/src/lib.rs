//! Benchmark-and-model workbench for constrained industrial-system
//! generation on the nested-cylinder use case.
//!
//! The crate is organized around the pipeline:
//!
//! - [`domain`] — value types and the analytic physics (equilibrium, contact,
//!   point-cloud geometry).
//! - [`datagen`] — reproducible dataset synthesis and JSON Lines
//!   serialization.
//! - [`metrics`] — contact/performance errors, histogram dissimilarity, and
//!   sample-set evaluation.
//! - [`autodiff`] — a minimal reverse-mode tape with the layers and losses
//!   the models need, plus Adam and a finite-difference gradient checker.
//! - [`models`] — marginal VAEs, the Meta-VAE, its simplified variant, and
//!   the vanilla conditional VAE/GAN baselines.
//! - [`training`] — deterministic multi-seed experiment orchestration with
//!   resumable manifests and per-run CSV logs.

pub mod autodiff;
pub mod datagen;
pub mod domain;
pub mod metrics;
pub mod models;
pub mod training;
pub mod util;
