//! Shared-subspace identification and causal interventions on transformer
//! residual streams.
//!
//! The crate is organised bottom-up:
//! - [`tensorstore`]: the ACTB activation container and run manifests.
//! - [`subspace`]: PCA variance bases, principal angles, GCCA with
//!   permutation rank selection, alignment and RSA.
//! - [`intervene`]: projectors, patching, ablation, isolation, cross-context
//!   transfer and bootstrap intervals.
//! - [`headlab`]: per-head patching, sign-flip FWER control, span attention
//!   mass and head/subspace metrics.
//! - [`toymodel`]: a small pre-norm decoder with an exact residual
//!   decomposition, the synthetic in-context task and its trainer.
//! - [`pipeline`]: end-to-end experiments wiring the pieces together.

pub mod error;
pub mod headlab;
pub mod intervene;
pub mod linalg;
pub mod pipeline;
pub mod provenance;
pub mod rng;
pub mod stats;
pub mod subspace;
pub mod tensorstore;
pub mod toymodel;

pub use error::{Error, Result};
