//! Activation interchange: the ACTB tensor container, run manifests, and the
//! in-memory per-layer activation matrix.

mod activations;
mod actb;
mod manifest;

pub use activations::{center_columns, LayerActivations};
pub use actb::{
    decode, encode, read_header, read_tensor, write_tensor, TensorFile, TensorHeader, ACTB_MAGIC,
    ACTB_VERSION,
};
pub use manifest::{FileEntry, PromptSpans, RunManifest, Span, SpanClass, TensorKind};
