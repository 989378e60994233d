//! Grounded language modeling over entity mask proposals, at desk scale.
//!
//! The pipeline: a synthetic scene produces class-agnostic mask proposals
//! and two feature maps; masked pooling plus projection turns each
//! proposal into a visual entity token; a small causal LM consumes the
//! entity prefix and conversation text; groundable phrases delimited by
//! `<GRD>`/`</GRD>` are resolved to segmentation masks by scoring every
//! proposal and max-merging; training mixes dice, BCE, box-projection,
//! and LM losses with exact analytic gradients.

pub mod data;
pub mod error;
pub mod eval;
pub mod feature;
pub mod grounding;
pub mod io;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seeds;

pub use error::{Error, Result};
