//! Hierarchical Dirichlet scaling process topic model.
//!
//! Topics come from a truncated stick-breaking prior; each document draws
//! gamma weights over the shared topics whose rates are set by a scaling
//! function of the document's labels, then normalizes them. Inference is
//! mean-field coordinate ascent on a Taylor-linearized lower bound.

pub mod cli;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod scaling;
pub mod synth;

pub use error::{HdspError, Result};
pub use inference::{fit, FitConfig, Fitted, Model};
pub use model::{Corpus, Document, HyperParams, ScalingKind};
