//! Score-based generation of bounded 3D indoor layouts: oriented boxes
//! conditioned on a floor plan and object categories, sampled with a
//! second-order stochastic sampler and usable for completion, re-arrangement,
//! coarse-spec generation and retrieval refinement.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod nn;
pub mod sampler;
pub mod scene;
pub mod sse;
pub mod train;

pub use error::{Error, Result};
