//! Adaptive-capacity crowd density estimation.
//!
//! A shallow multi-column *coarse* network estimates a full-resolution
//! density map, the densest regions of that map are routed through a deep
//! *fine* network, and a small *smooth* network fuses the stitched result.
//! Everything here is pure computation over `alloc` buffers; file formats,
//! image decoding and the command line live in the `acm` crate.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod attention;
pub mod density;
pub mod error;
pub mod eval;
pub mod graph;
mod kernels;
pub mod model;
pub mod policy;
pub mod synth;
pub mod tensor;
pub mod train;

pub use attention::{AttentionConfig, AttentionPlan, Rect, RegionSize};
pub use density::{Annotation, DensityMap, KernelParams};
pub use error::{Error, Result};
pub use eval::EvalResult;
pub use graph::{Graph, Var};
pub use model::{ModelBundle, Preset, Variant};
pub use policy::DensityClass;
pub use tensor::Tensor;
pub use train::{Adam, AdamConfig, LossReport, RoiMask, Trainer};
