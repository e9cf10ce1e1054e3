//! Discrete pairwise Markov/conditional random fields trained by
//! differentiating through approximate marginal inference.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! threads or clocks lives in the `margfit` companion crate.
//!
//! Layout of the crate:
//!
//! * [`model`] graphs, parameter/marginal tables and labelings
//! * [`exact`] enumeration and tree inference used as ground truth
//! * [`infer`] mean field and tree-reweighted belief propagation
//! * [`losses`] likelihood-style and marginal-based losses
//! * [`grad`] perturbation, truncated backpropagation and implicit differentiation
//! * [`trainer`] linear feature models, empirical risk and L-BFGS
//! * [`data`] synthetic chain and denoising generators
#![no_std]
// `!(x > 0.0)` rejects NaN on purpose; index loops walk parallel tables.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod exact;
pub mod grad;
pub mod infer;
pub mod losses;
pub mod model;
pub(crate) mod numeric;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Graph, Labeling, Marginals, Params, Tables};
