//! Reverse-mode automatic differentiation on dense f64 tensors.
//!
//! A [`Graph`] records operations eagerly as they are applied; a single
//! reverse sweep from a scalar loss yields gradients for every differentiable
//! leaf. The op set is exactly what the animation stack needs: elementwise
//! math, matrix products, strided temporal (de)convolution, layer norm,
//! softmax attention pieces, gathering and concatenation, reductions, and a
//! weighted pivot rotation for jaw articulation.
//!
//! Everything is deterministic: no threading, no hidden RNG, iteration order
//! fixed by node creation order. [`check`] provides the central
//! finite-difference harness used to verify every backward implementation.

#![allow(clippy::needless_range_loop)]

mod adam;
pub mod battery;
pub mod check;
mod error;
mod graph;
mod kernels;
pub mod nn;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::NdError;
pub use graph::{Gradients, Graph, NodeId};
pub use kernels::{rotation_matrix, SMALL_ANGLE};
pub use tensor::Tensor;
