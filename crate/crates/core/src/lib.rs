//! Speech-driven facial animation with separate control of what is said and
//! how it is felt.
//!
//! The pipeline: a linear blendshape face model ([`face`]) turns per-frame
//! motion parameters into meshes; a temporal autoencoder learns a smooth
//! motion prior; an animator maps speech features plus emotion, intensity,
//! and identity conditions into the prior's latent space; training measures
//! emotion and lip fidelity with sequence-level perceptual features and a
//! condition-swap scheme so the two factors stay independently controllable.
//! Everything runs on a synthetic corpus whose generating factors are known,
//! so fidelity is scored against exact oracles.

pub mod archive;
pub mod blocks;
pub mod error;
pub mod face;
pub mod perceptual;
pub mod prior;
pub mod seeds;
pub mod synthdata;

pub use error::{CoreError, Result};
