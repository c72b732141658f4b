//! Conditional variational autoencoders for dialogue generation whose latent
//! space is organized by per-category "gold" Gaussians, with the evaluation
//! suite used to judge them.

pub mod cli;
pub mod corpus;
pub mod gaussian;
pub mod goldpretrain;
pub mod latentmap;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod rng;
