//! Discovery and control of continuous factors of variation in the latent
//! space of differentiable image generators.
//!
//! The pipeline inverts a generator along progressively transformed copies of
//! a generated image, fits a monotone scalar encoding `t = g(<u, z>)` to the
//! resulting latent trajectories, and uses the fitted model for control,
//! density estimation and resampling. An analytic sprite generator with known
//! factor directions serves as ground truth.

// `!(x > 0.0)` rejects NaN along with the bound; indexed loops mirror the maths
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diffgen;
pub mod error;
pub mod evaluation;
pub mod factor;
pub mod inversion;
pub mod numerics;
pub mod parallel;
pub mod vae;

pub use error::{Error, Result};

pub use numerics::ImageGrid;
