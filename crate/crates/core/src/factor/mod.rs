//! Monotone encoding models `t = g(⟨u, z⟩)`: fitting from trajectory data,
//! induced factor densities and latent resampling.

mod density;
mod fit;
mod model;

pub use density::{factor_density, resample_latent, ResampleGrid, Resampler, TargetDensity};
pub use fit::{fit, fit_records, FitConfig, FitReport};
pub use model::{direction_part_norms, predict_delta, EncodingModel, PiecewiseLinearFn, UNIT_TOL};
