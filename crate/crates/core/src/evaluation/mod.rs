//! Factor estimators, direction sweeps, the β study and pixel-space
//! analyses of inversion difficulty.

mod analysis;
mod beta;
mod estimate;
mod sweep;

pub use analysis::{
    convergence_comparison, gradient_norm_profile, loss_comparison, pixel_trajectory_pca,
    sharpness, write_rows_csv, ConvergenceReport, CurvatureReport, LossComparisonRow,
};
pub use beta::{beta_comparison, BetaResult, BetaStudyConfig};
pub use estimate::{estimate_factor, ks_distance, EstimatorKind, BRIGHT_THRESHOLD};
pub use sweep::{place_on_direction, sweep, SweepConfig, SweepResult, SweepRow};
