//! Reconstruction losses, masked image transforms, norm-ball constrained
//! inversion and warm-started trajectory datasets.

mod dataset;
mod loss;
mod solve;
mod transform;

pub use dataset::{
    build_dataset, filter_records, DatasetProvenance, FilterRule, TrajectoryConfig,
    TrajectoryDataset, TrajectoryRecord,
};
pub use loss::{freq_weighted_spectral, random_phase_energy, recon_loss, LossSpec};
pub use solve::{
    invert, project_ball, recursive_trajectory, InversionConfig, InversionResult, TrajectoryStep,
};
pub use transform::{transform_apply, MaskedImage, TransformKind, TransformSpec};
