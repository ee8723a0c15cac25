//! Procedural sprite datasets and β-VAE training.

mod dataset;
mod train;

pub use dataset::{synth_dataset, PositionLaw, RadiusLaw, SpriteDataset, SpriteDatasetSpec};
pub use train::{train_vae, vae_loss, write_curve_csv, CurveRow, TrainedVae, VaeConfig, VaeLoss};
