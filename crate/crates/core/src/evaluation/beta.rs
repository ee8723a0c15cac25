use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::sweep::{sweep, SweepConfig, SweepResult};
use crate::factor::{fit, FitConfig, FitReport};
use crate::inversion::{build_dataset, InversionConfig, LossSpec, TrajectoryConfig, TransformKind};
use crate::vae::{synth_dataset, train_vae, SpriteDatasetSpec, VaeConfig};

/// End-to-end comparison of decoders trained at several KL weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaStudyConfig {
    pub betas: Vec<f64>,
    pub dataset: SpriteDatasetSpec,
    /// `beta` is overridden per run.
    pub vae: VaeConfig,
    pub kind: TransformKind,
    pub trajectory: TrajectoryConfig,
    pub loss: LossSpec,
    pub inversion: InversionConfig,
    pub fit: FitConfig,
    pub sweep: SweepConfig,
    pub seed: u64,
}

impl Default for BetaStudyConfig {
    fn default() -> Self {
        Self {
            betas: vec![1.0, 4.0],
            dataset: SpriteDatasetSpec::default(),
            vae: VaeConfig::default(),
            kind: TransformKind::TranslateX,
            trajectory: TrajectoryConfig::default(),
            loss: LossSpec::default(),
            inversion: InversionConfig::default(),
            fit: FitConfig::default(),
            sweep: SweepConfig::default(),
            seed: 0,
        }
    }
}

impl BetaStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::InvalidParameter(
                "beta study needs at least one beta".into(),
            ));
        }
        if let Some(b) = self.betas.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "beta must be finite and >= 0, got {b}"
            )));
        }
        self.dataset.validate()?;
        self.vae.validate()?;
        self.trajectory.validate()?;
        self.loss.validate()?;
        self.inversion.validate()?;
        self.sweep.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaResult {
    pub beta: f64,
    pub final_vae_loss: f64,
    pub fit: FitReport,
    pub sweep: SweepResult,
    /// Mean sweep std over the central half of the grid.
    pub central_std: f64,
}

/// Trains one decoder per β on the same data and scores the recovered
/// direction's sweep spread. Failures carry the offending β.
pub fn beta_comparison(config: &BetaStudyConfig) -> Result<Vec<BetaResult>> {
    config.validate()?;
    let data = synth_dataset(&config.dataset)?;
    config
        .betas
        .iter()
        .map(|&beta| run_one(config, &data, beta).map_err(|e| e.tagged(format!("beta {beta}"))))
        .collect()
}

fn run_one(
    config: &BetaStudyConfig,
    data: &crate::vae::SpriteDataset,
    beta: f64,
) -> Result<BetaResult> {
    let vae_cfg = VaeConfig {
        beta,
        ..config.vae.clone()
    };
    let trained = train_vae(&vae_cfg, data)?;
    let final_vae_loss = trained.curve.last().map_or(f64::NAN, |r| r.loss);
    let gen = &trained.decoder;
    let traj = build_dataset(
        gen,
        config.kind,
        &config.trajectory,
        &config.loss,
        &config.inversion,
        config.seed,
    )?;
    let (model, fit) = fit(&traj, &config.fit)?;
    let sweep = sweep(gen, &model, &config.sweep)?;
    Ok(BetaResult {
        beta,
        final_vae_loss,
        fit,
        central_std: sweep.central_mean_std(),
        sweep,
    })
}
