use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use latentctl::diffgen::SpriteWorldConfig;
use latentctl::evaluation::{BetaStudyConfig, EstimatorKind, SweepConfig};
use latentctl::factor::{FitConfig, TargetDensity};
use latentctl::inversion::{InversionConfig, LossSpec, TrajectoryConfig, TransformKind};
use latentctl::numerics::derive_seed;
use latentctl::vae::{SpriteDatasetSpec, VaeConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SynthData,
    TrainVae,
    GenTrajectories,
    FitDirection,
    Sweep,
    Resample,
    InvertOne,
    AnalyzeCurvature,
    CompareLosses,
    BetaStudy,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::TrainVae => "train-vae",
            Command::GenTrajectories => "gen-trajectories",
            Command::FitDirection => "fit-direction",
            Command::Sweep => "sweep",
            Command::Resample => "resample",
            Command::InvertOne => "invert-one",
            Command::AnalyzeCurvature => "analyze-curvature",
            Command::CompareLosses => "compare-losses",
            Command::BetaStudy => "beta-study",
        }
    }
}

/// Input and output locations. Relative paths resolve against the working
/// directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// DGN1 decoder; the `[sprite]` world is used when absent.
    pub generator: Option<PathBuf>,
    /// SPR1 image set.
    pub data: Option<PathBuf>,
    /// TRJ1 trajectory dataset.
    pub trajectories: Option<PathBuf>,
    /// ENC1 encoding model.
    pub model: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Factor law to resample towards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// The model's own induced law; resampling is then the identity.
    Induced,
}

impl TargetSpec {
    pub fn density(&self, model: &latentctl::factor::EncodingModel) -> TargetDensity {
        match *self {
            TargetSpec::Uniform { lo, hi } => TargetDensity::Uniform { lo, hi },
            TargetSpec::Gaussian { mean, sd } => TargetDensity::Gaussian { mean, sd },
            TargetSpec::Induced => TargetDensity::Induced(model.clone()),
        }
    }

    /// Closed-form CDF where one exists.
    pub fn cdf(&self) -> Option<Box<dyn Fn(f64) -> f64>> {
        match *self {
            TargetSpec::Uniform { lo, hi } => {
                Some(Box::new(move |t| ((t - lo) / (hi - lo)).clamp(0.0, 1.0)))
            }
            TargetSpec::Gaussian { mean, sd } => Some(Box::new(move |t| {
                latentctl::numerics::std_normal_cdf((t - mean) / sd)
            })),
            TargetSpec::Induced => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResampleBlock {
    pub target: TargetSpec,
    pub count: usize,
    pub estimator: EstimatorKind,
}

impl Default for ResampleBlock {
    fn default() -> Self {
        Self {
            target: TargetSpec::Uniform {
                lo: -0.25,
                hi: 0.25,
            },
            count: 10_000,
            estimator: EstimatorKind::BarycenterX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvertBlock {
    /// Transform amount applied to the generated target.
    pub t: f64,
}

impl Default for InvertBlock {
    fn default() -> Self {
        Self { t: 8.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvatureBlock {
    /// Grid on `[0, t_max]`.
    pub t_max: f64,
    pub points: usize,
    /// Also write the gradient-norm profile under `[loss]`.
    pub gradient_profile: bool,
}

impl Default for CurvatureBlock {
    fn default() -> Self {
        Self {
            t_max: 16.0,
            points: 21,
            gradient_profile: true,
        }
    }
}

impl CurvatureBlock {
    pub fn grid(&self) -> Vec<f64> {
        let n = self.points.max(2) - 1;
        (0..=n).map(|k| self.t_max * k as f64 / n as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareBlock {
    pub sigmas: Vec<f64>,
    pub targets: usize,
    /// Amplitude of the 2 px checker added to each generated target.
    pub texture: f64,
}

impl Default for CompareBlock {
    fn default() -> Self {
        Self {
            sigmas: vec![1.0, 3.0, 5.0, 8.0],
            targets: 4,
            texture: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaBlock {
    pub betas: Vec<f64>,
}

impl Default for BetaBlock {
    fn default() -> Self {
        Self {
            betas: vec![1.0, 20.0],
        }
    }
}

/// One pipeline stage and everything it reads. Stage seeds are derived from
/// `seed`; seed fields inside stage blocks are overwritten.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_kind")]
    pub kind: TransformKind,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub sprite: SpriteWorldConfig,
    #[serde(default)]
    pub data: SpriteDatasetSpec,
    #[serde(default)]
    pub vae: VaeConfig,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub resample: ResampleBlock,
    #[serde(default)]
    pub invert: InvertBlock,
    #[serde(default)]
    pub curvature: CurvatureBlock,
    #[serde(default)]
    pub compare: CompareBlock,
    #[serde(default)]
    pub beta: BetaBlock,
}

fn default_kind() -> TransformKind {
    TransformKind::TranslateX
}

// stream ids for per-stage seeds
const DATA: u64 = 1;
const VAE: u64 = 2;
const TRAJECTORY: u64 = 3;
const FIT: u64 = 4;
const SWEEP: u64 = 5;
const EXTRA: u64 = 6;

impl RunConfig {
    pub fn new(command: Command) -> Self {
        toml::from_str(&format!("command = \"{}\"", command.name())).expect("defaults parse")
    }

    /// Replaces the global seed and re-derives every stage seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = derive_seed(seed, DATA);
        self.vae.seed = derive_seed(seed, VAE);
        self.fit.seed = derive_seed(seed, FIT);
        self.sweep.seed = derive_seed(seed, SWEEP);
        self
    }

    pub fn trajectory_seed(&self) -> u64 {
        derive_seed(self.seed, TRAJECTORY)
    }

    /// Seed for draws owned by the CLI itself (targets, sample latents).
    pub fn extra_seed(&self) -> u64 {
        derive_seed(self.seed, EXTRA)
    }

    pub fn validate(&self) -> CliResult<()> {
        let check = |r: latentctl::Result<()>, block: &str| {
            r.map_err(|e| CliError::Config(format!("[{block}]: {e}")))
        };
        check(self.sprite.build().map(|_| ()), "sprite")?;
        check(self.data.validate(), "data")?;
        check(self.vae.validate(), "vae")?;
        check(self.trajectory.validate(), "trajectory")?;
        check(self.loss.validate(), "loss")?;
        check(self.inversion.validate(), "inversion")?;
        check(self.fit.validate(), "fit")?;
        check(self.sweep.validate(), "sweep")?;
        if self.resample.count == 0 {
            return Err(CliError::Config(
                "[resample]: count must be positive".into(),
            ));
        }
        if !self.invert.t.is_finite() {
            return Err(CliError::Config("[invert]: t must be finite".into()));
        }
        if self.curvature.points < 2 || !self.curvature.t_max.is_finite() {
            return Err(CliError::Config(
                "[curvature]: need >= 2 points and a finite t_max".into(),
            ));
        }
        if self.compare.sigmas.is_empty() || self.compare.targets == 0 {
            return Err(CliError::Config(
                "[compare]: need sigmas and at least one target".into(),
            ));
        }
        if self.beta.betas.is_empty() {
            return Err(CliError::Config("[beta]: betas must be non-empty".into()));
        }
        Ok(())
    }

    pub fn beta_study(&self) -> BetaStudyConfig {
        BetaStudyConfig {
            betas: self.beta.betas.clone(),
            dataset: self.data.clone(),
            vae: self.vae.clone(),
            kind: self.kind,
            trajectory: self.trajectory.clone(),
            loss: self.loss,
            inversion: self.inversion.clone(),
            fit: self.fit.clone(),
            sweep: self.sweep.clone(),
            seed: self.trajectory_seed(),
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }
}

/// Parses, applies defaults, derives stage seeds and validates.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let seed = cfg.seed;
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}
