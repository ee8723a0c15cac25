use serde::{Deserialize, Serialize};

use super::{recon_loss, transform_apply, LossSpec, MaskedImage, TransformKind, TransformSpec};
use crate::diffgen::{Generator, Latent};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Ball radius; `None` means `√d`.
    pub radius: Option<f64>,
    /// Stop once the best loss improved by less than this over `window` steps.
    pub tolerance: f64,
    pub window: usize,
    /// Stop as soon as the loss is at or below this value.
    pub target_loss: Option<f64>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iterations: 500,
            radius: None,
            tolerance: 1e-9,
            window: 50,
            target_loss: None,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max iterations must be >= 1");
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return bad("projection radius must be positive");
            }
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be >= 0");
        }
        if self.window == 0 {
            return bad("stopping window must be >= 1");
        }
        Ok(())
    }

    pub fn radius_for(&self, d: usize) -> f64 {
        self.radius.unwrap_or((d as f64).sqrt())
    }
}

/// Euclidean projection onto the ball `‖z‖ ≤ radius`.
pub fn project_ball(z: &Latent, radius: f64) -> Latent {
    let n = z.norm();
    if n <= radius {
        z.clone()
    } else {
        let mut out = z.scaled(radius / n);
        // guard against rounding pushing the norm just past the radius
        while out.norm() > radius {
            out = out.scaled(1.0 - f64::EPSILON);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    /// Best iterate seen.
    pub z: Latent,
    pub loss: f64,
    /// Loss of every evaluated iterate, starting with the projected `z_init`.
    pub curve: Vec<f64>,
    /// Optimizer steps taken.
    pub iterations: usize,
}

/// Projected Adam on `loss(G(z), target)`. The starting point is projected
/// onto the ball first; every step is followed by a projection.
pub fn invert<G: Generator + ?Sized>(
    generator: &G,
    target: &MaskedImage,
    loss: &LossSpec,
    config: &InversionConfig,
    z_init: &Latent,
) -> Result<InversionResult> {
    config.validate()?;
    loss.validate()?;
    let d = generator.latent_dim();
    if z_init.dim() != d {
        return Err(Error::shape(
            format!("latent of dimension {d}"),
            z_init.dim(),
        ));
    }
    if target.is_fully_masked() {
        return Err(Error::EmptyMask);
    }
    let radius = config.radius_for(d);
    let mut z = project_ball(z_init, radius);
    let mut adam = Adam::new(d, AdamParams::with_lr(config.learning_rate));
    let mut best = (z.clone(), f64::INFINITY);
    let mut best_history = Vec::with_capacity(config.max_iterations + 1);
    let mut curve = Vec::with_capacity(config.max_iterations + 1);
    let mut steps = 0;
    loop {
        let img = generator.forward(&z)?;
        let (value, cot) = recon_loss(loss, &img, target)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                stage: "invert",
                step: steps,
            });
        }
        curve.push(value);
        if value < best.1 {
            best = (z.clone(), value);
        }
        best_history.push(best.1);
        if steps == config.max_iterations || config.target_loss.is_some_and(|t| value <= t) {
            break;
        }
        if steps >= config.window && best_history[steps - config.window] - best.1 < config.tolerance
        {
            break;
        }
        let grad = generator.vjp(&z, &cot)?;
        let mut next = z.into_vec();
        adam.step(&mut next, &grad)?;
        z = project_ball(
            &Latent::new(next).map_err(|_| Error::NonFinite {
                stage: "invert",
                step: steps,
            })?,
            radius,
        );
        steps += 1;
    }
    Ok(InversionResult {
        z: best.0,
        loss: best.1,
        curve,
        iterations: steps,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub delta: f64,
    pub z: Latent,
    pub loss: f64,
    pub iterations: usize,
}

/// Inverts `T_{δt_n}(G(z₀))` for each `δt_n` in turn, starting each solve
/// from the previous solution. Steps whose target mask is empty are skipped
/// and the recursion continues from the last solution.
pub fn recursive_trajectory<G: Generator + ?Sized>(
    generator: &G,
    z0: &Latent,
    kind: TransformKind,
    deltas: &[f64],
    loss: &LossSpec,
    config: &InversionConfig,
) -> Result<Vec<TrajectoryStep>> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument(
            "trajectory needs at least one step".into(),
        ));
    }
    if deltas.iter().any(|t| !t.is_finite()) || deltas.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument(
            "trajectory steps must be finite and strictly increasing".into(),
        ));
    }
    let origin = generator.forward(z0)?;
    let mut z = z0.clone();
    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let target = transform_apply(&origin, TransformSpec::new(kind, delta)?);
        if target.is_fully_masked() {
            continue;
        }
        let res = invert(generator, &target, loss, config, &z)?;
        z = res.z.clone();
        out.push(TrajectoryStep {
            delta,
            z: res.z,
            loss: res.loss,
            iterations: res.iterations,
        });
    }
    Ok(out)
}
