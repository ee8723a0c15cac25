use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EncodingModel, PiecewiseLinearFn};
use crate::diffgen::Latent;
use crate::error::{Error, Result};
use crate::inversion::{TrajectoryDataset, TrajectoryRecord};
use crate::numerics::{rng_for, Adam, AdamParams};
use crate::parallel::sum_chunks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Records per step; 0 means the full dataset.
    pub batch_size: usize,
    /// Odd knot count on `[-knot_range, knot_range]`.
    pub knots: usize,
    pub knot_range: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 3000,
            batch_size: 0,
            knots: 17,
            knot_range: 3.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(
                "learning rate must be positive".into(),
            ));
        }
        PiecewiseLinearFn::uniform_knots(self.knots, self.knot_range)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Full-dataset MSE at the start of each epoch.
    pub curve: Vec<f64>,
}

/// Fits `(u, g)` to a trajectory dataset; see [`fit_records`].
pub fn fit(dataset: &TrajectoryDataset, config: &FitConfig) -> Result<(EncodingModel, FitReport)> {
    fit_records(dataset.dim, &dataset.records, config)
}

struct Problem<'a> {
    records: &'a [TrajectoryRecord],
    knots: Vec<f64>,
    d: usize,
}

impl Problem<'_> {
    fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    fn g_of(&self, theta: &[f64]) -> PiecewiseLinearFn {
        let slopes: Vec<f64> = theta.iter().map(|t| t * t).collect();
        PiecewiseLinearFn::from_slopes(self.knots.clone(), &slopes)
            .expect("squared slopes are valid")
    }

    /// Mean squared error over `idx` and its gradient with respect to
    /// `params = [u, θ]` (u treated as free, no normalisation).
    fn loss_grad(&self, params: &[f64], idx: &[usize]) -> (f64, Vec<f64>) {
        let (d, k) = (self.d, self.segments());
        let (u, theta) = params.split_at(d);
        let g = self.g_of(theta);
        let m = idx.len() as f64;
        let acc = sum_chunks(idx.len(), 1 + d + k, |j, acc| {
            let r = &self.records[idx[j]];
            let a0 = dot(u, &r.z0);
            let a1 = dot(u, &r.z_dt);
            let res = g.eval(a1) - g.eval(a0) - r.dt;
            acc[0] += res * res;
            let (g0, g1) = (g.derivative(a0), g.derivative(a1));
            for c in 0..d {
                acc[1 + c] += 2.0 * res * (g1 * r.z_dt[c] - g0 * r.z0[c]);
            }
            let mut w0 = vec![0.0; k];
            let mut w1 = vec![0.0; k];
            g.segment_weights(a0, &mut w0);
            g.segment_weights(a1, &mut w1);
            for s in 0..k {
                acc[1 + d + s] += 2.0 * res * (w1[s] - w0[s]) * 2.0 * theta[s];
            }
        });
        let loss = acc[0] / m;
        let grad = acc[1..].iter().map(|v| v / m).collect();
        (loss, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalise(u: &mut [f64]) -> Result<()> {
    let n = dot(u, u).sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvariantViolation(
            "direction collapsed to zero".into(),
        ));
    }
    u.iter_mut().for_each(|v| *v /= n);
    Ok(())
}

/// Minimises the mean of `(g(⟨u, z_δt⟩) − g(⟨u, z₀⟩) − δt)²` with Adam on
/// `u` and square-root slopes, renormalising `u` after every step.
///
/// `u` starts at the δt-weighted mean displacement, oriented so that the
/// regression slope of δt on the projected displacement is positive; every
/// slope starts at that regression slope.
pub fn fit_records(
    dim: usize,
    records: &[TrajectoryRecord],
    config: &FitConfig,
) -> Result<(EncodingModel, FitReport)> {
    config.validate()?;
    if records.len() < 2 {
        return Err(Error::DatasetTooSmall(format!(
            "fit needs >= 2 records, got {}",
            records.len()
        )));
    }
    if records.iter().all(|r| r.dt == records[0].dt) {
        return Err(Error::DatasetTooSmall(
            "fit needs records with distinct δt".into(),
        ));
    }
    if records
        .iter()
        .any(|r| r.z0.dim() != dim || r.z_dt.dim() != dim)
    {
        return Err(Error::shape(
            format!("records of dimension {dim}"),
            "mixed dimensions",
        ));
    }
    let problem = Problem {
        records,
        knots: PiecewiseLinearFn::uniform_knots(config.knots, config.knot_range)?,
        d: dim,
    };
    let k = problem.segments();

    let mut u = vec![0.0; dim];
    for r in records {
        for c in 0..dim {
            u[c] += r.dt * (r.z_dt[c] - r.z0[c]);
        }
    }
    if normalise(&mut u).is_err() {
        u = Latent::basis(dim, 0).into_vec();
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in records {
        let da = dot(&u, &r.z_dt) - dot(&u, &r.z0);
        sxy += r.dt * da;
        sxx += da * da;
    }
    let mut slope = if sxx > 0.0 { sxy / sxx } else { 1.0 };
    if slope < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
        slope = -slope;
    }
    let theta0 = slope.max(1e-6).sqrt();
    let mut params: Vec<f64> = u
        .into_iter()
        .chain(std::iter::repeat_n(theta0, k))
        .collect();

    let mut adam = Adam::new(params.len(), AdamParams::with_lr(config.learning_rate));
    let mut rng = rng_for(config.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let full = config.batch_size == 0 || config.batch_size >= records.len();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grad) = problem.loss_grad(&params, &order);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                stage: "fit",
                step: epoch,
            });
        }
        curve.push(loss);
        if full {
            adam.step(&mut params, &grad)?;
            normalise(&mut params[..dim])?;
        } else {
            order.shuffle(&mut rng);
            for batch in order.clone().chunks(config.batch_size) {
                let (_, grad) = problem.loss_grad(&params, batch);
                adam.step(&mut params, &grad)?;
                normalise(&mut params[..dim])?;
            }
        }
    }
    let all: Vec<usize> = (0..records.len()).collect();
    let (final_mse, _) = problem.loss_grad(&params, &all);
    if !final_mse.is_finite() {
        return Err(Error::NonFinite {
            stage: "fit",
            step: config.epochs,
        });
    }
    let g = problem.g_of(&params[dim..]);
    let model = EncodingModel::new(Latent::new(params[..dim].to_vec())?, g)?;
    let initial_mse = curve.first().copied().unwrap_or(final_mse);
    Ok((
        model,
        FitReport {
            initial_mse,
            final_mse,
            curve,
        },
    ))
}
