use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{estimate_factor, EstimatorKind};
use crate::diffgen::{Generator, Latent};
use crate::error::{Error, Result};
use crate::factor::EncodingModel;
use crate::numerics::{derive_seed, rng_for};
use crate::parallel::try_map_indexed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Grid half-width `T` in units of `⟨z, u⟩`.
    pub t_max: f64,
    pub points: usize,
    pub samples: usize,
    pub estimator: EstimatorKind,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            t_max: 0.6,
            points: 21,
            samples: 64,
            estimator: EstimatorKind::BarycenterX,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidParameter(
                "sweep half-width must be positive".into(),
            ));
        }
        if self.points < 2 {
            return Err(Error::InvalidParameter(
                "sweep needs >= 2 grid points".into(),
            ));
        }
        if self.samples < 2 {
            return Err(Error::InvalidParameter(
                "sweep needs >= 2 samples per point".into(),
            ));
        }
        Ok(())
    }

    /// Evenly spaced, symmetric grid on `[-T, T]`.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.points - 1;
        (0..=n)
            .map(|k| {
                // |2k - n| is the same for k and n - k, so the grid is exactly symmetric
                let mag = self.t_max * (2 * k).abs_diff(n) as f64 / n as f64;
                if 2 * k < n {
                    -mag
                } else {
                    mag
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: f64,
    /// Mean of the defined estimates; NaN when none is defined.
    pub mean: f64,
    /// Sample standard deviation of the defined estimates; NaN when fewer
    /// than two are defined.
    pub std: f64,
    pub count: usize,
    pub undefined: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub generator_id: String,
    pub model_id: String,
}

impl SweepResult {
    /// Average std over the rows with `|t| ≤ T/2`.
    pub fn central_mean_std(&self) -> f64 {
        let t_max = self.rows.iter().map(|r| r.t.abs()).fold(0.0, f64::max);
        let central: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.t.abs() <= 0.5 * t_max + 1e-12 && r.std.is_finite())
            .map(|r| r.std)
            .collect();
        central.iter().sum::<f64>() / central.len() as f64
    }

    pub fn max_std(&self) -> f64 {
        self.rows.iter().map(|r| r.std).fold(f64::NAN, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Moves `z` to coordinate `t` along `u`: `z − ⟨z, u⟩u + t·u`.
pub fn place_on_direction(z: &Latent, u: &Latent, t: f64) -> Latent {
    z.add_scaled(t - u.dot(z), u)
}

/// Measures the factor on `G(z − ⟨z,u⟩u + t·u)` for every grid value `t` and
/// sample `z_k ~ N(0, I)`; sample `k` is drawn from `derive_seed(seed, k)`
/// and reused across the grid.
pub fn sweep<G: Generator + ?Sized>(
    generator: &G,
    model: &EncodingModel,
    config: &SweepConfig,
) -> Result<SweepResult> {
    config.validate()?;
    let d = generator.latent_dim();
    if model.dim() != d {
        return Err(Error::shape(format!("model of dimension {d}"), model.dim()));
    }
    let grid = config.grid();
    let s = config.samples;
    let cells = try_map_indexed(grid.len() * s, |c| {
        let (ti, k) = (c / s, c % s);
        let z = Latent::sample_standard(d, &mut rng_for(derive_seed(config.seed, k as u64)));
        let img = generator.forward(&place_on_direction(&z, model.direction(), grid[ti]))?;
        Ok::<_, Error>(estimate_factor(&img, config.estimator))
    })?;
    let rows = grid
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let vals: Vec<f64> = cells[ti * s..(ti + 1) * s]
                .iter()
                .flatten()
                .copied()
                .collect();
            let n = vals.len();
            let mean = if n > 0 {
                vals.iter().sum::<f64>() / n as f64
            } else {
                f64::NAN
            };
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                f64::NAN
            };
            SweepRow {
                t,
                mean,
                std,
                count: n,
                undefined: s - n,
            }
        })
        .collect();
    Ok(SweepResult {
        rows,
        generator_id: String::new(),
        model_id: String::new(),
    })
}
