use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffgen::{Generator, Latent};
use crate::error::{Error, Result};
use crate::inversion::{
    invert, recon_loss, recursive_trajectory, transform_apply, InversionConfig, LossSpec,
    MaskedImage, TransformKind, TransformSpec,
};
use crate::numerics::{dft2, pca_project_2d, ImageGrid};
use crate::parallel::try_map_indexed;

/// Pixel-space path of an image under a transform, projected to 2-D.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureReport {
    pub t: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub chord: [[f64; 2]; 2],
    /// Largest point-to-chord distance over chord length; 0 when degenerate.
    pub curvature: f64,
    /// Variance fraction captured by the two axes.
    pub explained: f64,
}

impl CurvatureReport {
    /// Rows `kind, t, x, y`; the chord endpoints come last.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["kind", "t", "x", "y"])?;
        for (t, p) in self.t.iter().zip(&self.points) {
            wtr.write_record([
                "trajectory".to_string(),
                t.to_string(),
                p[0].to_string(),
                p[1].to_string(),
            ])?;
        }
        for (t, p) in [self.t[0], *self.t.last().unwrap()].iter().zip(&self.chord) {
            wtr.write_record([
                "chord".to_string(),
                t.to_string(),
                p[0].to_string(),
                p[1].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    ((p[0] - a[0] - s * dx).powi(2) + (p[1] - a[1] - s * dy).powi(2)).sqrt()
}

/// Applies `kind` at each grid value, projects the image vectors on their
/// top two principal axes and scores how far the path bends away from the
/// straight chord between its endpoints.
pub fn pixel_trajectory_pca(
    image: &ImageGrid,
    kind: TransformKind,
    t_grid: &[f64],
) -> Result<CurvatureReport> {
    if t_grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "trajectory needs >= 2 grid points".into(),
        ));
    }
    let images: Vec<Vec<f64>> = t_grid
        .iter()
        .map(|&t| {
            Ok(transform_apply(image, TransformSpec::new(kind, t)?)
                .image()
                .values()
                .to_vec())
        })
        .collect::<Result<_>>()?;
    let flat = |points: Vec<[f64; 2]>, explained: f64| {
        let chord = [points[0], *points.last().unwrap()];
        CurvatureReport {
            t: t_grid.to_vec(),
            points,
            chord,
            curvature: 0.0,
            explained,
        }
    };
    if images.len() == 2 {
        let dist: f64 = images[0]
            .iter()
            .zip(&images[1])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        return Ok(flat(vec![[-dist / 2.0, 0.0], [dist / 2.0, 0.0]], 1.0));
    }
    let pca = pca_project_2d(&images)?;
    let explained = pca.explained_fraction().iter().sum();
    let points = pca.projections.clone();
    let (a, b) = (points[0], *points.last().unwrap());
    let chord_len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if pca.total_variance <= 0.0 || chord_len <= 1e-12 * (1.0 + pca.total_variance.sqrt()) {
        return Ok(flat(points, explained));
    }
    let bend = points
        .iter()
        .map(|&p| distance_to_segment(p, a, b))
        .fold(0.0, f64::max);
    Ok(CurvatureReport {
        t: t_grid.to_vec(),
        chord: [a, b],
        points,
        curvature: bend / chord_len,
        explained,
    })
}

/// `‖∇_z L(G(z), T_t(G(z₀)))‖` at `z = z₀` for each `t`; NaN where the
/// transformed target has no valid pixel.
pub fn gradient_norm_profile<G: Generator + ?Sized>(
    generator: &G,
    z0: &Latent,
    kind: TransformKind,
    t_grid: &[f64],
    loss: &LossSpec,
) -> Result<Vec<(f64, f64)>> {
    let origin = generator.forward(z0)?;
    try_map_indexed(t_grid.len(), |i| {
        let t = t_grid[i];
        let target = transform_apply(&origin, TransformSpec::new(kind, t)?);
        if target.is_fully_masked() {
            return Ok((t, f64::NAN));
        }
        let (_, cot) = recon_loss(loss, &origin, &target)?;
        Ok((t, generator.vjp(z0, &cot)?.norm()))
    })
}

/// Share of the non-DC spectral energy at radial frequencies above a quarter
/// of the Nyquist frequency.
pub fn sharpness(image: &ImageGrid) -> f64 {
    let spec = dft2(image);
    let (h, w) = image.shape();
    let fold = |k: usize, n: usize| {
        let f = k as f64 / n as f64;
        if f >= 0.5 {
            f - 1.0
        } else {
            f
        }
    };
    let cutoff = 0.5 / 4.0;
    let (mut high, mut total) = (0.0, 0.0);
    for k in 0..h {
        for l in 0..w {
            if k == 0 && l == 0 {
                continue;
            }
            let e = spec.get(k, l).norm_sqr();
            total += e;
            if fold(k, h).hypot(fold(l, w)) > cutoff {
                high += e;
            }
        }
    }
    // round-off floor relative to the DC term
    if total > 1e-24 * spec.norm_sq() {
        high / total
    } else {
        0.0
    }
}

/// One target under one weighted loss, with the plain-MSE baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossComparisonRow {
    pub target: usize,
    pub sigma: f64,
    pub target_sharpness: f64,
    /// MSE between the weighted-loss reconstruction and the target.
    pub weighted_mse: f64,
    pub weighted_sharpness: f64,
    pub mse_mse: f64,
    pub mse_sharpness: f64,
}

/// Inverts every target from `z_init` with plain MSE and with the weighted
/// loss at each `σ`, and scores the reconstructions.
pub fn loss_comparison<G: Generator + ?Sized>(
    generator: &G,
    targets: &[ImageGrid],
    sigmas: &[f64],
    inversion: &InversionConfig,
    z_init: &Latent,
) -> Result<Vec<LossComparisonRow>> {
    if targets.is_empty() || sigmas.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one target and one sigma".into(),
        ));
    }
    let reconstruct = |target: &ImageGrid, loss: &LossSpec| -> Result<(f64, f64)> {
        let full = MaskedImage::full(target.clone());
        let res = invert(generator, &full, loss, inversion, z_init)?;
        let img = generator.forward(&res.z)?;
        let (mse, _) = recon_loss(&LossSpec::Mse, &img, &full)?;
        Ok((mse, sharpness(&img)))
    };
    let per_target = try_map_indexed(targets.len(), |i| {
        let target = &targets[i];
        let (mse_mse, mse_sharpness) = reconstruct(target, &LossSpec::Mse)?;
        let target_sharpness = sharpness(target);
        sigmas
            .iter()
            .map(|&sigma| {
                let (weighted_mse, weighted_sharpness) =
                    reconstruct(target, &LossSpec::freq_weighted(sigma))?;
                Ok(LossComparisonRow {
                    target: i,
                    sigma,
                    target_sharpness,
                    weighted_mse,
                    weighted_sharpness,
                    mse_mse,
                    mse_sharpness,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_target.into_iter().flatten().collect())
}

pub fn write_rows_csv<W: Write, R: Serialize>(rows: &[R], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Effort to reach `loss ≤ ε` at the final transform parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Summed iterations over every warm-started step.
    pub recursive_iterations: usize,
    pub recursive_loss: f64,
    pub cold_iterations: usize,
    pub cold_loss: f64,
}

impl ConvergenceReport {
    pub fn recursive_reached(&self, epsilon: f64) -> bool {
        self.recursive_loss <= epsilon
    }

    pub fn cold_reached(&self, epsilon: f64) -> bool {
        self.cold_loss <= epsilon
    }
}

/// Compares the warm-started path `δt_n = n·T/N` against a single solve at
/// `T` from `z₀`. Both stop once the loss at `T` reaches `epsilon`; with a
/// `step_budget`, intermediate steps run exactly that many iterations.
#[allow(clippy::too_many_arguments)]
pub fn convergence_comparison<G: Generator + ?Sized>(
    generator: &G,
    z0: &Latent,
    kind: TransformKind,
    max_t: f64,
    steps: usize,
    step_budget: Option<usize>,
    loss: &LossSpec,
    inversion: &InversionConfig,
    epsilon: f64,
) -> Result<ConvergenceReport> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    let final_cfg = InversionConfig {
        target_loss: Some(epsilon),
        ..inversion.clone()
    };
    let step_cfg = match step_budget {
        Some(b) => InversionConfig {
            max_iterations: b,
            target_loss: None,
            tolerance: 0.0,
            ..inversion.clone()
        },
        None => final_cfg.clone(),
    };
    let deltas: Vec<f64> = (1..steps)
        .map(|n| max_t * n as f64 / steps as f64)
        .collect();
    let (mut z, mut spent) = (z0.clone(), 0);
    if !deltas.is_empty() {
        let path = recursive_trajectory(generator, z0, kind, &deltas, loss, &step_cfg)?;
        if let Some(last) = path.last() {
            z = last.z.clone();
        }
        spent = path.iter().map(|s| s.iterations).sum();
    }
    let target = transform_apply(&generator.forward(z0)?, TransformSpec::new(kind, max_t)?);
    if target.is_fully_masked() {
        return Err(Error::EmptyMask);
    }
    let last = invert(generator, &target, loss, &final_cfg, &z)?;
    let cold = invert(generator, &target, loss, &final_cfg, z0)?;
    Ok(ConvergenceReport {
        recursive_iterations: spent + last.iterations,
        recursive_loss: last.loss,
        cold_iterations: cold.iterations,
        cold_loss: cold.loss,
    })
}
