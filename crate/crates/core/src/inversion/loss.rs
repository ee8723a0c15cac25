use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MaskedImage;
use crate::error::{Error, Result};
use crate::numerics::{
    convolve_separable_full, convolve_separable_valid, dft2, gaussian_kernel, GaussianKernel,
    ImageGrid,
};

/// Reconstruction loss between a generated image and a masked target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    /// Mean squared difference over valid pixels.
    Mse,
    /// Squared norm of the Gaussian-blurred difference per valid pixel.
    FreqWeighted {
        sigma: f64,
        /// Score only blur outputs whose whole kernel window is valid.
        #[serde(default)]
        exclude_contaminated: bool,
    },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::freq_weighted(3.0)
    }
}

impl LossSpec {
    pub fn freq_weighted(sigma: f64) -> Self {
        LossSpec::FreqWeighted {
            sigma,
            exclude_contaminated: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LossSpec::FreqWeighted { sigma, .. } = *self {
            gaussian_kernel(sigma)?;
        }
        Ok(())
    }
}

/// Masked difference `candidate - target`, zero on invalid pixels.
fn masked_difference(candidate: &ImageGrid, target: &MaskedImage) -> Result<(ImageGrid, usize)> {
    candidate.same_shape(target.image())?;
    let n_valid = target.valid_count();
    if n_valid == 0 {
        return Err(Error::EmptyMask);
    }
    let values = candidate
        .values()
        .iter()
        .zip(target.image().values())
        .zip(target.mask())
        .map(|((c, t), &m)| if m { c - t } else { 0.0 })
        .collect();
    let d = ImageGrid::new(candidate.height(), candidate.width(), values)?;
    Ok((d, n_valid))
}

fn zero_invalid(img: &mut ImageGrid, mask: &[bool]) {
    for (v, &m) in img.values_mut().iter_mut().zip(mask) {
        if !m {
            *v = 0.0;
        }
    }
}

/// Loss value and its gradient with respect to `candidate`.
///
/// The weighted form blurs the masked difference with a full linear
/// convolution, so no blurred energy is lost at the frame border.
pub fn recon_loss(
    spec: &LossSpec,
    candidate: &ImageGrid,
    target: &MaskedImage,
) -> Result<(f64, ImageGrid)> {
    let (d, n_valid) = masked_difference(candidate, target)?;
    match *spec {
        LossSpec::Mse => {
            let n = n_valid as f64;
            let loss = d.norm_sq() / n;
            Ok((loss, d.map(|v| 2.0 * v / n)))
        }
        LossSpec::FreqWeighted {
            sigma,
            exclude_contaminated: false,
        } => {
            let k = gaussian_kernel(sigma)?;
            let n = n_valid as f64;
            let blurred = convolve_separable_full(&d, &k);
            let loss = blurred.norm_sq() / n;
            let mut cot = convolve_separable_valid(&blurred, &k)?.map(|v| 2.0 * v / n);
            zero_invalid(&mut cot, target.mask());
            Ok((loss, cot))
        }
        LossSpec::FreqWeighted {
            sigma,
            exclude_contaminated: true,
        } => {
            let k = gaussian_kernel(sigma)?;
            let keep = clean_windows(target.mask(), d.height(), d.width(), k.radius());
            let n_keep = keep.iter().filter(|&&m| m).count();
            if n_keep == 0 {
                return Err(Error::EmptyMask);
            }
            let n = n_keep as f64;
            let mut blurred = convolve_separable_valid(&d, &k)?;
            zero_invalid(&mut blurred, &keep);
            let loss = blurred.norm_sq() / n;
            let mut cot = convolve_separable_full(&blurred, &k).map(|v| 2.0 * v / n);
            zero_invalid(&mut cot, target.mask());
            Ok((loss, cot))
        }
    }
}

/// Flags, on the valid-convolution grid, windows of side `2r + 1` that
/// contain only valid pixels.
fn clean_windows(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let side = 2 * r + 1;
    if h < side || w < side {
        return Vec::new();
    }
    // prefix[i][j] = number of invalid pixels in rows < i, cols < j
    let mut prefix = vec![0usize; (h + 1) * (w + 1)];
    for i in 0..h {
        for j in 0..w {
            let bad = usize::from(!mask[i * w + j]);
            prefix[(i + 1) * (w + 1) + j + 1] =
                bad + prefix[i * (w + 1) + j + 1] + prefix[(i + 1) * (w + 1) + j]
                    - prefix[i * (w + 1) + j];
        }
    }
    let (oh, ow) = (h - 2 * r, w - 2 * r);
    let mut out = Vec::with_capacity(oh * ow);
    for a in 0..oh {
        for b in 0..ow {
            let at = |i: usize, j: usize| prefix[i * (w + 1) + j];
            let bad = at(a + side, b + side) + at(a, b) - at(a, b + side) - at(a + side, b);
            out.push(bad == 0);
        }
    }
    out
}

/// Frequency-domain form of the weighted loss: the masked difference is
/// zero-padded by the kernel radius, transformed with the unitary DFT and
/// multiplied by the kernel's transfer function. Reference path for tests.
pub fn freq_weighted_spectral(
    sigma: f64,
    candidate: &ImageGrid,
    target: &MaskedImage,
) -> Result<f64> {
    let (d, n_valid) = masked_difference(candidate, target)?;
    let k = gaussian_kernel(sigma)?;
    let r = k.radius();
    let (h, w) = d.shape();
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let padded = ImageGrid::from_fn(
        ph,
        pw,
        |i, j| if i < h && j < w { d.get(i, j) } else { 0.0 },
    );
    let spectrum = dft2(&padded);
    let transfer = transfer_function(&k, ph, pw);
    let energy: f64 = spectrum
        .data()
        .iter()
        .zip(&transfer)
        .map(|(a, b)| (a * b).norm_sqr())
        .sum();
    Ok(energy / n_valid as f64)
}

/// Unnormalised DFT of the 2-D kernel placed at the origin of a
/// `height × width` grid.
fn transfer_function(k: &GaussianKernel, height: usize, width: usize) -> Vec<Complex64> {
    let axis = |n: usize| -> Vec<Complex64> {
        (0..n)
            .map(|f| {
                k.weights()
                    .iter()
                    .enumerate()
                    .map(|(a, &wgt)| {
                        let phase = -2.0 * std::f64::consts::PI * (f * a) as f64 / n as f64;
                        Complex64::from_polar(wgt, phase)
                    })
                    .sum()
            })
            .collect()
    };
    let rows = axis(height);
    let cols = axis(width);
    rows.iter()
        .flat_map(|r| cols.iter().map(move |c| r * c))
        .collect()
}

/// Monte-Carlo mean of `|r̂·e^{iθ̂} − r·e^{iθ}|²` with `θ̂` uniform on
/// `[0, 2π)`: the expected energy of one frequency bin whose phase is lost.
pub fn random_phase_energy<R: Rng + ?Sized>(
    r_hat: f64,
    r: f64,
    theta: f64,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let fixed = Complex64::from_polar(r, theta);
    let total: f64 = (0..samples)
        .map(|_| {
            let th = rng.random_range(0.0..std::f64::consts::TAU);
            (Complex64::from_polar(r_hat, th) - fixed).norm_sqr()
        })
        .sum();
    total / samples as f64
}
