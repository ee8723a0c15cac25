use crate::error::{Error, Result};
use crate::numerics::ImageGrid;

/// Normalised 1-D Gaussian taps truncated at `radius = ceil(3σ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Taps indexed from `-radius` to `+radius`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The 2-D kernel `w ⊗ w` as a `(2r+1)²` image.
    pub fn outer(&self) -> ImageGrid {
        let n = self.weights.len();
        ImageGrid::from_fn(n, n, |i, j| self.weights[i] * self.weights[j])
    }
}

pub fn gaussian_kernel(sigma: f64) -> Result<GaussianKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|k| {
            let x = k as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(GaussianKernel {
        sigma,
        radius,
        weights: raw.into_iter().map(|w| w / total).collect(),
    })
}

/// `out[o] = Σ_k w[k]·in[o + shift - k]`, zero outside `in`.
fn conv1d(input: &[f64], weights: &[f64], shift: usize, out: &mut [f64]) {
    let n = input.len() as isize;
    for (o, slot) in out.iter_mut().enumerate() {
        let base = (o + shift) as isize;
        let mut acc = 0.0;
        for (k, &w) in weights.iter().enumerate() {
            let idx = base - k as isize;
            if idx >= 0 && idx < n {
                acc += w * input[idx as usize];
            }
        }
        *slot = acc;
    }
}

/// Separable 2-D convolution, horizontal pass then vertical pass.
fn separable(
    image: &ImageGrid,
    k: &GaussianKernel,
    shift: usize,
    out_h: usize,
    out_w: usize,
) -> ImageGrid {
    let (h, w) = image.shape();
    let taps = k.weights();
    let mut rows = vec![0.0; h * out_w];
    for i in 0..h {
        conv1d(
            &image.values()[i * w..(i + 1) * w],
            taps,
            shift,
            &mut rows[i * out_w..(i + 1) * out_w],
        );
    }
    let mut out = vec![0.0; out_h * out_w];
    let mut col = vec![0.0; h];
    let mut res = vec![0.0; out_h];
    for j in 0..out_w {
        for i in 0..h {
            col[i] = rows[i * out_w + j];
        }
        conv1d(&col, taps, shift, &mut res);
        for i in 0..out_h {
            out[i * out_w + j] = res[i];
        }
    }
    ImageGrid::new(out_h, out_w, out).expect("convolution of finite data is finite")
}

/// Same-size convolution with zero padding.
pub fn convolve_separable(image: &ImageGrid, kernel: &GaussianKernel) -> ImageGrid {
    let (h, w) = image.shape();
    separable(image, kernel, kernel.radius, h, w)
}

/// Full linear convolution: output is `(H + 2r) × (W + 2r)` and holds every
/// pixel the blurred image touches.
pub fn convolve_separable_full(image: &ImageGrid, kernel: &GaussianKernel) -> ImageGrid {
    let (h, w) = image.shape();
    let r = kernel.radius;
    separable(image, kernel, 0, h + 2 * r, w + 2 * r)
}

/// Valid-region convolution: output is `(H - 2r) × (W - 2r)`. This is the
/// adjoint of [`convolve_separable_full`] for a symmetric kernel.
pub fn convolve_separable_valid(image: &ImageGrid, kernel: &GaussianKernel) -> Result<ImageGrid> {
    let (h, w) = image.shape();
    let r = kernel.radius;
    if h <= 2 * r || w <= 2 * r {
        return Err(Error::shape(
            format!("image larger than {}x{}", 2 * r, 2 * r),
            format!("{h}x{w}"),
        ));
    }
    Ok(separable(image, kernel, 2 * r, h - 2 * r, w - 2 * r))
}
