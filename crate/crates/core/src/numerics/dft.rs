use std::f64::consts::PI;

use num_complex::Complex64;

use crate::numerics::ImageGrid;

/// Unitary 2-D spectrum, row-major, same shape as the source image.
#[derive(Clone, Debug)]
pub struct Spectrum {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, k: usize, l: usize) -> Complex64 {
        self.data[k * self.width + l]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Naive O(n²) 1-D DFT with sign `sign` (−1 forward, +1 inverse), unscaled.
fn dft1(input: &[Complex64], sign: f64, twiddle: &[Complex64], out: &mut [Complex64]) {
    let n = input.len();
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, &x) in input.iter().enumerate() {
            let t = twiddle[(k * m) % n];
            acc += x * if sign < 0.0 { t } else { t.conj() };
        }
        *slot = acc;
    }
}

fn twiddles(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
        .collect()
}

fn transform(h: usize, w: usize, data: &[Complex64], sign: f64) -> Vec<Complex64> {
    let tw_w = twiddles(w);
    let tw_h = twiddles(h);
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        dft1(
            &data[i * w..(i + 1) * w],
            sign,
            &tw_w,
            &mut rows[i * w..(i + 1) * w],
        );
    }
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    let mut res = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = rows[i * w + j];
        }
        dft1(&col, sign, &tw_h, &mut res);
        for i in 0..h {
            out[i * w + j] = res[i];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    out.iter_mut().for_each(|c| *c *= scale);
    out
}

/// Unitary 2-D DFT. Reference implementation for tests and diagnostics; it
/// runs in O(HW(H + W)).
pub fn dft2(image: &ImageGrid) -> Spectrum {
    let (h, w) = image.shape();
    let data: Vec<Complex64> = image
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    Spectrum {
        height: h,
        width: w,
        data: transform(h, w, &data, -1.0),
    }
}

/// Unitary inverse of [`dft2`] on raw row-major data.
pub fn idft2(height: usize, width: usize, data: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(data.len(), height * width);
    transform(height, width, data, 1.0)
}
