use serde::{Deserialize, Serialize};

use crate::numerics::ImageGrid;

/// Binarisation threshold for "bright" pixels.
pub const BRIGHT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Horizontal centroid of bright pixels, in `[-1/2, 1/2]`.
    #[default]
    BarycenterX,
    /// Vertical centroid of bright pixels, in `[-1/2, 1/2]`.
    BarycenterY,
    /// Fraction of bright pixels.
    Scale,
    /// Mean intensity.
    Brightness,
}

/// Measures one factor on an image. `None` when the estimate is undefined
/// (no bright pixel for the centroid and scale kinds).
pub fn estimate_factor(image: &ImageGrid, kind: EstimatorKind) -> Option<f64> {
    let (h, w) = image.shape();
    match kind {
        EstimatorKind::Brightness => Some(image.values().iter().sum::<f64>() / image.len() as f64),
        EstimatorKind::Scale => {
            let bright = image
                .values()
                .iter()
                .filter(|&&v| v >= BRIGHT_THRESHOLD)
                .count();
            (bright > 0).then(|| bright as f64 / image.len() as f64)
        }
        EstimatorKind::BarycenterX | EstimatorKind::BarycenterY => {
            let (mut mass, mut moment) = (0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let v = image.get(i, j);
                    if v >= BRIGHT_THRESHOLD {
                        let coord = if kind == EstimatorKind::BarycenterX {
                            (j as f64 + 0.5) / w as f64 - 0.5
                        } else {
                            (i as f64 + 0.5) / h as f64 - 0.5
                        };
                        mass += v;
                        moment += v * coord;
                    }
                }
            }
            (mass > 0.0).then(|| moment / mass)
        }
    }
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and
/// `cdf`. NaN samples are rejected by the caller's estimator, not here.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgen::{render_sprite, Edge, ShapeKind};
    use crate::inversion::{transform_apply, TransformKind, TransformSpec};

    #[test]
    fn centre_pixel_has_zero_barycenter() {
        let mut img = ImageGrid::zeros(9, 9);
        img.set(4, 4, 1.0);
        assert_eq!(estimate_factor(&img, EstimatorKind::BarycenterX), Some(0.0));
        assert_eq!(estimate_factor(&img, EstimatorKind::BarycenterY), Some(0.0));
    }

    #[test]
    fn empty_image_is_undefined() {
        let img = ImageGrid::filled(4, 4, 0.2);
        assert_eq!(estimate_factor(&img, EstimatorKind::BarycenterX), None);
        assert_eq!(estimate_factor(&img, EstimatorKind::Scale), None);
        assert!((estimate_factor(&img, EstimatorKind::Brightness).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn disc_area_fraction() {
        let img = render_sprite(64, 64, 32.0, 32.0, 8.0, ShapeKind::Disc, Edge::Hard);
        let expected = std::f64::consts::PI * 64.0 / 4096.0;
        let got = estimate_factor(&img, EstimatorKind::Scale).unwrap();
        assert!((got - expected).abs() <= 0.05 * expected, "{got}");
    }

    #[test]
    fn translation_shifts_barycenter() {
        let img = render_sprite(
            64,
            64,
            30.3,
            33.0,
            9.0,
            ShapeKind::Disc,
            Edge::Soft { tau: 1.5 },
        );
        let before = estimate_factor(&img, EstimatorKind::BarycenterX).unwrap();
        let moved = transform_apply(
            &img,
            TransformSpec {
                kind: TransformKind::TranslateX,
                t: 4.0,
            },
        );
        let after = estimate_factor(moved.image(), EstimatorKind::BarycenterX).unwrap();
        assert!((after - before - 4.0 / 64.0).abs() < 1e-9);
        for &t in &[-7.5, 2.25, 11.0] {
            let moved = transform_apply(
                &img,
                TransformSpec {
                    kind: TransformKind::TranslateX,
                    t,
                },
            );
            let after = estimate_factor(moved.image(), EstimatorKind::BarycenterX).unwrap();
            assert!((after - before - t / 64.0).abs() < 1.0 / 64.0, "t = {t}");
        }
    }

    #[test]
    fn ks_of_exact_quantiles() {
        let xs: Vec<f64> = (1..=100).rev().map(|i| i as f64 / 100.0).collect();
        assert!((ks_distance(&xs, |x| x.clamp(0.0, 1.0)) - 0.01).abs() < 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.5).collect();
        assert!(ks_distance(&shifted, |x| x.clamp(0.0, 1.0)) > 0.5);
    }
}
