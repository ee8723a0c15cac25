use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF, `Φ(x) = erfc(-x/√2)/2`.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integral of the density from -12 to x.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let (a, n) = (-12.0, 200_000);
        let h = (x - a) / n as f64;
        let mut s = std_normal_pdf(a) + std_normal_pdf(x);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * std_normal_pdf(a + k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn reference_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_eq!(std_normal_cdf(40.0), 1.0);
        assert!((std_normal_cdf(1.0) - 0.8413447).abs() < 1e-7);
        for &x in &[-3.0, -1.2, 0.3, 1.0, 2.5] {
            assert!(
                (std_normal_cdf(x) - cdf_by_quadrature(x)).abs() < 1e-7,
                "x={x}"
            );
        }
    }

    #[test]
    fn symmetric_and_monotone() {
        let mut prev = 0.0;
        for k in -800..=800 {
            let x = k as f64 / 100.0;
            let p = std_normal_cdf(x);
            assert!((p + std_normal_cdf(-x) - 1.0).abs() <= 1e-12);
            assert!(p >= prev);
            prev = p;
        }
    }
}
