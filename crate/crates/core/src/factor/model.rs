use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::diffgen::Latent;
use crate::error::{Error, Result};

/// Tolerance on `‖u‖ = 1` for a valid model.
pub const UNIT_TOL: f64 = 1e-9;

/// Non-decreasing piecewise-linear function through `(0, 0)` with linear
/// extrapolation past the end knots.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinearFn {
    knots: Vec<f64>,
    values: Vec<f64>,
    zero: usize,
}

impl PiecewiseLinearFn {
    /// Requires strictly increasing knots, a knot at exactly 0 with value 0,
    /// and non-decreasing values.
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "need >= 2 knots with one value each, got {} knots and {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "knots and values must be finite".into(),
            ));
        }
        if knots.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidParameter(
                "knots must be strictly increasing".into(),
            ));
        }
        if values.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::InvalidParameter(
                "values must be non-decreasing".into(),
            ));
        }
        let zero = knots
            .iter()
            .position(|&k| k == 0.0)
            .ok_or_else(|| Error::InvalidParameter("0 must be a knot".into()))?;
        if values[zero] != 0.0 {
            return Err(Error::InvalidParameter("value at knot 0 must be 0".into()));
        }
        Ok(Self {
            knots,
            values,
            zero,
        })
    }

    /// Builds the function from one non-negative slope per segment,
    /// anchored at 0.
    pub fn from_slopes(knots: Vec<f64>, slopes: &[f64]) -> Result<Self> {
        if slopes.len() + 1 != knots.len() {
            return Err(Error::shape(knots.len().saturating_sub(1), slopes.len()));
        }
        if slopes.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParameter(
                "slopes must be non-negative".into(),
            ));
        }
        let zero = knots
            .iter()
            .position(|&k| k == 0.0)
            .ok_or_else(|| Error::InvalidParameter("0 must be a knot".into()))?;
        let mut values = vec![0.0; knots.len()];
        for k in zero + 1..knots.len() {
            values[k] = values[k - 1] + slopes[k - 1] * (knots[k] - knots[k - 1]);
        }
        for k in (0..zero).rev() {
            values[k] = values[k + 1] - slopes[k] * (knots[k + 1] - knots[k]);
        }
        Self::new(knots, values)
    }

    /// `count` evenly spaced knots on `[-half, half]`; `count` must be odd so
    /// 0 is a knot.
    pub fn uniform_knots(count: usize, half: f64) -> Result<Vec<f64>> {
        if count < 3 || count.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "knot count must be odd and >= 3, got {count}"
            )));
        }
        if !(half > 0.0 && half.is_finite()) {
            return Err(Error::InvalidParameter(
                "knot range must be positive".into(),
            ));
        }
        let m = (count / 2) as f64;
        Ok((0..count)
            .map(|k| {
                let i = k as f64 - m;
                if i == 0.0 {
                    0.0
                } else {
                    half * i / m
                }
            })
            .collect())
    }

    pub fn identity(knots: Vec<f64>) -> Result<Self> {
        let values = knots.clone();
        Self::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn segment_slope(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / (self.knots[k + 1] - self.knots[k])
    }

    pub fn slopes(&self) -> Vec<f64> {
        (0..self.segments())
            .map(|k| self.segment_slope(k))
            .collect()
    }

    /// Segment governing `s`; end segments extend to infinity and knots
    /// belong to the segment on their right.
    pub fn segment_of(&self, s: f64) -> usize {
        let idx = self.knots.partition_point(|&k| k <= s);
        idx.saturating_sub(1).min(self.segments() - 1)
    }

    pub fn eval(&self, s: f64) -> f64 {
        let k = self.segment_of(s);
        self.values[k] + self.segment_slope(k) * (s - self.knots[k])
    }

    /// Right derivative at `s`.
    pub fn derivative(&self, s: f64) -> f64 {
        self.segment_slope(self.segment_of(s))
    }

    /// Signed length of `[0, s]` inside each segment: `g(s) = Σ_k slope_k · w_k`.
    pub(crate) fn segment_weights(&self, s: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|w| *w = 0.0);
        let last = self.segments() - 1;
        if s >= 0.0 {
            for k in self.zero..=last {
                let lo = self.knots[k];
                if s <= lo {
                    break;
                }
                let hi = if k == last {
                    f64::INFINITY
                } else {
                    self.knots[k + 1]
                };
                out[k] = s.min(hi) - lo;
            }
        } else {
            for k in (0..self.zero).rev() {
                let hi = self.knots[k + 1];
                if s >= hi {
                    break;
                }
                let lo = if k == 0 {
                    f64::NEG_INFINITY
                } else {
                    self.knots[k]
                };
                out[k] = -(hi - s.max(lo));
            }
        }
    }

    /// `inf g` and `sup g` over the real line.
    pub fn range(&self) -> (f64, f64) {
        let lo = if self.segment_slope(0) > 0.0 {
            f64::NEG_INFINITY
        } else {
            self.values[0]
        };
        let hi = if self.segment_slope(self.segments() - 1) > 0.0 {
            f64::INFINITY
        } else {
            *self.values.last().unwrap()
        };
        (lo, hi)
    }

    /// Smallest `s` with `g(s) = t`, or `None` when `t` is outside the range.
    pub fn inverse(&self, t: f64) -> Option<f64> {
        let (lo, hi) = self.range();
        if !(t >= lo && t <= hi) {
            return None;
        }
        let last = self.knots.len() - 1;
        if t < self.values[0] {
            return Some(self.knots[0] + (t - self.values[0]) / self.segment_slope(0));
        }
        if t > self.values[last] {
            return Some(self.knots[last] + (t - self.values[last]) / self.segment_slope(last - 1));
        }
        // first knot whose value reaches t; the segment before it rises strictly
        let idx = self.values.partition_point(|&v| v < t);
        if self.values[idx] == t {
            return Some(self.knots[idx]);
        }
        let k = idx - 1;
        Some(self.knots[k] + (t - self.values[k]) / self.segment_slope(k))
    }
}

/// `f(z) = g(⟨u, z⟩)` with unit `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingModel {
    u: Latent,
    g: PiecewiseLinearFn,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelText {
    format: String,
    dim: usize,
    u: Vec<f64>,
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl EncodingModel {
    pub fn new(u: Latent, g: PiecewiseLinearFn) -> Result<Self> {
        if (u.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidParameter(format!(
                "direction must be unit norm, got {}",
                u.norm()
            )));
        }
        Ok(Self { u, g })
    }

    pub fn direction(&self) -> &Latent {
        &self.u
    }

    pub fn g(&self) -> &PiecewiseLinearFn {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.u.dim()
    }

    pub fn coordinate(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.u.dim() {
            return Err(Error::shape(
                format!("latent of dimension {}", self.u.dim()),
                z.len(),
            ));
        }
        Ok(self.u.dot(z))
    }

    pub fn predict(&self, z: &[f64]) -> Result<f64> {
        Ok(self.g.eval(self.coordinate(z)?))
    }

    pub fn to_text(&self) -> String {
        let text = ModelText {
            format: "ENC1".into(),
            dim: self.u.dim(),
            u: self.u.to_vec(),
            knots: self.g.knots.clone(),
            values: self.g.values.clone(),
        };
        toml::to_string(&text).expect("model fields serialise")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let raw: ModelText =
            toml::from_str(text).map_err(|e| Error::InvariantViolation(e.to_string()))?;
        if raw.format != "ENC1" {
            return Err(Error::BadMagic { expected: "ENC1" });
        }
        if raw.u.len() != raw.dim {
            return Err(Error::InvariantViolation(format!(
                "direction has {} components, header says {}",
                raw.u.len(),
                raw.dim
            )));
        }
        let u = Latent::new(raw.u)?;
        let g = PiecewiseLinearFn::new(raw.knots, raw.values)?;
        Self::new(u, g).map_err(|e| Error::InvariantViolation(e.to_string()))
    }

    /// `(s, g(s))` at `n` evenly spaced points on `[lo, hi]`.
    pub fn write_samples_csv<W: Write>(&self, lo: f64, hi: f64, n: usize, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["s", "g"])?;
        for k in 0..n {
            let s = if n == 1 {
                lo
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            };
            wtr.write_record([s.to_string(), self.g.eval(s).to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `g(⟨u, z_δt⟩) − g(⟨u, z₀⟩)`.
pub fn predict_delta(model: &EncodingModel, z0: &[f64], z_dt: &[f64]) -> Result<f64> {
    Ok(model.predict(z_dt)? - model.predict(z0)?)
}

/// Squared norm of `u` restricted to each part of a contiguous partition of
/// `0..d`.
pub fn direction_part_norms(u: &[f64], parts: &[Range<usize>]) -> Result<Vec<f64>> {
    let mut next = 0;
    for p in parts {
        if p.start != next || p.end <= p.start {
            return Err(Error::InvalidArgument(format!(
                "parts must be non-empty, contiguous and start at 0; got {p:?} after {next}"
            )));
        }
        next = p.end;
    }
    if next != u.len() {
        return Err(Error::InvalidArgument(format!(
            "parts cover 0..{next}, direction has {}",
            u.len()
        )));
    }
    Ok(parts
        .iter()
        .map(|p| u[p.clone()].iter().map(|v| v * v).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_for;
    use proptest::prelude::*;

    fn knots() -> Vec<f64> {
        PiecewiseLinearFn::uniform_knots(17, 3.0).unwrap()
    }

    fn model_e1(d: usize) -> EncodingModel {
        EncodingModel::new(
            Latent::basis(d, 0),
            PiecewiseLinearFn::identity(knots()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn knot_grid_contains_zero() {
        let k = knots();
        assert_eq!(k.len(), 17);
        assert_eq!(k[8], 0.0);
        assert_eq!(k[0], -3.0);
        assert_eq!(k[16], 3.0);
        assert!(PiecewiseLinearFn::uniform_knots(16, 3.0).is_err());
        assert!(PiecewiseLinearFn::uniform_knots(1, 3.0).is_err());
    }

    #[test]
    fn identity_extrapolates() {
        let g = PiecewiseLinearFn::identity(knots()).unwrap();
        for &s in &[-10.0, -3.0, -0.1, 0.0, 1.3, 7.5] {
            assert!((g.eval(s) - s).abs() < 1e-12);
            assert_eq!(g.inverse(s).map(|x| (x - s).abs() < 1e-12), Some(true));
        }
        assert_eq!(g.range(), (f64::NEG_INFINITY, f64::INFINITY));
    }

    #[test]
    fn slopes_anchor_at_zero() {
        let slopes: Vec<f64> = (0..16).map(|k| 0.1 * k as f64).collect();
        let g = PiecewiseLinearFn::from_slopes(knots(), &slopes).unwrap();
        assert_eq!(g.eval(0.0), 0.0);
        for (a, b) in g.slopes().iter().zip(&slopes) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut w = vec![0.0; 16];
        for &s in &[-5.0, -1.1, 0.0, 0.2, 2.9, 4.0] {
            g.segment_weights(s, &mut w);
            let via: f64 = w.iter().zip(&slopes).map(|(a, b)| a * b).sum();
            assert!((via - g.eval(s)).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn invalid_functions_rejected() {
        assert!(PiecewiseLinearFn::new(vec![-1.0, 0.0, 1.0], vec![0.0, 0.0, -1.0]).is_err());
        assert!(PiecewiseLinearFn::new(vec![-1.0, 0.5, 1.0], vec![-1.0, 0.0, 1.0]).is_err());
        assert!(PiecewiseLinearFn::new(vec![-1.0, 0.0, 1.0], vec![-1.0, 0.1, 1.0]).is_err());
        assert!(PiecewiseLinearFn::new(vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]).is_err());
        assert!(EncodingModel::new(
            Latent::new(vec![1.0, 1.0]).unwrap(),
            PiecewiseLinearFn::identity(knots()).unwrap()
        )
        .is_err());
    }

    #[test]
    fn flat_ends_bound_the_range() {
        let mut slopes = vec![1.0; 16];
        slopes[0] = 0.0;
        slopes[15] = 0.0;
        let g = PiecewiseLinearFn::from_slopes(knots(), &slopes).unwrap();
        let (lo, hi) = g.range();
        assert!((lo + 2.625).abs() < 1e-12 && (hi - 2.625).abs() < 1e-12);
        assert_eq!(g.inverse(3.0), None);
        assert_eq!(g.eval(g.inverse(lo).unwrap()), lo);
        assert_eq!(g.eval(-100.0), lo);
    }

    #[test]
    fn predict_delta_examples() {
        let m = model_e1(4);
        let z0 = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(predict_delta(&m, &z0, &z0).unwrap(), 0.0);
        let z1 = [3.3, -1.0, 2.0, 0.5];
        assert!((predict_delta(&m, &z0, &z1).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(
            predict_delta(&m, &z1, &z0).unwrap(),
            -predict_delta(&m, &z0, &z1).unwrap()
        );
        assert!(predict_delta(&m, &z0, &[1.0]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut rng = rng_for(3);
        let u = Latent::sample_standard(5, &mut rng);
        let u = u.scaled(1.0 / u.norm());
        let slopes: Vec<f64> = (0..16).map(|k| (k as f64 * 0.37).sin().abs()).collect();
        let m = EncodingModel::new(u, PiecewiseLinearFn::from_slopes(knots(), &slopes).unwrap())
            .unwrap();
        let text = m.to_text();
        assert!(text.contains("format = \"ENC1\""));
        assert_eq!(EncodingModel::from_text(&text).unwrap(), m);
        assert!(EncodingModel::from_text(&text.replace("ENC1", "ENC9")).is_err());
        let mut csv_out = Vec::new();
        m.write_samples_csv(-2.0, 2.0, 5, &mut csv_out).unwrap();
        assert_eq!(String::from_utf8(csv_out).unwrap().lines().count(), 6);
    }

    #[test]
    fn part_norms_examples() {
        assert_eq!(
            direction_part_norms(&[1.0, 0.0, 0.0, 0.0], &[0..2, 2..4]).unwrap(),
            vec![1.0, 0.0]
        );
        let v = 0.5;
        let parts = direction_part_norms(&[v, -v, v, -v], &[0..2, 2..4]).unwrap();
        assert!((parts[0] - 0.5).abs() < 1e-15 && (parts[1] - 0.5).abs() < 1e-15);
        assert!(direction_part_norms(&[1.0, 0.0], std::slice::from_ref(&(0..1))).is_err());
        assert!(direction_part_norms(&[1.0, 0.0], std::slice::from_ref(&(1..2))).is_err());
    }

    proptest! {
        #[test]
        fn part_norms_sum_to_one(seed in any::<u64>(), cuts in proptest::collection::btree_set(1usize..12, 0..5)) {
            let mut rng = rng_for(seed);
            let u = Latent::sample_standard(12, &mut rng);
            let u = u.scaled(1.0 / u.norm());
            let mut bounds = vec![0];
            bounds.extend(cuts);
            bounds.push(12);
            let parts: Vec<_> = bounds.windows(2).map(|b| b[0]..b[1]).collect();
            let total: f64 = direction_part_norms(&u, &parts).unwrap().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn inverse_is_consistent(raw in proptest::collection::vec(0.01f64..3.0, 16), s in -3.0f64..3.0) {
            let g = PiecewiseLinearFn::from_slopes(knots(), &raw).unwrap();
            let back = g.inverse(g.eval(s)).unwrap();
            prop_assert!((back - s).abs() < 1e-9);
        }

        #[test]
        fn monotone_by_construction(raw in proptest::collection::vec(0.0f64..3.0, 16), a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let g = PiecewiseLinearFn::from_slopes(knots(), &raw).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(g.eval(lo) <= g.eval(hi));
            prop_assert_eq!(g.eval(0.0), 0.0);
        }
    }
}
