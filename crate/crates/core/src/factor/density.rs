use std::fmt;
use std::sync::Arc;

use super::EncodingModel;
use crate::diffgen::Latent;
use crate::error::{Error, Result};
use crate::numerics::{std_normal_cdf, std_normal_pdf};

/// Density of `t = g(⟨u, z⟩)` for `z ~ N(0, I)`. Returns 0 outside the range
/// of `g` and `+∞` where `g` is flat.
pub fn factor_density(model: &EncodingModel, t: f64) -> f64 {
    let g = model.g();
    match g.inverse(t) {
        None => 0.0,
        Some(s) => {
            let slope = g.derivative(s);
            if slope == 0.0 {
                f64::INFINITY
            } else {
                std_normal_pdf(s) / slope
            }
        }
    }
}

/// Desired density of the factor after resampling.
#[derive(Clone)]
pub enum TargetDensity {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// The density a model induces on its own factor.
    Induced(EncodingModel),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetDensity::Uniform { lo, hi } => write!(f, "Uniform({lo}, {hi})"),
            TargetDensity::Gaussian { mean, sd } => write!(f, "Gaussian({mean}, {sd})"),
            TargetDensity::Induced(_) => write!(f, "Induced"),
            TargetDensity::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl TargetDensity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TargetDensity::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(Error::InvalidParameter(
                    "uniform target needs lo < hi".into(),
                ))
            }
            TargetDensity::Gaussian { mean, sd }
                if !(sd > 0.0 && mean.is_finite() && sd.is_finite()) =>
            {
                Err(Error::InvalidParameter(
                    "gaussian target needs sd > 0".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        match self {
            TargetDensity::Uniform { lo, hi } => {
                if t >= *lo && t <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            TargetDensity::Gaussian { mean, sd } => std_normal_pdf((t - mean) / sd) / sd,
            TargetDensity::Induced(m) => factor_density(m, t),
            TargetDensity::Custom(f) => f(t),
        }
    }
}

/// Integration grid for the resampling table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResampleGrid {
    /// Table covers `[-span, span]` in the latent coordinate.
    pub span: f64,
    /// Minimum sub-intervals between consecutive breakpoints.
    pub subdivisions: usize,
    /// Largest sub-interval width.
    pub max_step: f64,
}

impl Default for ResampleGrid {
    fn default() -> Self {
        Self {
            span: 8.0,
            subdivisions: 64,
            max_step: 0.05,
        }
    }
}

/// Tolerance on the target's total mass over the reachable range.
const MASS_TOL: f64 = 1e-3;

/// Tabulated `H(s) = ∫ φ(g(x)) g′(x) dx` (normalised), used to replace the
/// `u`-coordinate `a` of a latent by `H⁻¹(Φ(a))`.
#[derive(Clone, Debug)]
pub struct Resampler {
    model: EncodingModel,
    target: TargetDensity,
    grid: Vec<f64>,
    cumulative: Vec<f64>,
    mass: f64,
}

impl Resampler {
    pub fn new(model: &EncodingModel, target: &TargetDensity, spec: ResampleGrid) -> Result<Self> {
        target.validate()?;
        if !(spec.span > 0.0) || spec.subdivisions == 0 || !(spec.max_step > 0.0) {
            return Err(Error::InvalidParameter("invalid resampling grid".into()));
        }
        let mut breaks: Vec<f64> = vec![-spec.span];
        breaks.extend(
            model
                .g()
                .knots()
                .iter()
                .copied()
                .filter(|k| k.abs() < spec.span),
        );
        breaks.push(spec.span);
        let mut grid = vec![breaks[0]];
        for w in breaks.windows(2) {
            let len = w[1] - w[0];
            let pieces = spec.subdivisions.max((len / spec.max_step).ceil() as usize);
            for p in 1..=pieces {
                grid.push(if p == pieces {
                    w[1]
                } else {
                    w[0] + len * p as f64 / pieces as f64
                });
            }
        }
        let mut this = Self {
            model: model.clone(),
            target: target.clone(),
            grid,
            cumulative: Vec::new(),
            mass: 1.0,
        };
        let mut cumulative = Vec::with_capacity(this.grid.len());
        cumulative.push(0.0);
        for w in this.grid.windows(2) {
            let inc = this.simpson(w[0], w[1]);
            if !inc.is_finite() || inc < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "target density is not integrable near s = {}",
                    w[0]
                )));
            }
            cumulative.push(cumulative.last().unwrap() + inc);
        }
        let mass = *cumulative.last().unwrap();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "target density integrates to {mass} over the model's reachable range"
            )));
        }
        cumulative.iter_mut().for_each(|c| *c /= mass);
        // a flat stretch strictly inside (0, 1) makes the inverse ambiguous
        let eps = 1e-12;
        for (i, w) in cumulative.windows(2).enumerate() {
            if w[0] > eps && w[1] < 1.0 - eps && w[1] == w[0] {
                return Err(Error::NonInvertible(format!(
                    "target density vanishes on the interior interval s = [{}, {}]",
                    this.grid[i],
                    this.grid[i + 1]
                )));
            }
        }
        this.cumulative = cumulative;
        this.mass = mass;
        Ok(this)
    }

    pub fn model(&self) -> &EncodingModel {
        &self.model
    }

    fn integrand(&self, s: f64) -> f64 {
        let g = self.model.g();
        let slope = g.derivative(s);
        if slope == 0.0 {
            0.0
        } else {
            self.target.density(g.eval(s)) * slope
        }
    }

    fn simpson(&self, a: f64, b: f64) -> f64 {
        (b - a) / 6.0
            * (self.integrand(a) + 4.0 * self.integrand(0.5 * (a + b)) + self.integrand(b))
    }

    /// Normalised `H(s)` on the table range.
    pub fn cumulative_at(&self, s: f64) -> f64 {
        let s = s.clamp(self.grid[0], *self.grid.last().unwrap());
        let i = (self.grid.partition_point(|&x| x <= s)).clamp(1, self.grid.len() - 1) - 1;
        self.cumulative[i] + self.simpson(self.grid[i], s) / self.mass
    }

    /// `H⁻¹(p)` by safeguarded Newton inside the bracketing table cell.
    pub fn inverse_cumulative(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let n = self.grid.len();
        let i = self.cumulative.partition_point(|&c| c < p).clamp(1, n - 1) - 1;
        let (mut lo, mut hi) = (self.grid[i], self.grid[i + 1]);
        let mut s = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.cumulative[i] + self.simpson(self.grid[i], s) / self.mass - p;
            if f.abs() <= 1e-15 {
                break;
            }
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let d = self.integrand(s) / self.mass;
            let newton = if d > 0.0 { s - f / d } else { f64::NAN };
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-14 * (1.0 + s.abs()) {
                break;
            }
        }
        s
    }

    /// New value of the `u`-coordinate for an old value `a`.
    pub fn map_coordinate(&self, a: f64) -> f64 {
        self.inverse_cumulative(std_normal_cdf(a))
    }

    /// Replaces the `u`-component of `z`, leaving the orthogonal part alone.
    pub fn resample(&self, z: &Latent) -> Result<Latent> {
        let a = self.model.coordinate(z)?;
        let s = self.map_coordinate(a);
        Ok(z.add_scaled(s - a, self.model.direction()))
    }
}

/// One-off resampling of a single latent; build a [`Resampler`] to reuse
/// the table.
pub fn resample_latent(
    model: &EncodingModel,
    z: &Latent,
    target: &TargetDensity,
) -> Result<Latent> {
    Resampler::new(model, target, ResampleGrid::default())?.resample(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::PiecewiseLinearFn;
    use crate::numerics::rng_for;
    use rand::Rng;

    fn erf_model(d: usize) -> EncodingModel {
        let knots = PiecewiseLinearFn::uniform_knots(16001, 4.0).unwrap();
        let values = knots.iter().map(|&s| std_normal_cdf(s) - 0.5).collect();
        EncodingModel::new(
            Latent::basis(d, 0),
            PiecewiseLinearFn::new(knots, values).unwrap(),
        )
        .unwrap()
    }

    fn rough_model(d: usize, seed: u64) -> EncodingModel {
        let mut rng = rng_for(seed);
        let knots = PiecewiseLinearFn::uniform_knots(17, 3.0).unwrap();
        let slopes: Vec<f64> = (0..16).map(|_| rng.random_range(0.2..2.0)).collect();
        let u = Latent::sample_standard(d, &mut rng);
        let u = u.scaled(1.0 / u.norm());
        EncodingModel::new(u, PiecewiseLinearFn::from_slopes(knots, &slopes).unwrap()).unwrap()
    }

    #[test]
    fn identity_model_gives_normal_density() {
        let m = EncodingModel::new(
            Latent::basis(2, 0),
            PiecewiseLinearFn::identity(PiecewiseLinearFn::uniform_knots(17, 3.0).unwrap())
                .unwrap(),
        )
        .unwrap();
        assert!((factor_density(&m, 0.0) - 0.39894).abs() < 1e-5);
        assert!((factor_density(&m, 1.7) - std_normal_pdf(1.7)).abs() < 1e-15);
    }

    #[test]
    fn erf_model_gives_uniform_density() {
        let m = erf_model(2);
        for k in 0..=90 {
            let t = -0.45 + 0.01 * k as f64;
            assert!(
                (factor_density(&m, t) - 1.0).abs() < 1e-3,
                "t = {t}: {}",
                factor_density(&m, t)
            );
        }
        assert_eq!(factor_density(&m, 0.7), 0.0);
    }

    #[test]
    fn density_integrates_to_one() {
        let m = rough_model(3, 1);
        let g = m.g();
        let (lo, hi) = (g.eval(-8.0), g.eval(8.0));
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * factor_density(&m, lo + h * k as f64)
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn flat_segment_flags_infinite_density() {
        let knots = PiecewiseLinearFn::uniform_knots(5, 2.0).unwrap();
        let g = PiecewiseLinearFn::from_slopes(knots, &[1.0, 0.0, 1.0, 1.0]).unwrap();
        let m = EncodingModel::new(Latent::basis(1, 0), g).unwrap();
        assert_eq!(factor_density(&m, 0.0), f64::INFINITY);
        assert!(factor_density(&m, 0.5).is_finite());
    }

    #[test]
    fn histogram_matches_density() {
        let m = rough_model(2, 2);
        let mut rng = rng_for(3);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| m.g().eval(rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect();
        let (lo, hi) = (m.g().eval(-3.0), m.g().eval(3.0));
        let bins = 60;
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &t in &samples {
            if t >= lo && t < hi {
                counts[((t - lo) / width) as usize] += 1;
            }
        }
        // L1 distance between the histogram and the bin-averaged density
        let l1: f64 = counts
            .iter()
            .enumerate()
            .map(|(b, &c)| {
                let a = lo + b as f64 * width;
                let avg: f64 = (0..20)
                    .map(|q| factor_density(&m, a + width * (q as f64 + 0.5) / 20.0))
                    .sum::<f64>()
                    / 20.0;
                (c as f64 / (n as f64 * width) - avg).abs() * width
            })
            .sum();
        assert!(l1 < 0.05, "{l1}");
    }

    #[test]
    fn own_density_is_a_fixed_point() {
        let m = rough_model(6, 4);
        let r = Resampler::new(
            &m,
            &TargetDensity::Induced(m.clone()),
            ResampleGrid::default(),
        )
        .unwrap();
        let mut rng = rng_for(5);
        for _ in 0..500 {
            let z = Latent::sample_standard(6, &mut rng);
            let z2 = r.resample(&z).unwrap();
            for (a, b) in z.iter().zip(z2.iter()) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn orthogonal_part_is_untouched() {
        let m = rough_model(5, 6);
        let r = Resampler::new(
            &m,
            &TargetDensity::Gaussian { mean: 0.5, sd: 0.3 },
            ResampleGrid::default(),
        )
        .unwrap();
        let u = m.direction();
        let mut rng = rng_for(7);
        for _ in 0..50 {
            let z = Latent::sample_standard(5, &mut rng);
            let z2 = r.resample(&z).unwrap();
            let p1 = z.add_scaled(-u.dot(&z), u);
            let p2 = z2.add_scaled(-u.dot(&z2), u);
            for (a, b) in p1.iter().zip(p2.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_target_passes_ks() {
        let m = erf_model(4);
        let grid = ResampleGrid {
            subdivisions: 2,
            ..Default::default()
        };
        let r = Resampler::new(&m, &TargetDensity::Uniform { lo: -0.5, hi: 0.5 }, grid).unwrap();
        let mut rng = rng_for(8);
        let mut t: Vec<f64> = (0..10_000)
            .map(|_| {
                let z = Latent::sample_standard(4, &mut rng);
                std_normal_cdf(r.resample(&z).unwrap()[0]) - 0.5
            })
            .collect();
        t.sort_by(f64::total_cmp);
        let n = t.len() as f64;
        let ks = t
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = (x + 0.5).clamp(0.0, 1.0);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.05, "{ks}");
    }

    #[test]
    fn gap_in_target_is_not_invertible() {
        let m = erf_model(2);
        let gap = TargetDensity::Custom(Arc::new(|t: f64| {
            if (0.25..=0.5).contains(&t.abs()) {
                2.0
            } else {
                0.0
            }
        }));
        assert!(matches!(
            Resampler::new(&m, &gap, ResampleGrid::default()),
            Err(Error::NonInvertible(_))
        ));
        let wide = TargetDensity::Uniform { lo: -1.0, hi: 1.0 };
        assert!(matches!(
            Resampler::new(&m, &wide, ResampleGrid::default()),
            Err(Error::InvalidArgument(_))
        ));
    }
}
