//! Analytic sprite generator.
//!
//! Three orthonormal latent directions drive the sprite: horizontal position
//! `x = Φ(<z,u_x>) - 1/2`, vertical position `y = Φ(<z,u_y>) - 1/2` (both
//! uniform on `[-1/2, 1/2]` under `z ~ N(0, I)`), and radius
//! `r = r_min + (r_max - r_min)·Φ(<z,u_s>)`. Every other direction is inert.

use serde::{Deserialize, Serialize};

use super::{check_image, check_latent, Generator, Latent};
use crate::error::{Error, Result};
use crate::numerics::{rng_for, std_normal_cdf, std_normal_pdf, ImageGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    #[default]
    Disc,
    Square,
}

/// Edge profile of a rendered sprite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Edge {
    /// `logistic((r - dist)/tau)`; smooth in every parameter.
    Soft { tau: f64 },
    /// Binary `dist < r`; the gradient is zero almost everywhere.
    Hard,
}

/// Text-serialisable description of a [`SpriteWorld`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpriteWorldConfig {
    pub d: usize,
    pub height: usize,
    pub width: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub tau: f64,
    pub hard_edge: bool,
    pub shape: ShapeKind,
    /// Seed of the random rotation that places the factor directions.
    pub direction_seed: u64,
}

impl Default for SpriteWorldConfig {
    fn default() -> Self {
        Self {
            d: 16,
            height: 64,
            width: 64,
            r_min: 6.0,
            r_max: 16.0,
            tau: 1.5,
            hard_edge: false,
            shape: ShapeKind::Disc,
            direction_seed: 0,
        }
    }
}

impl SpriteWorldConfig {
    pub fn build(&self) -> Result<SpriteWorld> {
        if self.d < 3 {
            return Err(Error::InvalidParameter(format!(
                "sprite world needs d >= 3 for three factor directions, got {}",
                self.d
            )));
        }
        let dirs = random_orthonormal_triple(self.d, self.direction_seed);
        SpriteWorld::with_directions(self.clone(), dirs)
    }
}

/// Ground-truth factor values of one latent code.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpriteFactors {
    /// Horizontal position in `[-1/2, 1/2]` of the image width.
    pub x: f64,
    /// Vertical position in `[-1/2, 1/2]` of the image height.
    pub y: f64,
    pub radius: f64,
}

#[derive(Clone, Debug)]
pub struct SpriteWorld {
    config: SpriteWorldConfig,
    /// `[u_x, u_y, u_s]`.
    directions: [Vec<f64>; 3],
}

impl SpriteWorld {
    /// Builds a world with explicit factor directions, which must be
    /// orthonormal to within `1e-9`.
    pub fn with_directions(config: SpriteWorldConfig, directions: [Vec<f64>; 3]) -> Result<Self> {
        let c = &config;
        if c.height == 0 || c.width == 0 {
            return Err(Error::InvalidParameter(
                "sprite image must be non-empty".into(),
            ));
        }
        if !(c.r_min >= 0.0 && c.r_min < c.r_max) {
            return Err(Error::InvalidParameter(format!(
                "radius range must satisfy 0 <= r_min < r_max, got [{}, {}]",
                c.r_min, c.r_max
            )));
        }
        if !c.hard_edge && !(c.tau > 0.0 && c.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "edge softness tau must be > 0, got {}",
                c.tau
            )));
        }
        for (i, a) in directions.iter().enumerate() {
            if a.len() != c.d {
                return Err(Error::shape(c.d, a.len()));
            }
            for (j, b) in directions.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(
                        "factor directions must be orthonormal".into(),
                    ));
                }
            }
        }
        Ok(Self { config, directions })
    }

    pub fn config(&self) -> &SpriteWorldConfig {
        &self.config
    }

    pub fn direction_x(&self) -> &[f64] {
        &self.directions[0]
    }

    pub fn direction_y(&self) -> &[f64] {
        &self.directions[1]
    }

    pub fn direction_scale(&self) -> &[f64] {
        &self.directions[2]
    }

    pub fn edge(&self) -> Edge {
        if self.config.hard_edge {
            Edge::Hard
        } else {
            Edge::Soft {
                tau: self.config.tau,
            }
        }
    }

    /// Same world with a different edge profile.
    pub fn with_edge(&self, edge: Edge) -> SpriteWorld {
        let mut config = self.config.clone();
        match edge {
            Edge::Hard => config.hard_edge = true,
            Edge::Soft { tau } => {
                config.hard_edge = false;
                config.tau = tau;
            }
        }
        SpriteWorld {
            config,
            directions: self.directions.clone(),
        }
    }

    fn projections(&self, z: &Latent) -> [f64; 3] {
        [
            z.dot(&self.directions[0]),
            z.dot(&self.directions[1]),
            z.dot(&self.directions[2]),
        ]
    }

    pub fn factors(&self, z: &Latent) -> Result<SpriteFactors> {
        check_latent(self.config.d, z)?;
        let [a, b, c] = self.projections(z);
        Ok(SpriteFactors {
            x: std_normal_cdf(a) - 0.5,
            y: std_normal_cdf(b) - 0.5,
            radius: self.config.r_min + (self.config.r_max - self.config.r_min) * std_normal_cdf(c),
        })
    }

    /// Pixel-space centre `(cx, cy)` for normalised factor positions.
    fn centre(&self, x: f64, y: f64) -> (f64, f64) {
        let (w, h) = (self.config.width as f64, self.config.height as f64);
        (w / 2.0 + x * w, h / 2.0 + y * h)
    }
}

/// Renders one sprite with centre `(cx, cy)` in pixel units, where pixel
/// `(i, j)` has its centre at `(j + 0.5, i + 0.5)`.
pub fn render_sprite(
    height: usize,
    width: usize,
    cx: f64,
    cy: f64,
    radius: f64,
    shape: ShapeKind,
    edge: Edge,
) -> ImageGrid {
    ImageGrid::from_fn(height, width, |i, j| {
        let dx = j as f64 + 0.5 - cx;
        let dy = i as f64 + 0.5 - cy;
        let dist = shape_distance(shape, dx, dy);
        match edge {
            Edge::Soft { tau } => logistic((radius - dist) / tau),
            Edge::Hard => {
                if dist < radius {
                    1.0
                } else {
                    0.0
                }
            }
        }
    })
}

#[inline]
fn shape_distance(shape: ShapeKind, dx: f64, dy: f64) -> f64 {
    match shape {
        ShapeKind::Disc => (dx * dx + dy * dy).sqrt(),
        ShapeKind::Square => dx.abs().max(dy.abs()),
    }
}

/// `(∂dist/∂dx, ∂dist/∂dy)`; zero at the centre.
#[inline]
fn shape_distance_grad(shape: ShapeKind, dx: f64, dy: f64, dist: f64) -> (f64, f64) {
    match shape {
        ShapeKind::Disc => {
            if dist > 0.0 {
                (dx / dist, dy / dist)
            } else {
                (0.0, 0.0)
            }
        }
        ShapeKind::Square => {
            if dx.abs() >= dy.abs() {
                (dx.signum(), 0.0)
            } else {
                (0.0, dy.signum())
            }
        }
    }
}

#[inline]
fn logistic(q: f64) -> f64 {
    if q >= 0.0 {
        1.0 / (1.0 + (-q).exp())
    } else {
        let e = q.exp();
        e / (1.0 + e)
    }
}

impl Generator for SpriteWorld {
    fn latent_dim(&self) -> usize {
        self.config.d
    }

    fn image_size(&self) -> (usize, usize) {
        (self.config.height, self.config.width)
    }

    fn forward(&self, z: &Latent) -> Result<ImageGrid> {
        let f = self.factors(z)?;
        let (cx, cy) = self.centre(f.x, f.y);
        Ok(render_sprite(
            self.config.height,
            self.config.width,
            cx,
            cy,
            f.radius,
            self.config.shape,
            self.edge(),
        ))
    }

    fn vjp(&self, z: &Latent, cotangent: &ImageGrid) -> Result<Latent> {
        check_latent(self.config.d, z)?;
        check_image(self.image_size(), cotangent)?;
        let tau = match self.edge() {
            Edge::Hard => return Ok(Latent::zeros(self.config.d)),
            Edge::Soft { tau } => tau,
        };
        let [a, b, c] = self.projections(z);
        let f = self.factors(z)?;
        let (cx, cy) = self.centre(f.x, f.y);
        let (h, w) = self.image_size();

        // Accumulate d<cot, img>/d(cx, cy, r).
        let (mut gcx, mut gcy, mut gr) = (0.0, 0.0, 0.0);
        for i in 0..h {
            for j in 0..w {
                let ct = cotangent.get(i, j);
                if ct == 0.0 {
                    continue;
                }
                let dx = j as f64 + 0.5 - cx;
                let dy = i as f64 + 0.5 - cy;
                let dist = shape_distance(self.config.shape, dx, dy);
                let s = logistic((f.radius - dist) / tau);
                let ds = ct * s * (1.0 - s) / tau;
                let (ddx, ddy) = shape_distance_grad(self.config.shape, dx, dy, dist);
                // dist depends on cx through dx = px - cx.
                gcx += ds * ddx;
                gcy += ds * ddy;
                gr += ds;
            }
        }
        let ga = gcx * w as f64 * std_normal_pdf(a);
        let gb = gcy * h as f64 * std_normal_pdf(b);
        let gc = gr * (self.config.r_max - self.config.r_min) * std_normal_pdf(c);
        let grad = (0..self.config.d)
            .map(|k| {
                ga * self.directions[0][k] + gb * self.directions[1][k] + gc * self.directions[2][k]
            })
            .collect();
        Latent::new(grad)
    }
}

/// First three columns of a Haar-random orthogonal matrix, via Gram–Schmidt
/// on Gaussian vectors.
fn random_orthonormal_triple(d: usize, seed: u64) -> [Vec<f64>; 3] {
    let mut rng = rng_for(seed);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(3);
    while out.len() < 3 {
        let mut v = Latent::sample_standard(d, &mut rng).into_vec();
        for b in &out {
            let c: f64 = v.iter().zip(b).map(|(p, q)| p * q).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    [out[0].clone(), out[1].clone(), out[2].clone()]
}
