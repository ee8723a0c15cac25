use std::ops::Deref;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A point (or a gradient) in a generator's latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent(Vec<f64>);

impl Latent {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument(
                "latent must have at least one component".into(),
            ));
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite latent component {i}"
            )));
        }
        Ok(Self(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// One draw from `N(0, I_dim)`.
    pub fn sample_standard<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    /// The basis vector `e_index`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    /// `self + alpha * dir`.
    pub fn add_scaled(&self, alpha: f64, dir: &[f64]) -> Latent {
        Latent(self.0.iter().zip(dir).map(|(a, b)| a + alpha * b).collect())
    }

    pub fn scaled(&self, alpha: f64) -> Latent {
        Latent(self.0.iter().map(|a| alpha * a).collect())
    }
}

impl Deref for Latent {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Latent> for Vec<f64> {
    fn from(z: Latent) -> Self {
        z.0
    }
}
