//! The differentiable-generator contract and two concrete generators: an
//! analytic sprite renderer with known factor directions, and a dense decoder
//! network with hand-written backpropagation.

mod dense;
mod latent;
mod sprite;

pub use dense::{Activation, DecoderGenerator, DenseCache, DenseGrads, DenseNet, GradAt, Layer};
pub use latent::Latent;
pub use sprite::{render_sprite, Edge, ShapeKind, SpriteWorld, SpriteWorldConfig};

use crate::error::Result;
use crate::numerics::ImageGrid;

/// A differentiable map from a latent vector to an image.
///
/// Implementations are pure: `forward` and `vjp` may be called concurrently.
pub trait Generator: Send + Sync {
    fn latent_dim(&self) -> usize;

    /// `(height, width)` of generated images.
    fn image_size(&self) -> (usize, usize);

    fn forward(&self, z: &Latent) -> Result<ImageGrid>;

    /// Gradient of `<cotangent, forward(z)>` with respect to `z`.
    fn vjp(&self, z: &Latent, cotangent: &ImageGrid) -> Result<Latent>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }
    fn image_size(&self) -> (usize, usize) {
        (**self).image_size()
    }
    fn forward(&self, z: &Latent) -> Result<ImageGrid> {
        (**self).forward(z)
    }
    fn vjp(&self, z: &Latent, cotangent: &ImageGrid) -> Result<Latent> {
        (**self).vjp(z, cotangent)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }
    fn image_size(&self) -> (usize, usize) {
        (**self).image_size()
    }
    fn forward(&self, z: &Latent) -> Result<ImageGrid> {
        (**self).forward(z)
    }
    fn vjp(&self, z: &Latent, cotangent: &ImageGrid) -> Result<Latent> {
        (**self).vjp(z, cotangent)
    }
}

pub(crate) fn check_latent(expected: usize, z: &Latent) -> Result<()> {
    if z.dim() != expected {
        return Err(crate::Error::shape(
            format!("latent of dimension {expected}"),
            z.dim(),
        ));
    }
    Ok(())
}

pub(crate) fn check_image(expected: (usize, usize), img: &ImageGrid) -> Result<()> {
    if img.shape() != expected {
        return Err(crate::Error::shape(
            format!("{}x{} image", expected.0, expected.1),
            format!("{}x{}", img.height(), img.width()),
        ));
    }
    Ok(())
}
