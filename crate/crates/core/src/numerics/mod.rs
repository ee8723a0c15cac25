//! Shared numerical primitives: image grids, Gaussian blur, a reference DFT,
//! normal-distribution special functions, Adam, and two-component PCA.

mod adam;
mod dft;
mod image;
mod kernel;
mod pca;
mod special;

pub use adam::{Adam, AdamParams};
pub use dft::{dft2, idft2, Spectrum};
pub(crate) use image::to_byte;
pub use image::ImageGrid;
pub use kernel::{
    convolve_separable, convolve_separable_full, convolve_separable_valid, gaussian_kernel,
    GaussianKernel,
};
pub use pca::{pca_project_2d, Pca2};
pub use special::{std_normal_cdf, std_normal_pdf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a stream identified by `seed`.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-stream seed, e.g. one per trajectory or cell.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut x = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
