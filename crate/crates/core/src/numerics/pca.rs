use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Two-component PCA of a point cloud.
#[derive(Clone, Debug)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// Orthonormal principal axes, largest variance first.
    pub axes: [Vec<f64>; 2],
    /// Sample variance (divisor `n - 1`) along each axis.
    pub variances: [f64; 2],
    /// Total sample variance of the cloud.
    pub total_variance: f64,
    /// Coordinates of every point in the `(axis0, axis1)` frame.
    pub projections: Vec<[f64; 2]>,
    /// The centred cloud has rank < 2; `axes[1]` is an arbitrary unit vector
    /// orthogonal to `axes[0]`.
    pub degenerate: bool,
}

impl Pca2 {
    pub fn explained_fraction(&self) -> [f64; 2] {
        if self.total_variance <= 0.0 {
            return [0.0, 0.0];
        }
        [
            self.variances[0] / self.total_variance,
            self.variances[1] / self.total_variance,
        ]
    }
}

/// Projects points onto their top two principal axes.
///
/// Works through the `n × n` Gram matrix of the centred points, so the cost
/// is independent of the ambient dimension beyond forming inner products.
pub fn pca_project_2d(points: &[Vec<f64>]) -> Result<Pca2> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs >= 3 points, got {n}"
        )));
    }
    let dim = points[0].len();
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs dimension >= 2, got {dim}"
        )));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::shape(dim, p.len()));
    }

    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let gram = DMatrix::from_fn(n, n, |i, j| dot(&centred[i], &centred[j]));
    let total: f64 = (0..n).map(|i| gram[(i, i)]).sum();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let scale = (n - 1) as f64;
    let tol = 1e-12 * total.max(f64::MIN_POSITIVE);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut variances = [0.0; 2];
    let mut degenerate = false;
    for (slot, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        if lambda <= tol {
            degenerate = true;
            break;
        }
        let v = eig.eigenvectors.column(k);
        let mut axis = vec![0.0; dim];
        for (i, c) in centred.iter().enumerate() {
            for (a, x) in axis.iter_mut().zip(c) {
                *a += v[i] * x;
            }
        }
        let norm = lambda.sqrt();
        axis.iter_mut().for_each(|a| *a /= norm);
        variances[slot] = lambda / scale;
        axes.push(axis);
    }
    while axes.len() < 2 {
        let axis = orthogonal_unit(&axes, dim);
        axes.push(axis);
    }
    let axes: [Vec<f64>; 2] = [axes[0].clone(), axes[1].clone()];
    let projections = centred
        .iter()
        .map(|c| [dot(c, &axes[0]), dot(c, &axes[1])])
        .collect();

    Ok(Pca2 {
        mean,
        axes,
        variances,
        total_variance: total / scale,
        projections,
        degenerate,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// First canonical basis vector made orthonormal to `basis` by Gram–Schmidt.
fn orthogonal_unit(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    for e in 0..dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        for b in basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
    unreachable!("dimension >= 2 always admits an orthogonal unit vector")
}
