//! Dense linear algebra and seeded randomness shared by every other module.

mod matrix;
mod rng;
mod svd;

pub use matrix::{axpy, dot, norm, Matrix};
pub use rng::Rng;
pub use svd::{orthogonal_complement, singular_values, svd, SvdResult};

use crate::error::Result;

/// Squared Euclidean distances between all pairs of rows.
///
/// Uses the difference form rather than `|a|² + |b|² − 2a·b`, so the result is
/// exactly symmetric with an exactly zero diagonal.
pub fn pairwise_sq_dists(features: &Matrix) -> Result<Matrix> {
    features.ensure_finite()?;
    let n = features.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let ri = features.row(i);
        for j in (i + 1)..n {
            let d: f64 = ri
                .iter()
                .zip(features.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}
