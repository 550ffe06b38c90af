//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! For an `m × n` input with `m ≥ n` the columns are orthogonalised in place;
//! wide inputs are handled through the transpose. The result is the thin
//! factorisation `A = U · diag(σ) · Vᵀ` with `r = min(m, n)` singular triplets.
//! Columns of `U` whose singular value is numerically zero are completed to
//! an orthonormal set so that `UᵀU = I` always holds.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, Matrix};
use crate::error::{CrustError, Result};

const MAX_SWEEPS: usize = 80;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvdResult {
    /// `m × r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, nonnegative.
    pub sigma: Vec<f64>,
    /// `r × n`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors have consistent shapes")
    }

    /// Largest singular value, `0` for an empty spectrum.
    pub fn spectral_norm(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows() * a.cols() == 0 {
        return Err(CrustError::InvalidInput("svd of an empty matrix".into()));
    }
    a.ensure_finite()?;
    if a.rows() >= a.cols() {
        Ok(tall_svd(a))
    } else {
        let t = tall_svd(&a.transpose());
        Ok(SvdResult {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        })
    }
}

/// Singular values only.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    svd(a).map(|s| s.sigma)
}

fn tall_svd(a: &Matrix) -> SvdResult {
    let m = a.rows();
    let n = a.cols();
    // Row j of `cols` is column j of the working matrix, row j of `vrows` is column j of V.
    let mut cols = a.transpose();
    let mut vrows = Matrix::identity(n);
    let tol = f64::EPSILON * (m as f64).sqrt().max(1.0);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(cols.row(p), cols.row(p));
                let beta = dot(cols.row(q), cols.row(q));
                let gamma = dot(cols.row(p), cols.row(q));
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut cols, p, q, c, s);
                rotate_rows(&mut vrows, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| norm(cols.row(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let sigma_max = norms[order[0]];
    let zero_cut = sigma_max * f64::EPSILON * (m.max(n) as f64);

    let mut sigma = Vec::with_capacity(n);
    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut vt = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        vt.row_mut(k).copy_from_slice(vrows.row(j));
        if s > zero_cut && s > 0.0 {
            sigma.push(s);
            u_cols.push(Some(cols.row(j).iter().map(|v| v / s).collect()));
        } else {
            sigma.push(0.0);
            u_cols.push(None);
        }
    }
    let u_cols = complete_orthonormal(m, u_cols);
    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    SvdResult { u, sigma, vt }
}

fn rotate_rows(mat: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = mat.cols();
    for k in 0..cols {
        let a = mat[(p, k)];
        let b = mat[(q, k)];
        mat[(p, k)] = c * a - s * b;
        mat[(q, k)] = s * a + c * b;
    }
}

/// Fills the `None` slots with unit vectors orthogonal to every other slot.
fn complete_orthonormal(dim: usize, mut vecs: Vec<Option<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut candidate = 0usize;
    for slot in 0..vecs.len() {
        if vecs[slot].is_some() {
            continue;
        }
        loop {
            assert!(candidate < dim, "cannot complete orthonormal basis");
            let mut v = vec![0.0; dim];
            v[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram-Schmidt.
            for _ in 0..2 {
                for other in vecs.iter().flatten() {
                    let proj = dot(&v, other);
                    for (vi, oi) in v.iter_mut().zip(other) {
                        *vi -= proj * oi;
                    }
                }
            }
            let nv = norm(&v);
            if nv > 1e-6 {
                v.iter_mut().for_each(|x| *x /= nv);
                vecs[slot] = Some(v);
                break;
            }
        }
    }
    vecs.into_iter().map(|v| v.expect("filled above")).collect()
}

/// Orthonormal basis of the complement of the span of the given orthonormal columns.
pub fn orthogonal_complement(basis: &Matrix) -> Matrix {
    let dim = basis.rows();
    let k = basis.cols();
    let mut slots: Vec<Option<Vec<f64>>> = (0..k).map(|j| Some(basis.column(j))).collect();
    slots.extend((k..dim).map(|_| None));
    let all = complete_orthonormal(dim, slots);
    Matrix::from_fn(dim, dim - k, |i, j| all[k + j][i])
}
