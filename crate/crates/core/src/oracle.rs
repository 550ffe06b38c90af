//! Brute-force references for the optimised code paths.
//!
//! Everything here is written with its own loops: no call reaches the
//! selection, backprop or SVD routines it is meant to check.

use crate::coreset::DissimilarityMatrix;
use crate::error::{CrustError, Result};
use crate::model::MlpModel;
use crate::numerics::Matrix;

/// `Σ_i max_{j∈S} (d0 − d_ij)` by direct double loop.
pub fn naive_facility_value(dm: &DissimilarityMatrix, selected: &[usize]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..dm.len() {
        let mut best = f64::NEG_INFINITY;
        for &j in selected {
            let v = dm.d0() - dm.get(i, j);
            if v > best {
                best = v;
            }
        }
        total += best;
    }
    total
}

fn for_each_subset(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if cur.len() == k {
        f(cur);
        return;
    }
    let need = k - cur.len();
    for i in start..=n.saturating_sub(need) {
        cur.push(i);
        for_each_subset(n, k, i + 1, cur, f);
        cur.pop();
    }
}

/// Exact facility-location optimum over all `k`-subsets; ties go to the
/// lexicographically smallest subset.
pub fn exhaustive_facility_location(dm: &DissimilarityMatrix, k: usize) -> Result<(Vec<usize>, f64)> {
    let n = dm.len();
    if n > 15 || k > 5 {
        return Err(CrustError::ScaleExceeded(format!("n = {n}, k = {k} (limits: n ≤ 15, k ≤ 5)")));
    }
    if k == 0 || k > n {
        return Err(CrustError::InvalidParameter(format!("k = {k} outside 1..={n}")));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_subset(n, k, 0, &mut Vec::with_capacity(k), &mut |s| {
        let v = naive_facility_value(dm, s);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((s.to_vec(), v));
        }
    });
    Ok(best.expect("k ≤ n gives at least one subset"))
}

/// Euclidean distances by direct double loop.
pub fn naive_distances(features: &Matrix) -> Matrix {
    let n = features.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for c in 0..features.cols() {
                let d = features[(i, c)] - features[(j, c)];
                s += d * d;
            }
            out[(i, j)] = s.sqrt();
        }
    }
    out
}

/// Forward pass written out from the raw weights.
pub fn reference_forward(weights: &[Matrix], x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let last = weights.len() - 1;
    for (l, w) in weights.iter().enumerate() {
        let mut z = vec![0.0; w.rows()];
        for (r, zr) in z.iter_mut().enumerate() {
            for (c, ac) in a.iter().enumerate() {
                *zr += w[(r, c)] * ac;
            }
        }
        a = if l == last { z } else { z.into_iter().map(f64::tanh).collect() };
    }
    a[0]
}

fn perturbed(weights: &[Matrix], flat: usize, delta: f64) -> Vec<Matrix> {
    let mut w = weights.to_vec();
    let mut off = flat;
    for m in &mut w {
        let len = m.rows() * m.cols();
        if off < len {
            let (r, c) = (off / m.cols(), off % m.cols());
            m[(r, c)] += delta;
            break;
        }
        off -= len;
    }
    w
}

fn central_difference(weights: &[Matrix], h: f64, mut objective: impl FnMut(&[Matrix]) -> f64) -> Vec<f64> {
    let m: usize = weights.iter().map(|w| w.rows() * w.cols()).sum();
    (0..m)
        .map(|p| {
            let plus = objective(&perturbed(weights, p, h));
            let minus = objective(&perturbed(weights, p, -h));
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of `½ (f(W, x) − y)²`.
pub fn finite_difference_gradient(model: &MlpModel, x: &[f64], y: f64, h: f64) -> Vec<f64> {
    assert!(h > 0.0);
    central_difference(model.weights(), h, |w| {
        let r = reference_forward(w, x) - y;
        0.5 * r * r
    })
}

/// Central-difference row of the Jacobian `∂f(W, x)/∂W`.
pub fn finite_difference_jacobian_row(model: &MlpModel, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0);
    central_difference(model.weights(), h, |w| reference_forward(w, x))
}

/// Central-difference gradient of the loss with respect to the pre-activation
/// feeding the final `tanh → linear` block (the input itself for a linear model).
pub fn finite_difference_feature(model: &MlpModel, x: &[f64], y: f64, h: f64) -> Vec<f64> {
    let weights = model.weights();
    let l = weights.len();
    let (z, head): (Vec<f64>, Box<dyn Fn(&[f64]) -> f64>) = if l == 1 {
        let w = weights[0].clone();
        (x.to_vec(), Box::new(move |v: &[f64]| (0..w.cols()).map(|c| w[(0, c)] * v[c]).sum()))
    } else {
        // Pre-activation of the last hidden layer.
        let mut a = x.to_vec();
        let mut z: Vec<f64> = Vec::new();
        for w in &weights[..l - 1] {
            z = (0..w.rows())
                .map(|r| (0..w.cols()).map(|c| w[(r, c)] * a[c]).sum())
                .collect();
            a = z.iter().map(|v| v.tanh()).collect();
        }
        let w = weights[l - 1].clone();
        (z, Box::new(move |v: &[f64]| (0..w.cols()).map(|c| w[(0, c)] * v[c].tanh()).sum()))
    };
    (0..z.len())
        .map(|i| {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let lp = 0.5 * (head(&zp) - y).powi(2);
            let lm = 0.5 * (head(&zm) - y).powi(2);
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn power_spectral_norm(a: &Matrix, iters: usize) -> f64 {
    let (rows, cols) = (a.rows(), a.cols());
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + (i as f64 * 0.618_033_988_7).fract()).collect();
    let mut sigma = 0.0;
    for _ in 0..iters {
        let mut av = vec![0.0; rows];
        for r in 0..rows {
            for c in 0..cols {
                av[r] += a[(r, c)] * v[c];
            }
        }
        let mut atav = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                atav[c] += a[(r, c)] * av[r];
            }
        }
        let nrm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        sigma = nrm.sqrt();
        v = atav.into_iter().map(|x| x / nrm).collect();
    }
    sigma
}

/// Rank-`k` row-subset error by Gram–Schmidt projection and power iteration.
pub fn reference_row_subset_error(j: &Matrix, subset: &[usize]) -> f64 {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for &s in subset {
        let mut v = j.row(s).to_vec();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = j.row(s).iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-10 * scale.max(1e-300) {
            basis.push(v.into_iter().map(|x| x / nrm).collect());
        }
    }
    let mut r = j.clone();
    for i in 0..r.rows() {
        for b in &basis {
            let p: f64 = r.row(i).iter().zip(b).map(|(x, y)| x * y).sum();
            r.row_mut(i).iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
    power_spectral_norm(&r, 500)
}

/// Exhaustive rank-`k` row subset with the reference error routine.
pub fn reference_best_rank_k_rows(j: &Matrix, k: usize) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_subset(j.rows(), k, 0, &mut Vec::new(), &mut |s| {
        let e = reference_row_subset_error(j, s);
        if best.as_ref().is_none_or(|(_, b)| e < *b) {
            best = Some((s.to_vec(), e));
        }
    });
    best.expect("k ≤ rows")
}

/// Max over entries of `|a − b| / max(1, |b|)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
