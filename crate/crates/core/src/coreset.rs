//! Facility-location coreset selection over gradient-surrogate dissimilarities.
//!
//! Maximising `F(S) = Σ_{i∈V} max_{j∈S} (d0 − d_ij)` under `|S| ≤ k` is the
//! k-medoids problem in disguise. `F` is monotone submodular, so the greedy
//! algorithm is within `1 − 1/e` of optimal. Three maximisers share one gain
//! routine and one tie rule (lowest index wins), so the naive and lazy
//! variants return identical selections.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CrustError, Result};
use crate::numerics::{pairwise_sq_dists, svd, Matrix, Rng};

/// Symmetric, nonnegative, zero-diagonal dissimilarities with an upper bound `d0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    dist: Matrix,
    d0: f64,
}

impl DissimilarityMatrix {
    /// Euclidean distances between feature rows; `d0` is the exact maximum.
    pub fn from_features(features: &Matrix) -> Result<Self> {
        let mut dist = pairwise_sq_dists(features)?;
        let n = dist.rows();
        for i in 0..n {
            for j in 0..n {
                dist[(i, j)] = dist[(i, j)].sqrt();
            }
        }
        let d0 = dist.data().iter().copied().fold(0.0, f64::max);
        Ok(DissimilarityMatrix { dist, d0 })
    }

    /// Validates a precomputed matrix. `d0 = None` picks the exact maximum.
    pub fn new(dist: Matrix, d0: Option<f64>) -> Result<Self> {
        let n = dist.rows();
        if dist.cols() != n {
            return Err(CrustError::InvalidInput("dissimilarities must be square".into()));
        }
        dist.ensure_finite()?;
        let mut max = 0.0f64;
        for i in 0..n {
            if dist[(i, i)] != 0.0 {
                return Err(CrustError::InvalidInput(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = dist[(i, j)];
                if v < 0.0 {
                    return Err(CrustError::InvalidInput(format!("negative entry at ({i}, {j})")));
                }
                if v != dist[(j, i)] {
                    return Err(CrustError::InvalidInput(format!("asymmetric at ({i}, {j})")));
                }
                max = max.max(v);
            }
        }
        let d0 = d0.unwrap_or(max);
        if d0 < max {
            return Err(CrustError::InvalidInput(format!(
                "d0 = {d0} is below the largest dissimilarity {max}"
            )));
        }
        Ok(DissimilarityMatrix { dist, d0 })
    }

    pub fn len(&self) -> usize {
        self.dist.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.rows() == 0
    }

    pub fn d0(&self) -> f64 {
        self.d0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.dist
    }

    #[inline]
    fn similarity(&self, i: usize, j: usize) -> f64 {
        self.d0 - self.dist[(i, j)]
    }

    /// `F(e | S)` given the current per-element coverage `max_{j∈S} (d0 − d_ij)`.
    fn gain(&self, e: usize, coverage: &[f64]) -> f64 {
        let row = self.dist.row(e);
        let mut g = 0.0;
        for (d, &c) in row.iter().zip(coverage) {
            let s = self.d0 - d;
            if s > c {
                g += s - c;
            }
        }
        g
    }

    fn cover(&self, e: usize, coverage: &mut [f64]) {
        for (i, c) in coverage.iter_mut().enumerate() {
            let s = self.similarity(e, i);
            if s > *c {
                *c = s;
            }
        }
    }
}

/// Selected medoids with their clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coreset {
    /// Ground-set indices in selection order.
    pub selected: Vec<usize>,
    /// For each ground-set element, the position in `selected` of its medoid.
    pub assignment: Vec<usize>,
    /// Cluster size per medoid, parallel to `selected`.
    pub weights: Vec<usize>,
    pub objective_value: f64,
    /// Number of marginal-gain evaluations performed during selection.
    pub gain_evaluations: usize,
}

impl Coreset {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Ground-set indices of the members of cluster `pos` (including its medoid), ascending.
    pub fn members(&self, pos: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == pos)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.selected.len()];
        for (i, &a) in self.assignment.iter().enumerate() {
            out[a].push(i);
        }
        out
    }

    /// One line per medoid: `medoid,weight,member;member;…`, with indices
    /// translated through `ground` (pass `None` for local indices).
    pub fn to_text(&self, ground: Option<&[usize]>) -> String {
        let map = |i: usize| ground.map_or(i, |g| g[i]);
        let mut s = String::new();
        for (pos, members) in self.clusters().iter().enumerate() {
            let m: Vec<String> = members.iter().map(|&i| map(i).to_string()).collect();
            writeln!(s, "{},{},{}", map(self.selected[pos]), self.weights[pos], m.join(";")).unwrap();
        }
        s
    }

    pub fn dump(&self, ground: Option<&[usize]>, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text(ground))?;
        Ok(())
    }
}

/// `Σ_{i∈V} max_{j∈S} (d0 − d_ij)`, with `F(∅) = 0`.
pub fn facility_location_value(dm: &DissimilarityMatrix, selected: &[usize]) -> Result<f64> {
    check_indices(dm, selected)?;
    if selected.is_empty() {
        return Ok(0.0);
    }
    let mut coverage = vec![f64::NEG_INFINITY; dm.len()];
    for &j in selected {
        dm.cover(j, &mut coverage);
    }
    Ok(coverage.iter().sum())
}

fn check_indices(dm: &DissimilarityMatrix, idx: &[usize]) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= dm.len()) {
        return Err(CrustError::InvalidInput(format!(
            "index {bad} out of range for {} elements",
            dm.len()
        )));
    }
    Ok(())
}

fn check_budget(dm: &DissimilarityMatrix, k: usize) -> Result<()> {
    if k == 0 || k > dm.len() {
        return Err(CrustError::InvalidParameter(format!(
            "budget {k} outside 1..={}",
            dm.len()
        )));
    }
    Ok(())
}

/// Builds the coreset record from a finished selection: nearest-medoid
/// assignment (a medoid always owns itself, other ties go to the lowest
/// ground-set index) and cluster-size weights.
pub fn finalize(dm: &DissimilarityMatrix, selected: Vec<usize>, gain_evaluations: usize) -> Result<Coreset> {
    check_indices(dm, &selected)?;
    let n = dm.len();
    let mut by_index: Vec<(usize, usize)> = selected.iter().enumerate().map(|(p, &j)| (j, p)).collect();
    by_index.sort_unstable();
    let mut assignment = vec![0usize; n];
    for (i, slot) in assignment.iter_mut().enumerate() {
        if let Some(&(_, p)) = by_index.iter().find(|(j, _)| *j == i) {
            *slot = p;
            continue;
        }
        let mut best = by_index[0];
        for &(j, p) in &by_index[1..] {
            if dm.get(i, j) < dm.get(i, best.0) {
                best = (j, p);
            }
        }
        *slot = best.1;
    }
    let mut weights = vec![0usize; selected.len()];
    for &a in &assignment {
        weights[a] += 1;
    }
    let objective_value = facility_location_value(dm, &selected)?;
    Ok(Coreset {
        selected,
        assignment,
        weights,
        objective_value,
        gain_evaluations,
    })
}

/// Argmax over `candidates` by marginal gain, lowest index on ties.
fn best_of(
    dm: &DissimilarityMatrix,
    candidates: impl Iterator<Item = usize>,
    coverage: &[f64],
    evals: &mut usize,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for e in candidates {
        let g = dm.gain(e, coverage);
        *evals += 1;
        best = match best {
            Some((b, bg)) if bg > g || (bg == g && b < e) => Some((b, bg)),
            _ => Some((e, g)),
        };
    }
    best
}

/// Classical greedy: `k` rounds of full argmax over the unselected elements.
pub fn greedy_select(dm: &DissimilarityMatrix, k: usize) -> Result<Coreset> {
    check_budget(dm, k)?;
    let n = dm.len();
    let mut coverage = vec![0.0; n];
    let mut in_set = vec![false; n];
    let mut selected = Vec::with_capacity(k);
    let mut evals = 0;
    for _ in 0..k {
        let (e, _) = best_of(dm, (0..n).filter(|&e| !in_set[e]), &coverage, &mut evals)
            .expect("budget does not exceed ground set");
        in_set[e] = true;
        selected.push(e);
        dm.cover(e, &mut coverage);
    }
    finalize(dm, selected, evals)
}

#[derive(PartialEq)]
struct Bound {
    gain: f64,
    index: usize,
    round: usize,
}

impl Eq for Bound {}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on gain, then on the *lower* index.
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazy greedy: stale gains are upper bounds by submodularity, so an element
/// whose refreshed gain still tops the heap is the exact argmax.
pub fn lazy_greedy_select(dm: &DissimilarityMatrix, k: usize) -> Result<Coreset> {
    check_budget(dm, k)?;
    let n = dm.len();
    let mut coverage = vec![0.0; n];
    let mut evals = 0;
    let mut heap: BinaryHeap<Bound> = (0..n)
        .map(|e| {
            evals += 1;
            Bound {
                gain: dm.gain(e, &coverage),
                index: e,
                round: 0,
            }
        })
        .collect();
    let mut selected = Vec::with_capacity(k);
    for round in 0..k {
        loop {
            let top = heap.pop().expect("heap holds every unselected element");
            if top.round == round {
                selected.push(top.index);
                dm.cover(top.index, &mut coverage);
                break;
            }
            evals += 1;
            heap.push(Bound {
                gain: dm.gain(top.index, &coverage),
                index: top.index,
                round,
            });
        }
    }
    finalize(dm, selected, evals)
}

/// Stochastic greedy: each round maximises over `sample_size` elements drawn
/// uniformly without replacement from the unselected ones.
pub fn stochastic_greedy_select(
    dm: &DissimilarityMatrix,
    k: usize,
    sample_size: usize,
    rng: &mut Rng,
) -> Result<Coreset> {
    check_budget(dm, k)?;
    let n = dm.len();
    if sample_size == 0 || sample_size > n {
        return Err(CrustError::InvalidParameter(format!(
            "sample size {sample_size} outside 1..={n}"
        )));
    }
    let mut coverage = vec![0.0; n];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected = Vec::with_capacity(k);
    let mut evals = 0;
    for _ in 0..k {
        let s = sample_size.min(remaining.len());
        let sample = if s == remaining.len() {
            remaining.clone()
        } else {
            rng.sample_without_replacement(&remaining, s)
        };
        let (e, _) = best_of(dm, sample.into_iter(), &coverage, &mut evals)
            .expect("sample is nonempty");
        remaining.retain(|&r| r != e);
        selected.push(e);
        dm.cover(e, &mut coverage);
    }
    finalize(dm, selected, evals)
}

/// Sample size `⌈(n/k) ln(1/ε)⌉` clamped to `1..=n`.
pub fn stochastic_sample_size(n: usize, k: usize, epsilon: f64) -> usize {
    let s = (n as f64 / k as f64 * (1.0 / epsilon).ln()).ceil() as usize;
    s.clamp(1, n)
}

/// Spectral norm of the part of `J`'s rows outside the span of the rows in `subset`.
pub fn row_subset_residual(j: &Matrix, subset: &[usize]) -> Result<f64> {
    let js = j.select_rows(subset);
    let basis: Vec<Vec<f64>> = if js.rows() == 0 {
        Vec::new()
    } else {
        let s = svd(&js)?;
        let cut = s.spectral_norm() * 1e-12;
        (0..s.sigma.len())
            .filter(|&r| s.sigma[r] > cut)
            .map(|r| s.vt.row(r).to_vec())
            .collect()
    };
    let mut resid = j.clone();
    for i in 0..resid.rows() {
        let row = resid.row_mut(i);
        for b in &basis {
            let p = crate::numerics::dot(row, b);
            for (x, y) in row.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    if resid.frobenius_norm() == 0.0 {
        return Ok(0.0);
    }
    Ok(svd(&resid)?.spectral_norm())
}

/// Exhaustive best rank-`k` row subset: argmin over `|S| = k` of
/// `‖Jᵀ − P_S Jᵀ‖₂`. Tiny instances only.
pub fn best_rank_k_rows_bruteforce(j: &Matrix, k: usize) -> Result<Vec<usize>> {
    if j.rows() > 15 || k > 4 {
        return Err(CrustError::ScaleExceeded(format!(
            "{} rows with k = {k} (limits: 15 rows, k ≤ 4)",
            j.rows()
        )));
    }
    if k == 0 || k > j.rows() {
        return Err(CrustError::InvalidParameter(format!("k = {k} outside 1..={}", j.rows())));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in combinations(j.rows(), k) {
        let err = row_subset_residual(j, &subset)?;
        if best.as_ref().is_none_or(|(_, b)| err < *b) {
            best = Some((subset, err));
        }
    }
    Ok(best.expect("at least one subset").0)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut next = if k <= n { Some((0..k).collect::<Vec<_>>()) } else { None };
    std::iter::from_fn(move || {
        let cur = next.take()?;
        let mut c = cur.clone();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if c[i] < n - k + i {
                c[i] += 1;
                for t in i + 1..k {
                    c[t] = c[t - 1] + 1;
                }
                next = Some(c);
                break;
            }
        }
        Some(cur)
    })
}

/// Scales row `j` of the Jacobian by `√r_j`, so that `J_rᵀ J_r = Jᵀ diag(r) J`
/// (the curvature of the cluster-weighted loss).
pub fn weighted_jacobian(j_rows: &Matrix, weights: &[f64]) -> Result<Matrix> {
    if weights.len() != j_rows.rows() {
        return Err(CrustError::DimensionMismatch {
            expected: j_rows.rows(),
            got: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0)) {
        return Err(CrustError::InvalidParameter(format!("weights must be positive, got {w}")));
    }
    let mut out = j_rows.clone();
    for (i, &w) in weights.iter().enumerate() {
        let s = w.sqrt();
        out.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_instance(points: &[f64]) -> DissimilarityMatrix {
        let f = Matrix::from_vec(points.len(), 1, points.to_vec()).unwrap();
        DissimilarityMatrix::from_features(&f).unwrap()
    }

    #[test]
    fn full_set_value() {
        let dm = line_instance(&[0.0, 1.0, 5.0, 6.0]);
        let all: Vec<usize> = (0..4).collect();
        assert_eq!(facility_location_value(&dm, &all).unwrap(), 4.0 * dm.d0());
        assert_eq!(facility_location_value(&dm, &[]).unwrap(), 0.0);
    }

    #[test]
    fn singleton_value() {
        let dm = line_instance(&[0.0, 1.0, 5.0, 6.0]);
        let expect: f64 = (0..4).map(|i| dm.d0() - dm.get(i, 2)).sum();
        assert_eq!(facility_location_value(&dm, &[2]).unwrap(), expect);
    }

    #[test]
    fn k1_is_one_medoid() {
        let dm = line_instance(&[0.0, 1.0, 2.0, 10.0]);
        let c = greedy_select(&dm, 1).unwrap();
        // argmin of total distance: point 1 (1 + 0 + 1 + 9 = 11) vs point 2 (2 + 1 + 0 + 8 = 11): tie → 1
        assert_eq!(c.selected, vec![1]);
        assert_eq!(c.weights, vec![4]);
    }

    #[test]
    fn two_clusters_two_medoids() {
        let dm = line_instance(&[0.0, 0.1, 0.2, 100.0, 100.1, 100.2]);
        // First pick: points 2 and 3 tie on total distance, lower index wins.
        let c = greedy_select(&dm, 2).unwrap();
        assert_eq!(c.selected, vec![2, 4]);
        assert_eq!(c.weights, vec![3, 3]);
    }

    #[test]
    fn duplicate_medoids_own_themselves() {
        let dm = line_instance(&[0.0, 0.0, 0.0]);
        let c = finalize(&dm, vec![2, 0], 0).unwrap();
        assert_eq!(c.assignment, vec![1, 1, 0]);
        assert_eq!(c.weights, vec![1, 2]);
    }

    #[test]
    fn all_equal_distances_tie_to_lowest() {
        let n = 6;
        let dist = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        let dm = DissimilarityMatrix::new(dist, None).unwrap();
        let g = greedy_select(&dm, 3).unwrap();
        let l = lazy_greedy_select(&dm, 3).unwrap();
        assert_eq!(g.selected, vec![0, 1, 2]);
        assert_eq!(l.selected, g.selected);
    }

    #[test]
    fn budget_out_of_range() {
        let dm = line_instance(&[0.0, 1.0]);
        assert!(greedy_select(&dm, 0).is_err());
        assert!(lazy_greedy_select(&dm, 3).is_err());
        assert!(stochastic_greedy_select(&dm, 1, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn rejects_bad_matrices() {
        let asym = Matrix::from_rows(&[[0.0, 1.0], [2.0, 0.0]]).unwrap();
        assert!(DissimilarityMatrix::new(asym, None).is_err());
        let sym = Matrix::from_rows(&[[0.0, 3.0], [3.0, 0.0]]).unwrap();
        assert!(DissimilarityMatrix::new(sym.clone(), Some(2.0)).is_err());
        assert!(DissimilarityMatrix::new(sym, Some(3.0)).is_ok());
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(8, 2).count(), 28);
        assert_eq!(combinations(4, 4).collect::<Vec<_>>(), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn rank_k_scale_guard() {
        let j = Matrix::zeros(16, 2);
        assert!(matches!(best_rank_k_rows_bruteforce(&j, 2), Err(CrustError::ScaleExceeded(_))));
    }

    #[test]
    fn weighted_jacobian_rejects_nonpositive() {
        let j = Matrix::identity(2);
        assert!(weighted_jacobian(&j, &[1.0, 0.0]).is_err());
        assert_eq!(weighted_jacobian(&j, &[1.0, 1.0]).unwrap(), j);
    }
}
