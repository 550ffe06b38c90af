//! Jacobian-spectrum diagnostics.
//!
//! The information space is taken to be the span of the top-`K` left singular
//! vectors of a Jacobian `J ∈ ℝ^{n×m}`; the nuisance space is its orthogonal
//! complement in `ℝⁿ`. A report measures how labels, residuals and label noise
//! distribute over the two, for the full training set and for a weighted coreset.

use serde::{Deserialize, Serialize};

use crate::coreset::{weighted_jacobian, Coreset, DissimilarityMatrix};
use crate::data::NoisyDataset;
use crate::error::{CrustError, Result};
use crate::model::MlpModel;
use crate::numerics::{dot, norm, orthogonal_complement, svd, Matrix};

/// Slack for the singular-value sandwich, relative to `max(1, ‖J_S‖)`.
pub const SANDWICH_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubspaceSplit {
    pub cutoff: usize,
    /// `n × K`, orthonormal columns.
    pub basis_info: Matrix,
    pub sigma: Vec<f64>,
    /// `σ_K` and `σ_{K+1}` coincide, so the split is fixed only by index.
    pub degenerate: bool,
}

impl SubspaceSplit {
    pub fn dim(&self) -> usize {
        self.basis_info.rows()
    }

    pub fn project_info(&self, v: &[f64]) -> Vec<f64> {
        let coeffs = self.basis_info.tr_matvec(v).expect("vector matches ambient dimension");
        self.basis_info.matvec(&coeffs).expect("shapes agree")
    }

    pub fn project_nuisance(&self, v: &[f64]) -> Vec<f64> {
        let pi = self.project_info(v);
        v.iter().zip(pi).map(|(a, b)| a - b).collect()
    }

    /// Orthonormal basis of the nuisance space, `n × (n − K)`.
    pub fn basis_nuisance(&self) -> Matrix {
        orthogonal_complement(&self.basis_info)
    }

    /// `‖Π_I v‖ / ‖v‖`, `None` for the zero vector.
    pub fn info_alignment(&self, v: &[f64]) -> Option<f64> {
        let nv = norm(v);
        (nv > 0.0).then(|| (norm(&self.project_info(v)) / nv).min(1.0))
    }
}

/// Splits the left singular space of `j` after the `cutoff` largest singular values.
pub fn split_spectrum(j: &Matrix, cutoff: usize) -> Result<SubspaceSplit> {
    if cutoff == 0 || cutoff > j.rows() {
        return Err(CrustError::InvalidParameter(format!(
            "cutoff {cutoff} outside 1..={}",
            j.rows()
        )));
    }
    let s = svd(j)?;
    let n = j.rows();
    let r = s.sigma.len();
    let basis_info = if cutoff <= r {
        s.u.select_cols(&(0..cutoff).collect::<Vec<_>>())
    } else {
        // More directions requested than the thin factorisation holds: the
        // extra ones come from the null space of Jᵀ.
        let mut cols: Vec<Vec<f64>> = (0..r).map(|c| s.u.column(c)).collect();
        let complement = orthogonal_complement(&s.u);
        cols.extend((0..cutoff - r).map(|c| complement.column(c)));
        Matrix::from_fn(n, cutoff, |i, c| cols[c][i])
    };
    let at = |k: usize| s.sigma.get(k).copied().unwrap_or(0.0);
    let degenerate = cutoff < n && (at(cutoff - 1) - at(cutoff)).abs() <= 1e-12 * at(0).max(f64::MIN_POSITIVE);
    Ok(SubspaceSplit {
        cutoff,
        basis_info,
        sigma: s.sigma,
        degenerate,
    })
}

/// Piecewise-constant subspace over the partition of the selected elements
/// by their nearest "main" medoid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterSubspace {
    /// Positions (in selection order) of the selected elements in each main cluster.
    pub partition: Vec<Vec<usize>>,
    /// `k × K'` with one normalised indicator column per nonempty part.
    pub basis: Matrix,
    pub dropped_empty: usize,
}

impl ClusterSubspace {
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let c = self.basis.tr_matvec(v).expect("vector length matches coreset size");
        self.basis.matvec(&c).expect("shapes agree")
    }
}

/// The main medoids are the first `k_main` selected elements; every selected
/// element joins the nearest of them (itself if it is one, lowest position on ties).
pub fn cluster_subspace(coreset: &Coreset, k_main: usize, dm: &DissimilarityMatrix) -> Result<ClusterSubspace> {
    let k = coreset.selected.len();
    if k_main == 0 || k_main > k {
        return Err(CrustError::InvalidParameter(format!("k_main {k_main} outside 1..={k}")));
    }
    let main = &coreset.selected[..k_main];
    let mut parts = vec![Vec::new(); k_main];
    for (pos, &e) in coreset.selected.iter().enumerate() {
        let owner = if pos < k_main {
            pos
        } else {
            let mut best = 0;
            for (l, &m) in main.iter().enumerate().skip(1) {
                if dm.get(e, m) < dm.get(e, main[best]) {
                    best = l;
                }
            }
            best
        };
        parts[owner].push(pos);
    }
    let dropped_empty = parts.iter().filter(|p| p.is_empty()).count();
    parts.retain(|p| !p.is_empty());
    let mut basis = Matrix::zeros(k, parts.len());
    for (l, p) in parts.iter().enumerate() {
        let v = 1.0 / (p.len() as f64).sqrt();
        for &i in p {
            basis[(i, l)] = v;
        }
    }
    Ok(ClusterSubspace {
        partition: parts,
        basis,
        dropped_empty,
    })
}

/// Cosines of the principal angles between two subspaces given by orthonormal bases.
pub fn principal_cosines(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    let m = a.transpose().matmul(b)?;
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(Vec::new());
    }
    Ok(svd(&m)?.sigma.into_iter().map(|c| c.min(1.0)).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub lower: f64,
    pub upper: f64,
    /// One flag per singular value of the weighted Jacobian.
    pub holds: Vec<bool>,
}

impl SandwichCheck {
    pub fn all_hold(&self) -> bool {
        self.holds.iter().all(|&h| h)
    }
}

/// `√r_min·σ_min(J_S) ≤ σ_i(J_r) ≤ √r_max·‖J_S‖` for every `i`.
pub fn sandwich_check(j_s: &Matrix, weights: &[f64]) -> Result<(SandwichCheck, Vec<f64>, Vec<f64>)> {
    let sigma_s = svd(j_s)?.sigma;
    let sigma_r = svd(&weighted_jacobian(j_s, weights)?)?.sigma;
    let r_min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = weights.iter().copied().fold(0.0, f64::max);
    let smin = sigma_s.last().copied().unwrap_or(0.0);
    let smax = sigma_s.first().copied().unwrap_or(0.0);
    let lower = r_min.sqrt() * smin;
    let upper = r_max.sqrt() * smax;
    let slack = SANDWICH_SLACK * smax.max(1.0) * r_max.sqrt().max(1.0);
    let holds = sigma_r
        .iter()
        .map(|&s| lower <= s + slack && s <= upper + slack)
        .collect();
    Ok((SandwichCheck { lower, upper, holds }, sigma_s, sigma_r))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Alignment {
    pub labels: Option<f64>,
    pub residual: Option<f64>,
    /// Noise vector `y − ỹ`; absent when there is no noise.
    pub noise: Option<f64>,
    pub true_labels: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub cutoff: usize,
    pub n: usize,
    pub coreset_size: usize,
    pub sigma_full: Vec<f64>,
    pub sigma_coreset: Vec<f64>,
    pub sigma_weighted: Vec<f64>,
    pub degenerate_split: bool,
    pub alignment_full: Alignment,
    pub alignment_coreset: Alignment,
    /// `‖Π_N(y)‖ / √n` over the full Jacobian.
    pub nuisance_ratio_full: f64,
    /// `‖Π_N(y_S)‖ / √k` over the coreset Jacobian.
    pub nuisance_ratio_coreset: f64,
    /// Fraction of noisy labels among the selected elements.
    pub coreset_noise_fraction: f64,
    /// `√r_min·σ_min(J_S)`.
    pub alpha: f64,
    /// `‖J‖ + ε`.
    pub beta: f64,
    /// `|√r_max·‖J_S‖ − ‖J‖|`.
    pub epsilon: f64,
    /// `1 / (2β²)`.
    pub implied_eta: f64,
    pub sandwich: SandwichCheck,
    /// Principal-angle cosines between the cluster subspace and the top
    /// singular subspace of the coreset Jacobian, when a cluster subspace was supplied.
    pub cluster_alignment: Option<Vec<f64>>,
    /// `‖Π_{S₊}(y_S − ỹ_S)‖_∞` over the cluster subspace, when supplied.
    pub cluster_noise_sup: Option<f64>,
}

fn alignment(split: &SubspaceSplit, y: &[f64], y_true: &[f64], outputs: &[f64]) -> Alignment {
    let residual: Vec<f64> = outputs.iter().zip(y).map(|(f, y)| f - y).collect();
    let noise: Vec<f64> = y.iter().zip(y_true).map(|(a, b)| a - b).collect();
    Alignment {
        labels: split.info_alignment(y),
        residual: split.info_alignment(&residual),
        noise: split.info_alignment(&noise),
        true_labels: split.info_alignment(y_true),
    }
}

/// Spectrum diagnostics for one model snapshot and one weighted coreset
/// (`selected` are dataset indices, `weights` their cluster sizes).
pub fn report(
    model: &MlpModel,
    ds: &NoisyDataset,
    selected: &[usize],
    weights: &[f64],
    cutoff: usize,
    cluster: Option<&ClusterSubspace>,
) -> Result<SpectrumReport> {
    if selected.is_empty() || selected.len() != weights.len() {
        return Err(CrustError::InvalidInput(
            "coreset must be nonempty with one weight per element".into(),
        ));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let j = model.jacobian_rows(ds, &all)?;
    let j_s = j.select_rows(selected);
    let outputs: Vec<f64> = (0..ds.len())
        .map(|i| model.forward(ds.x.row(i)))
        .collect::<Result<_>>()?;

    let full = split_spectrum(&j, cutoff.min(ds.len()))?;
    let core = split_spectrum(&j_s, cutoff.min(selected.len()))?;

    let pick = |v: &[f64]| -> Vec<f64> { selected.iter().map(|&i| v[i]).collect() };
    let (y_s, yt_s, out_s) = (pick(&ds.y_observed), pick(&ds.y_true), pick(&outputs));

    let n = ds.len() as f64;
    let k = selected.len() as f64;
    let nuisance_ratio_full = norm(&full.project_nuisance(&ds.y_observed)) / n.sqrt();
    let nuisance_ratio_coreset = norm(&core.project_nuisance(&y_s)) / k.sqrt();

    let (sandwich, sigma_coreset, sigma_weighted) = sandwich_check(&j_s, weights)?;
    let r_min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = weights.iter().copied().fold(0.0, f64::max);
    let norm_j = full.sigma[0];
    let norm_js = sigma_coreset[0];
    let alpha = r_min.sqrt() * sigma_coreset.last().copied().unwrap_or(0.0);
    let epsilon = (r_max.sqrt() * norm_js - norm_j).abs();
    let beta = norm_j + epsilon;

    let (cluster_alignment, cluster_noise_sup) = match cluster {
        Some(c) => {
            let noise: Vec<f64> = y_s.iter().zip(&yt_s).map(|(a, b)| a - b).collect();
            let sup = c.project(&noise).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (Some(principal_cosines(&c.basis, &core.basis_info)?), Some(sup))
        }
        None => (None, None),
    };

    let noisy = selected.iter().filter(|&&i| ds.noise_flags[i]).count();
    Ok(SpectrumReport {
        cutoff,
        n: ds.len(),
        coreset_size: selected.len(),
        sigma_full: full.sigma.clone(),
        sigma_coreset,
        sigma_weighted,
        degenerate_split: full.degenerate || core.degenerate,
        alignment_full: alignment(&full, &ds.y_observed, &ds.y_true, &outputs),
        alignment_coreset: alignment(&core, &y_s, &yt_s, &out_s),
        nuisance_ratio_full,
        nuisance_ratio_coreset,
        coreset_noise_fraction: noisy as f64 / k,
        alpha,
        beta,
        epsilon,
        implied_eta: if beta > 0.0 { 1.0 / (2.0 * beta * beta) } else { f64::INFINITY },
        sandwich,
        cluster_alignment,
        cluster_noise_sup,
    })
}

/// `‖v‖²` split into information and nuisance parts; used by projector checks.
pub fn energy_split(split: &SubspaceSplit, v: &[f64]) -> (f64, f64) {
    let pi = split.project_info(v);
    let pn = split.project_nuisance(v);
    (dot(&pi, &pi), dot(&pn, &pn))
}
