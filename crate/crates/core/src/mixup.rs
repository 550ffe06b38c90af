//! Mixup of each medoid with a few random members of its cluster.
//!
//! A cluster `V_j` with medoid `j` contributes `|R_j|` rows
//! `x̂ = λ x_i + (1 − λ) x_j`, `ŷ = λ y_i + (1 − λ) y_j` for `i ∈ R_j ⊂ V_j ∖ {j}`,
//! each weighted `|V_j| / |R_j|` so that the batch weights sum to the
//! population the clusters cover.

use serde::{Deserialize, Serialize};

use crate::coreset::Coreset;
use crate::data::NoisyDataset;
use crate::error::{CrustError, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixupParams {
    /// `|R_j|`; clamped to the number of non-medoid members.
    pub sample_count: usize,
    pub alpha: f64,
    /// Fixes `λ` for every pair instead of sampling it.
    pub forced_lambda: Option<f64>,
}

impl Default for MixupParams {
    fn default() -> Self {
        MixupParams {
            sample_count: 1,
            alpha: 1.0,
            forced_lambda: None,
        }
    }
}

impl MixupParams {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(CrustError::InvalidParameter("sample count must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CrustError::InvalidParameter(format!(
                "mixup alpha must be positive, got {}",
                self.alpha
            )));
        }
        if let Some(l) = self.forced_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(CrustError::InvalidParameter(format!("lambda {l} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub medoid: usize,
    /// `None` for a singleton cluster, whose row is the raw medoid.
    pub member: Option<usize>,
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub inputs: Matrix,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl MixedBatch {
    pub fn empty(dim: usize) -> Self {
        MixedBatch {
            inputs: Matrix::zeros(0, dim),
            labels: Vec::new(),
            weights: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Concatenates batches in order.
    pub fn concat(dim: usize, parts: Vec<MixedBatch>) -> MixedBatch {
        let rows: usize = parts.iter().map(|p| p.len()).sum();
        let mut data = Vec::with_capacity(rows * dim);
        let mut out = MixedBatch::empty(dim);
        for p in parts {
            data.extend_from_slice(p.inputs.data());
            out.labels.extend(p.labels);
            out.weights.extend(p.weights);
            out.provenance.extend(p.provenance);
        }
        out.inputs = Matrix::from_vec(rows, dim, data).expect("uniform width");
        out
    }
}

/// Mixes medoid `medoid` with a uniform sample of its other cluster members.
/// `members` are dataset indices and must contain the medoid.
pub fn mix_cluster(
    ds: &NoisyDataset,
    medoid: usize,
    members: &[usize],
    params: &MixupParams,
    rng: &mut Rng,
) -> Result<MixedBatch> {
    params.validate()?;
    if !members.contains(&medoid) {
        return Err(CrustError::InvalidInput(format!("medoid {medoid} is not among its members")));
    }
    let others: Vec<usize> = members.iter().copied().filter(|&i| i != medoid).collect();
    let cluster_size = members.len() as f64;
    let dim = ds.dim();
    if others.is_empty() {
        return Ok(MixedBatch {
            inputs: ds.x.select_rows(&[medoid]),
            labels: vec![ds.y_observed[medoid]],
            weights: vec![cluster_size],
            provenance: vec![Provenance {
                medoid,
                member: None,
                lambda: None,
            }],
        });
    }
    let count = params.sample_count.min(others.len());
    let sample = rng.sample_without_replacement(&others, count);
    let weight = cluster_size / count as f64;
    let xj = ds.x.row(medoid);
    let yj = ds.y_observed[medoid];
    let mut data = Vec::with_capacity(count * dim);
    let mut out = MixedBatch::empty(dim);
    for i in sample {
        let lambda = match params.forced_lambda {
            Some(l) => l,
            None => rng.beta_sample(params.alpha)?,
        };
        data.extend(
            ds.x.row(i)
                .iter()
                .zip(xj)
                .map(|(xi, xj)| lambda * xi + (1.0 - lambda) * xj),
        );
        out.labels.push(lambda * ds.y_observed[i] + (1.0 - lambda) * yj);
        out.weights.push(weight);
        out.provenance.push(Provenance {
            medoid,
            member: Some(i),
            lambda: Some(lambda),
        });
    }
    out.inputs = Matrix::from_vec(count, dim, data)?;
    Ok(out)
}

/// Mixes every cluster of `coreset`, in selection order. `ground[i]` is the
/// dataset index of coreset element `i`. Each cluster draws from its own substream.
pub fn mix_all(
    ds: &NoisyDataset,
    coreset: &Coreset,
    ground: &[usize],
    params: &MixupParams,
    rng: &Rng,
) -> Result<MixedBatch> {
    if ground.len() != coreset.assignment.len() {
        return Err(CrustError::DimensionMismatch {
            expected: coreset.assignment.len(),
            got: ground.len(),
        });
    }
    let parts = coreset
        .clusters()
        .into_iter()
        .enumerate()
        .map(|(pos, local)| {
            let members: Vec<usize> = local.iter().map(|&i| ground[i]).collect();
            let medoid = ground[coreset.selected[pos]];
            mix_cluster(ds, medoid, &members, params, &mut rng.substream_indexed("cluster", pos as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixedBatch::concat(ds.dim(), parts))
}

/// Raw medoids weighted by cluster size (coreset training without mixup).
pub fn medoid_batch(ds: &NoisyDataset, coreset: &Coreset, ground: &[usize]) -> MixedBatch {
    let idx: Vec<usize> = coreset.selected.iter().map(|&s| ground[s]).collect();
    MixedBatch {
        inputs: ds.x.select_rows(&idx),
        labels: idx.iter().map(|&i| ds.y_observed[i]).collect(),
        weights: coreset.weights.iter().map(|&w| w as f64).collect(),
        provenance: idx
            .iter()
            .map(|&m| Provenance {
                medoid: m,
                member: None,
                lambda: None,
            })
            .collect(),
    }
}
