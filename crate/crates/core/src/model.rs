//! Fully connected scalar-output network trained with the squared loss.
//!
//! Hidden layers use `tanh`; the output layer is the identity. There are no
//! bias terms, so the parameter vector is the concatenation of the row-major
//! weight matrices `W⁽¹⁾ … W⁽ᴸ⁾` and has `m = Σ d_l·d_{l−1}` entries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NoisyDataset;
use crate::error::{CrustError, Result};
use crate::numerics::{Matrix, Rng};

/// Refuse to materialise Jacobians with more entries than this (≈ 800 MB).
pub const JACOBIAN_ENTRY_BUDGET: usize = 100_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
}

/// Loss-gradient of one example together with its residual `f(W, x) − y`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerExampleGrad {
    pub index: usize,
    pub gradient: Vec<f64>,
    pub residual: f64,
}

/// Per-example gradients of the loss with respect to the pre-activation that
/// feeds the final `tanh → linear` block, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientFeatures {
    pub indices: Vec<usize>,
    pub features: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsetLoss {
    pub value: f64,
    /// Set when the subset was empty and the loss defaulted to zero.
    pub empty_subset: bool,
}

/// Cached forward pass. `pre[l]` and `act[l]` belong to layer `l + 1`;
/// `act` additionally starts with the input.
#[derive(Clone, Debug)]
pub struct Trace {
    pub pre: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> f64 {
        self.pre.last().expect("at least one layer")[0]
    }
}

/// Index of the class value closest to `value`; ties go to the lower index.
pub fn nearest_class(value: f64, class_values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (c, &v) in class_values.iter().enumerate() {
        let d = (value - v).abs();
        if d < best_dist {
            best = c;
            best_dist = d;
        }
    }
    best
}

fn tanh_prime(z: f64) -> f64 {
    let t = z.tanh();
    1.0 - t * t
}

impl MlpModel {
    /// Gaussian initialisation with variance `scale² / fan_in`.
    pub fn init(layer_dims: &[usize], rng: &mut Rng, scale: f64) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| {
                let std = scale / (w[0] as f64).sqrt();
                Matrix::from_fn(w[1], w[0], |_, _| std * rng.normal())
            })
            .collect();
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            weights,
        })
    }

    pub fn from_weights(weights: Vec<Matrix>) -> Result<Self> {
        let mut dims = Vec::with_capacity(weights.len() + 1);
        if let Some(first) = weights.first() {
            dims.push(first.cols());
        }
        for (l, w) in weights.iter().enumerate() {
            if w.cols() != dims[l] {
                return Err(CrustError::InvalidArchitecture(format!(
                    "layer {} expects {} inputs but previous layer has {}",
                    l + 1,
                    w.cols(),
                    dims[l]
                )));
            }
            dims.push(w.rows());
        }
        Self::check_dims(&dims)?;
        Ok(MlpModel {
            layer_dims: dims,
            weights,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(CrustError::InvalidArchitecture(
                "need an input and an output dimension".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(CrustError::InvalidArchitecture("zero-width layer".into()));
        }
        if *dims.last().unwrap() != 1 {
            return Err(CrustError::InvalidArchitecture(format!(
                "output dimension must be 1, got {}",
                dims.last().unwrap()
            )));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Total parameter count `m`.
    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum()
    }

    /// Offset of layer `l` (0-based) in the flat parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.weights[..l].iter().map(|w| w.rows() * w.cols()).sum()
    }

    /// Width of the vector fed to the last layer (`d_{L−1}`).
    pub fn feature_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 2]
    }

    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.data().iter().copied()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(CrustError::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for w in &mut self.weights {
            let len = w.rows() * w.cols();
            *w = Matrix::from_vec(w.rows(), w.cols(), flat[off..off + len].to_vec())?;
            off += len;
        }
        Ok(())
    }

    /// `W ← W − step · direction`, in flat parameter order.
    pub fn step(&mut self, direction: &[f64], step: f64) -> Result<()> {
        let mut p = self.params();
        if direction.len() != p.len() {
            return Err(CrustError::DimensionMismatch {
                expected: p.len(),
                got: direction.len(),
            });
        }
        for (pi, di) in p.iter_mut().zip(direction) {
            *pi -= step * di;
        }
        self.set_params(&p)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(CrustError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CrustError::InvalidInput("non-finite input".into()));
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let last = self.num_layers() - 1;
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut act = Vec::with_capacity(self.num_layers() + 1);
        act.push(x.to_vec());
        for (l, w) in self.weights.iter().enumerate() {
            let z = w.matvec(act.last().unwrap())?;
            let a = if l == last {
                z.clone()
            } else {
                z.iter().map(|v| v.tanh()).collect()
            };
            pre.push(z);
            act.push(a);
        }
        Ok(Trace { pre, act })
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.trace(x)?.output())
    }

    pub fn predict_class(&self, x: &[f64], class_values: &[f64]) -> Result<usize> {
        Ok(nearest_class(self.forward(x)?, class_values))
    }

    /// Backpropagates the output seed `seed` (∂ objective / ∂f) into a flat gradient.
    fn backprop(&self, trace: &Trace, seed: f64) -> Vec<f64> {
        let mut grad = vec![0.0; self.num_params()];
        let mut delta = vec![seed];
        for l in (0..self.num_layers()).rev() {
            let input = &trace.act[l];
            let off = self.layer_offset(l);
            let cols = input.len();
            for (r, &dr) in delta.iter().enumerate() {
                let row = &mut grad[off + r * cols..off + (r + 1) * cols];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g = dr * a;
                }
            }
            if l > 0 {
                let back = self.weights[l].tr_matvec(&delta).expect("shapes agree");
                delta = back
                    .iter()
                    .zip(&trace.pre[l - 1])
                    .map(|(b, &z)| b * tanh_prime(z))
                    .collect();
            }
        }
        grad
    }

    /// `∂f(W, x)/∂W` in flat parameter order.
    pub fn jacobian_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.trace(x)?;
        Ok(self.backprop(&trace, 1.0))
    }

    /// Gradient of `½ (f(W, x) − y)²`.
    pub fn per_example_gradient(&self, index: usize, x: &[f64], y: f64) -> Result<PerExampleGrad> {
        let trace = self.trace(x)?;
        let residual = trace.output() - y;
        Ok(PerExampleGrad {
            index,
            gradient: self.backprop(&trace, residual),
            residual,
        })
    }

    pub fn jacobian_rows(&self, ds: &NoisyDataset, subset: &[usize]) -> Result<Matrix> {
        self.jacobian_rows_of(&ds.x, subset)
    }

    pub fn jacobian_rows_of(&self, x: &Matrix, subset: &[usize]) -> Result<Matrix> {
        let m = self.num_params();
        if subset.len().saturating_mul(m) > JACOBIAN_ENTRY_BUDGET {
            return Err(CrustError::Resource(format!(
                "Jacobian of {} rows × {m} parameters exceeds the budget of {JACOBIAN_ENTRY_BUDGET} entries",
                subset.len()
            )));
        }
        let mut j = Matrix::zeros(subset.len(), m);
        for (r, &i) in subset.iter().enumerate() {
            check_index(i, x.rows())?;
            let row = self.jacobian_row(x.row(i))?;
            j.row_mut(r).copy_from_slice(&row);
        }
        Ok(j)
    }

    /// Loss gradient with respect to the pre-activation entering the final
    /// `tanh → linear` block: `g = r · (W⁽ᴸ⁾ᵀ ⊙ tanh′(z))`. For a single-layer
    /// (linear) model the final block has no nonlinearity and `g = r · W⁽¹⁾ᵀ`.
    pub fn gradient_feature(&self, x: &[f64], y: f64) -> Result<Vec<f64>> {
        let trace = self.trace(x)?;
        let residual = trace.output() - y;
        Ok(self.feature_from_trace(&trace, residual))
    }

    fn feature_from_trace(&self, trace: &Trace, residual: f64) -> Vec<f64> {
        let last = self.weights.last().expect("at least one layer");
        let l = self.num_layers();
        if l == 1 {
            return last.row(0).iter().map(|w| residual * w).collect();
        }
        last.row(0)
            .iter()
            .zip(&trace.pre[l - 2])
            .map(|(w, &z)| residual * w * tanh_prime(z))
            .collect()
    }

    /// Gradient features for `subset`, using the observed labels.
    pub fn gradient_features(
        &self,
        ds: &NoisyDataset,
        subset: &[usize],
    ) -> Result<GradientFeatures> {
        let mut features = Matrix::zeros(subset.len(), self.feature_dim());
        for (r, &i) in subset.iter().enumerate() {
            check_index(i, ds.len())?;
            let g = self.gradient_feature(ds.x.row(i), ds.y_observed[i])?;
            features.row_mut(r).copy_from_slice(&g);
        }
        Ok(GradientFeatures {
            indices: subset.to_vec(),
            features,
        })
    }

    /// `½ Σ_{i∈subset} (y_i − f(W, x_i))²` over observed labels.
    pub fn loss(&self, ds: &NoisyDataset, subset: &[usize]) -> Result<SubsetLoss> {
        if subset.is_empty() {
            return Ok(SubsetLoss {
                value: 0.0,
                empty_subset: true,
            });
        }
        let mut total = 0.0;
        for &i in subset {
            check_index(i, ds.len())?;
            let r = self.forward(ds.x.row(i))? - ds.y_observed[i];
            total += 0.5 * r * r;
        }
        Ok(SubsetLoss {
            value: total,
            empty_subset: false,
        })
    }

    /// Fraction of examples whose output falls outside `[−1, 1]`.
    pub fn range_violation_fraction(&self, x: &Matrix) -> Result<f64> {
        if x.rows() == 0 {
            return Ok(0.0);
        }
        let mut count = 0usize;
        for i in 0..x.rows() {
            if self.forward(x.row(i))?.abs() > 1.0 {
                count += 1;
            }
        }
        Ok(count as f64 / x.rows() as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# crust model v1\n");
        let dims: Vec<String> = self.layer_dims.iter().map(|d| d.to_string()).collect();
        writeln!(s, "layer_dims={}", dims.join(",")).unwrap();
        writeln!(s, "activation=tanh,identity").unwrap();
        for (l, w) in self.weights.iter().enumerate() {
            writeln!(s, "layer {} {}x{}", l + 1, w.rows(), w.cols()).unwrap();
            for r in 0..w.rows() {
                let row: Vec<String> = w.row(r).iter().map(|v| v.to_string()).collect();
                writeln!(s, "{}", row.join(",")).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| CrustError::Parse { line, msg };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, dims_line) = lines.next().ok_or_else(|| perr(1, "empty checkpoint".into()))?;
        let dims = dims_line
            .strip_prefix("layer_dims=")
            .ok_or_else(|| perr(ln, "expected layer_dims=".into()))?
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| perr(ln, format!("bad dim {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let (ln, act) = lines.next().ok_or_else(|| perr(ln + 1, "missing activation".into()))?;
        if act != "activation=tanh,identity" {
            return Err(perr(ln, format!("unsupported activation line {act:?}")));
        }
        Self::check_dims(&dims).map_err(|e| perr(ln, e.to_string()))?;
        let mut weights = Vec::new();
        for (l, win) in dims.windows(2).enumerate() {
            let (rows, cols) = (win[1], win[0]);
            let (ln, head) = lines
                .next()
                .ok_or_else(|| perr(ln, format!("missing layer {}", l + 1)))?;
            let expect = format!("layer {} {}x{}", l + 1, rows, cols);
            if head != expect {
                return Err(perr(ln, format!("expected {expect:?}, found {head:?}")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = lines
                    .next()
                    .ok_or_else(|| perr(ln, format!("layer {} truncated", l + 1)))?;
                let vals = row
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| perr(ln, format!("bad weight {t:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != cols {
                    return Err(perr(ln, format!("expected {cols} weights, found {}", vals.len())));
                }
                data.extend(vals);
            }
            weights.push(Matrix::from_vec(rows, cols, data)?);
        }
        if let Some((ln, extra)) = lines.next() {
            return Err(perr(ln, format!("trailing content {extra:?}")));
        }
        Self::from_weights(weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(CrustError::InvalidInput(format!("example index {i} out of range for {n} examples")));
    }
    Ok(())
}

/// `Σ_i weights_i · ∇L(W, x_i)` with labels `y`, reduced in index order.
pub fn weighted_gradient(model: &MlpModel, x: &Matrix, y: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; model.num_params()];
    for i in 0..x.rows() {
        let g = model.per_example_gradient(i, x.row(i), y[i])?;
        crate::numerics::axpy(weights[i], &g.gradient, &mut total);
    }
    Ok(total)
}

/// Weighted squared loss `½ Σ_i w_i (f(W, x_i) − y_i)²`.
pub fn weighted_loss(model: &MlpModel, x: &Matrix, y: &[f64], weights: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..x.rows() {
        let r = model.forward(x.row(i))? - y[i];
        total += 0.5 * weights[i] * r * r;
    }
    Ok(total)
}
