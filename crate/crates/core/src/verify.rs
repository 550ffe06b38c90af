//! Self-check suite: the optimised routines against the brute-force references.

use crate::coreset::{greedy_select, lazy_greedy_select, DissimilarityMatrix};
use crate::error::Result;
use crate::model::MlpModel;
use crate::numerics::{svd, Matrix, Rng};
use crate::oracle;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Deliberate corruption of one routine, to confirm the suite can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Scales the analytic gradient by `1 + 1e-3`.
    GradientScale,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn greedy_ratio(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed).substream("greedy");
    let mut worst = f64::INFINITY;
    for trial in 0..20 {
        let n = 8 + trial % 5;
        let k = 1 + trial % 4;
        let f = Matrix::from_fn(n, 3, |_, _| rng.normal());
        let dm = DissimilarityMatrix::from_features(&f)?;
        let (_, opt) = oracle::exhaustive_facility_location(&dm, k)?;
        let g = greedy_select(&dm, k)?;
        let lazy = lazy_greedy_select(&dm, k)?;
        if g.selected != lazy.selected {
            return Ok(check("greedy_ratio", false, format!("lazy differs from naive on trial {trial}")));
        }
        if opt > 0.0 {
            worst = worst.min(g.objective_value / opt);
        }
    }
    let bound = 1.0 - (-1.0f64).exp();
    Ok(check("greedy_ratio", worst >= bound - 1e-12, format!("worst ratio {worst:.6}, bound {bound:.6}")))
}

fn gradient(seed: u64, fault: Fault) -> Result<CheckResult> {
    let mut rng = Rng::new(seed).substream("gradient");
    let model = MlpModel::init(&[4, 6, 5, 1], &mut rng, 1.0)?;
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let y = rng.normal();
        let mut g = model.per_example_gradient(i, &x, y)?.gradient;
        if fault == Fault::GradientScale {
            g.iter_mut().for_each(|v| *v *= 1.0 + 1e-3);
        }
        let fd = oracle::finite_difference_gradient(&model, &x, y, 1e-6);
        worst = worst.max(oracle::max_relative_error(&g, &fd));
    }
    Ok(check("gradient", worst < 1e-5, format!("max relative error {worst:.3e}")))
}

fn features(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed).substream("features");
    let model = MlpModel::init(&[3, 7, 1], &mut rng, 1.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let y = rng.normal();
        let g = model.gradient_feature(&x, y)?;
        let fd = oracle::finite_difference_feature(&model, &x, y, 1e-6);
        worst = worst.max(oracle::max_relative_error(&g, &fd));
    }
    Ok(check("gradient_features", worst < 1e-5, format!("max relative error {worst:.3e}")))
}

fn reconstruction(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed).substream("svd");
    let mut worst: f64 = 0.0;
    for (m, n) in [(6, 4), (4, 6), (30, 12), (1, 5)] {
        let a = Matrix::from_fn(m, n, |_, _| rng.normal());
        let s = svd(&a)?;
        let err = s.reconstruct().sub(&a)?.frobenius_norm() / a.frobenius_norm();
        worst = worst.max(err);
    }
    Ok(check("svd_reconstruction", worst < 1e-10, format!("max relative error {worst:.3e}")))
}

/// Runs every check. The caller decides how to report failures.
pub fn run_all(seed: u64, fault: Fault) -> Result<Vec<CheckResult>> {
    Ok(vec![
        greedy_ratio(seed)?,
        gradient(seed, fault)?,
        features(seed)?,
        reconstruction(seed)?,
    ])
}
