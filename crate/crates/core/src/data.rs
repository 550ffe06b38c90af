//! Labelled datasets with controllable label noise.
//!
//! Labels are scalar class values `ν_c ∈ [−1, 1]`. The observed labels may
//! differ from the hidden true labels; `noise_flags[i]` records which do.
//! Noise is always injected relative to `y_true`, so repeated injections
//! replace each other instead of compounding.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CrustError, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyDataset {
    pub x: Matrix,
    pub y_observed: Vec<f64>,
    pub y_true: Vec<f64>,
    pub class_values: Vec<f64>,
    pub label_margin: f64,
    pub noise_flags: Vec<bool>,
}

/// `C` evenly spaced values on `[−1, 1]`.
pub fn default_class_values(num_classes: usize) -> Vec<f64> {
    match num_classes {
        0 => Vec::new(),
        1 => vec![0.0],
        c => (0..c)
            .map(|i| -1.0 + 2.0 * i as f64 / (c - 1) as f64)
            .collect(),
    }
}

/// Smallest gap between two distinct class values.
pub fn min_class_gap(class_values: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for (i, a) in class_values.iter().enumerate() {
        for b in &class_values[i + 1..] {
            gap = gap.min((a - b).abs());
        }
    }
    gap
}

impl NoisyDataset {
    /// Builds a clean dataset from inputs and true labels.
    pub fn clean(x: Matrix, y_true: Vec<f64>, class_values: Vec<f64>) -> Result<Self> {
        let ds = NoisyDataset {
            label_margin: min_class_gap(&class_values),
            noise_flags: vec![false; y_true.len()],
            y_observed: y_true.clone(),
            y_true,
            class_values,
            x,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_values.len()
    }

    /// Index of `value` in `class_values`, by exact comparison.
    pub fn class_of(&self, value: f64) -> Option<usize> {
        self.class_values.iter().position(|&v| v == value)
    }

    pub fn observed_class(&self, i: usize) -> usize {
        self.class_of(self.y_observed[i])
            .expect("observed label is a class value")
    }

    pub fn true_class(&self, i: usize) -> usize {
        self.class_of(self.y_true[i]).expect("true label is a class value")
    }

    /// Realized noise fraction.
    pub fn noise_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.noise_flags.iter().filter(|&&f| f).count() as f64 / self.len() as f64
    }

    /// Indices grouped by true class.
    pub fn indices_by_true_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes()];
        for i in 0..self.len() {
            groups[self.true_class(i)].push(i);
        }
        groups
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.x.rows() != n || self.y_observed.len() != n || self.noise_flags.len() != n {
            return Err(CrustError::InvalidSpec(
                "inputs, labels and noise flags disagree on the example count".into(),
            ));
        }
        if self.class_values.len() < 2 {
            return Err(CrustError::InvalidSpec("need at least two classes".into()));
        }
        if self.class_values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(CrustError::InvalidSpec("class values must lie in [-1, 1]".into()));
        }
        let gap = min_class_gap(&self.class_values);
        if !(self.label_margin > 0.0 && self.label_margin <= gap) {
            return Err(CrustError::InvalidSpec(format!(
                "label margin {} must be in (0, {gap}]",
                self.label_margin
            )));
        }
        self.x.ensure_finite()?;
        for i in 0..n {
            if self.class_of(self.y_observed[i]).is_none() || self.class_of(self.y_true[i]).is_none()
            {
                return Err(CrustError::InvalidSpec(format!(
                    "label of example {i} is not a class value"
                )));
            }
            if self.noise_flags[i] != (self.y_observed[i] != self.y_true[i]) {
                return Err(CrustError::InvalidSpec(format!(
                    "noise flag of example {i} disagrees with its labels"
                )));
            }
        }
        Ok(())
    }

    /// Subset of examples, in the order given.
    pub fn subset(&self, idx: &[usize]) -> NoisyDataset {
        NoisyDataset {
            x: self.x.select_rows(idx),
            y_observed: idx.iter().map(|&i| self.y_observed[i]).collect(),
            y_true: idx.iter().map(|&i| self.y_true[i]).collect(),
            class_values: self.class_values.clone(),
            label_margin: self.label_margin,
            noise_flags: idx.iter().map(|&i| self.noise_flags[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub num_clusters: usize,
    pub num_classes: usize,
    pub cluster_separation: f64,
    pub within_cluster_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(CrustError::InvalidSpec("need at least two classes".into()));
        }
        if self.num_clusters < self.num_classes {
            return Err(CrustError::InvalidSpec(format!(
                "{} clusters cannot cover {} classes",
                self.num_clusters, self.num_classes
            )));
        }
        if self.num_clusters > self.n {
            return Err(CrustError::InvalidSpec(format!(
                "{} clusters exceed {} examples",
                self.num_clusters, self.n
            )));
        }
        if self.d == 0 {
            return Err(CrustError::InvalidSpec("input dimension must be positive".into()));
        }
        if !(self.cluster_separation > 0.0) || !(self.within_cluster_std >= 0.0) {
            return Err(CrustError::InvalidSpec(
                "separation must be positive and spread nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Centers pairwise at least `separation` apart.
pub fn cluster_centers(spec: &SyntheticSpec, rng: &mut Rng) -> Matrix {
    let (k, d, sep) = (spec.num_clusters, spec.d, spec.cluster_separation);
    if k <= d {
        // Scaled, signed, permuted coordinate vectors: pairwise distance exactly `sep`.
        let scale = sep / std::f64::consts::SQRT_2;
        let mut axes: Vec<usize> = (0..d).collect();
        rng.shuffle(&mut axes);
        let mut c = Matrix::zeros(k, d);
        for (row, &axis) in axes.iter().take(k).enumerate() {
            c[(row, axis)] = if rng.coin(0.5) { scale } else { -scale };
        }
        return c;
    }
    let mut side = sep * (k as f64).powf(1.0 / d as f64) * 2.0;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut failures = 0;
    while centers.len() < k {
        let cand: Vec<f64> = (0..d).map(|_| (rng.uniform() - 0.5) * side).collect();
        let ok = centers.iter().all(|c| {
            c.iter()
                .zip(&cand)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                >= sep * sep
        });
        if ok {
            centers.push(cand);
        } else {
            failures += 1;
            if failures > 1000 {
                side *= 1.1;
                failures = 0;
            }
        }
    }
    Matrix::from_rows(&centers).expect("uniform center rows")
}

/// Isotropic Gaussian clusters; cluster `k` carries class `k mod C`, example `i`
/// belongs to cluster `i mod K`.
pub fn generate_clusterable(spec: &SyntheticSpec) -> Result<NoisyDataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let centers = cluster_centers(spec, &mut root.substream("centers"));
    let mut points = root.substream("points");
    let class_values = default_class_values(spec.num_classes);
    let mut x = Matrix::zeros(spec.n, spec.d);
    let mut y = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let cluster = i % spec.num_clusters;
        for j in 0..spec.d {
            x[(i, j)] = centers[(cluster, j)] + spec.within_cluster_std * points.normal();
        }
        y.push(class_values[cluster % spec.num_classes]);
    }
    NoisyDataset::clean(x, y, class_values)
}

/// Draws `spec.n + test_n` points around one set of centers and splits them
/// into a training set of `spec.n` and a held-out set of `test_n`.
pub fn generate_train_test(spec: &SyntheticSpec, test_n: usize) -> Result<(NoisyDataset, NoisyDataset)> {
    let full = generate_clusterable(&SyntheticSpec {
        n: spec.n + test_n,
        ..spec.clone()
    })?;
    let train: Vec<usize> = (0..spec.n).collect();
    let test: Vec<usize> = (spec.n..spec.n + test_n).collect();
    Ok((full.subset(&train), full.subset(&test)))
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(CrustError::InvalidParameter(format!(
            "noise ratio must be in [0, 1), got {ratio}"
        )));
    }
    Ok(())
}

fn flip_per_class(
    ds: &NoisyDataset,
    ratio: f64,
    rng: &mut Rng,
    mut target: impl FnMut(usize, &mut Rng) -> usize,
) -> NoisyDataset {
    let mut out = ds.clone();
    out.y_observed = ds.y_true.clone();
    out.noise_flags = vec![false; ds.len()];
    for (class, members) in ds.indices_by_true_class().into_iter().enumerate() {
        let flips = (ratio * members.len() as f64).floor() as usize;
        for i in rng.sample_without_replacement(&members, flips) {
            let dst = target(class, rng);
            out.y_observed[i] = ds.class_values[dst];
            out.noise_flags[i] = true;
        }
    }
    out
}

/// Flips exactly `⌊ρ·n_c⌋` examples of every true class `c` to a uniformly
/// chosen different class.
pub fn inject_symmetric_noise(ds: &NoisyDataset, ratio: f64, rng: &mut Rng) -> Result<NoisyDataset> {
    check_ratio(ratio)?;
    let c = ds.num_classes();
    Ok(flip_per_class(ds, ratio, rng, |class, rng| {
        let other = rng.index(c - 1);
        if other >= class {
            other + 1
        } else {
            other
        }
    }))
}

/// Flips exactly `⌊ρ·n_c⌋` examples of every true class `c` to `pair_map[c]`.
pub fn inject_asymmetric_noise(
    ds: &NoisyDataset,
    ratio: f64,
    pair_map: &[usize],
    rng: &mut Rng,
) -> Result<NoisyDataset> {
    check_ratio(ratio)?;
    if pair_map.len() != ds.num_classes() {
        return Err(CrustError::InvalidSpec(format!(
            "pair map has {} entries for {} classes",
            pair_map.len(),
            ds.num_classes()
        )));
    }
    for (c, &dst) in pair_map.iter().enumerate() {
        if dst == c || dst >= ds.num_classes() {
            return Err(CrustError::InvalidSpec(format!(
                "class {c} must map to a different existing class, got {dst}"
            )));
        }
    }
    Ok(flip_per_class(ds, ratio, rng, |class, _| pair_map[class]))
}

const DATASET_MAGIC: &str = "# crust dataset v1";

pub fn to_text(ds: &NoisyDataset) -> String {
    let mut s = String::new();
    let classes: Vec<String> = ds.class_values.iter().map(|v| v.to_string()).collect();
    writeln!(s, "{DATASET_MAGIC}").unwrap();
    writeln!(
        s,
        "n={}, d={}, C={}, class_values=[{}], margin={}",
        ds.len(),
        ds.dim(),
        ds.num_classes(),
        classes.join(";"),
        ds.label_margin
    )
    .unwrap();
    for i in 0..ds.len() {
        for v in ds.x.row(i) {
            write!(s, "{v},").unwrap();
        }
        writeln!(s, "{},{}", ds.y_observed[i], ds.y_true[i]).unwrap();
    }
    s
}

fn parse_err(line: usize, msg: impl Into<String>) -> CrustError {
    CrustError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("not a count: {tok:?}")))
}

pub fn from_text(text: &str) -> Result<NoisyDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let (mut n, mut d, mut c, mut classes, mut margin) = (None, None, None, None, None);
    // class_values holds ';' separators, so split on ", " boundaries of `key=`.
    for field in header.split(", ") {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(hline, format!("malformed header field {field:?}")))?;
        match key.trim() {
            "n" => n = Some(parse_usize(value, hline)?),
            "d" => d = Some(parse_usize(value, hline)?),
            "C" => c = Some(parse_usize(value, hline)?),
            "margin" => margin = Some(parse_f64(value, hline)?),
            "class_values" => {
                let inner = value
                    .trim()
                    .strip_prefix('[')
                    .and_then(|v| v.strip_suffix(']'))
                    .ok_or_else(|| parse_err(hline, "class_values must be bracketed"))?;
                let vals = inner
                    .split(';')
                    .map(|t| parse_f64(t, hline))
                    .collect::<Result<Vec<_>>>()?;
                classes = Some(vals);
            }
            other => return Err(parse_err(hline, format!("unknown header key {other:?}"))),
        }
    }
    let missing = |k: &str| parse_err(hline, format!("header missing {k}"));
    let n = n.ok_or_else(|| missing("n"))?;
    let d = d.ok_or_else(|| missing("d"))?;
    let c = c.ok_or_else(|| missing("C"))?;
    let class_values = classes.ok_or_else(|| missing("class_values"))?;
    let label_margin = margin.ok_or_else(|| missing("margin"))?;
    if class_values.len() != c {
        return Err(parse_err(hline, format!("C={c} but {} class values", class_values.len())));
    }

    let mut x = Vec::with_capacity(n * d);
    let mut y_observed = Vec::with_capacity(n);
    let mut y_true = Vec::with_capacity(n);
    for (lineno, line) in lines {
        if y_true.len() == n {
            return Err(parse_err(lineno, format!("more than n={n} examples")));
        }
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != d + 2 {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", d + 2, toks.len()),
            ));
        }
        for t in &toks[..d] {
            x.push(parse_f64(t, lineno)?);
        }
        let yo = parse_f64(toks[d], lineno)?;
        let yt = parse_f64(toks[d + 1], lineno)?;
        for y in [yo, yt] {
            if !class_values.contains(&y) {
                return Err(parse_err(lineno, format!("label {y} is not a class value")));
            }
        }
        y_observed.push(yo);
        y_true.push(yt);
    }
    if y_true.len() != n {
        return Err(parse_err(
            hline,
            format!("header declares n={n} but found {} examples", y_true.len()),
        ));
    }
    let ds = NoisyDataset {
        x: Matrix::from_vec(n, d, x)?,
        noise_flags: y_observed.iter().zip(&y_true).map(|(a, b)| a != b).collect(),
        y_observed,
        y_true,
        class_values,
        label_margin,
    };
    ds.validate().map_err(|e| parse_err(hline, e.to_string()))?;
    Ok(ds)
}

pub fn save(ds: &NoisyDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_text(ds))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<NoisyDataset> {
    from_text(&fs::read_to_string(path)?)
}
