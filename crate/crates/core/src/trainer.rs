//! Iterative coreset training and the plain-ERM baseline.
//!
//! Every coreset epoch takes one model snapshot and
//! 1. assigns each example to a class (by prediction or by observed label),
//! 2. selects `≈ fraction·|U_c|` medoids per class from gradient-surrogate
//!    dissimilarities,
//! 3. mixes each medoid with members of its cluster (or keeps the raw medoid),
//! 4. runs weighted gradient descent on the union, `W ← W − η Σ r_i ∇L(W, x̂_i)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coreset::{
    greedy_select, lazy_greedy_select, stochastic_greedy_select, Coreset, DissimilarityMatrix,
};
use crate::data::NoisyDataset;
use crate::error::{CrustError, Result};
use crate::mixup::{medoid_batch, mix_all, MixedBatch, MixupParams};
use crate::model::{nearest_class, weighted_gradient, weighted_loss, MlpModel};
use crate::numerics::{Matrix, Rng};

/// Loss above which training is considered diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Group examples by the model's predicted class.
    Predicted,
    /// Group examples by their observed (possibly noisy) label.
    Observed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    PlainErm,
    Coreset { partition: Partition, mixup: bool },
}

impl Mode {
    pub const CRUST: Mode = Mode::Coreset {
        partition: Partition::Predicted,
        mixup: true,
    };
    pub const CORESET_NO_MIXUP: Mode = Mode::Coreset {
        partition: Partition::Predicted,
        mixup: false,
    };
    pub const CORESET_OBSERVED_LABELS: Mode = Mode::Coreset {
        partition: Partition::Observed,
        mixup: false,
    };
    pub const CORESET_OBSERVED_LABELS_MIXUP: Mode = Mode::Coreset {
        partition: Partition::Observed,
        mixup: true,
    };

    pub fn name(&self) -> &'static str {
        match *self {
            Mode::PlainErm => "plain_erm",
            Mode::Coreset {
                partition: Partition::Predicted,
                mixup: true,
            } => "crust",
            Mode::Coreset {
                partition: Partition::Predicted,
                mixup: false,
            } => "coreset_no_mixup",
            Mode::Coreset {
                partition: Partition::Observed,
                mixup: false,
            } => "coreset_observed_labels",
            Mode::Coreset {
                partition: Partition::Observed,
                mixup: true,
            } => "coreset_observed_labels_mixup",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = CrustError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain_erm" => Ok(Mode::PlainErm),
            "crust" => Ok(Mode::CRUST),
            "coreset_no_mixup" => Ok(Mode::CORESET_NO_MIXUP),
            "coreset_observed_labels" => Ok(Mode::CORESET_OBSERVED_LABELS),
            "coreset_observed_labels_mixup" => Ok(Mode::CORESET_OBSERVED_LABELS_MIXUP),
            other => Err(CrustError::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

impl TryFrom<String> for Mode {
    type Error = CrustError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> String {
        m.name().to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GreedyVariant {
    Naive,
    Lazy,
    Stochastic { sample_size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// `(epoch, multiplier)`: from `epoch` on, the rate is multiplied by `multiplier`.
    pub lr_schedule: Vec<(usize, f64)>,
    pub coreset_fraction: f64,
    pub sample_count: usize,
    pub mixup_alpha: f64,
    pub greedy: GreedyVariant,
    pub seed: u64,
    pub mode: Mode,
    /// Plain-ERM epochs before the first selection.
    pub warmup_epochs: usize,
    /// Mini-batch size within an epoch's batch; `None` for full-batch steps.
    pub batch_size: Option<usize>,
    /// Fixes the mixup coefficient (test hook).
    pub forced_lambda: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            steps_per_epoch: 1,
            learning_rate: 1e-3,
            lr_schedule: Vec::new(),
            coreset_fraction: 0.5,
            sample_count: 1,
            mixup_alpha: 1.0,
            greedy: GreedyVariant::Lazy,
            seed: 0,
            mode: Mode::CRUST,
            warmup_epochs: 0,
            batch_size: None,
            forced_lambda: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CrustError::InvalidParameter(m));
        if !(self.coreset_fraction > 0.0 && self.coreset_fraction <= 1.0) {
            return bad(format!("coreset_fraction {} outside (0, 1]", self.coreset_fraction));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        if let Some(&(e, m)) = self.lr_schedule.iter().find(|(_, m)| !(*m > 0.0 && *m <= 1.0)) {
            return bad(format!("lr multiplier {m} at epoch {e} must be in (0, 1]"));
        }
        if let GreedyVariant::Stochastic { sample_size: 0 } = self.greedy {
            return bad("stochastic greedy sample size must be at least 1".into());
        }
        self.mixup().validate()
    }

    pub fn mixup(&self) -> MixupParams {
        MixupParams {
            sample_count: self.sample_count,
            alpha: self.mixup_alpha,
            forced_lambda: self.forced_lambda,
        }
    }

    /// Effective learning rate at `epoch`; non-increasing by construction.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.lr_schedule
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .fold(self.learning_rate, |lr, (_, m)| lr * m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mode: String,
    /// Fraction of selected medoids whose observed label is correct; absent for ERM epochs.
    pub coreset_label_accuracy: Option<f64>,
    pub coreset_size: usize,
    /// Accuracy on the training set against observed labels.
    pub train_accuracy: f64,
    /// Accuracy on the training set against true labels.
    pub train_accuracy_true: f64,
    /// Accuracy on the test set against true labels.
    pub test_accuracy: f64,
    /// Weighted loss on the epoch's batch after the update.
    pub training_loss: f64,
    pub learning_rate: f64,
    /// Fraction of training outputs outside `[−1, 1]`.
    pub output_range_violations: f64,
}

/// The coreset of one class with the dataset indices of its ground set.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCoreset {
    pub class: usize,
    pub ground: Vec<usize>,
    pub coreset: Coreset,
}

impl ClassCoreset {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.coreset.selected.iter().map(|&s| self.ground[s]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSource {
    Observed,
    True,
}

/// Fraction of examples whose predicted class matches the chosen labels.
pub fn evaluate(model: &MlpModel, ds: &NoisyDataset, source: LabelSource) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let label = match source {
            LabelSource::Observed => ds.y_observed[i],
            LabelSource::True => ds.y_true[i],
        };
        let pred = model.predict_class(ds.x.row(i), &ds.class_values)?;
        if pred == nearest_class(label, &ds.class_values) {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Per-class budgets `max(1, round(k·|U_c|/n))` for nonempty classes, then
/// reconciled to `k` by adjusting the largest classes first.
pub fn class_budgets(class_sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = class_sizes.iter().sum();
    if n == 0 {
        return vec![0; class_sizes.len()];
    }
    let total = total.min(n);
    let mut budgets: Vec<usize> = class_sizes
        .iter()
        .map(|&s| {
            if s == 0 {
                0
            } else {
                ((total as f64 * s as f64 / n as f64).round() as usize).clamp(1, s)
            }
        })
        .collect();
    let mut by_size: Vec<usize> = (0..class_sizes.len()).collect();
    by_size.sort_by(|&a, &b| class_sizes[b].cmp(&class_sizes[a]).then(a.cmp(&b)));
    loop {
        let sum: usize = budgets.iter().sum();
        if sum == total {
            break;
        }
        let changed = if sum < total {
            by_size.iter().find(|&&c| budgets[c] < class_sizes[c]).map(|&c| budgets[c] += 1)
        } else {
            by_size.iter().find(|&&c| budgets[c] > 1).map(|&c| budgets[c] -= 1)
        };
        if changed.is_none() {
            break;
        }
    }
    budgets
}

fn select(dm: &DissimilarityMatrix, k: usize, variant: GreedyVariant, rng: &mut Rng) -> Result<Coreset> {
    match variant {
        GreedyVariant::Naive => greedy_select(dm, k),
        GreedyVariant::Lazy => lazy_greedy_select(dm, k),
        GreedyVariant::Stochastic { sample_size } => {
            stochastic_greedy_select(dm, k, sample_size.min(dm.len()), rng)
        }
    }
}

/// Class groups of the training set under the given partition rule.
pub fn partition_classes(model: &MlpModel, ds: &NoisyDataset, partition: Partition) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); ds.num_classes()];
    for i in 0..ds.len() {
        let c = match partition {
            Partition::Predicted => model.predict_class(ds.x.row(i), &ds.class_values)?,
            Partition::Observed => ds.observed_class(i),
        };
        groups[c].push(i);
    }
    Ok(groups)
}

/// Selects per-class coresets from one model snapshot.
pub fn select_coresets(
    model: &MlpModel,
    ds: &NoisyDataset,
    cfg: &TrainConfig,
    partition: Partition,
    rng: &Rng,
) -> Result<Vec<ClassCoreset>> {
    let groups = partition_classes(model, ds, partition)?;
    let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let total = ((cfg.coreset_fraction * ds.len() as f64).round() as usize).max(1);
    let budgets = class_budgets(&sizes, total);

    let work: Vec<(usize, Vec<usize>, usize)> = groups
        .into_iter()
        .zip(budgets)
        .enumerate()
        .filter(|(_, (g, b))| !g.is_empty() && *b > 0)
        .map(|(c, (g, b))| (c, g, b))
        .collect();

    let run = |(class, ground, budget): &(usize, Vec<usize>, usize)| -> Result<ClassCoreset> {
        let feats = model.gradient_features(ds, ground)?;
        let dm = DissimilarityMatrix::from_features(&feats.features)?;
        let mut r = rng.substream_indexed("select", *class as u64);
        let coreset = select(&dm, *budget, cfg.greedy, &mut r)?;
        Ok(ClassCoreset {
            class: *class,
            ground: ground.clone(),
            coreset,
        })
    };

    let threads = worker_threads();
    if threads <= 1 || work.len() <= 1 {
        return work.iter().map(run).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = work
            .iter()
            .map(|item| scope.spawn(move || run(item)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("selection worker panicked"))
            .collect()
    })
}

/// Worker count from `CRUST_THREADS`, defaulting to the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("CRUST_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Fraction of selected examples whose observed label equals the true label.
pub fn coreset_label_accuracy(ds: &NoisyDataset, coresets: &[ClassCoreset]) -> Option<f64> {
    let selected: Vec<usize> = coresets.iter().flat_map(|c| c.selected_indices()).collect();
    if selected.is_empty() {
        return None;
    }
    let clean = selected.iter().filter(|&&i| !ds.noise_flags[i]).count();
    Some(clean as f64 / selected.len() as f64)
}

/// Builds the weighted training batch for one epoch from the class coresets.
pub fn build_batch(
    ds: &NoisyDataset,
    coresets: &[ClassCoreset],
    mixup: Option<&MixupParams>,
    rng: &Rng,
) -> Result<MixedBatch> {
    let parts = coresets
        .iter()
        .map(|c| match mixup {
            Some(p) => mix_all(ds, &c.coreset, &c.ground, p, &rng.substream_indexed("mix", c.class as u64)),
            None => Ok(medoid_batch(ds, &c.coreset, &c.ground)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixedBatch::concat(ds.dim(), parts))
}

/// Runs `steps` weighted gradient-descent steps and returns the batch loss afterwards.
fn descend(
    model: &mut MlpModel,
    inputs: &Matrix,
    labels: &[f64],
    weights: &[f64],
    lr: f64,
    steps: usize,
    batch_size: Option<usize>,
    rng: &mut Rng,
) -> Result<f64> {
    let n = inputs.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    for _ in 0..steps {
        let grad = match batch_size {
            Some(b) if b < n => {
                if cursor + b > n {
                    rng.shuffle(&mut order);
                    cursor = 0;
                }
                let idx = &order[cursor..cursor + b];
                cursor += b;
                let scale = n as f64 / b as f64;
                let w: Vec<f64> = idx.iter().map(|&i| weights[i] * scale).collect();
                let y: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
                weighted_gradient(model, &inputs.select_rows(idx), &y, &w)?
            }
            _ => weighted_gradient(model, inputs, labels, weights)?,
        };
        model.step(&grad, lr)?;
    }
    weighted_loss(model, inputs, labels, weights)
}

pub struct EpochOutcome {
    pub metrics: EpochMetrics,
    pub coresets: Vec<ClassCoreset>,
}

fn epoch_metrics(
    model: &MlpModel,
    train: &NoisyDataset,
    test: &NoisyDataset,
    cfg: &TrainConfig,
    epoch: usize,
    coresets: &[ClassCoreset],
    training_loss: f64,
    mode: Mode,
) -> Result<EpochMetrics> {
    Ok(EpochMetrics {
        epoch,
        mode: mode.name().to_string(),
        coreset_label_accuracy: coreset_label_accuracy(train, coresets),
        coreset_size: coresets.iter().map(|c| c.coreset.len()).sum(),
        train_accuracy: evaluate(model, train, LabelSource::Observed)?,
        train_accuracy_true: evaluate(model, train, LabelSource::True)?,
        test_accuracy: evaluate(model, test, LabelSource::True)?,
        training_loss,
        learning_rate: cfg.learning_rate_at(epoch),
        output_range_violations: model.range_violation_fraction(&train.x)?,
    })
}

/// One plain-ERM epoch over the full training set.
pub fn erm_epoch(
    model: &mut MlpModel,
    train: &NoisyDataset,
    test: &NoisyDataset,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &Rng,
) -> Result<EpochOutcome> {
    let weights = vec![1.0; train.len()];
    let loss = descend(
        model,
        &train.x,
        &train.y_observed,
        &weights,
        cfg.learning_rate_at(epoch),
        cfg.steps_per_epoch,
        cfg.batch_size,
        &mut rng.substream("batches"),
    )?;
    let metrics = epoch_metrics(model, train, test, cfg, epoch, &[], loss, Mode::PlainErm)?;
    Ok(EpochOutcome {
        metrics,
        coresets: Vec::new(),
    })
}

/// One coreset epoch: select from the current snapshot, mix, then descend.
pub fn crust_epoch(
    model: &mut MlpModel,
    train: &NoisyDataset,
    test: &NoisyDataset,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &Rng,
) -> Result<EpochOutcome> {
    let (partition, mixup) = match cfg.mode {
        Mode::Coreset { partition, mixup } => (partition, mixup),
        Mode::PlainErm => return erm_epoch(model, train, test, cfg, epoch, rng),
    };
    if model.input_dim() != train.dim() {
        return Err(CrustError::DimensionMismatch {
            expected: model.input_dim(),
            got: train.dim(),
        });
    }
    let coresets = select_coresets(model, train, cfg, partition, rng)?;
    let params = cfg.mixup();
    let batch = build_batch(train, &coresets, mixup.then_some(&params), rng)?;
    let loss = descend(
        model,
        &batch.inputs,
        &batch.labels,
        &batch.weights,
        cfg.learning_rate_at(epoch),
        cfg.steps_per_epoch,
        cfg.batch_size,
        &mut rng.substream("batches"),
    )?;
    let metrics = epoch_metrics(model, train, test, cfg, epoch, &coresets, loss, cfg.mode)?;
    Ok(EpochOutcome { metrics, coresets })
}

pub struct TrainOutcome {
    pub model: MlpModel,
    pub metrics: Vec<EpochMetrics>,
    /// Coresets of the final epoch (empty for ERM).
    pub final_coresets: Vec<ClassCoreset>,
}

/// Trains for `cfg.epochs` epochs. `on_epoch` sees the model after each epoch.
pub fn train_with<F>(
    model: MlpModel,
    train: &NoisyDataset,
    test: &NoisyDataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&MlpModel, &EpochOutcome) -> Result<()>,
{
    cfg.validate()?;
    let mut model = model;
    let root = Rng::new(cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut final_coresets = Vec::new();
    for epoch in 0..cfg.epochs {
        let rng = root.substream_indexed("epoch", epoch as u64);
        let outcome = if epoch < cfg.warmup_epochs {
            erm_epoch(&mut model, train, test, cfg, epoch, &rng)?
        } else {
            crust_epoch(&mut model, train, test, cfg, epoch, &rng)?
        };
        let loss = outcome.metrics.training_loss;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(CrustError::Divergence { epoch, loss });
        }
        on_epoch(&model, &outcome)?;
        metrics.push(outcome.metrics);
        final_coresets = outcome.coresets;
    }
    Ok(TrainOutcome {
        model,
        metrics,
        final_coresets,
    })
}

pub fn train(model: MlpModel, train: &NoisyDataset, test: &NoisyDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train, test, cfg, |_, _| Ok(()))
}
