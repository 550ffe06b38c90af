//! `run` pipeline: data → noise → training per mode → metrics, checkpoints, summaries.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crust_core::data::{self, inject_asymmetric_noise, inject_symmetric_noise, SyntheticSpec};
use crust_core::spectrum::{report, SpectrumReport};
use crust_core::trainer::{train_with, EpochOutcome};
use crust_core::{CrustError, EpochMetrics, MlpModel, Mode, NoisyDataset, Rng};
use serde::Serialize;

use crate::config::{git_blob_hash, Config, DataConfig, NoiseConfig, SCHEMA_VERSION};
use crate::error::CliError;

pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub schema: u32,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub test_dataset_hash: String,
    pub epochs: usize,
    pub noise_fraction: f64,
    pub final_train_accuracy: f64,
    pub final_train_accuracy_true: f64,
    pub final_test_accuracy: f64,
    pub final_coreset_label_accuracy: Option<f64>,
    pub mean_coreset_label_accuracy: Option<f64>,
    pub final_training_loss: f64,
}

#[derive(Serialize)]
struct SpectrumLine<'a> {
    epoch: usize,
    #[serde(flatten)]
    report: &'a SpectrumReport,
}

/// Rejects a malformed thread-count override instead of silently ignoring it.
pub fn check_thread_env() -> Result<(), CliError> {
    match std::env::var("CRUST_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(()),
            _ => Err(CliError::Config(format!("CRUST_THREADS: expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(()),
    }
}

pub fn load_dataset(path: &Path) -> Result<NoisyDataset, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("dataset {} not found", path.display())));
    }
    data::load(path).map_err(|e| CliError::Config(format!("dataset {}: {e}", path.display())))
}

fn prepare_data(cfg: &Config, base: &Path) -> Result<(NoisyDataset, NoisyDataset), CliError> {
    let (train, test) = match &cfg.data {
        DataConfig::Synthetic {
            n,
            test_n,
            d,
            num_clusters,
            num_classes,
            cluster_separation,
            within_cluster_std,
        } => {
            let spec = SyntheticSpec {
                n: *n,
                d: *d,
                num_clusters: *num_clusters,
                num_classes: *num_classes,
                cluster_separation: *cluster_separation,
                within_cluster_std: *within_cluster_std,
                seed: cfg.seed,
            };
            data::generate_train_test(&spec, *test_n).map_err(|e| CliError::Config(format!("data: {e}")))?
        }
        DataConfig::File { train, test } => {
            let train = load_dataset(&base.join(train))?;
            let test = load_dataset(&base.join(test))?;
            if train.dim() != test.dim() || train.class_values != test.class_values {
                return Err(CliError::Config(
                    "data: train and test sets disagree on input dimension or classes".into(),
                ));
            }
            (train, test)
        }
    };
    let mut rng = Rng::new(cfg.seed).substream("noise");
    let train = match &cfg.noise {
        NoiseConfig::None => Ok(train),
        NoiseConfig::Symmetric { ratio } => inject_symmetric_noise(&train, *ratio, &mut rng),
        NoiseConfig::Asymmetric { ratio, pair_map } => inject_asymmetric_noise(&train, *ratio, pair_map, &mut rng),
    }
    .map_err(|e| CliError::Config(format!("noise: {e}")))?;
    Ok((train, test))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_json_line<T: Serialize>(w: &mut impl Write, value: &T) -> crust_core::Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| CrustError::Io(e.into()))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Runs every configured mode; returns the summary paths in mode order.
pub fn run(opts: &RunOptions) -> Result<Vec<PathBuf>, CliError> {
    let text = fs::read_to_string(&opts.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", opts.config.display())))?;
    let mut cfg = Config::parse(&text)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    check_thread_env()?;
    let base = opts.config.parent().unwrap_or(Path::new("."));
    let (train, test) = prepare_data(&cfg, base)?;
    if let Some(k) = cfg.output.spectrum_cutoff.filter(|&k| k > train.len()) {
        return Err(CliError::Config(format!(
            "output.spectrum_cutoff: {k} exceeds {} training examples",
            train.len()
        )));
    }

    let out = opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let data_dir = out.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| CliError::io(&data_dir, e))?;
    let (train_text, test_text) = (data::to_text(&train), data::to_text(&test));
    for (name, content) in [("train.txt", &train_text), ("test.txt", &test_text)] {
        let p = data_dir.join(name);
        fs::write(&p, content).map_err(|e| CliError::io(&p, e))?;
    }

    let mut dims = vec![train.dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(1);
    let hashes = (
        cfg.hash(),
        git_blob_hash(train_text.as_bytes()),
        git_blob_hash(test_text.as_bytes()),
    );

    let mut summaries = Vec::new();
    for &mode in &cfg.train.modes {
        let model = MlpModel::init(&dims, &mut Rng::new(cfg.seed).substream("init"), cfg.model.init_scale)
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        let summary = run_mode(&cfg, mode, model, &train, &test, &out.join(mode.name()), &hashes)?;
        summaries.push(summary);
    }
    Ok(summaries)
}

fn run_mode(
    cfg: &Config,
    mode: Mode,
    model: MlpModel,
    train: &NoisyDataset,
    test: &NoisyDataset,
    dir: &Path,
    (config_hash, dataset_hash, test_dataset_hash): &(String, String, String),
) -> Result<PathBuf, CliError> {
    let checkpoints = dir.join("checkpoints");
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    if cfg.output.checkpoint_every > 0 {
        fs::create_dir_all(&checkpoints).map_err(|e| CliError::io(&checkpoints, e))?;
    }
    let tc = cfg.train_config(mode);
    let mut metrics_out = create(&dir.join("metrics.jsonl"))?;
    let mut spectrum_out = match cfg.output.spectrum_every {
        0 => None,
        _ => Some(create(&dir.join("spectrum.jsonl"))?),
    };
    let cutoff = cfg.output.spectrum_cutoff.unwrap_or(train.num_classes());
    let mut coreset_epochs = 0usize;

    let on_epoch = |m: &MlpModel, outcome: &EpochOutcome| -> crust_core::Result<()> {
        let epoch = outcome.metrics.epoch;
        write_json_line(&mut metrics_out, &outcome.metrics)?;
        let every = cfg.output.checkpoint_every;
        if every > 0 && (epoch + 1).is_multiple_of(every) {
            m.save(checkpoints.join(format!("epoch_{:04}.txt", epoch + 1)))?;
        }
        if let (Some(w), false) = (spectrum_out.as_mut(), outcome.coresets.is_empty()) {
            coreset_epochs += 1;
            if coreset_epochs.is_multiple_of(cfg.output.spectrum_every) {
                let selected: Vec<usize> = outcome.coresets.iter().flat_map(|c| c.selected_indices()).collect();
                let weights: Vec<f64> = outcome
                    .coresets
                    .iter()
                    .flat_map(|c| c.coreset.weights.iter().map(|&w| w as f64))
                    .collect();
                let r = report(m, train, &selected, &weights, cutoff, None)?;
                write_json_line(w, &SpectrumLine { epoch, report: &r })?;
            }
        }
        Ok(())
    };
    let result = train_with(model, train, test, &tc, on_epoch);
    metrics_out.flush().map_err(|e| CliError::io(dir.join("metrics.jsonl"), e))?;
    if let Some(w) = spectrum_out.as_mut() {
        w.flush().map_err(|e| CliError::io(dir.join("spectrum.jsonl"), e))?;
    }
    let outcome = result?;

    outcome.model.save(dir.join("model.txt"))?;
    let summary = summarise(cfg, mode, train, &outcome.metrics, config_hash, dataset_hash, test_dataset_hash);
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| CrustError::Io(e.into()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn summarise(
    cfg: &Config,
    mode: Mode,
    train: &NoisyDataset,
    metrics: &[EpochMetrics],
    config_hash: &str,
    dataset_hash: &str,
    test_dataset_hash: &str,
) -> Summary {
    let last = metrics.last();
    let cla: Vec<f64> = metrics.iter().filter_map(|m| m.coreset_label_accuracy).collect();
    Summary {
        schema: SCHEMA_VERSION,
        mode: mode.name().to_string(),
        seed: cfg.seed,
        config_hash: config_hash.to_string(),
        dataset_hash: dataset_hash.to_string(),
        test_dataset_hash: test_dataset_hash.to_string(),
        epochs: metrics.len(),
        noise_fraction: train.noise_fraction(),
        final_train_accuracy: last.map_or(0.0, |m| m.train_accuracy),
        final_train_accuracy_true: last.map_or(0.0, |m| m.train_accuracy_true),
        final_test_accuracy: last.map_or(0.0, |m| m.test_accuracy),
        final_coreset_label_accuracy: last.and_then(|m| m.coreset_label_accuracy),
        mean_coreset_label_accuracy: (!cla.is_empty()).then(|| cla.iter().sum::<f64>() / cla.len() as f64),
        final_training_loss: last.map_or(0.0, |m| m.training_loss),
    }
}
