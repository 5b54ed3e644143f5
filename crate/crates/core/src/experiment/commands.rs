use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, SourceSpec, TargetDomain};
use crate::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
use crate::domains::{
    apply_shift, load_idx, stratified_partition, subsample_and_split, synth_dataset_with, LabeledDataset, SplitSpec,
    Splits, SynthOptions, TrainSize,
};
use crate::error::{Error, Result};
use crate::eval::{emit_csv, per_unit_sweep, retrieval_map, ProxyTable, RetrievalResult, SweepTable};
use crate::network::{Network, TrainableMask};
use crate::rng::{derive_seed, label_key, Rng};
use crate::selector::{CandidateId, SelectionReport, Selector};
use crate::trainer::{evaluate_accuracy, fine_tune, ledger_summary, CostLedger, LedgerSummary};

/// Datasets derived from an experiment config.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Source-domain train/val/test for pretraining.
    pub source: Splits,
    /// Shifted target pool, before subsampling.
    pub target: LabeledDataset,
}

impl Prepared {
    pub fn input_shape(&self) -> Vec<usize> {
        self.source.train.image_shape().to_vec()
    }

    pub fn classes(&self) -> usize {
        self.source.train.classes
    }
}

fn stream(cfg: &ExperimentConfig, label: &str) -> u64 {
    derive_seed(cfg.seed, label_key(label))
}

fn load_source(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    match &cfg.source {
        SourceSpec::Idx { images, labels } => {
            for p in [images, labels] {
                if !p.exists() {
                    return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
                }
            }
            load_idx(images, labels)
        }
        SourceSpec::Synthetic {
            seed,
            count,
            size,
            palette,
            classes,
        } => {
            let rng = Rng::new(seed.unwrap_or_else(|| stream(cfg, "data")));
            let opts = SynthOptions {
                size: *size,
                palette: *palette,
                ..Default::default()
            };
            synth_dataset_with(&rng, *count, *classes, &opts).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

/// Loads the dataset, splits it into source and target parts, and shifts the target part.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let full = load_source(cfg)?;
    let source_count = (cfg.split.source_fraction * full.len() as f64).round() as usize;
    let parts = stratified_partition(&full, &[source_count], &Rng::new(stream(cfg, "partition")))?;
    let source_part = full.subset(&parts[0]);
    let mut target_idx = parts[1].clone();
    target_idx.sort_unstable();
    let target_part = full.subset(&target_idx);
    let source = subsample_and_split(
        &source_part,
        &SplitSpec {
            train: TrainSize::Fraction { fraction: 1.0 },
            val: cfg.split.source_val,
            test: cfg.split.source_test,
            seed: stream(cfg, "source-split"),
        },
    )?;
    let target = apply_shift(&target_part, &cfg.shift, &Rng::new(stream(cfg, "shift")))
        .map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(format!("shift: {m}")),
            other => other,
        })?;
    Ok(Prepared { source, target })
}

/// Target train/val/test for one training-set size. Val and test do not
/// depend on the size.
pub fn target_splits(cfg: &ExperimentConfig, prepared: &Prepared, size: TrainSize) -> Result<Splits> {
    subsample_and_split(
        &prepared.target,
        &SplitSpec {
            train: size,
            val: cfg.split.val,
            test: cfg.split.test,
            seed: stream(cfg, "target-split"),
        },
    )
}

/// Untrained network of the configured architecture for the prepared data.
pub fn expected_network(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<Network> {
    cfg.architecture.build(&prepared.input_shape(), prepared.classes())
}

fn create_out(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(&cfg.output_dir)
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainMetrics {
    pub architecture: String,
    pub epochs: usize,
    pub source_val_accuracy: f64,
    pub source_test_accuracy: f64,
    /// Pretrained network on the shifted target test split, before any tuning.
    pub shifted_test_accuracy: f64,
    pub ledger: CostLedger,
}

/// Trains the configured architecture from scratch on the source split.
/// Writes `pretrained.ckpt` and `pretrain-metrics.json`.
pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<(Network, PretrainMetrics)> {
    let prepared = prepare(cfg)?;
    let mut init = Rng::new(stream(cfg, "init"));
    let net = cfg
        .architecture
        .build_initialized(&prepared.input_shape(), prepared.classes(), &mut init)?;
    let mut ledger = CostLedger::default();
    let train_cfg = cfg.pretrain.with_seed(stream(cfg, "pretrain"));
    let out = fine_tune(
        &net,
        &TrainableMask::all(net.num_units()),
        &prepared.source.train,
        &prepared.source.val,
        &train_cfg,
        &mut ledger,
    )?;
    let target = target_splits(cfg, &prepared, cfg.split.train_sizes[0])?;
    let metrics = PretrainMetrics {
        architecture: cfg.architecture.to_string(),
        epochs: out.epochs_trained,
        source_val_accuracy: out.val_accuracy,
        source_test_accuracy: evaluate_accuracy(&out.network, &prepared.source.test, 1)?,
        shifted_test_accuracy: evaluate_accuracy(&out.network, &target.test, 1)?,
        ledger,
    };
    let dir = create_out(cfg)?;
    save_checkpoint(&out.network, dir.join("pretrained.ckpt"))?;
    write_json(dir.join("pretrain-metrics.json"), &metrics)?;
    Ok((out.network, metrics))
}

fn pretrained_path(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("pretrained.ckpt"))
}

/// Loads the pretrained network, checks it against the config, and attaches
/// the pixel unit when requested.
fn load_pretrained(cfg: &ExperimentConfig, prepared: &Prepared, checkpoint: Option<&Path>) -> Result<Network> {
    let net = load_checkpoint_for(pretrained_path(cfg, checkpoint), &expected_network(cfg, prepared)?)?;
    if cfg.pixel_unit {
        net.attach_pixel_unit()
    } else {
        Ok(net)
    }
}

fn selector(cfg: &ExperimentConfig, workers: usize) -> Selector {
    // select and sweep share this seed so their flex choices agree
    Selector::new(cfg.train.with_seed(stream(cfg, "select"))).with_workers(workers)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LedgerFile {
    strategy: String,
    chosen: String,
    trained_models: usize,
    #[serde(flatten)]
    ledger: CostLedger,
}

/// Wall-clock cost terms as `key value` lines. Kept out of the JSON outputs,
/// which must be reproducible byte for byte.
fn timings_text(strategy: &str, s: &LedgerSummary) -> String {
    format!(
        "strategy {strategy}\ne_one {}\ne_all {}\nc_one {:.6}\nc_all {:.6}\nsingle_unit_term {:.6}\nfull_network_term {:.6}\ntotal_seconds {:.6}\n",
        s.e_one, s.e_all, s.c_one, s.c_all, s.single_unit_term, s.full_network_term, s.total_seconds
    )
}

/// Runs every configured strategy on the shifted target, subsampled to the
/// first training size. Per strategy `s` writes `select-<s>.csv`,
/// `ledger-<s>.json`, `chosen-<s>.ckpt`, `timings-<s>.txt` (wall-clock, not
/// reproducible) and, for the proxy-based variants, `proxies-<s>.csv`.
pub fn cmd_select(cfg: &ExperimentConfig, checkpoint: Option<&Path>, workers: usize) -> Result<Vec<SelectionReport>> {
    if cfg.pixel_unit {
        if let Some(s) = cfg.strategies.iter().find(|s| s.baseline().is_some()) {
            return Err(Error::Config(format!(
                "the pixel unit only applies to flex strategies, not {s}"
            )));
        }
    }
    let prepared = prepare(cfg)?;
    let net = load_pretrained(cfg, &prepared, checkpoint)?;
    let data = target_splits(cfg, &prepared, cfg.split.train_sizes[0])?;
    let sel = selector(cfg, workers);
    let dir = create_out(cfg)?;
    let mut reports = Vec::new();
    for &strategy in &cfg.strategies {
        let report = sel.run(strategy, &net, &data)?;
        let name = strategy.name();
        emit_csv(&report, dir.join(format!("select-{name}.csv")))?;
        if report.proxy_accuracies.is_some() {
            emit_csv(&ProxyTable(&report), dir.join(format!("proxies-{name}.csv")))?;
        }
        write_json(
            dir.join(format!("ledger-{name}.json")),
            &LedgerFile {
                strategy: name.into(),
                chosen: report.chosen.to_string(),
                trained_models: report.ledger.trained_models(),
                ledger: report.ledger,
            },
        )?;
        fs::write(
            dir.join(format!("timings-{name}.txt")),
            timings_text(name, &ledger_summary(&report.ledger)),
        )?;
        save_checkpoint(&report.chosen_outcome.network, dir.join(format!("chosen-{name}.ckpt")))?;
        reports.push(report);
    }
    Ok(reports)
}

/// Per-unit sweep over every configured training size; writes `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, checkpoint: Option<&Path>, workers: usize) -> Result<SweepTable> {
    let prepared = prepare(cfg)?;
    let net = load_pretrained(cfg, &prepared, checkpoint)?;
    let ratios = cfg
        .split
        .train_sizes
        .iter()
        .map(|&size| Ok((size.label(), target_splits(cfg, &prepared, size)?)))
        .collect::<Result<Vec<_>>>()?;
    let table = per_unit_sweep(&net, &ratios, &selector(cfg, workers))?;
    emit_csv(&table, create_out(cfg)?.join("sweep.csv"))?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalSummary {
    pub k: usize,
    pub queries: usize,
    pub source_items: usize,
    pub target_domain: TargetDomain,
    pub map: f64,
}

/// Retrieves source validation images for each target query. Source features
/// come from the source network, query features from the tuned network, both
/// after their penultimate unit. Writes `retrieval.csv` and `retrieval.json`.
pub fn cmd_retrieve(
    cfg: &ExperimentConfig,
    source_checkpoint: Option<&Path>,
    tuned_checkpoint: Option<&Path>,
    k: Option<usize>,
) -> Result<(RetrievalResult, RetrievalSummary)> {
    let k = k.unwrap_or(cfg.retrieval.k);
    let prepared = prepare(cfg)?;
    let source_path = source_checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.retrieval.source_checkpoint.clone())
        .unwrap_or_else(|| cfg.output_dir.join("pretrained.ckpt"));
    let source_net = load_checkpoint_for(&source_path, &expected_network(cfg, &prepared)?)?;
    let tuned_path = tuned_checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.retrieval.tuned_checkpoint.clone())
        .unwrap_or_else(|| cfg.output_dir.join(format!("chosen-{}.ckpt", cfg.strategies[0].name())));
    let tuned_net = load_checkpoint(&tuned_path)?;

    let source = &prepared.source.val;
    if k > source.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} source retrieval items",
            source.len()
        )));
    }
    let queries = match cfg.retrieval.target_domain {
        TargetDomain::Shifted => target_splits(cfg, &prepared, cfg.split.train_sizes[0])?.test,
        TargetDomain::Source => source.clone(),
    };
    let source_feats = source_net.features_at(&source.images, source_net.num_units() - 1)?;
    let query_feats = tuned_net.features_at(&queries.images, tuned_net.num_units() - 1)?;
    let result = retrieval_map(&query_feats, &queries.labels, &source_feats, &source.labels, k)?;
    let summary = RetrievalSummary {
        k,
        queries: queries.len(),
        source_items: source.len(),
        target_domain: cfg.retrieval.target_domain,
        map: result.map,
    };
    let dir = create_out(cfg)?;
    emit_csv(&result, dir.join("retrieval.csv"))?;
    write_json(dir.join("retrieval.json"), &summary)?;
    Ok((result, summary))
}

/// Candidate label of the chosen model of a report, for printing.
pub fn describe(report: &SelectionReport) -> String {
    let chosen = report.chosen;
    let extra = match chosen {
        CandidateId::PixelUnit => " (pixel unit)",
        _ => "",
    };
    format!(
        "{}: chose {chosen}{extra} val={:.4} test={:.4} trained={}",
        report.strategy,
        report.chosen_outcome.val_accuracy,
        report.test_accuracy,
        report.ledger.trained_models()
    )
}
