//! Early-stopped fine-tuning, accuracy evaluation and epoch-cost accounting.
//!
//! Frozen units below the lowest trainable one are applied once per run and
//! their outputs cached, so a single-unit run on a deep unit only pays for the
//! units above it.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domains::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::softmax_cross_entropy;
use crate::network::{MaskKind, Network, TrainableMask};
use crate::optim::{adam_step, AdamConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopConfig {
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
}

fn default_eval_every() -> usize {
    5
}
fn default_patience() -> usize {
    3
}
fn default_max_epochs() -> usize {
    100
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            eval_every: default_eval_every(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
        }
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 || self.patience == 0 || self.max_epochs < self.eval_every {
            return Err(Error::InvalidArgument(format!(
                "early stopping needs eval_every >= 1, patience >= 1, max_epochs >= eval_every; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Training hyper-parameters. `seed` is not read from config files; callers
/// derive it from the experiment's master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(skip)]
    pub seed: u64,
    #[serde(default)]
    pub early_stop: EarlyStopConfig,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            seed: 0,
            early_stop: EarlyStopConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        // zero is allowed: it turns training into a no-op, which is useful for tests
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        self.early_stop.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneOutcome {
    /// Best-validation snapshot.
    pub network: Network,
    pub val_accuracy: f64,
    pub epochs_trained: usize,
    pub mask_kind: MaskKind,
    /// `(epoch, validation accuracy)` for every evaluation, starting at epoch 0.
    pub history: Vec<(usize, f64)>,
}

/// Realized training cost. Epoch and run counts are exact and deterministic;
/// the wall-clock fields are not serialized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub single_unit_runs: usize,
    pub single_unit_epochs: usize,
    pub full_network_runs: usize,
    pub full_network_epochs: usize,
    #[serde(skip)]
    pub single_unit_seconds: f64,
    #[serde(skip)]
    pub full_network_seconds: f64,
}

impl CostLedger {
    pub fn charge(&mut self, kind: MaskKind, epochs: usize, seconds: f64) {
        if kind.is_full_network() {
            self.full_network_runs += 1;
            self.full_network_epochs += epochs;
            self.full_network_seconds += seconds;
        } else {
            self.single_unit_runs += 1;
            self.single_unit_epochs += epochs;
            self.single_unit_seconds += seconds;
        }
    }

    pub fn merge(&mut self, other: &CostLedger) {
        self.single_unit_runs += other.single_unit_runs;
        self.single_unit_epochs += other.single_unit_epochs;
        self.full_network_runs += other.full_network_runs;
        self.full_network_epochs += other.full_network_epochs;
        self.single_unit_seconds += other.single_unit_seconds;
        self.full_network_seconds += other.full_network_seconds;
    }

    pub fn trained_models(&self) -> usize {
        self.single_unit_runs + self.full_network_runs
    }
}

/// The two cost terms `E_one·c_one` and `E_all·c_all`, with `c` the measured
/// mean seconds per epoch of each class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub e_one: usize,
    pub e_all: usize,
    pub c_one: f64,
    pub c_all: f64,
    pub single_unit_term: f64,
    pub full_network_term: f64,
    pub total_seconds: f64,
}

pub fn ledger_summary(ledger: &CostLedger) -> LedgerSummary {
    let mean = |s: f64, e: usize| if e == 0 { 0.0 } else { s / e as f64 };
    let c_one = mean(ledger.single_unit_seconds, ledger.single_unit_epochs);
    let c_all = mean(ledger.full_network_seconds, ledger.full_network_epochs);
    LedgerSummary {
        e_one: ledger.single_unit_epochs,
        e_all: ledger.full_network_epochs,
        c_one,
        c_all,
        single_unit_term: ledger.single_unit_epochs as f64 * c_one,
        full_network_term: ledger.full_network_epochs as f64 * c_all,
        total_seconds: ledger.single_unit_seconds + ledger.full_network_seconds,
    }
}

/// Fraction of samples whose label is among the `k` largest logits.
///
/// Ties are broken toward the lower class index, so a constant-logit network
/// predicts class 0.
pub fn evaluate_accuracy(net: &Network, data: &LabeledDataset, k: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    accuracy_from(net, &data.images, &data.labels, 1, k)
}

/// Accuracy from activations that already went through units `1..first`.
fn accuracy_from(net: &Network, x: &Tensor, labels: &[usize], first: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut hits = 0usize;
    for start in (0..labels.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(labels.len());
        let logits = net.forward_units(&x.slice_rows(start, end), first, net.num_units())?;
        for (i, &label) in labels[start..end].iter().enumerate() {
            let row = logits.row(i);
            let target = row[label];
            // rank = classes scoring strictly higher, or equal with a lower index
            let rank = row
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > target || (v == target && j < label))
                .count();
            if rank < k {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Predicted class per sample (ties to the lower index).
pub fn predict(net: &Network, images: &Tensor) -> Result<Vec<usize>> {
    let logits = net.forward(images)?;
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect())
}

/// Training state for one run: the masked network plus frozen-prefix caches.
struct Run<'a> {
    net: Network,
    first: usize,
    train_x: Tensor,
    train_labels: &'a [usize],
    cfg: &'a TrainConfig,
    rng: Rng,
}

impl<'a> Run<'a> {
    fn new(net: &Network, mask: &TrainableMask, train: &'a LabeledDataset, cfg: &'a TrainConfig) -> Result<Option<Self>> {
        let mut net = net.clone();
        net.apply_mask(mask)?;
        net.reset_optimizer();
        let Some(first) = net.lowest_trainable_unit() else {
            return Ok(None);
        };
        let train_x = net.forward_units(&train.images, 1, first - 1)?;
        Ok(Some(Self {
            net,
            first,
            train_x,
            train_labels: &train.labels,
            cfg,
            rng: Rng::new(cfg.seed),
        }))
    }

    fn epoch(&mut self) -> Result<()> {
        let n = self.train_labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        self.rng.shuffle(&mut order);
        let adam = self.cfg.adam;
        for batch in order.chunks(self.cfg.batch_size) {
            let x = self.train_x.gather_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| self.train_labels[i]).collect();
            let (logits, trace) = self.net.forward_trace(&x, self.first)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss".into()));
            }
            self.net.backward_trace(&trace, &grad, self.first)?;
            adam_step(self.net.params_mut(), self.cfg.learning_rate, adam.beta1, adam.beta2, adam.eps)?;
        }
        Ok(())
    }
}

fn check_data(train: &LabeledDataset, val: Option<&LabeledDataset>) -> Result<()> {
    if train.is_empty() || val.is_some_and(|v| v.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Fine-tunes the masked parameters with Adam and patience-based early stopping.
///
/// Validation accuracy is measured before training and then every
/// `eval_every` epochs; the best snapshot (strict improvement) is kept. The run
/// stops after `patience` consecutive evaluations without improvement, or at
/// the largest multiple of `eval_every` not above `max_epochs`. A mask that
/// unfreezes nothing returns the input network after one cadence.
pub fn fine_tune(
    net: &Network,
    mask: &TrainableMask,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &TrainConfig,
    ledger: &mut CostLedger,
) -> Result<FineTuneOutcome> {
    cfg.validate()?;
    check_data(train, Some(val))?;
    let started = Instant::now();
    let kind = mask.kind(net);
    let es = cfg.early_stop;
    let Some(mut run) = Run::new(net, mask, train, cfg)? else {
        let mut network = net.clone();
        network.apply_mask(mask)?;
        let acc = evaluate_accuracy(&network, val, 1)?;
        ledger.charge(kind, es.eval_every, started.elapsed().as_secs_f64());
        return Ok(FineTuneOutcome {
            network,
            val_accuracy: acc,
            epochs_trained: es.eval_every,
            mask_kind: kind,
            history: vec![(0, acc)],
        });
    };
    let val_x = run.net.forward_units(&val.images, 1, run.first - 1)?;
    let first = run.first;
    let eval = |net: &Network| accuracy_from(net, &val_x, &val.labels, first, 1);

    let mut best_acc = eval(&run.net)?;
    let mut best = run.net.clone();
    let mut history = vec![(0, best_acc)];
    let cap = es.max_epochs / es.eval_every * es.eval_every;
    let mut misses = 0;
    let mut epoch = 0;
    while epoch < cap {
        run.epoch()?;
        epoch += 1;
        if epoch % es.eval_every == 0 {
            let acc = eval(&run.net)?;
            history.push((epoch, acc));
            if acc > best_acc {
                best_acc = acc;
                best = run.net.clone();
                misses = 0;
            } else {
                misses += 1;
                if misses >= es.patience {
                    break;
                }
            }
        }
    }
    best.reset_optimizer();
    ledger.charge(kind, epoch, started.elapsed().as_secs_f64());
    Ok(FineTuneOutcome {
        network: best,
        val_accuracy: best_acc,
        epochs_trained: epoch,
        mask_kind: kind,
        history,
    })
}

/// Trains for exactly `epochs` epochs with no evaluation or snapshotting.
pub fn train_fixed_epochs(
    net: &Network,
    mask: &TrainableMask,
    train: &LabeledDataset,
    epochs: usize,
    cfg: &TrainConfig,
    ledger: &mut CostLedger,
) -> Result<Network> {
    cfg.validate()?;
    check_data(train, None)?;
    let started = Instant::now();
    let kind = mask.kind(net);
    let out = match Run::new(net, mask, train, cfg)? {
        Some(mut run) => {
            for _ in 0..epochs {
                run.epoch()?;
            }
            run.net.reset_optimizer();
            run.net
        }
        None => {
            let mut n = net.clone();
            n.apply_mask(mask)?;
            n
        }
    };
    ledger.charge(kind, epochs, started.elapsed().as_secs_f64());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Layer;
    use crate::network::{Architecture, Unit};
    use crate::tensor::Float;

    /// Two Gaussian blobs at ±2 along every axis of a 1×2×2 "image".
    fn blobs(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = Rng::new(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut data = Vec::with_capacity(n * 4);
        for &l in &labels {
            let centre = if l == 0 { -2.0 } else { 2.0 };
            for _ in 0..4 {
                data.push((centre + 0.5 * rng.normal()) as Float);
            }
        }
        LabeledDataset::new(Tensor::new(vec![n, 1, 2, 2], data).unwrap(), labels, 2).unwrap()
    }

    fn small_net(seed: u64) -> Network {
        let mut net = Network::new(
            "test",
            vec![1, 2, 2],
            2,
            vec![
                Unit::new("fc1", vec![Layer::flatten(), Layer::dense(4, 8), Layer::relu()]),
                Unit::new("fc2", vec![Layer::dense(8, 2)]),
            ],
        )
        .unwrap();
        net.init_params(&mut Rng::new(seed));
        net
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            early_stop: EarlyStopConfig {
                eval_every: 5,
                patience: 3,
                max_epochs: 200,
            },
            ..Default::default()
        }
        .with_seed(7)
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let (train, val) = (blobs(200, 1), blobs(100, 2));
        let net = small_net(3);
        let mut ledger = CostLedger::default();
        let out = fine_tune(&net, &TrainableMask::all(2), &train, &val, &cfg(), &mut ledger).unwrap();
        assert_eq!(out.val_accuracy, 1.0);
        assert!(out.epochs_trained <= 200);
        assert_eq!(ledger.full_network_epochs, out.epochs_trained);
    }

    #[test]
    fn identical_seeds_give_identical_outcomes() {
        let (train, val) = (blobs(100, 1), blobs(50, 2));
        let net = small_net(3);
        let run = || fine_tune(&net, &TrainableMask::unit(1), &train, &val, &cfg(), &mut CostLedger::default()).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn degenerate_mask_returns_input() {
        let (train, val) = (blobs(40, 1), blobs(20, 2));
        let net = small_net(3);
        let mut ledger = CostLedger::default();
        let out = fine_tune(&net, &TrainableMask::none(), &train, &val, &cfg(), &mut ledger).unwrap();
        assert_eq!(out.network.checksum(), net.checksum());
        assert_eq!(out.epochs_trained, 5);
        assert_eq!(out.val_accuracy, evaluate_accuracy(&net, &val, 1).unwrap());
    }

    #[test]
    fn frozen_units_are_bit_identical() {
        let (train, val) = (blobs(60, 1), blobs(20, 2));
        let net = small_net(3);
        let out = fine_tune(&net, &TrainableMask::unit(2), &train, &val, &cfg(), &mut CostLedger::default()).unwrap();
        let before: Vec<u64> = net.units()[0].params().flat_map(|p| p.value.data().iter().map(|v| v.to_bits() as u64)).collect();
        let after: Vec<u64> = out.network.units()[0].params().flat_map(|p| p.value.data().iter().map(|v| v.to_bits() as u64)).collect();
        assert_eq!(before, after);
        assert_ne!(out.network.units()[1], net.units()[1]);
    }

    #[test]
    fn best_snapshot_and_epoch_contract() {
        let (train, val) = (blobs(60, 1), blobs(20, 2));
        let c = TrainConfig {
            early_stop: EarlyStopConfig {
                eval_every: 3,
                patience: 2,
                max_epochs: 20,
            },
            ..cfg()
        };
        let out = fine_tune(&small_net(4), &TrainableMask::all(2), &train, &val, &c, &mut CostLedger::default()).unwrap();
        let max = out.history.iter().map(|h| h.1).fold(0.0, f64::max);
        assert_eq!(out.val_accuracy, max);
        assert_eq!(out.val_accuracy, evaluate_accuracy(&out.network, &val, 1).unwrap());
        assert_eq!(out.epochs_trained % 3, 0);
        assert!(out.epochs_trained <= 18);
    }

    #[test]
    fn single_unit_mask_is_single_unit_class() {
        let (train, val) = (blobs(40, 1), blobs(20, 2));
        let mut ledger = CostLedger::default();
        let out = fine_tune(&small_net(3), &TrainableMask::unit(1), &train, &val, &cfg(), &mut ledger).unwrap();
        assert_eq!(ledger.single_unit_runs, 1);
        assert_eq!(ledger.single_unit_epochs, out.epochs_trained);
        assert_eq!(ledger.full_network_epochs, 0);
    }

    #[test]
    fn fixed_epochs_charges_exactly() {
        let train = blobs(40, 1);
        let mut ledger = CostLedger::default();
        train_fixed_epochs(&small_net(3), &TrainableMask::all(2), &train, 1, &cfg(), &mut ledger).unwrap();
        assert_eq!((ledger.full_network_runs, ledger.full_network_epochs), (1, 1));
    }

    #[test]
    fn constant_logits_predict_class_zero() {
        let net = Architecture::Mnist4.build(&[1, 8, 8], 10).unwrap();
        let images = Tensor::from_fn(&[50, 1, 8, 8], |i| (i % 7) as Float / 7.0);
        let data = LabeledDataset::new(images, (0..50).map(|i| i % 10).collect(), 10).unwrap();
        assert!((evaluate_accuracy(&net, &data, 1).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(evaluate_accuracy(&net, &data, 10).unwrap(), 1.0);
        assert!(evaluate_accuracy(&net, &data, 0).is_err());
    }

    #[test]
    fn accuracy_monotone_in_k() {
        let net = small_net(5);
        let data = blobs(30, 9);
        let a1 = evaluate_accuracy(&net, &data, 1).unwrap();
        let a2 = evaluate_accuracy(&net, &data, 2).unwrap();
        assert!(a1 <= a2 && a2 == 1.0);
    }

    #[test]
    fn ledger_merge_and_summary() {
        let mut a = CostLedger::default();
        assert_eq!(ledger_summary(&a).total_seconds, 0.0);
        a.charge(MaskKind::SingleUnit, 10, 2.0);
        let mut b = CostLedger::default();
        b.charge(MaskKind::All, 5, 5.0);
        a.merge(&b);
        let s = ledger_summary(&a);
        assert_eq!((s.e_one, s.e_all), (10, 5));
        assert!((s.c_one - 0.2).abs() < 1e-12 && (s.c_all - 1.0).abs() < 1e-12);
        assert_eq!(a.trained_models(), 2);
        let json = serde_json::to_string(&a).unwrap();
        assert!(!json.contains("seconds"));
    }

    #[test]
    fn empty_data_and_bad_config_rejected() {
        let train = blobs(10, 1);
        let empty = train.subset(&[]);
        let net = small_net(1);
        let mut l = CostLedger::default();
        assert!(matches!(
            fine_tune(&net, &TrainableMask::all(2), &empty, &train, &cfg(), &mut l),
            Err(Error::EmptyDataset)
        ));
        let bad = TrainConfig { batch_size: 0, ..cfg() };
        assert!(fine_tune(&net, &TrainableMask::all(2), &train, &train, &bad, &mut l).is_err());
    }
}
