//! Flex-tuning strategies and the standard fine-tuning baselines.
//!
//! | strategy      | trained models                         | fallback   |
//! |---------------|----------------------------------------|------------|
//! | `flex`        | every unit, plus all units             | none       |
//! | `fast-flex`   | all units, then the best proxy unit    | `all`      |
//! | `faster-flex` | one epoch of all units, then best unit | none       |
//! | baselines     | one run with the baseline's mask       | none       |
//!
//! Each candidate trains with its own seed derived from the base seed and the
//! set of parameters it covers, so the same candidate trained by two
//! strategies follows the same trajectory.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{LabeledDataset, Splits};
use crate::error::{Error, Result};
use crate::network::{Network, TrainableMask, UnitRole};
use crate::rng::derive_seed;
use crate::trainer::{evaluate_accuracy, fine_tune, train_fixed_epochs, CostLedger, FineTuneOutcome, TrainConfig};

/// Which parameters a trained model was allowed to change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CandidateId {
    /// Unit ℓ alone (1-based).
    Unit(usize),
    All,
    /// The last `k` fully-connected units.
    Fc(usize),
    ScaleShift,
    /// The prepended 1×1 convolution.
    PixelUnit,
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateId::Unit(l) => write!(f, "unit-{l}"),
            CandidateId::All => f.write_str("all"),
            CandidateId::Fc(k) => write!(f, "fc-{k}"),
            CandidateId::ScaleShift => f.write_str("ss"),
            CandidateId::PixelUnit => f.write_str("pixel"),
        }
    }
}

impl FromStr for CandidateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad candidate {s:?}")))
        };
        match s {
            "all" => Ok(CandidateId::All),
            "ss" => Ok(CandidateId::ScaleShift),
            "pixel" => Ok(CandidateId::PixelUnit),
            _ if s.starts_with("unit-") => Ok(CandidateId::Unit(num(&s[5..])?)),
            _ if s.starts_with("fc-") => Ok(CandidateId::Fc(num(&s[3..])?)),
            _ => Err(Error::InvalidArgument(format!("unknown candidate {s:?}"))),
        }
    }
}

impl CandidateId {
    /// Candidate naming unit ℓ of `net`; the pixel unit gets its own id.
    pub fn for_unit(net: &Network, index: usize) -> Self {
        match net.units().get(index.wrapping_sub(1)).map(|u| u.role) {
            Some(UnitRole::Pixel) => CandidateId::PixelUnit,
            _ => CandidateId::Unit(index),
        }
    }

    pub fn mask(&self, net: &Network) -> Result<TrainableMask> {
        let l = net.num_units();
        match *self {
            CandidateId::Unit(i) if (1..=l).contains(&i) => Ok(TrainableMask::unit(i)),
            CandidateId::Unit(i) => Err(Error::InvalidArgument(format!("unit {i} outside 1..={l}"))),
            CandidateId::All => Ok(TrainableMask::all(l)),
            CandidateId::Fc(k) => {
                let fc = net.fc_units();
                if k == 0 || k > fc.len() {
                    return Err(Error::InvalidArgument(format!(
                        "fc-{k} requested but the network has {} fully-connected units",
                        fc.len()
                    )));
                }
                Ok(TrainableMask::units(fc[fc.len() - k..].iter().copied()))
            }
            CandidateId::ScaleShift => Ok(TrainableMask::scale_shift(l)),
            CandidateId::PixelUnit => net
                .pixel_unit()
                .map(TrainableMask::unit)
                .ok_or_else(|| Error::InvalidArgument("network has no pixel unit".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Flex,
    FastFlex,
    FasterFlex,
    /// Last fully-connected unit only.
    FtFc,
    /// Last two fully-connected units.
    FtFc2,
    FtSs,
    FtAll,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Flex,
        Strategy::FastFlex,
        Strategy::FasterFlex,
        Strategy::FtFc,
        Strategy::FtFc2,
        Strategy::FtSs,
        Strategy::FtAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Flex => "flex",
            Strategy::FastFlex => "fast-flex",
            Strategy::FasterFlex => "faster-flex",
            Strategy::FtFc => "ft-fc",
            Strategy::FtFc2 => "ft-fc2",
            Strategy::FtSs => "ft-ss",
            Strategy::FtAll => "ft-all",
        }
    }

    /// Baseline candidate, or `None` for the flex family.
    pub fn baseline(self) -> Option<CandidateId> {
        match self {
            Strategy::FtFc => Some(CandidateId::Fc(1)),
            Strategy::FtFc2 => Some(CandidateId::Fc(2)),
            Strategy::FtSs => Some(CandidateId::ScaleShift),
            Strategy::FtAll => Some(CandidateId::All),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// One trained candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub id: CandidateId,
    pub val_accuracy: f64,
    pub epochs: usize,
    pub trainable_scalars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub strategy: String,
    /// Models trained to completion, in candidate order.
    pub candidates: Vec<CandidateResult>,
    pub chosen: CandidateId,
    pub chosen_outcome: FineTuneOutcome,
    pub test_accuracy: f64,
    pub ledger: CostLedger,
    /// Surgery-proxy validation accuracies `a_1..a_L` (fast/faster variants).
    pub proxy_accuracies: Option<Vec<(CandidateId, f64)>>,
}

impl SelectionReport {
    pub fn candidate(&self, id: CandidateId) -> Option<&CandidateResult> {
        self.candidates.iter().find(|c| c.id == id)
    }
}

/// A finished candidate run, before reporting.
#[derive(Debug, Clone)]
pub struct TrainedCandidate {
    pub id: CandidateId,
    pub outcome: FineTuneOutcome,
    pub ledger: CostLedger,
    pub trainable_scalars: usize,
}

/// Runs strategies with a fixed training configuration and worker count.
#[derive(Debug, Clone)]
pub struct Selector {
    pub cfg: TrainConfig,
    pub workers: usize,
}

impl Selector {
    pub fn new(cfg: TrainConfig) -> Self {
        Self { cfg, workers: 1 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    /// Training config for one candidate.
    pub fn candidate_config(&self, mask: &TrainableMask) -> TrainConfig {
        self.cfg.with_seed(derive_seed(self.cfg.seed, mask.seed_key()))
    }

    fn train_one(&self, net: &Network, id: CandidateId, train: &LabeledDataset, val: &LabeledDataset) -> Result<TrainedCandidate> {
        let mask = id.mask(net)?;
        let mut ledger = CostLedger::default();
        let outcome = fine_tune(net, &mask, train, val, &self.candidate_config(&mask), &mut ledger)?;
        Ok(TrainedCandidate {
            id,
            outcome,
            ledger,
            trainable_scalars: net.masked_scalar_count(&mask),
        })
    }

    /// Trains candidates, in parallel over `workers` threads. Output order
    /// follows `ids` regardless of completion order.
    pub fn train_candidates(
        &self,
        net: &Network,
        ids: &[CandidateId],
        train: &LabeledDataset,
        val: &LabeledDataset,
    ) -> Result<Vec<TrainedCandidate>> {
        if self.workers <= 1 || ids.len() <= 1 {
            return ids.iter().map(|&id| self.train_one(net, id, train, val)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        pool.install(|| ids.par_iter().map(|&id| self.train_one(net, id, train, val)).collect())
    }

    /// Candidates of the flex decomposition: every unit, then `All`.
    pub fn flex_candidates(net: &Network) -> Vec<CandidateId> {
        (1..=net.num_units())
            .map(|l| CandidateId::for_unit(net, l))
            .chain([CandidateId::All])
            .collect()
    }

    pub fn flex(&self, net: &Network, data: &Splits) -> Result<SelectionReport> {
        let ids = Self::flex_candidates(net);
        let trained = self.train_candidates(net, &ids, &data.train, &data.val)?;
        let best = flex_argmax(&trained);
        let mut ledger = CostLedger::default();
        for t in &trained {
            ledger.merge(&t.ledger);
        }
        let chosen = trained[best].clone();
        finish("flex", &trained, chosen.id, chosen.outcome, ledger, None, &data.test)
    }

    fn proxies(&self, base: &Network, donor: &Network, val: &LabeledDataset) -> Result<Vec<(CandidateId, f64)>> {
        (1..=base.num_units())
            .map(|l| {
                let proxy = Network::surgery(base, donor, l)?;
                Ok((CandidateId::for_unit(base, l), evaluate_accuracy(&proxy, val, 1)?))
            })
            .collect()
    }

    pub fn fast_flex(&self, net: &Network, data: &Splits) -> Result<SelectionReport> {
        let all = self.train_one(net, CandidateId::All, &data.train, &data.val)?;
        let proxies = self.proxies(net, &all.outcome.network, &data.val)?;
        let best_l = proxy_argmax(&proxies);
        let unit = self.train_one(net, CandidateId::for_unit(net, best_l), &data.train, &data.val)?;
        let mut ledger = all.ledger;
        ledger.merge(&unit.ledger);
        let trained = [unit.clone(), all.clone()];
        let pick = if unit.outcome.val_accuracy >= all.outcome.val_accuracy {
            unit
        } else {
            all
        };
        finish("fast-flex", &trained, pick.id, pick.outcome, ledger, Some(proxies), &data.test)
    }

    pub fn faster_flex(&self, net: &Network, data: &Splits) -> Result<SelectionReport> {
        let mask = TrainableMask::all(net.num_units());
        let mut ledger = CostLedger::default();
        let one_epoch = train_fixed_epochs(net, &mask, &data.train, 1, &self.candidate_config(&mask), &mut ledger)?;
        let proxies = self.proxies(net, &one_epoch, &data.val)?;
        let best_l = proxy_argmax(&proxies);
        let unit = self.train_one(net, CandidateId::for_unit(net, best_l), &data.train, &data.val)?;
        ledger.merge(&unit.ledger);
        let trained = [unit.clone()];
        finish("faster-flex", &trained, unit.id, unit.outcome, ledger, Some(proxies), &data.test)
    }

    /// One fine-tuning run with the mask of `kind`.
    pub fn baseline(&self, net: &Network, kind: CandidateId, data: &Splits) -> Result<SelectionReport> {
        let t = self.train_one(net, kind, &data.train, &data.val)?;
        let trained = [t.clone()];
        let name = match kind {
            CandidateId::Fc(k) => format!("ft-fc({k})"),
            CandidateId::ScaleShift => "ft-ss".into(),
            CandidateId::All => "ft-all".into(),
            other => format!("ft-{other}"),
        };
        finish(&name, &trained, t.id, t.outcome, t.ledger, None, &data.test)
    }

    pub fn run(&self, strategy: Strategy, net: &Network, data: &Splits) -> Result<SelectionReport> {
        match strategy {
            Strategy::Flex => self.flex(net, data),
            Strategy::FastFlex => self.fast_flex(net, data),
            Strategy::FasterFlex => self.faster_flex(net, data),
            other => self.baseline(net, other.baseline().unwrap(), data),
        }
    }
}

/// Index of the flex winner: highest validation accuracy, then fewest
/// trainable scalars, then earliest position (units before `All`).
pub fn flex_argmax(trained: &[TrainedCandidate]) -> usize {
    let mut best = 0;
    for (i, t) in trained.iter().enumerate().skip(1) {
        let b = &trained[best];
        let better = t.outcome.val_accuracy > b.outcome.val_accuracy
            || (t.outcome.val_accuracy == b.outcome.val_accuracy && t.trainable_scalars < b.trainable_scalars);
        if better {
            best = i;
        }
    }
    best
}

/// Unit index (1-based) with the highest proxy accuracy; ties go to the lowest.
pub fn proxy_argmax(proxies: &[(CandidateId, f64)]) -> usize {
    let mut best = 0;
    for (i, p) in proxies.iter().enumerate() {
        if p.1 > proxies[best].1 {
            best = i;
        }
    }
    best + 1
}

fn finish(
    strategy: &str,
    trained: &[TrainedCandidate],
    chosen: CandidateId,
    chosen_outcome: FineTuneOutcome,
    ledger: CostLedger,
    proxy_accuracies: Option<Vec<(CandidateId, f64)>>,
    test: &LabeledDataset,
) -> Result<SelectionReport> {
    let test_accuracy = evaluate_accuracy(&chosen_outcome.network, test, 1)?;
    Ok(SelectionReport {
        strategy: strategy.to_string(),
        candidates: trained
            .iter()
            .map(|t| CandidateResult {
                id: t.id,
                val_accuracy: t.outcome.val_accuracy,
                epochs: t.outcome.epochs_trained,
                trainable_scalars: t.trainable_scalars,
            })
            .collect(),
        chosen,
        chosen_outcome,
        test_accuracy,
        ledger,
        proxy_accuracies,
    })
}

pub fn flex_tune(net: &Network, data: &Splits, cfg: &TrainConfig) -> Result<SelectionReport> {
    Selector::new(*cfg).flex(net, data)
}

pub fn fast_flex_tune(net: &Network, data: &Splits, cfg: &TrainConfig) -> Result<SelectionReport> {
    Selector::new(*cfg).fast_flex(net, data)
}

pub fn faster_flex_tune(net: &Network, data: &Splits, cfg: &TrainConfig) -> Result<SelectionReport> {
    Selector::new(*cfg).faster_flex(net, data)
}

pub fn baseline(net: &Network, kind: CandidateId, data: &Splits, cfg: &TrainConfig) -> Result<SelectionReport> {
    Selector::new(*cfg).baseline(net, kind, data)
}

/// Prepends an identity 1×1 convolution unit; see [`Network::attach_pixel_unit`].
pub fn attach_pixel_unit(net: &Network) -> Result<Network> {
    net.attach_pixel_unit()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{subsample_and_split, synth_dataset, SplitSpec, TrainSize};
    use crate::layers::Layer;
    use crate::network::{Architecture, Unit};
    use crate::rng::Rng;
    use crate::trainer::EarlyStopConfig;

    fn splits(seed: u64) -> Splits {
        let data = synth_dataset(&Rng::new(seed), 400, 4).unwrap();
        subsample_and_split(
            &data,
            &SplitSpec {
                train: TrainSize::PerClass(20),
                val: 80,
                test: 80,
                seed,
            },
        )
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 3e-3,
            early_stop: EarlyStopConfig {
                eval_every: 2,
                patience: 2,
                max_epochs: 8,
            },
            ..Default::default()
        }
        .with_seed(5)
    }

    fn net() -> Network {
        Architecture::Mnist4
            .build_initialized(&[1, 16, 16], 4, &mut Rng::new(2))
            .unwrap()
    }

    fn one_unit_net() -> Network {
        let mut n = Network::new(
            "one",
            vec![1, 16, 16],
            4,
            vec![Unit::new("fc", vec![Layer::flatten(), Layer::dense(256, 4)])],
        )
        .unwrap();
        n.init_params(&mut Rng::new(1));
        n
    }

    #[test]
    fn candidate_labels_round_trip() {
        for id in [CandidateId::Unit(3), CandidateId::All, CandidateId::Fc(2), CandidateId::ScaleShift, CandidateId::PixelUnit] {
            assert_eq!(id.to_string().parse::<CandidateId>().unwrap(), id);
        }
        assert!("unit-x".parse::<CandidateId>().is_err());
    }

    #[test]
    fn flex_on_single_unit_net_prefers_unit() {
        let r = flex_tune(&one_unit_net(), &splits(1), &small_cfg()).unwrap();
        assert_eq!(r.candidates.len(), 2);
        assert_eq!(r.candidates[0].val_accuracy, r.candidates[1].val_accuracy);
        assert_eq!(r.chosen, CandidateId::Unit(1));
    }

    #[test]
    fn flex_dominance_and_cost() {
        let r = flex_tune(&net(), &splits(2), &small_cfg()).unwrap();
        assert_eq!(r.candidates.len(), 5);
        let max = r.candidates.iter().map(|c| c.val_accuracy).fold(0.0, f64::max);
        assert_eq!(r.chosen_outcome.val_accuracy, max);
        assert_eq!(r.ledger.single_unit_runs, 4);
        assert_eq!(r.ledger.full_network_runs, 1);
        let e_units: usize = r.candidates[..4].iter().map(|c| c.epochs).sum();
        assert_eq!(r.ledger.single_unit_epochs, e_units);
        assert_eq!(r.ledger.full_network_epochs, r.candidates[4].epochs);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = splits(3);
        let a = Selector::new(small_cfg()).flex(&net(), &s).unwrap();
        let b = Selector::new(small_cfg()).with_workers(3).flex(&net(), &s).unwrap();
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.chosen_outcome, b.chosen_outcome);
    }

    #[test]
    fn zero_learning_rate_ties_go_low() {
        let cfg = TrainConfig { learning_rate: 0.0, ..small_cfg() };
        let s = splits(4);
        let fast = fast_flex_tune(&net(), &s, &cfg).unwrap();
        let proxies = fast.proxy_accuracies.as_ref().unwrap();
        assert_eq!(proxies.len(), 4);
        assert!(proxies.iter().all(|p| p.1 == proxies[0].1));
        assert_eq!(fast.chosen, CandidateId::Unit(1));
        assert_eq!(fast.ledger.trained_models(), 2);
        let faster = faster_flex_tune(&net(), &s, &cfg).unwrap();
        assert_eq!(faster.chosen, CandidateId::Unit(1));
        assert_eq!(faster.ledger.full_network_epochs, 1);
    }

    #[test]
    fn fast_flex_reuses_flex_candidates() {
        let s = splits(5);
        let flex = flex_tune(&net(), &s, &small_cfg()).unwrap();
        let fast = fast_flex_tune(&net(), &s, &small_cfg()).unwrap();
        for c in &fast.candidates {
            assert_eq!(flex.candidate(c.id).unwrap(), c);
        }
        assert!(fast.chosen_outcome.val_accuracy >= fast.candidate(CandidateId::All).unwrap().val_accuracy);
    }

    #[test]
    fn baselines_cover_expected_parameters() {
        let n = net();
        assert_eq!(CandidateId::Fc(2).mask(&n).unwrap().unit_indices.into_iter().collect::<Vec<_>>(), vec![3, 4]);
        assert!(CandidateId::Fc(3).mask(&n).is_err());
        let s = splits(6);
        let ss = baseline(&n, CandidateId::ScaleShift, &s, &small_cfg()).unwrap();
        assert_eq!(ss.candidates[0].trainable_scalars, 2 * (8 + 16 + 64) + 64 * 4 + 4);
        let fc1 = baseline(&n, CandidateId::Fc(1), &s, &small_cfg()).unwrap();
        let flex = flex_tune(&n, &s, &small_cfg()).unwrap();
        assert_eq!(flex.candidate(CandidateId::Unit(4)).unwrap().val_accuracy, fc1.candidates[0].val_accuracy);
    }

    #[test]
    fn all_baseline_matches_flex_all_candidate() {
        let s = splits(7);
        let one = one_unit_net();
        let all = baseline(&one, CandidateId::All, &s, &small_cfg()).unwrap();
        let flex = flex_tune(&one, &s, &small_cfg()).unwrap();
        assert_eq!(flex.candidate(CandidateId::All).unwrap(), &all.candidates[0]);
    }

    #[test]
    fn pixel_unit_is_a_candidate() {
        let aug = attach_pixel_unit(&net()).unwrap();
        let ids = Selector::flex_candidates(&aug);
        assert_eq!(ids.len(), 6);
        assert_eq!(ids[0], CandidateId::PixelUnit);
        assert_eq!(ids[1], CandidateId::Unit(2));
        assert_eq!(CandidateId::PixelUnit.mask(&aug).unwrap(), TrainableMask::unit(1));
        assert!(CandidateId::PixelUnit.mask(&net()).is_err());
    }

    #[test]
    fn strategy_names_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
