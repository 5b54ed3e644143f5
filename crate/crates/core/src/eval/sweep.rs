use crate::domains::Splits;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::selector::{flex_argmax, CandidateId, Selector};
use crate::trainer::evaluate_accuracy;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Training-set size label (images per class, or a fraction).
    pub ratio: String,
    pub candidate: CandidateId,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs: usize,
    /// Validation argmax for this ratio, as flex would pick it.
    pub selected: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn ratio_rows<'a>(&'a self, ratio: &str) -> impl Iterator<Item = &'a SweepRow> + 'a {
        let ratio = ratio.to_string();
        self.rows.iter().filter(move |r| r.ratio == ratio)
    }

    /// Candidate with the best test accuracy at a ratio (ties to the earlier row).
    pub fn test_best(&self, ratio: &str) -> Option<&SweepRow> {
        self.ratio_rows(ratio)
            .fold(None, |best: Option<&SweepRow>, r| match best {
                Some(b) if b.test_accuracy >= r.test_accuracy => Some(b),
                _ => Some(r),
            })
    }

    pub fn selected(&self, ratio: &str) -> Option<&SweepRow> {
        self.ratio_rows(ratio).find(|r| r.selected)
    }

    /// Parses the CSV produced by [`emit_csv`](super::emit_csv).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format(format!("missing column {i}")));
            let num = |i: usize| -> Result<f64> {
                field(i)?.parse().map_err(|_| Error::Format(format!("bad number in column {i}")))
            };
            rows.push(SweepRow {
                ratio: field(0)?.to_string(),
                candidate: field(1)?.parse()?,
                val_accuracy: num(2)?,
                test_accuracy: num(3)?,
                epochs: field(4)?.parse().map_err(|_| Error::Format("bad epoch count".into()))?,
                selected: field(5)?.parse().map_err(|_| Error::Format("bad selected flag".into()))?,
            });
        }
        Ok(Self { rows })
    }
}

/// Fine-tunes every unit alone, and all units together, at each training-set
/// size, recording validation and test accuracy.
pub fn per_unit_sweep(pretrained: &Network, ratios: &[(String, Splits)], selector: &Selector) -> Result<SweepTable> {
    if ratios.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one ratio".into()));
    }
    let ids = Selector::flex_candidates(pretrained);
    let mut rows = Vec::new();
    for (label, data) in ratios {
        let trained = selector.train_candidates(pretrained, &ids, &data.train, &data.val)?;
        let best = flex_argmax(&trained);
        for (i, t) in trained.iter().enumerate() {
            rows.push(SweepRow {
                ratio: label.clone(),
                candidate: t.id,
                val_accuracy: t.outcome.val_accuracy,
                test_accuracy: evaluate_accuracy(&t.outcome.network, &data.test, 1)?,
                epochs: t.outcome.epochs_trained,
                selected: i == best,
            });
        }
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{subsample_and_split, synth_dataset, SplitSpec, TrainSize};
    use crate::layers::Layer;
    use crate::network::Unit;
    use crate::rng::Rng;
    use crate::trainer::{EarlyStopConfig, TrainConfig};

    fn two_unit_net() -> Network {
        let mut n = Network::new(
            "two",
            vec![1, 16, 16],
            4,
            vec![
                Unit::new("fc1", vec![Layer::flatten(), Layer::dense(256, 16), Layer::relu()]),
                Unit::new("fc2", vec![Layer::dense(16, 4)]),
            ],
        )
        .unwrap();
        n.init_params(&mut Rng::new(3));
        n
    }

    #[test]
    fn sweep_rows_and_selection_match_flex() {
        let data = synth_dataset(&Rng::new(1), 300, 4).unwrap();
        let splits = subsample_and_split(
            &data,
            &SplitSpec { train: TrainSize::PerClass(10), val: 60, test: 60, seed: 2 },
        )
        .unwrap();
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            early_stop: EarlyStopConfig { eval_every: 2, patience: 2, max_epochs: 10 },
            ..Default::default()
        }
        .with_seed(4);
        let sel = Selector::new(cfg);
        let net = two_unit_net();
        let table = per_unit_sweep(&net, &[("10".into(), splits.clone())], &sel).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.rows.iter().filter(|r| r.selected).count(), 1);
        let flex = sel.flex(&net, &splits).unwrap();
        assert_eq!(table.selected("10").unwrap().candidate, flex.chosen);
        assert!(per_unit_sweep(&net, &[], &sel).is_err());
    }
}
