//! Stratified partitioning and target-set subsampling.

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Size of the target training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainSize {
    /// Images per class.
    PerClass(usize),
    /// Fraction of the per-class pool left after val/test are removed.
    Fraction { fraction: f64 },
}

impl TrainSize {
    /// Short label used in reports (`30` or `0.5`).
    pub fn label(&self) -> String {
        match self {
            TrainSize::PerClass(n) => n.to_string(),
            TrainSize::Fraction { fraction } => format!("{fraction}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: TrainSize,
    /// Total validation images, spread evenly over classes.
    pub val: usize,
    /// Total test images, spread evenly over classes.
    pub test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Per-class share of `total`: class `c` gets `total / classes`, plus one for
/// the first `total % classes` classes.
fn class_quota(total: usize, classes: usize, class: usize) -> usize {
    total / classes + usize::from(class < total % classes)
}

/// Splits `data` into `totals.len()` stratified groups plus a remainder.
///
/// Each class is shuffled with its own stream (`rng.fork(class)`), then the
/// groups take their per-class quotas in order. The last returned vector is the
/// remainder, in shuffled per-class order, class-major. Group indices are sorted.
pub fn stratified_partition(data: &LabeledDataset, totals: &[usize], rng: &Rng) -> Result<Vec<Vec<usize>>> {
    let by_class = data.indices_by_class();
    let classes = data.classes;
    let mut groups = vec![Vec::new(); totals.len()];
    let mut rest = Vec::new();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        rng.fork(c as u64).shuffle(&mut idx);
        let needed: usize = totals.iter().map(|&t| class_quota(t, classes, c)).sum();
        if needed > idx.len() {
            return Err(Error::InsufficientSamples {
                class: c,
                needed,
                available: idx.len(),
            });
        }
        let mut pos = 0;
        for (g, &t) in groups.iter_mut().zip(totals) {
            let q = class_quota(t, classes, c);
            g.extend_from_slice(&idx[pos..pos + q]);
            pos += q;
        }
        rest.push(idx[pos..].to_vec());
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.push(rest.into_iter().flatten().collect());
    Ok(groups)
}

/// Carves fixed-size val/test sets out of `data`, then subsamples the training
/// set from what remains.
///
/// Val and test depend only on the seed, never on `spec.train`, and smaller
/// training sets are prefixes of larger ones for the same seed.
pub fn subsample_and_split(data: &LabeledDataset, spec: &SplitSpec) -> Result<Splits> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rng = Rng::new(spec.seed);
    let mut groups = stratified_partition(data, &[spec.val, spec.test], &rng)?;
    let pool = groups.pop().unwrap();
    let mut pool_by_class = vec![Vec::new(); data.classes];
    for i in pool {
        pool_by_class[data.labels[i]].push(i);
    }
    let mut train = Vec::new();
    for (c, idx) in pool_by_class.iter().enumerate() {
        let take = match spec.train {
            TrainSize::PerClass(n) => n,
            TrainSize::Fraction { fraction } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::InvalidArgument(format!(
                        "train fraction must be in [0, 1], got {fraction}"
                    )));
                }
                (fraction * idx.len() as f64).round() as usize
            }
        };
        if take > idx.len() {
            return Err(Error::InsufficientSamples {
                class: c,
                needed: take,
                available: idx.len(),
            });
        }
        train.extend_from_slice(&idx[..take]);
    }
    train.sort_unstable();
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Splits {
        train: data.subset(&train),
        val: data.subset(&groups[0]),
        test: data.subset(&groups[1]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// Dataset whose single pixel stores the sample index, so subsets can be traced back.
    fn indexed(n: usize, classes: usize) -> LabeledDataset {
        let images = Tensor::from_fn(&[n, 1, 1, 1], |i| i as crate::tensor::Float);
        LabeledDataset::new(images, (0..n).map(|i| i % classes).collect(), classes).unwrap()
    }

    fn ids(d: &LabeledDataset) -> Vec<usize> {
        d.images.data().iter().map(|&v| v as usize).collect()
    }

    fn spec(train: TrainSize) -> SplitSpec {
        SplitSpec {
            train,
            val: 100,
            test: 100,
            seed: 9,
        }
    }

    #[test]
    fn per_class_target_is_exact() {
        let s = subsample_and_split(&indexed(1000, 10), &spec(TrainSize::PerClass(30))).unwrap();
        assert_eq!(s.train.len(), 300);
        assert!(s.train.class_counts().iter().all(|&c| c == 30));
        assert!(s.val.class_counts().iter().all(|&c| c == 10));
    }

    #[test]
    fn full_ratio_takes_whole_pool() {
        let s = subsample_and_split(&indexed(1000, 10), &spec(TrainSize::Fraction { fraction: 1.0 })).unwrap();
        assert_eq!(s.train.len(), 800);
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let d = indexed(1000, 10);
        let a = subsample_and_split(&d, &spec(TrainSize::PerClass(50))).unwrap();
        let b = subsample_and_split(&d, &spec(TrainSize::PerClass(50))).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = [ids(&a.train), ids(&a.val), ids(&a.test)].concat();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn val_test_fixed_and_train_nested_across_ratios() {
        let d = indexed(1000, 10);
        let small = subsample_and_split(&d, &spec(TrainSize::PerClass(3))).unwrap();
        let big = subsample_and_split(&d, &spec(TrainSize::PerClass(30))).unwrap();
        assert_eq!(small.val, big.val);
        assert_eq!(small.test, big.test);
        let big_ids = ids(&big.train);
        assert!(ids(&small.train).iter().all(|i| big_ids.contains(i)));
    }

    #[test]
    fn uneven_totals_differ_by_at_most_one() {
        let d = indexed(1000, 10);
        let g = stratified_partition(&d, &[57], &Rng::new(1)).unwrap();
        let counts = d.subset(&g[0]).class_counts();
        assert_eq!(counts.iter().sum::<usize>(), 57);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_eq!(g[1].len(), 943);
    }

    #[test]
    fn insufficient_samples_is_an_error() {
        let err = subsample_and_split(&indexed(100, 10), &spec(TrainSize::PerClass(1))).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { .. }));
        let err = subsample_and_split(
            &indexed(300, 10),
            &SplitSpec { train: TrainSize::PerClass(11), val: 100, test: 100, seed: 0 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { needed: 11, available: 10, .. }));
    }

    #[test]
    fn train_size_json_forms() {
        assert_eq!(serde_json::from_str::<TrainSize>("30").unwrap(), TrainSize::PerClass(30));
        assert_eq!(
            serde_json::from_str::<TrainSize>(r#"{"fraction":0.5}"#).unwrap(),
            TrainSize::Fraction { fraction: 0.5 }
        );
    }
}
