use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `AP@k = (1/k) Σ_{i ≤ k} rel_i · P@i`, with `rel_i = 1` when the `i`-th
/// neighbour shares the query's label.
pub fn ap_at_k(query_label: usize, neighbor_labels: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if neighbor_labels.len() < k {
        return Err(Error::InvalidArgument(format!(
            "AP@{k} needs {k} neighbours, got {}",
            neighbor_labels.len()
        )));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &l) in neighbor_labels[..k].iter().enumerate() {
        if l == query_label {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub k: usize,
    /// AP@k per query, in query order.
    pub per_query: Vec<f64>,
    pub map: f64,
}

fn check_features(target: &Tensor, source: &Tensor, k: usize) -> Result<()> {
    if target.shape().len() != 2 || source.shape().len() != 2 || target.shape()[1] != source.shape()[1] {
        return Err(Error::shape("retrieval features", source.shape(), target.shape()));
    }
    if k == 0 || k > source.rows() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={} (source set size)",
            source.rows()
        )));
    }
    Ok(())
}

/// Indices of the `k` Euclidean-nearest source rows for every target row,
/// nearest first; equal distances go to the lower source index.
pub fn nearest_neighbors(target: &Tensor, source: &Tensor, k: usize) -> Result<Vec<Vec<usize>>> {
    check_features(target, source, k)?;
    Ok((0..target.rows())
        .into_par_iter()
        .map(|q| {
            let query = target.row(q);
            let mut dist: Vec<(f64, usize)> = (0..source.rows())
                .map(|j| {
                    let d = source
                        .row(j)
                        .iter()
                        .zip(query)
                        .map(|(&a, &b)| {
                            let t = a as f64 - b as f64;
                            t * t
                        })
                        .sum::<f64>();
                    (d, j)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < dist.len() {
                dist.select_nth_unstable_by(k - 1, cmp);
                dist.truncate(k);
            }
            dist.sort_unstable_by(cmp);
            dist.into_iter().map(|(_, j)| j).collect()
        })
        .collect())
}

/// Mean AP@k of retrieving source samples for every target sample.
pub fn retrieval_map(
    target_feats: &Tensor,
    target_labels: &[usize],
    source_feats: &Tensor,
    source_labels: &[usize],
    k: usize,
) -> Result<RetrievalResult> {
    if target_labels.len() != target_feats.rows() || source_labels.len() != source_feats.rows() {
        return Err(Error::InvalidArgument("feature and label counts differ".into()));
    }
    if target_labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let neighbors = nearest_neighbors(target_feats, source_feats, k)?;
    let per_query = neighbors
        .iter()
        .zip(target_labels)
        .map(|(nn, &q)| {
            let labels: Vec<usize> = nn.iter().map(|&j| source_labels[j]).collect();
            ap_at_k(q, &labels, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let map = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(RetrievalResult { k, per_query, map })
}
