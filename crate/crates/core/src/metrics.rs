//! Ranking and separation metrics over anomaly scores.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::UndefinedMetric(format!("score of node {i} is not finite")));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::UndefinedMetric("labels contain a single class".into()));
    }
    Ok(())
}

/// ROC AUC via the Mann-Whitney rank sum; ties count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l != 0).count() as f64;
    let neg = n as f64 - pos;
    let rank_sum: f64 = (0..n).filter(|&k| labels[k] != 0).map(|k| ranks[k]).sum();
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Overlap of the normal and anomalous score histograms after min-max
/// normalization over all nodes: `Σ_b min(p_b, q_b)` with each histogram
/// normalized to unit mass. 0 means disjoint, 1 identical.
pub fn overlap_coefficient(scores: &[f64], labels: &[u8], bins: usize) -> Result<f64> {
    check(scores, labels)?;
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut hist = [vec![0.0; bins], vec![0.0; bins]];
    for (&s, &l) in scores.iter().zip(labels) {
        let u = if span > 0.0 { (s - lo) / span } else { 0.0 };
        let b = ((u * bins as f64) as usize).min(bins - 1);
        hist[(l != 0) as usize][b] += 1.0;
    }
    let totals = [hist[0].iter().sum::<f64>(), hist[1].iter().sum::<f64>()];
    Ok((0..bins).map(|b| (hist[0][b] / totals[0]).min(hist[1][b] / totals[1])).sum())
}

/// Mean of `values` over normal and anomalous nodes, in that order.
pub fn class_means(values: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    check(values, labels)?;
    let mut sums = [0.0; 2];
    let mut counts = [0.0; 2];
    for (&v, &l) in values.iter().zip(labels) {
        sums[(l != 0) as usize] += v;
        counts[(l != 0) as usize] += 1.0;
    }
    Ok((sums[0] / counts[0], sums[1] / counts[1]))
}
