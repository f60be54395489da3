//! Evaluation metrics: accuracy / macro-F1, NMI, ARI, MRR and Hits@K.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
}

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Config("metric over an empty input".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Accuracy and macro-F1. Classes absent from both `pred` and `truth` are
/// left out of the macro mean.
pub fn accuracy_f1(pred: &[usize], truth: &[usize]) -> Result<(f64, f64)> {
    check_pair(pred, truth)?;
    let c = pred.iter().chain(truth).max().copied().unwrap_or(0) + 1;
    let mut tp = vec![0usize; c];
    let mut pred_count = vec![0usize; c];
    let mut true_count = vec![0usize; c];
    for (&p, &t) in pred.iter().zip(truth) {
        pred_count[p] += 1;
        true_count[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let acc = correct as f64 / pred.len() as f64;
    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for k in 0..c {
        if pred_count[k] + true_count[k] == 0 {
            continue;
        }
        present += 1;
        f1_sum += 2.0 * tp[k] as f64 / (pred_count[k] + true_count[k]) as f64;
    }
    Ok((acc, f1_sum / present as f64))
}

/// Joint counts with relabeling to dense ids.
fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<u64>>, Vec<u64>, Vec<u64>) {
    let mut pi: HashMap<usize, usize> = HashMap::new();
    let mut ti: HashMap<usize, usize> = HashMap::new();
    for &p in pred {
        let next = pi.len();
        pi.entry(p).or_insert(next);
    }
    for &t in truth {
        let next = ti.len();
        ti.entry(t).or_insert(next);
    }
    let mut table = vec![vec![0u64; ti.len()]; pi.len()];
    for (p, t) in pred.iter().zip(truth) {
        table[pi[p]][ti[t]] += 1;
    }
    let a = table.iter().map(|r| r.iter().sum()).collect();
    let b = (0..ti.len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    (table, a, b)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(Y; C) / (H(Y) + H(C))` with natural logs; 1 when both entropies vanish.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    let (table, a, b) = contingency(pred, truth);
    let (hc, hy) = (entropy(&a, n), entropy(&b, n));
    if hc + hy == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    Ok(2.0 * mi / (hc + hy))
}

fn pairs(x: u64) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

/// Adjusted Rand index from exact integer pair counts.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let (table, a, b) = contingency(pred, truth);
    let sum_ij: u128 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_a: u128 = a.iter().map(|&c| pairs(c)).sum();
    let sum_b: u128 = b.iter().map(|&c| pairs(c)).sum();
    let total = pairs(pred.len() as u64);
    if total == 0 {
        return Ok(1.0);
    }
    let (sij, sa, sb, tot) = (sum_ij as f64, sum_a as f64, sum_b as f64, total as f64);
    let expected = sa * sb / tot;
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both partitions trivial in the same way: identical by definition
        return Ok(if sij == expected { 1.0 } else { 0.0 });
    }
    Ok((sij - expected) / (max - expected))
}

/// Mean reciprocal rank and Hits@K for each `k` in `ks`.
pub fn mrr_hits(ranks: &[usize], ks: &[usize]) -> Result<(f64, Vec<f64>)> {
    if ranks.is_empty() {
        return Err(Error::Config("no ranks to score".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Config("ranks are 1-based".into()));
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let hits = ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
        .collect();
    Ok((mrr, hits))
}
