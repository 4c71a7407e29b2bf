use serde::{Deserialize, Serialize};

use super::ReferencePair;
use crate::error::{Error, Result};
use crate::model::{Explanation, Predicate};
use crate::stats::{entropy_bits, pearson};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExstreamConfig {
    /// Features correlated above this (in absolute value) with a
    /// higher-reward feature are dropped.
    pub correlation_cutoff: f64,
}

impl Default for ExstreamConfig {
    fn default() -> Self {
        ExstreamConfig {
            correlation_cutoff: 0.9,
        }
    }
}

/// Entropy of the most interleaved ordering of `a` and `b` tied points:
/// minority points alone, majority points split evenly between them.
fn worst_case_run_entropy(a: usize, b: usize) -> f64 {
    let (lo, hi) = (a.min(b), a.max(b));
    if lo == hi {
        return entropy_bits(std::iter::repeat_n(1, 2 * lo));
    }
    let parts = lo + 1;
    let (q, rem) = (hi / parts, hi % parts);
    let sizes = std::iter::repeat_n(1, lo)
        .chain(std::iter::repeat_n(q + 1, rem))
        .chain(std::iter::repeat_n(q, parts - rem));
    entropy_bits(sizes)
}

/// Class entropy over segmentation entropy of one feature.
///
/// Values are sorted and cut into maximal single-class runs; a group of equal
/// values holding both classes forms a mixed run that is charged the entropy of
/// its worst-case interleaving. The result is 1 exactly when one threshold
/// separates the classes.
pub fn exstream_reward(anomalous: &[f64], reference: &[f64]) -> f64 {
    let n_a = anomalous.len();
    let n_r = reference.len();
    debug_assert!(n_a > 0 && n_r > 0);
    let n = (n_a + n_r) as f64;
    let mut points: Vec<(f64, bool)> = anomalous
        .iter()
        .map(|&v| (v, true))
        .chain(reference.iter().map(|&v| (v, false)))
        .collect();
    points.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let h_class = entropy_bits([n_a, n_r]);
    let mut h_seg = 0.0;
    let mut mixed = false;
    // Current pure run: (class, size).
    let mut run: Option<(bool, usize)> = None;
    let add_block = |h: &mut f64, size: usize| {
        // Same term as `entropy_bits`, so two pure runs reproduce H_class exactly.
        let p = size as f64 / n;
        *h += -p * p.log2();
    };
    let mut i = 0;
    while i < points.len() {
        let mut j = i;
        let (mut ca, mut cr) = (0usize, 0usize);
        while j < points.len() && points[j].0.total_cmp(&points[i].0).is_eq() {
            if points[j].1 {
                ca += 1;
            } else {
                cr += 1;
            }
            j += 1;
        }
        if ca > 0 && cr > 0 {
            mixed = true;
            if let Some((_, s)) = run.take() {
                add_block(&mut h_seg, s);
            }
            let size = ca + cr;
            let p = size as f64 / n;
            h_seg += p * ((1.0 / p).log2() + worst_case_run_entropy(ca, cr));
        } else {
            let class = ca > 0;
            match run {
                Some((c, s)) if c == class => run = Some((c, s + ca + cr)),
                _ => {
                    if let Some((_, s)) = run.take() {
                        add_block(&mut h_seg, s);
                    }
                    run = Some((class, ca + cr));
                }
            }
        }
        i = j;
    }
    if let Some((_, s)) = run {
        add_block(&mut h_seg, s);
    }
    let reward = (h_class / h_seg).min(1.0);
    if mixed && reward >= 1.0 {
        // One point per class at the same value: nothing separates them, but
        // the worst-case ordering of two points equals the class split.
        return 0.5;
    }
    reward
}

pub fn explain_exstream(pair: &ReferencePair, config: &ExstreamConfig) -> Result<Explanation> {
    let m = pair.n_features();
    let anomalous: Vec<Vec<f64>> = (0..m).map(|j| pair.anomalous_column(j)).collect();
    let reference: Vec<Vec<f64>> = (0..m).map(|j| pair.reference_column(j)).collect();
    let rewards: Vec<f64> = (0..m).map(|j| exstream_reward(&anomalous[j], &reference[j])).collect();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| rewards[y].total_cmp(&rewards[x]).then(x.cmp(&y)));

    // Keep everything above the largest drop between consecutive rewards.
    let mut keep = 1;
    let mut best_gap = 0.0;
    for i in 0..m.saturating_sub(1) {
        let gap = rewards[order[i]] - rewards[order[i + 1]];
        if gap > best_gap {
            best_gap = gap;
            keep = i + 1;
        }
    }

    let combined: Vec<Vec<f64>> = (0..m)
        .map(|j| anomalous[j].iter().chain(&reference[j]).copied().collect())
        .collect();
    let mut retained: Vec<usize> = Vec::new();
    for &j in &order[..keep] {
        let redundant = retained
            .iter()
            .any(|&r| pearson(&combined[j], &combined[r]).abs() > config.correlation_cutoff);
        if !redundant {
            retained.push(j);
        }
    }
    if retained.is_empty() {
        return Err(Error::EmptyExplanation("no feature retained".into()));
    }

    let predicates = retained
        .iter()
        .map(|&j| {
            let col = &anomalous[j];
            Predicate {
                feature: pair.features[j].clone(),
                low: col.iter().copied().fold(f64::INFINITY, f64::min),
                high: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Explanation::from_predicates(predicates)
}
