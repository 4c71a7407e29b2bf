use serde::{Deserialize, Serialize};

use super::ReferencePair;
use crate::error::{Error, Result};
use crate::model::{Explanation, Predicate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacrobaseConfig {
    pub bins: usize,
    /// Fraction of anomalous rows an itemset must cover.
    pub min_support: f64,
    pub min_risk_ratio: f64,
    pub max_itemset_size: usize,
}

impl Default for MacrobaseConfig {
    fn default() -> Self {
        MacrobaseConfig {
            bins: 10,
            min_support: 0.5,
            min_risk_ratio: 3.0,
            max_itemset_size: 3,
        }
    }
}

impl MacrobaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Invalid(format!("bins = {} < 2", self.bins)));
        }
        if !(self.min_support > 0.0 && self.min_support <= 1.0) {
            return Err(Error::Invalid(format!(
                "min_support {} outside (0, 1]",
                self.min_support
            )));
        }
        if self.max_itemset_size < 1 {
            return Err(Error::Invalid("max_itemset_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Lift of the anomaly rate among matching rows over non-matching rows.
///
/// `a_*` count matching rows, `b_*` non-matching rows; `o` anomalous, `i`
/// reference. Returns `+inf` when no non-matching row is anomalous and 1 when
/// every row matches.
pub fn risk_ratio(a_o: usize, a_i: usize, b_o: usize, b_i: usize) -> Result<f64> {
    if a_o + a_i == 0 {
        return Err(Error::Invalid("risk ratio of an itemset matching no rows".into()));
    }
    if b_o + b_i == 0 {
        return Ok(1.0);
    }
    if b_o == 0 {
        return Ok(f64::INFINITY);
    }
    let a = a_o as f64 / (a_o + a_i) as f64;
    let b = b_o as f64 / (b_o + b_i) as f64;
    Ok(a / b)
}

/// Equal-width bins of one feature over its combined range.
struct Binning {
    /// Interior edges; bin `b` is `[edge[b-1], edge[b])`.
    edges: Vec<f64>,
}

impl Binning {
    fn fit(values: impl Iterator<Item = f64> + Clone, bins: usize) -> Self {
        let lo = values.clone().fold(f64::INFINITY, f64::min);
        let hi = values.fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Binning { edges: Vec::new() };
        }
        let width = (hi - lo) / bins as f64;
        Binning {
            edges: (1..bins).map(|b| lo + b as f64 * width).collect(),
        }
    }

    fn bin(&self, x: f64) -> u16 {
        self.edges.partition_point(|&e| e <= x) as u16
    }

    fn interval(&self, b: u16) -> (f64, f64) {
        let b = b as usize;
        let low = if b == 0 { f64::MIN } else { self.edges[b - 1] };
        let high = if b == self.edges.len() {
            f64::MAX
        } else {
            self.edges[b].next_down()
        };
        (low, high)
    }
}

type Item = (usize, u16);

struct Candidate {
    items: Vec<Item>,
    support: usize,
    rr: f64,
}

fn matches(row: &[u16], items: &[Item]) -> bool {
    items.iter().all(|&(j, b)| row[j] == b)
}

pub fn explain_macrobase(pair: &ReferencePair, config: &MacrobaseConfig) -> Result<Explanation> {
    config.validate()?;
    let m = pair.n_features();
    let binnings: Vec<Binning> = (0..m)
        .map(|j| {
            let vals = pair.anomalous.iter().chain(&pair.reference).map(move |r| r[j]);
            Binning::fit(vals, config.bins)
        })
        .collect();
    let encode = |rows: &[Vec<f64>]| -> Vec<Vec<u16>> {
        rows.iter()
            .map(|r| r.iter().zip(&binnings).map(|(&x, b)| b.bin(x)).collect())
            .collect()
    };
    let anomalous = encode(&pair.anomalous);
    let reference = encode(&pair.reference);
    let n_o = anomalous.len();
    let n_i = reference.len();
    let min_count = config.min_support * n_o as f64;

    let count = |rows: &[Vec<u16>], items: &[Item]| rows.iter().filter(|r| matches(r, items)).count();

    let mut level: Vec<Vec<Item>> = Vec::new();
    for j in 0..m {
        let mut seen: Vec<u16> = anomalous.iter().map(|r| r[j]).collect();
        seen.sort_unstable();
        seen.dedup();
        for b in seen {
            let items = vec![(j, b)];
            if count(&anomalous, &items) as f64 >= min_count {
                level.push(items);
            }
        }
    }

    let mut best: Option<Candidate> = None;
    let mut size = 1;
    while !level.is_empty() {
        for items in &level {
            let a_o = count(&anomalous, items);
            let a_i = count(&reference, items);
            let rr = risk_ratio(a_o, a_i, n_o - a_o, n_i - a_i)?;
            if rr < config.min_risk_ratio {
                continue;
            }
            let better = match &best {
                None => true,
                Some(c) => {
                    rr > c.rr || (rr == c.rr && (a_o > c.support || (a_o == c.support && items.len() < c.items.len())))
                }
            };
            if better {
                best = Some(Candidate {
                    items: items.clone(),
                    support: a_o,
                    rr,
                });
            }
        }
        if size == config.max_itemset_size {
            break;
        }
        // Join frequent sets sharing all but their last item.
        let mut next = Vec::new();
        for (x, left) in level.iter().enumerate() {
            for right in &level[x + 1..] {
                if left[..size - 1] != right[..size - 1] {
                    continue;
                }
                let (l, r) = (left[size - 1], right[size - 1]);
                if l.0 >= r.0 {
                    continue;
                }
                let mut items = left.clone();
                items.push(r);
                let all_subsets_frequent = (0..items.len()).all(|skip| {
                    let sub: Vec<Item> = items
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != skip)
                        .map(|(_, it)| *it)
                        .collect();
                    level.binary_search(&sub).is_ok()
                });
                if all_subsets_frequent && count(&anomalous, &items) as f64 >= min_count {
                    next.push(items);
                }
            }
        }
        next.sort();
        level = next;
        size += 1;
    }

    let best = best.ok_or_else(|| {
        Error::EmptyExplanation(format!(
            "no itemset reaches support {} and risk ratio {}",
            config.min_support, config.min_risk_ratio
        ))
    })?;
    let predicates = best
        .items
        .iter()
        .map(|&(j, b)| {
            let (low, high) = binnings[j].interval(b);
            Predicate {
                feature: pair.features[j].clone(),
                low,
                high,
            }
        })
        .collect();
    Explanation::from_predicates(predicates)
}
