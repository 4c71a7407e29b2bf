//! Range-based precision and recall at four increasingly strict detection levels.
//!
//! Each level is a preset of three knobs: an existence weight `alpha`, a
//! positional bias and a cardinality rule. The presets are chosen so that for
//! any input the scores are ordered AD1 >= AD2 >= AD3 >= AD4.
//!
//! The front bias is normalized by the best-placed detection of the same size:
//! AD3 recall equals AD2 recall when the detected part of a range is the
//! earliest possible block, and is strictly lower otherwise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ranges_from_binary, AnomalyRange, AnomalyType, PredictedRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AdLevel {
    AD1,
    AD2,
    AD3,
    AD4,
}

impl AdLevel {
    pub const ALL: [AdLevel; 4] = [AdLevel::AD1, AdLevel::AD2, AdLevel::AD3, AdLevel::AD4];

    pub fn recall_params(self) -> ScoringParams {
        use Cardinality::*;
        use PositionalBias::*;
        match self {
            AdLevel::AD1 => ScoringParams::new(1.0, Flat, NoPenalty),
            AdLevel::AD2 => ScoringParams::new(0.0, Flat, NoPenalty),
            AdLevel::AD3 => ScoringParams::new(0.0, Front, NoPenalty),
            AdLevel::AD4 => ScoringParams::new(0.0, Front, ExactlyOnce),
        }
    }

    pub fn precision_params(self) -> ScoringParams {
        use Cardinality::*;
        use PositionalBias::*;
        match self {
            AdLevel::AD1 | AdLevel::AD2 | AdLevel::AD3 => ScoringParams::new(0.0, Flat, NoPenalty),
            AdLevel::AD4 => ScoringParams::new(0.0, Flat, ExactlyOnce),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AdLevel::AD1 => "AD1",
            AdLevel::AD2 => "AD2",
            AdLevel::AD3 => "AD3",
            AdLevel::AD4 => "AD4",
        }
    }
}

impl std::fmt::Display for AdLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionalBias {
    Flat,
    Front,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cardinality {
    NoPenalty,
    ExactlyOnce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub alpha: f64,
    pub delta: PositionalBias,
    pub gamma: Cardinality,
}

impl ScoringParams {
    pub const fn new(alpha: f64, delta: PositionalBias, gamma: Cardinality) -> Self {
        ScoringParams { alpha, delta, gamma }
    }
}

/// Sum of front-bias weights `len - 1 - pos` over positions `a..b`.
fn front_weight(len: usize, a: usize, b: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Weights run from (len-1-a) down to (len-b); arithmetic series.
    let hi = (len - 1 - a) as u128;
    let lo = (len - b) as u128;
    let count = (b - a) as u128;
    ((hi + lo) * count / 2) as f64
}

/// Score of one target range against a sorted, disjoint list of other ranges.
///
/// Shared by recall (target = real range, others = predictions) and precision
/// (target = prediction, others = real ranges).
fn range_score(target: (usize, usize), others: &[(usize, usize)], params: ScoringParams) -> f64 {
    let (start, end) = target;
    let len = end - start;
    debug_assert!(len > 0);

    let first = others.partition_point(|&(_, e)| e <= start);
    let mut overlap = 0usize;
    let mut count = 0usize;
    let mut front = 0.0;
    for &(s, e) in &others[first..] {
        if s >= end {
            break;
        }
        let a = s.max(start);
        let b = e.min(end);
        if b > a {
            overlap += b - a;
            count += 1;
            if params.delta == PositionalBias::Front {
                front += front_weight(len, a - start, b - start);
            }
        }
    }

    let existence = if overlap > 0 { 1.0 } else { 0.0 };
    let mut reward = 0.0;
    if overlap > 0 && params.alpha < 1.0 {
        reward = overlap as f64 / len as f64;
        if params.delta == PositionalBias::Front {
            let best = front_weight(len, 0, overlap);
            if best > 0.0 {
                reward *= front / best;
            }
        }
        if params.gamma == Cardinality::ExactlyOnce && count != 1 {
            reward = 0.0;
        }
    }
    params.alpha * existence + (1.0 - params.alpha) * reward
}

fn spans<T, F: Fn(&T) -> (usize, usize)>(xs: &[T], f: F) -> Vec<(usize, usize)> {
    xs.iter().map(f).collect()
}

/// Recall of one real range `real` against predicted ranges at `level`.
pub fn recall_of_range(real: &AnomalyRange, predicted: &[PredictedRange], level: AdLevel) -> f64 {
    let preds = spans(predicted, |p| (p.start, p.end));
    range_score((real.start, real.end), &preds, level.recall_params())
}

/// Precision of one predicted range against real ranges at `level`.
pub fn precision_of_range(predicted: &PredictedRange, real: &[AnomalyRange], level: AdLevel) -> f64 {
    let reals = spans(real, |r| (r.start, r.end));
    range_score((predicted.start, predicted.end), &reals, level.precision_params())
}

/// Harmonic mean written as `2 / (1/p + 1/r)` so it stays monotone under rounding.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision <= 0.0 || recall <= 0.0 {
        0.0
    } else {
        2.0 / (1.0 / precision + 1.0 / recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelScores {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// One trace's real and predicted ranges.
#[derive(Debug, Clone, Copy)]
pub struct RangeSet<'a> {
    pub real: &'a [AnomalyRange],
    pub predicted: &'a [PredictedRange],
}

#[derive(Default)]
struct Sums {
    recall_sum: f64,
    recall_n: usize,
    precision_sum: f64,
    precision_n: usize,
}

fn accumulate(sums: &mut Sums, set: &RangeSet<'_>, level: AdLevel) {
    let preds = spans(set.predicted, |p| (p.start, p.end));
    let reals = spans(set.real, |r| (r.start, r.end));
    let rp = level.recall_params();
    let pp = level.precision_params();
    for r in &reals {
        sums.recall_sum += range_score(*r, &preds, rp);
        sums.recall_n += 1;
    }
    for p in &preds {
        sums.precision_sum += range_score(*p, &reals, pp);
        sums.precision_n += 1;
    }
}

fn finish(sums: &Sums) -> LevelScores {
    let recall = if sums.recall_n == 0 {
        1.0
    } else {
        sums.recall_sum / sums.recall_n as f64
    };
    let precision = if sums.precision_n == 0 {
        1.0
    } else {
        sums.precision_sum / sums.precision_n as f64
    };
    LevelScores {
        precision,
        recall,
        f_score: f_score(precision, recall),
    }
}

/// Precision, recall and F-score of one trace at `level`.
///
/// With no predictions precision is 1; with no real ranges recall is 1.
pub fn evaluate_level(real: &[AnomalyRange], predicted: &[PredictedRange], level: AdLevel) -> LevelScores {
    evaluate_level_multi(&[RangeSet { real, predicted }], level)
}

/// Pools ranges over several traces: recall is the mean over every real range,
/// precision the mean over every predicted range.
pub fn evaluate_level_multi(sets: &[RangeSet<'_>], level: AdLevel) -> LevelScores {
    let mut sums = Sums::default();
    for s in sets {
        accumulate(&mut sums, s, level);
    }
    finish(&sums)
}

/// Mean recall per anomaly type. Types without ranges are absent.
pub fn typewise_recall(sets: &[RangeSet<'_>], level: AdLevel) -> BTreeMap<AnomalyType, f64> {
    let mut acc: BTreeMap<AnomalyType, (f64, usize)> = BTreeMap::new();
    let params = level.recall_params();
    for s in sets {
        let preds = spans(s.predicted, |p| (p.start, p.end));
        for r in s.real {
            let e = acc.entry(r.anomaly_type).or_default();
            e.0 += range_score((r.start, r.end), &preds, params);
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(t, (sum, n))| (t, sum / n as f64)).collect()
}

/// Outlier scores and labels for one trace.
#[derive(Debug, Clone)]
pub struct ScoredTrace<'a> {
    pub trace_id: &'a str,
    pub app_id: u32,
    pub scores: &'a [f64],
    pub real: &'a [AnomalyRange],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Global,
    App,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdGrid {
    /// Nearest-rank quantiles at this many evenly spaced levels.
    Quantiles(usize),
    /// Every distinct score.
    Exhaustive,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid::Quantiles(200)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Negative infinity for the flag-everything point.
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Sorted by recall ascending, then precision descending.
    pub points: Vec<CurvePoint>,
    pub auprc: f64,
}

/// JSON numbers, with non-finite values written as `"inf"`, `"-inf"` or `"NaN"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Candidate thresholds for a pooled score sample, always including negative
/// infinity (everything flagged).
pub fn candidate_thresholds(scores: &[f64], grid: ThresholdGrid) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.iter().copied().filter(|s| !s.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut out = vec![f64::NEG_INFINITY];
    if sorted.is_empty() {
        return out;
    }
    match grid {
        ThresholdGrid::Exhaustive => out.extend(sorted.iter().copied()),
        ThresholdGrid::Quantiles(levels) => {
            let levels = levels.max(2);
            let n = sorted.len();
            for i in 0..levels {
                // Nearest-rank: an actual sample value, so with n <= levels every
                // distinct score is a candidate.
                let idx = (i * (n - 1)) / (levels - 1);
                out.push(sorted[idx]);
            }
        }
    }
    out.dedup();
    out
}

/// Area under the range-based precision/recall curve of one group of traces.
pub fn pr_curve(traces: &[ScoredTrace<'_>], level: AdLevel, grid: ThresholdGrid) -> PrCurve {
    let pooled: Vec<f64> = traces.iter().flat_map(|t| t.scores.iter().copied()).collect();
    let thresholds = candidate_thresholds(&pooled, grid);
    let mut points: Vec<CurvePoint> = thresholds
        .iter()
        .map(|&thr| {
            let preds: Vec<Vec<PredictedRange>> = traces
                .iter()
                .map(|t| {
                    let bin: Vec<bool> = t.scores.iter().map(|&s| s > thr).collect();
                    ranges_from_binary(&bin)
                })
                .collect();
            let sets: Vec<RangeSet<'_>> = traces
                .iter()
                .zip(&preds)
                .map(|(t, p)| RangeSet {
                    real: t.real,
                    predicted: p,
                })
                .collect();
            let s = evaluate_level_multi(&sets, level);
            CurvePoint {
                threshold: thr,
                recall: s.recall,
                precision: s.precision,
            }
        })
        .collect();
    points.sort_by(|a, b| {
        a.recall
            .total_cmp(&b.recall)
            .then(b.precision.total_cmp(&a.precision))
            .then(b.threshold.total_cmp(&a.threshold))
    });
    PrCurve {
        auprc: step_area(&points),
        points,
    }
}

/// Right-continuous step integration from an implicit (recall 0, precision 1) anchor.
pub fn step_area(points: &[CurvePoint]) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for p in points {
        if p.recall > prev_recall {
            area += (p.recall - prev_recall) * p.precision;
            prev_recall = p.recall;
        }
    }
    area
}

/// AUPRC at a granularity. App and trace granularity average over the units
/// that contain at least one real range.
pub fn auprc(traces: &[ScoredTrace<'_>], level: AdLevel, granularity: Granularity, grid: ThresholdGrid) -> Result<f64> {
    let units: Vec<Vec<ScoredTrace<'_>>> = match granularity {
        Granularity::Global => vec![traces.to_vec()],
        Granularity::App => {
            let mut by_app: BTreeMap<u32, Vec<ScoredTrace<'_>>> = BTreeMap::new();
            for t in traces {
                by_app.entry(t.app_id).or_default().push(t.clone());
            }
            by_app.into_values().collect()
        }
        Granularity::Trace => traces.iter().map(|t| vec![t.clone()]).collect(),
    };
    let mut values = Vec::new();
    for unit in &units {
        if unit.iter().all(|t| t.real.is_empty()) {
            if granularity != Granularity::Global {
                log::warn!(
                    "AUPRC: skipping unit `{}` with no labeled anomalies",
                    unit.first().map(|t| t.trace_id).unwrap_or("")
                );
            }
            continue;
        }
        values.push(pr_curve(unit, level, grid).auprc);
    }
    if values.is_empty() {
        return Err(Error::Invalid("AUPRC needs at least one labeled anomaly range".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: AdLevel,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub typewise_recall: BTreeMap<AnomalyType, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdReport {
    pub levels: Vec<LevelReport>,
    pub n_real_ranges: usize,
    pub n_predicted_ranges: usize,
}

impl AdReport {
    pub fn level(&self, level: AdLevel) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.level == level)
    }
}

/// Checks that each metric is non-increasing across consecutive levels.
pub fn check_monotone(levels: &[LevelReport]) -> Result<()> {
    for w in levels.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        for (name, x, y) in [
            ("precision", a.precision, b.precision),
            ("recall", a.recall, b.recall),
            ("f_score", a.f_score, b.f_score),
        ] {
            if y > x {
                return Err(Error::Integrity(format!(
                    "{name} increases from {} ({x}) to {} ({y}); level ordering violated",
                    a.level, b.level
                )));
            }
        }
    }
    Ok(())
}

/// Scores every requested level over a set of traces and verifies the
/// AD1 >= AD2 >= AD3 >= AD4 ordering.
pub fn evaluate_ad(sets: &[RangeSet<'_>], levels: &[AdLevel]) -> Result<AdReport> {
    let mut levels = levels.to_vec();
    levels.sort();
    levels.dedup();
    let reports: Vec<LevelReport> = levels
        .iter()
        .map(|&level| {
            let s = evaluate_level_multi(sets, level);
            LevelReport {
                level,
                precision: s.precision,
                recall: s.recall,
                f_score: s.f_score,
                typewise_recall: typewise_recall(sets, level),
            }
        })
        .collect();
    check_monotone(&reports)?;
    Ok(AdReport {
        levels: reports,
        n_real_ranges: sets.iter().map(|s| s.real.len()).sum(),
        n_predicted_ranges: sets.iter().map(|s| s.predicted.len()).sum(),
    })
}
