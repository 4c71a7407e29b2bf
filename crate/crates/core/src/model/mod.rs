//! Domain types shared by every stage: traces, ground truth, index ranges and
//! explanations.

mod io;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    read_ground_truth, read_score_file, read_trace, write_atomic, write_ground_truth, write_score_file, write_trace,
    GROUND_TRUTH_HEADER,
};

/// A uniformly sampled multivariate time series.
///
/// Values are stored row-major: one row per timestamp, one column per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub trace_id: String,
    pub app_id: u32,
    timestamps: Vec<i64>,
    features: Vec<String>,
    values: Vec<f64>,
}

impl Trace {
    pub fn new(
        trace_id: impl Into<String>,
        app_id: u32,
        timestamps: Vec<i64>,
        features: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let trace_id = trace_id.into();
        if values.len() != timestamps.len() * features.len() {
            return Err(Error::Integrity(format!(
                "trace {trace_id}: {} values for {} rows x {} features",
                values.len(),
                timestamps.len(),
                features.len()
            )));
        }
        if timestamps.len() >= 2 {
            let step = timestamps[1] - timestamps[0];
            if step <= 0 {
                return Err(Error::Integrity(format!(
                    "trace {trace_id}: timestamps not strictly increasing at row 1"
                )));
            }
            for (i, w) in timestamps.windows(2).enumerate() {
                if w[1] <= w[0] {
                    return Err(Error::Integrity(format!(
                        "trace {trace_id}: timestamps not strictly increasing at row {}",
                        i + 1
                    )));
                }
                if w[1] - w[0] != step {
                    return Err(Error::Integrity(format!(
                        "trace {trace_id}: irregular sampling step at row {}",
                        i + 1
                    )));
                }
            }
        }
        Ok(Trace {
            trace_id,
            app_id,
            timestamps,
            features,
            values,
        })
    }

    /// Builds a trace from rows, checking that every row has one value per feature.
    pub fn from_rows(
        trace_id: impl Into<String>,
        app_id: u32,
        timestamps: Vec<i64>,
        features: Vec<String>,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let m = features.len();
        let mut values = Vec::with_capacity(rows.len() * m);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != m {
                return Err(Error::Integrity(format!(
                    "row {i} has {} values, expected {m}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Trace::new(trace_id, app_id, timestamps, features, values)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sampling step in seconds; 1 for traces with fewer than two rows.
    pub fn step(&self) -> i64 {
        if self.timestamps.len() >= 2 {
            self.timestamps[1] - self.timestamps[0]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.features.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact(0) panics; a feature-less trace has no row content.
        let m = self.features.len().max(1);
        let n = self.timestamps.len();
        (0..n).map(move |i| {
            if self.features.is_empty() {
                &self.values[0..0]
            } else {
                &self.values[i * m..(i + 1) * m]
            }
        })
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.features.len() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    /// Copy of the rows in `range`, keeping ids and timestamps.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Trace {
        let m = self.features.len();
        Trace {
            trace_id: self.trace_id.clone(),
            app_id: self.app_id,
            timestamps: self.timestamps[range.clone()].to_vec(),
            features: self.features.clone(),
            values: self.values[range.start * m..range.end * m].to_vec(),
        }
    }

    /// Rows in `range` as owned vectors.
    pub fn row_block(&self, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        range.map(|i| self.row(i).to_vec()).collect()
    }

    /// Keeps only the named features, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<Trace> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| Error::Invalid(format!("trace {} has no feature `{n}`", self.trace_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = self.rows().flat_map(|r| idx.iter().map(move |&j| r[j])).collect();
        Ok(Trace {
            trace_id: self.trace_id.clone(),
            app_id: self.app_id,
            timestamps: self.timestamps.clone(),
            features: names.to_vec(),
            values,
        })
    }

    /// Same ids and timestamps with new feature columns.
    pub fn with_values(&self, features: Vec<String>, values: Vec<f64>) -> Result<Trace> {
        Trace::new(
            self.trace_id.clone(),
            self.app_id,
            self.timestamps.clone(),
            features,
            values,
        )
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    pub fn fill_missing(&mut self, fill_value: f64) {
        for v in self.values.iter_mut().filter(|v| v.is_nan()) {
            *v = fill_value;
        }
    }

    /// Row index of a timestamp that marks the start of an interval.
    ///
    /// Timestamps between samples snap to the sample whose bucket contains them.
    pub fn start_index(&self, ts: i64) -> Result<usize> {
        let (offset, step) = self.offset_of(ts)?;
        if offset % step != 0 {
            log::debug!(
                "trace {}: timestamp {ts} is not a sample time, snapping to its bucket",
                self.trace_id
            );
        }
        Ok((offset / step) as usize)
    }

    /// Row index (exclusive) of a timestamp that marks the end of an interval.
    pub fn end_index(&self, ts: i64) -> Result<usize> {
        let (offset, step) = self.offset_of(ts)?;
        if offset % step != 0 {
            log::debug!(
                "trace {}: timestamp {ts} is not a sample time, snapping to its bucket",
                self.trace_id
            );
        }
        Ok(((offset + step - 1) / step) as usize)
    }

    fn offset_of(&self, ts: i64) -> Result<(i64, i64)> {
        let Some(&t0) = self.timestamps.first() else {
            return Err(Error::Integrity(format!(
                "trace {} is empty; cannot place timestamp {ts}",
                self.trace_id
            )));
        };
        let step = self.step();
        let end = t0 + step * self.len() as i64;
        if ts < t0 || ts > end {
            return Err(Error::Integrity(format!(
                "timestamp {ts} outside span [{t0}, {end}] of trace {}",
                self.trace_id
            )));
        }
        Ok((ts - t0, step))
    }
}

/// The six injected anomaly types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnomalyType {
    /// Bursty input.
    T1,
    /// Bursty input until crash.
    T2,
    /// Stalled input.
    T3,
    /// CPU contention.
    T4,
    /// Driver failure.
    T5,
    /// Executor failure.
    T6,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 6] = [
        AnomalyType::T1,
        AnomalyType::T2,
        AnomalyType::T3,
        AnomalyType::T4,
        AnomalyType::T5,
        AnomalyType::T6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyType::T1 => "T1",
            AnomalyType::T2 => "T2",
            AnomalyType::T3 => "T3",
            AnomalyType::T4 => "T4",
            AnomalyType::T5 => "T5",
            AnomalyType::T6 => "T6",
        }
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyType::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| Error::Format(format!("unknown anomaly type `{s}`")))
    }
}

/// One labeled anomaly: root-cause interval plus optional extended-effect interval,
/// both half-open in epoch seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub app_id: u32,
    pub trace_id: String,
    pub anomaly_type: AnomalyType,
    pub root_cause_start: i64,
    pub root_cause_end: i64,
    pub extended_effect_start: Option<i64>,
    pub extended_effect_end: Option<i64>,
}

impl GroundTruthEntry {
    pub fn validate(&self) -> Result<()> {
        if self.root_cause_end <= self.root_cause_start {
            return Err(Error::Integrity(format!(
                "trace {}: root cause interval [{}, {}) is empty or inverted",
                self.trace_id, self.root_cause_start, self.root_cause_end
            )));
        }
        match (self.extended_effect_start, self.extended_effect_end) {
            (None, None) => Ok(()),
            (Some(s), Some(e)) => {
                if s != self.root_cause_end {
                    Err(Error::Integrity(format!(
                        "trace {}: extended effect starts at {s}, root cause ends at {}",
                        self.trace_id, self.root_cause_end
                    )))
                } else if e <= s {
                    Err(Error::Integrity(format!(
                        "trace {}: extended effect interval [{s}, {e}) is empty or inverted",
                        self.trace_id
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Err(Error::Integrity(format!(
                "trace {}: extended effect interval has only one bound",
                self.trace_id
            ))),
        }
    }

    /// End of the full anomaly interval (extended effect end when present).
    pub fn anomaly_end(&self) -> i64 {
        self.extended_effect_end.unwrap_or(self.root_cause_end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTable {
    pub entries: Vec<GroundTruthEntry>,
}

impl GroundTruthTable {
    pub fn for_trace<'a>(&'a self, trace_id: &'a str) -> impl Iterator<Item = &'a GroundTruthEntry> {
        self.entries.iter().filter(move |e| e.trace_id == trace_id)
    }

    pub fn is_disturbed(&self, trace_id: &str) -> bool {
        self.entries.iter().any(|e| e.trace_id == trace_id)
    }
}

/// A labeled anomaly as a half-open record-index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyRange {
    pub start: usize,
    pub end: usize,
    pub anomaly_type: AnomalyType,
}

impl AnomalyRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// A maximal run of positive predictions, half-open in record indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredictedRange {
    pub start: usize,
    pub end: usize,
}

impl PredictedRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Record-wise outlier scores for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub trace_id: String,
    pub scores: Vec<f64>,
}

/// Maximal runs of `true` as sorted, disjoint half-open ranges.
pub fn ranges_from_binary(predictions: &[bool]) -> Vec<PredictedRange> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &p) in predictions.iter().enumerate() {
        match (p, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(PredictedRange { start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(PredictedRange {
            start: s,
            end: predictions.len(),
        });
    }
    out
}

/// Inverse of [`ranges_from_binary`] for a series of length `n`.
pub fn binary_from_ranges(ranges: &[PredictedRange], n: usize) -> Vec<bool> {
    let mut out = vec![false; n];
    for r in ranges {
        out[r.start..r.end].iter_mut().for_each(|v| *v = true);
    }
    out
}

/// Which part of a labeled anomaly counts as the real range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeSpan {
    /// Root cause plus extended effect.
    #[default]
    Full,
    RootCauseOnly,
}

/// Real anomaly ranges of `trace`, sorted by start.
pub fn anomaly_ranges(table: &GroundTruthTable, trace: &Trace) -> Result<Vec<AnomalyRange>> {
    anomaly_ranges_with(table, trace, RangeSpan::Full)
}

pub fn anomaly_ranges_with(table: &GroundTruthTable, trace: &Trace, span: RangeSpan) -> Result<Vec<AnomalyRange>> {
    let mut entries: Vec<&GroundTruthEntry> = table.for_trace(&trace.trace_id).collect();
    entries.sort_by_key(|e| e.root_cause_start);
    for w in entries.windows(2) {
        if w[1].root_cause_start < w[0].anomaly_end() {
            return Err(Error::Integrity(format!(
                "trace {}: anomalies starting at {} and {} overlap",
                trace.trace_id, w[0].root_cause_start, w[1].root_cause_start
            )));
        }
    }
    let mut out: Vec<AnomalyRange> = Vec::with_capacity(entries.len());
    for e in entries {
        let end_ts = match span {
            RangeSpan::Full => e.anomaly_end(),
            RangeSpan::RootCauseOnly => e.root_cause_end,
        };
        let mut start = trace.start_index(e.root_cause_start)?;
        let end = trace.end_index(end_ts)?;
        // Snapping to coarse buckets can make neighbours share a bucket.
        if let Some(prev) = out.last() {
            start = start.max(prev.end);
        }
        if start >= end {
            log::warn!(
                "trace {}: anomaly at {} vanishes after snapping to record indices",
                trace.trace_id,
                e.root_cause_start
            );
            continue;
        }
        out.push(AnomalyRange {
            start,
            end,
            anomaly_type: e.anomaly_type,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationKind {
    Predicate,
    Weights,
}

/// Closed interval condition on one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub feature: String,
    pub low: f64,
    pub high: f64,
}

impl Predicate {
    pub fn holds(&self, value: f64) -> bool {
        value >= self.low && value <= self.high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub feature: String,
    pub weight: f64,
}

/// An explanation viewed abstractly: the features it uses, and optionally a
/// point predicate that can be run as a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub kind: ExplanationKind,
    pub feature_set: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicates: Option<Vec<Predicate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<FeatureWeight>>,
    pub build_time_seconds: f64,
}

impl Explanation {
    /// A conjunction of interval predicates. Predicates on the same feature are
    /// kept, the feature appears once in the feature set.
    pub fn from_predicates(predicates: Vec<Predicate>) -> Result<Self> {
        let mut feature_set: Vec<String> = Vec::new();
        for p in &predicates {
            if !feature_set.contains(&p.feature) {
                feature_set.push(p.feature.clone());
            }
        }
        if feature_set.is_empty() {
            return Err(Error::EmptyExplanation("no predicates".into()));
        }
        Ok(Explanation {
            kind: ExplanationKind::Predicate,
            feature_set,
            predicates: Some(predicates),
            weights: None,
            build_time_seconds: 0.0,
        })
    }

    pub fn from_weights(weights: Vec<FeatureWeight>) -> Result<Self> {
        let mut feature_set: Vec<String> = Vec::new();
        for w in &weights {
            if !feature_set.contains(&w.feature) {
                feature_set.push(w.feature.clone());
            }
        }
        if feature_set.is_empty() {
            return Err(Error::EmptyExplanation("no weighted features".into()));
        }
        Ok(Explanation {
            kind: ExplanationKind::Weights,
            feature_set,
            predicates: None,
            weights: Some(weights),
            build_time_seconds: 0.0,
        })
    }

    pub fn size(&self) -> usize {
        self.feature_set.len()
    }

    /// Evaluates the explanation as a point classifier on one row.
    pub fn predict(&self, features: &[String], row: &[f64]) -> Result<bool> {
        let predicates = match (self.kind, &self.predicates) {
            (ExplanationKind::Predicate, Some(p)) => p,
            _ => {
                return Err(Error::Unsupported(
                    "feature-weight explanations cannot be used for prediction".into(),
                ))
            }
        };
        for p in predicates {
            let j = features
                .iter()
                .position(|f| *f == p.feature)
                .ok_or_else(|| Error::Invalid(format!("row has no feature `{}`", p.feature)))?;
            if !p.holds(row[j]) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Column indices of the predicates for repeated prediction.
    pub fn compile(&self, features: &[String]) -> Result<CompiledPredicate> {
        let predicates = match (self.kind, &self.predicates) {
            (ExplanationKind::Predicate, Some(p)) => p,
            _ => {
                return Err(Error::Unsupported(
                    "feature-weight explanations cannot be used for prediction".into(),
                ))
            }
        };
        let index: HashMap<&str, usize> = features.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();
        let terms = predicates
            .iter()
            .map(|p| {
                index
                    .get(p.feature.as_str())
                    .map(|&j| (j, p.low, p.high))
                    .ok_or_else(|| Error::Invalid(format!("row has no feature `{}`", p.feature)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledPredicate { terms })
    }
}

/// Predicate conjunction resolved to column indices.
#[derive(Debug, Clone)]
pub struct CompiledPredicate {
    terms: Vec<(usize, f64, f64)>,
}

impl CompiledPredicate {
    pub fn predict(&self, row: &[f64]) -> bool {
        self.terms.iter().all(|&(j, lo, hi)| row[j] >= lo && row[j] <= hi)
    }
}
