//! Data partitioning under the four learning settings, resampling, PCA and
//! per-trace min-max rescaling.

mod pca;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruthTable, Trace};

pub use pca::{apply_pca, fit_pca, fit_pca_traces, PcaModel, PcaTarget};

/// Gap between the end of a peeked training prefix and the first anomaly.
pub const PEEK_MARGIN_SECONDS: i64 = 300;
/// Peeked prefixes shorter than this are not used.
pub const MIN_PEEK_SECONDS: i64 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearningSetting {
    /// One application, peeking at normal prefixes of test traces.
    LS1,
    /// All applications, peeking.
    LS2,
    /// One application, undisturbed traces only.
    LS3,
    /// All applications, undisturbed traces only.
    LS4,
}

impl LearningSetting {
    pub fn single_app(self) -> bool {
        matches!(self, LearningSetting::LS1 | LearningSetting::LS3)
    }

    pub fn peeks(self) -> bool {
        matches!(self, LearningSetting::LS1 | LearningSetting::LS2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub setting: LearningSetting,
    pub app_id: Option<u32>,
    pub train_traces: Vec<String>,
    pub test_traces: Vec<String>,
    /// Disturbed trace id -> end (exclusive record index) of its normal prefix
    /// used for training. The test segment of such a trace starts there.
    pub peeked_segments: BTreeMap<String, usize>,
}

impl PartitionPlan {
    /// Training units: undisturbed traces followed by peeked prefixes.
    pub fn training_units(&self) -> Vec<String> {
        let mut units = self.train_traces.clone();
        units.extend(self.peeked_segments.keys().cloned());
        units
    }
}

/// Splits traces into training and test sets for a learning setting.
pub fn partition(
    traces: &[Trace],
    ground_truth: &GroundTruthTable,
    setting: LearningSetting,
    app_id: Option<u32>,
) -> Result<PartitionPlan> {
    if setting.single_app() && app_id.is_none() {
        return Err(Error::Invalid(format!("{setting:?} needs an application id")));
    }
    let selected: Vec<&Trace> = traces
        .iter()
        .filter(|t| !setting.single_app() || Some(t.app_id) == app_id)
        .collect();

    let mut plan = PartitionPlan {
        setting,
        app_id: if setting.single_app() { app_id } else { None },
        train_traces: Vec::new(),
        test_traces: Vec::new(),
        peeked_segments: BTreeMap::new(),
    };
    for t in &selected {
        let first_rci = ground_truth.for_trace(&t.trace_id).map(|e| e.root_cause_start).min();
        match first_rci {
            None => plan.train_traces.push(t.trace_id.clone()),
            Some(first) => {
                plan.test_traces.push(t.trace_id.clone());
                if setting.peeks() && !t.is_empty() {
                    let t0 = t.timestamps()[0];
                    let cutoff = first - PEEK_MARGIN_SECONDS;
                    if cutoff - t0 >= MIN_PEEK_SECONDS {
                        let end = t.timestamps().partition_point(|&ts| ts < cutoff);
                        plan.peeked_segments.insert(t.trace_id.clone(), end);
                    }
                }
            }
        }
    }
    if plan.test_traces.is_empty() && setting.single_app() {
        log::warn!("application {app_id:?} has no disturbed traces; test set is empty");
    }
    Ok(plan)
}

/// Fractions for the internal training, validation and threshold sets.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.15, 0.15);

/// Trace-level random split of the training units into D0, D1, D2.
///
/// Sizes are floored, the remainder goes to D1 then D2 then D0, and empty sets
/// borrow from the largest one.
pub fn split_train(
    plan: &PartitionPlan,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    let mut units = plan.training_units();
    let n = units.len();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 training traces to split, got {n}"
        )));
    }
    let mut sizes = [
        (fractions.0 * n as f64).floor() as usize,
        (fractions.1 * n as f64).floor() as usize,
        (fractions.2 * n as f64).floor() as usize,
    ];
    let mut rem = n.saturating_sub(sizes.iter().sum());
    for i in [1usize, 2, 0].into_iter().cycle() {
        if rem == 0 {
            break;
        }
        sizes[i] += 1;
        rem -= 1;
    }
    for i in 0..3 {
        if sizes[i] == 0 {
            let largest = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
            sizes[largest] -= 1;
            sizes[i] += 1;
        }
    }
    units.shuffle(&mut crate::seed::rng(seed));
    let d2 = units.split_off(sizes[0] + sizes[1]);
    let d1 = units.split_off(sizes[0]);
    Ok((units, d1, d2))
}

/// Averages records into `l`-second buckets. Timestamps are bucket starts.
pub fn resample(trace: &Trace, l: i64) -> Result<Trace> {
    if l < 1 {
        return Err(Error::Invalid(format!("resampling interval {l} < 1")));
    }
    let step = trace.step();
    let per_bucket = (l / step).max(1) as usize;
    if per_bucket == 1 {
        return Ok(trace.clone());
    }
    let n = trace.len();
    let m = trace.n_features();
    let buckets = n.div_ceil(per_bucket);
    let mut timestamps = Vec::with_capacity(buckets);
    let mut values = vec![0.0; buckets * m];
    for b in 0..buckets {
        let lo = b * per_bucket;
        let hi = (lo + per_bucket).min(n);
        timestamps.push(trace.timestamps()[lo]);
        let out = &mut values[b * m..(b + 1) * m];
        for i in lo..hi {
            for (o, v) in out.iter_mut().zip(trace.row(i)) {
                *o += v;
            }
        }
        let cnt = (hi - lo) as f64;
        out.iter_mut().for_each(|o| *o /= cnt);
    }
    Trace::new(
        trace.trace_id.clone(),
        trace.app_id,
        timestamps,
        trace.features().to_vec(),
        values,
    )
}

/// Per-feature min and max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerModel {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerModel {
    pub fn fit(traces: &[&Trace]) -> Result<Self> {
        let m = traces
            .first()
            .map(|t| t.n_features())
            .ok_or_else(|| Error::Invalid("no traces to fit a scaler on".into()))?;
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        for t in traces {
            for row in t.rows() {
                for j in 0..m {
                    min[j] = min[j].min(row[j]);
                    max[j] = max[j].max(row[j]);
                }
            }
        }
        for j in 0..m {
            if min[j] > max[j] {
                min[j] = 0.0;
                max[j] = 0.0;
            }
        }
        Ok(ScalerModel { min, max })
    }

    /// `(x - min) / (max - min)`; constant features map to 0.
    pub fn apply(&self, trace: &Trace) -> Result<Trace> {
        if trace.n_features() != self.min.len() {
            return Err(Error::Invalid("scaler dimension mismatch".into()));
        }
        let m = self.min.len();
        let values = trace
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let j = i % m;
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    (x - self.min[j]) / span
                } else {
                    0.0
                }
            })
            .collect();
        trace.with_values(trace.features().to_vec(), values)
    }
}

/// Min-max rescaling of a trace with its own per-feature range.
pub fn rescale(trace: &Trace) -> Result<(Trace, ScalerModel)> {
    let model = if trace.is_empty() {
        ScalerModel {
            min: vec![0.0; trace.n_features()],
            max: vec![0.0; trace.n_features()],
        }
    } else {
        ScalerModel::fit(&[trace])?
    };
    Ok((model.apply(trace)?, model))
}
