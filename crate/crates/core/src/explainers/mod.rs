//! Anomaly explainers: two model-free ones that emit interval predicates and a
//! perturbation surrogate that emits feature weights.

mod exstream;
mod macrobase;
mod surrogate;

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Explanation, Trace};

pub use exstream::{explain_exstream, exstream_reward, ExstreamConfig};
pub use macrobase::{explain_macrobase, risk_ratio, MacrobaseConfig};
pub use surrogate::{explain_surrogate, SurrogateConfig, SurrogateExplanation};

/// Anomalous rows and the normal rows preceding them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePair {
    pub features: Vec<String>,
    pub anomalous: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
}

impl ReferencePair {
    pub fn new(features: Vec<String>, anomalous: Vec<Vec<f64>>, reference: Vec<Vec<f64>>) -> Result<Self> {
        if anomalous.is_empty() || reference.is_empty() {
            return Err(Error::Invalid("explanation needs anomalous and reference rows".into()));
        }
        let m = features.len();
        if m == 0 || anomalous.iter().chain(&reference).any(|r| r.len() != m) {
            return Err(Error::Invalid("rows do not match the feature list".into()));
        }
        Ok(ReferencePair {
            features,
            anomalous,
            reference,
        })
    }

    /// Slices a trace; the reference range must end before the anomaly starts.
    pub fn from_trace(trace: &Trace, anomaly: Range<usize>, reference: Range<usize>) -> Result<Self> {
        if reference.end > anomaly.start {
            return Err(Error::Invalid(format!(
                "reference {reference:?} does not precede anomaly {anomaly:?}"
            )));
        }
        if anomaly.end > trace.len() {
            return Err(Error::Invalid(format!("anomaly {anomaly:?} beyond trace end")));
        }
        ReferencePair::new(
            trace.features().to_vec(),
            trace.row_block(anomaly),
            trace.row_block(reference),
        )
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn anomalous_column(&self, j: usize) -> Vec<f64> {
        self.anomalous.iter().map(|r| r[j]).collect()
    }

    pub fn reference_column(&self, j: usize) -> Vec<f64> {
        self.reference.iter().map(|r| r[j]).collect()
    }

    pub fn reference_means(&self) -> Vec<f64> {
        (0..self.n_features())
            .map(|j| crate::stats::mean(&self.reference_column(j)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainerKind {
    Exstream,
    Macrobase,
    Surrogate,
}

impl ExplainerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExplainerKind::Exstream => "exstream",
            ExplainerKind::Macrobase => "macrobase",
            ExplainerKind::Surrogate => "surrogate",
        }
    }

    /// Whether explanations can be run as point classifiers.
    pub fn predictive(self) -> bool {
        !matches!(self, ExplainerKind::Surrogate)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerConfig {
    pub exstream: ExstreamConfig,
    pub macrobase: MacrobaseConfig,
    pub surrogate: SurrogateConfig,
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.macrobase.validate()?;
        self.surrogate.validate()
    }
}

/// Outlier score of a block of rows, used by the surrogate.
pub type ScoreFn<'a> = dyn Fn(&[Vec<f64>]) -> Result<f64> + Sync + 'a;

/// Runs one explainer and records its wall-clock build time.
pub fn explain(
    kind: ExplainerKind,
    pair: &ReferencePair,
    config: &ExplainerConfig,
    score_fn: Option<&ScoreFn<'_>>,
    seed: u64,
) -> Result<Explanation> {
    let started = Instant::now();
    let mut explanation = match kind {
        ExplainerKind::Exstream => explain_exstream(pair, &config.exstream)?,
        ExplainerKind::Macrobase => explain_macrobase(pair, &config.macrobase)?,
        ExplainerKind::Surrogate => {
            let f = score_fn
                .ok_or_else(|| Error::Invalid("the surrogate explainer needs a detector score function".into()))?;
            explain_surrogate(pair, f, &config.surrogate, seed)?.explanation
        }
    };
    explanation.build_time_seconds = started.elapsed().as_secs_f64();
    Ok(explanation)
}

/// 0/1 prediction of a predicate explanation on one row.
pub fn predict(explanation: &Explanation, features: &[String], row: &[f64]) -> Result<u8> {
    explanation.predict(features, row).map(u8::from)
}
