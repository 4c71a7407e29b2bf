use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ReferencePair, ScoreFn};
use crate::error::{Error, Result};
use crate::model::{Explanation, FeatureWeight};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Number of features reported.
    pub k: usize,
    pub perturbations: usize,
    /// Width of the exponential kernel over the fraction of replaced features.
    pub kernel_width: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            k: 5,
            perturbations: 1000,
            kernel_width: 0.75,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Invalid("surrogate k must be at least 1".into()));
        }
        if self.perturbations < 2 {
            return Err(Error::Invalid("surrogate needs at least 2 perturbations".into()));
        }
        if !(self.kernel_width > 0.0) {
            return Err(Error::Invalid("kernel width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateExplanation {
    pub explanation: Explanation,
    /// The score did not vary across perturbations.
    pub degenerate: bool,
}

/// Weighted least squares of `y` on an intercept plus the chosen mask columns.
/// Returns the coefficients and the weighted squared error.
fn wls(masks: &[Vec<bool>], y: &[f64], w: &[f64], cols: &[usize]) -> (DVector<f64>, f64) {
    let n = y.len();
    let p = cols.len() + 1;
    let x = DMatrix::from_fn(n, p, |i, c| if c == 0 || masks[i][cols[c - 1]] { 1.0 } else { 0.0 });
    let mut xtw = x.transpose();
    for (i, wi) in w.iter().enumerate() {
        xtw.column_mut(i).scale_mut(*wi);
    }
    let lhs = &xtw * &x;
    let rhs = &xtw * DVector::from_column_slice(y);
    let beta = lhs
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(p));
    let resid = DVector::from_column_slice(y) - &x * &beta;
    let sse = resid.iter().zip(w).map(|(r, wi)| wi * r * r).sum();
    (beta, sse)
}

/// Local linear surrogate of a detector around one anomaly.
///
/// Each perturbation replaces a random half of the features (on all anomalous
/// rows) by their reference means, and the detector scores the result. The
/// `k` features are picked by greedy forward selection on a kernel-weighted
/// linear fit from keep-masks to scores.
pub fn explain_surrogate(
    pair: &ReferencePair,
    score_fn: &ScoreFn<'_>,
    config: &SurrogateConfig,
    seed: u64,
) -> Result<SurrogateExplanation> {
    config.validate()?;
    let m = pair.n_features();
    let means = pair.reference_means();
    let mut rng = crate::seed::rng(seed);

    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(config.perturbations);
    masks.push(vec![true; m]);
    while masks.len() < config.perturbations {
        masks.push((0..m).map(|_| rng.random_bool(0.5)).collect());
    }

    let mut y = Vec::with_capacity(masks.len());
    let mut w = Vec::with_capacity(masks.len());
    let mut block = pair.anomalous.clone();
    for mask in &masks {
        for (row, orig) in block.iter_mut().zip(&pair.anomalous) {
            for j in 0..m {
                row[j] = if mask[j] { orig[j] } else { means[j] };
            }
        }
        y.push(score_fn(&block)?);
        let replaced = mask.iter().filter(|&&keep| !keep).count() as f64 / m as f64;
        w.push((-replaced / (config.kernel_width * config.kernel_width)).exp());
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("score function returned a non-finite value".into()));
    }

    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = y_max - y_min <= 1e-12 * y_max.abs().max(1.0);

    let k = config.k.min(m);
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    while selected.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..m).filter(|j| !selected.contains(j)) {
            let mut cols = selected.clone();
            cols.push(j);
            let (_, sse) = wls(&masks, &y, &w, &cols);
            if best.is_none_or(|(_, b)| sse < b) {
                best = Some((j, sse));
            }
        }
        selected.push(best.expect("candidates remain").0);
    }
    let (beta, _) = wls(&masks, &y, &w, &selected);
    let weights = selected
        .iter()
        .enumerate()
        .map(|(c, &j)| FeatureWeight {
            feature: pair.features[j].clone(),
            weight: if degenerate { 0.0 } else { beta[c + 1] },
        })
        .collect();
    if degenerate {
        log::warn!("surrogate: score is constant under perturbation");
    }
    Ok(SurrogateExplanation {
        explanation: Explanation::from_weights(weights)?,
        degenerate,
    })
}
