//! Baseline outlier scorers and unsupervised threshold selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ScoreSeries, Trace};
use crate::stats;
use crate::transform::{fit_pca, PcaModel, PcaTarget};

/// MAD-to-standard-deviation factor for normally distributed data.
pub const MAD_SCALE: f64 = 1.4826;

/// One-step exponentially weighted forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwmaForecaster {
    pub lambda: f64,
    pub epsilon: f64,
    pub initial_state: Vec<f64>,
}

pub fn fit_forecaster(traces: &[&Trace], lambda: f64) -> Result<EwmaForecaster> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Invalid(format!("lambda {lambda} outside (0, 1]")));
    }
    let firsts: Vec<&[f64]> = traces.iter().filter(|t| !t.is_empty()).map(|t| t.row(0)).collect();
    if firsts.is_empty() {
        return Err(Error::Invalid("no training records for the forecaster".into()));
    }
    let m = firsts[0].len();
    if firsts.iter().any(|r| r.len() != m) {
        return Err(Error::Invalid("training traces differ in feature count".into()));
    }
    let mut state = vec![0.0; m];
    for r in &firsts {
        for (s, x) in state.iter_mut().zip(r.iter()) {
            *s += x;
        }
    }
    state.iter_mut().for_each(|s| *s /= firsts.len() as f64);
    Ok(EwmaForecaster {
        lambda,
        epsilon: 1e-8,
        initial_state: state,
    })
}

/// Relative forecasting error per record; the first record scores 0.
pub fn score_forecast(model: &EwmaForecaster, trace: &Trace) -> Result<ScoreSeries> {
    if trace.n_features() != model.initial_state.len() {
        return Err(Error::Invalid(format!(
            "trace {} has {} features, forecaster expects {}",
            trace.trace_id,
            trace.n_features(),
            model.initial_state.len()
        )));
    }
    let lambda = model.lambda;
    let mut state = model.initial_state.clone();
    let mut scores = Vec::with_capacity(trace.len());
    for (t, x) in trace.rows().enumerate() {
        if t == 0 {
            scores.push(0.0);
        } else {
            let err: f64 = state.iter().zip(x).map(|(p, v)| (p - v) * (p - v)).sum();
            let norm: f64 = x.iter().map(|v| v * v).sum();
            scores.push(err.sqrt() / (norm.sqrt() + model.epsilon));
        }
        for (s, v) in state.iter_mut().zip(x) {
            *s = lambda * v + (1.0 - lambda) * *s;
        }
    }
    Ok(ScoreSeries {
        trace_id: trace.trace_id.clone(),
        scores,
    })
}

/// PCA over flattened sliding windows of `window` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReconstructor {
    pub window: usize,
    pub n_features: usize,
    pub model: PcaModel,
}

fn flat_windows(trace: &Trace, s: usize) -> impl Iterator<Item = &[f64]> + '_ {
    let m = trace.n_features();
    let n = trace.len();
    (0..=n.saturating_sub(s))
        .take(if n >= s { n - s + 1 } else { 0 })
        .map(move |i| &trace.values()[i * m..(i + s) * m])
}

pub fn fit_reconstructor(traces: &[&Trace], window: usize, target: PcaTarget) -> Result<PcaReconstructor> {
    if window < 1 {
        return Err(Error::Invalid("window size must be at least 1".into()));
    }
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut m = None;
    for t in traces {
        if t.len() < window {
            log::warn!(
                "skipping training trace {} ({} records < window {window})",
                t.trace_id,
                t.len()
            );
            continue;
        }
        if *m.get_or_insert(t.n_features()) != t.n_features() {
            return Err(Error::Invalid("training traces differ in feature count".into()));
        }
        rows.extend(flat_windows(t, window));
    }
    let m = m.ok_or_else(|| Error::Invalid(format!("no training trace reaches window size {window}")))?;
    let model = fit_pca(&rows, target)?;
    Ok(PcaReconstructor {
        window,
        n_features: m,
        model,
    })
}

/// Window reconstruction MSE averaged over the windows covering each record.
pub fn score_reconstruction(model: &PcaReconstructor, trace: &Trace) -> Result<ScoreSeries> {
    let s = model.window;
    if trace.n_features() != model.n_features {
        return Err(Error::Invalid(format!(
            "trace {} has {} features, reconstructor expects {}",
            trace.trace_id,
            trace.n_features(),
            model.n_features
        )));
    }
    if trace.len() < s {
        return Err(Error::Invalid(format!(
            "trace {} has {} records, shorter than window {s}",
            trace.trace_id,
            trace.len()
        )));
    }
    let mut scratch = vec![0.0; model.model.k()];
    let window_scores: Vec<f64> = flat_windows(trace, s)
        .map(|w| model.model.reconstruction_mse(w, &mut scratch))
        .collect();
    let mut prefix = Vec::with_capacity(window_scores.len() + 1);
    prefix.push(0.0);
    for w in &window_scores {
        prefix.push(prefix.last().unwrap() + w);
    }
    let n = trace.len();
    let last = window_scores.len() - 1;
    let scores = (0..n)
        .map(|r| {
            let lo = r.saturating_sub(s - 1);
            let hi = r.min(last);
            let v = (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64;
            v.max(0.0)
        })
        .collect();
    Ok(ScoreSeries {
        trace_id: trace.trace_id.clone(),
        scores,
    })
}

/// Detector choice with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorSpec {
    Forecast { lambda: f64 },
    Reconstruct { window: usize, target: PcaTarget },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedDetector {
    Forecast(EwmaForecaster),
    Reconstruct(PcaReconstructor),
}

impl DetectorSpec {
    pub fn fit(&self, traces: &[&Trace]) -> Result<FittedDetector> {
        match self {
            DetectorSpec::Forecast { lambda } => fit_forecaster(traces, *lambda).map(FittedDetector::Forecast),
            DetectorSpec::Reconstruct { window, target } => {
                fit_reconstructor(traces, *window, *target).map(FittedDetector::Reconstruct)
            }
        }
    }
}

impl FittedDetector {
    pub fn score(&self, trace: &Trace) -> Result<ScoreSeries> {
        match self {
            FittedDetector::Forecast(m) => score_forecast(m, trace),
            FittedDetector::Reconstruct(m) => score_reconstruction(m, trace),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ThresholdMethod {
    Std,
    Mad,
    Iqr,
}

impl ThresholdMethod {
    pub const ALL: [ThresholdMethod; 3] = [ThresholdMethod::Std, ThresholdMethod::Mad, ThresholdMethod::Iqr];

    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMethod::Std => "STD",
            ThresholdMethod::Mad => "MAD",
            ThresholdMethod::Iqr => "IQR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub method: ThresholdMethod,
    pub c: f64,
    pub iterations: u8,
}

pub const DEFAULT_C_GRID: [f64; 4] = [1.5, 2.0, 2.5, 3.0];

impl ThresholdRule {
    pub fn new(method: ThresholdMethod, c: f64, iterations: u8) -> Self {
        ThresholdRule { method, c, iterations }
    }

    /// Every method × c × {1, 2} passes.
    pub fn grid(cs: &[f64]) -> Vec<ThresholdRule> {
        let mut out = Vec::with_capacity(cs.len() * 6);
        for method in ThresholdMethod::ALL {
            for &c in cs {
                for iterations in [1, 2] {
                    out.push(ThresholdRule::new(method, c, iterations));
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!("{}-c{}-x{}", self.method.as_str(), self.c, self.iterations)
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Invalid(format!("threshold c = {} must be positive", self.c)));
        }
        if !matches!(self.iterations, 1 | 2) {
            return Err(Error::Invalid(format!(
                "iterations = {} not in {{1, 2}}",
                self.iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// All scores were identical.
    pub degenerate: bool,
}

fn one_pass(sorted: &[f64], method: ThresholdMethod, c: f64) -> f64 {
    match method {
        ThresholdMethod::Std => stats::mean(sorted) + c * stats::std_dev(sorted),
        ThresholdMethod::Mad => {
            let med = stats::quantile_sorted(sorted, 0.5);
            let mut dev: Vec<f64> = sorted.iter().map(|x| (x - med).abs()).collect();
            dev.sort_by(f64::total_cmp);
            med + c * MAD_SCALE * stats::quantile_sorted(&dev, 0.5)
        }
        ThresholdMethod::Iqr => {
            let q1 = stats::quantile_sorted(sorted, 0.25);
            let q3 = stats::quantile_sorted(sorted, 0.75);
            q3 + c * (q3 - q1)
        }
    }
}

/// `S1 + c·S2` on the scores; a second pass drops scores above the first threshold.
pub fn select_threshold(scores: &[f64], rule: &ThresholdRule) -> Result<Threshold> {
    rule.validate()?;
    if scores.len() < 4 {
        return Err(Error::Invalid(format!(
            "threshold selection needs at least 4 scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid("non-finite outlier score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Ok(Threshold {
            value: sorted[0],
            degenerate: true,
        });
    }
    let mut value = one_pass(&sorted, rule.method, rule.c);
    if rule.iterations == 2 {
        let kept = sorted.partition_point(|&s| s <= value);
        value = one_pass(&sorted[..kept], rule.method, rule.c);
    }
    Ok(Threshold {
        value,
        degenerate: false,
    })
}

/// `score > threshold` per record.
pub fn detect(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace1(values: &[f64]) -> Trace {
        Trace::new(
            "x",
            0,
            (0..values.len() as i64).collect(),
            vec!["a".into()],
            values.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn forecaster_examples() {
        let c = Trace::new(
            "c",
            0,
            vec![0, 1, 2],
            vec!["a".into(), "b".into()],
            vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0],
        )
        .unwrap();
        let m = fit_forecaster(&[&c], 0.3).unwrap();
        assert_eq!(m.initial_state, [1.0, 2.0]);
        assert!(score_forecast(&m, &c).unwrap().scores.iter().all(|&s| s == 0.0));

        let t = trace1(&[1.0, 1.0, 1.0, 2.0]);
        let m = fit_forecaster(&[&t], 1.0).unwrap();
        let s = score_forecast(&m, &t).unwrap().scores;
        assert_eq!(&s[..3], [0.0, 0.0, 0.0]);
        assert!((s[3] - 1.0 / (2.0 + 1e-8)).abs() < 1e-15);

        let u = trace1(&[3.0, 0.0]);
        let m = fit_forecaster(&[&t, &u], 0.5).unwrap();
        assert_eq!(m.initial_state, [2.0]);
        assert!(fit_forecaster(&[], 0.5).is_err());
        assert!(fit_forecaster(&[&t], 0.0).is_err());
    }

    #[test]
    fn reconstructor_shapes() {
        let mut r = crate::seed::rng(3);
        let vals: Vec<f64> = (0..200).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect();
        let t = Trace::new("x", 0, (0..100).collect(), vec!["a".into(), "b".into()], vals).unwrap();
        let m = fit_reconstructor(&[&t], 4, PcaTarget::Components(8)).unwrap();
        assert_eq!(m.model.dim(), 8);
        let s = score_reconstruction(&m, &t).unwrap().scores;
        assert_eq!(s.len(), 100);
        assert!(s.iter().all(|&v| v <= 1e-8));

        let m = fit_reconstructor(&[&t], 4, PcaTarget::Components(2)).unwrap();
        let short = t.slice(0..4);
        let s = score_reconstruction(&m, &short).unwrap().scores;
        assert!(s.iter().all(|&v| v == s[0]));
        assert!(score_reconstruction(&m, &t.slice(0..3)).is_err());

        let k = trace1(&[2.0; 10]);
        assert!(matches!(
            fit_reconstructor(&[&k], 2, PcaTarget::Components(1)),
            Err(Error::Degenerate(_))
        ));
        assert!(fit_reconstructor(&[&t.slice(0..3)], 4, PcaTarget::Components(1)).is_err());
    }

    #[test]
    fn window_one_is_record_pca() {
        let mut r = crate::seed::rng(4);
        let vals: Vec<f64> = (0..150).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect();
        let t = Trace::new(
            "x",
            0,
            (0..50).collect(),
            vec!["a".into(), "b".into(), "c".into()],
            vals,
        )
        .unwrap();
        let m = fit_reconstructor(&[&t], 1, PcaTarget::Components(1)).unwrap();
        let pca = crate::transform::fit_pca_traces(&[&t], PcaTarget::Components(1)).unwrap();
        let s = score_reconstruction(&m, &t).unwrap().scores;
        let mut scratch = [0.0];
        for (i, row) in t.rows().enumerate() {
            assert!((s[i] - pca.reconstruction_mse(row, &mut scratch)).abs() < 1e-12);
        }
    }

    #[test]
    fn mad_hand_value() {
        let th = select_threshold(
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            &ThresholdRule::new(ThresholdMethod::Mad, 2.0, 1),
        )
        .unwrap();
        assert!((th.value - 5.9652).abs() < 1e-9);
        assert!(!th.degenerate);
    }

    #[test]
    fn threshold_edge_cases() {
        let z = select_threshold(&[0.0; 6], &ThresholdRule::new(ThresholdMethod::Iqr, 3.0, 2)).unwrap();
        assert_eq!(
            z,
            Threshold {
                value: 0.0,
                degenerate: true
            }
        );
        assert!(select_threshold(&[1.0, 2.0, 3.0], &ThresholdRule::new(ThresholdMethod::Std, 2.0, 1)).is_err());
        assert!(select_threshold(&[1.0; 5], &ThresholdRule::new(ThresholdMethod::Std, 0.0, 1)).is_err());
        assert!(select_threshold(&[1.0; 5], &ThresholdRule::new(ThresholdMethod::Std, 1.0, 3)).is_err());
        assert_eq!(ThresholdRule::grid(&DEFAULT_C_GRID).len(), 24);
    }

    #[test]
    fn std_and_iqr_by_hand() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let s = select_threshold(&xs, &ThresholdRule::new(ThresholdMethod::Std, 1.0, 1)).unwrap();
        assert!((s.value - (3.0 + 2.5f64.sqrt())).abs() < 1e-12);
        let s = select_threshold(&xs, &ThresholdRule::new(ThresholdMethod::Iqr, 1.5, 1)).unwrap();
        assert!((s.value - 7.0).abs() < 1e-12);
        // Second pass keeps {1..5} since 7 exceeds all of them.
        let s2 = select_threshold(&xs, &ThresholdRule::new(ThresholdMethod::Iqr, 1.5, 2)).unwrap();
        assert_eq!(s2.value, s.value);
    }

    #[test]
    fn detect_examples() {
        assert_eq!(detect(&[0.1, 0.9], 0.5), [false, true]);
        assert_eq!(detect(&[0.1, 0.9], 0.9), [false, false]);
        assert_eq!(detect(&[0.1, 0.9], -1.0), [true, true]);
    }

    proptest! {
        #[test]
        fn detect_monotone(scores in proptest::collection::vec(0.0f64..10.0, 0..50), a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let dl = detect(&scores, lo);
            let dh = detect(&scores, hi);
            prop_assert!(dl.iter().zip(&dh).all(|(l, h)| *l || !*h));
        }

        #[test]
        fn forecast_scores_nonnegative_finite(values in proptest::collection::vec(-1e3f64..1e3, 1..60), lambda in 0.01f64..=1.0) {
            let t = trace1(&values);
            let m = fit_forecaster(&[&t], lambda).unwrap();
            let s = score_forecast(&m, &t).unwrap().scores;
            prop_assert!(s.iter().all(|v| v.is_finite() && *v >= 0.0));
        }

        #[test]
        fn last_value_predictor(values in proptest::collection::vec(-1e3f64..1e3, 2..40), other in -1e3f64..1e3) {
            // With lambda = 1 the score only depends on the previous record.
            let t = trace1(&values);
            let init = trace1(&[other]);
            let m = fit_forecaster(&[&init], 1.0).unwrap();
            let s = score_forecast(&m, &t).unwrap().scores;
            for i in 1..values.len() {
                let want = (values[i] - values[i - 1]).abs() / (values[i].abs() + 1e-8);
                prop_assert!((s[i] - want).abs() <= 1e-12 * want.max(1.0));
            }
        }

        #[test]
        fn std_two_pass_not_above_one_pass(
            scores in proptest::collection::vec(0.0f64..100.0, 4..80),
            ci in 0usize..4,
        ) {
            // Quantile rules have no such bound: dropping top scores can raise Q3 - Q1.
            let c = DEFAULT_C_GRID[ci];
            let one = select_threshold(&scores, &ThresholdRule::new(ThresholdMethod::Std, c, 1)).unwrap();
            let two = select_threshold(&scores, &ThresholdRule::new(ThresholdMethod::Std, c, 2)).unwrap();
            prop_assert!(two.value <= one.value + 1e-9, "{} > {}", two.value, one.value);
        }

        #[test]
        fn second_pass_refits_on_kept_scores(
            scores in proptest::collection::vec(0.0f64..100.0, 8..80),
            mi in 0usize..3,
            ci in 0usize..4,
        ) {
            let method = ThresholdMethod::ALL[mi];
            let c = DEFAULT_C_GRID[ci];
            let one = select_threshold(&scores, &ThresholdRule::new(method, c, 1)).unwrap();
            let kept: Vec<f64> = scores.iter().copied().filter(|&s| s <= one.value).collect();
            prop_assume!(kept.len() >= 4 && !one.degenerate);
            let two = select_threshold(&scores, &ThresholdRule::new(method, c, 2)).unwrap();
            let refit = select_threshold(&kept, &ThresholdRule::new(method, c, 1)).unwrap();
            if !refit.degenerate {
                prop_assert!((two.value - refit.value).abs() <= 1e-9 * refit.value.abs().max(1.0));
            }
        }
    }
}
