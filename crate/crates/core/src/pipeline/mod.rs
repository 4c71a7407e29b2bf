//! Configuration-driven run of the full loop: partition, transform, fit,
//! score, threshold, detect, evaluate detection, explain and evaluate
//! explanations.
//!
//! Every stage writes its artifacts under the output directory. Fitting,
//! scoring and the explanation stages are skipped when the content hash of
//! their inputs matches the one recorded by a previous run.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ad_eval::{
    auprc, check_monotone, evaluate_ad, pr_curve, AdLevel, AdReport, Granularity, LevelReport, PrCurve, RangeSet,
    ScoredTrace,
};
use crate::detectors::{detect, select_threshold, FittedDetector, ThresholdMethod};
use crate::ed_eval::{evaluate_ed, instances_from_trace, AnomalyInstance, EdConfig, EdReport};
use crate::error::{Error, Result};
use crate::explainers::{explain, ExplainerKind, ReferencePair, ScoreFn};
use crate::model::{
    anomaly_ranges_with, ranges_from_binary, read_ground_truth, read_score_file, read_trace, write_atomic,
    write_score_file, AnomalyRange, AnomalyType, Explanation, GroundTruthTable, PredictedRange, ScoreSeries, Trace,
};
use crate::seed::derive_seed;
use crate::stats;
use crate::transform::{
    apply_pca, fit_pca_traces, partition, resample, split_train, PartitionPlan, PcaModel, ScalerModel,
};

pub use config::{
    AnomalySource, DatasetConfig, DetectorConfig, EdSettings, FeatureStrategy, RunConfig, Scaling, ThresholdConfig,
};
pub use report::{write_report_tables, ReportSummary};

/// Stage names in execution order.
pub const STAGES: [&str; 10] = [
    "load",
    "partition",
    "transform",
    "fit",
    "score",
    "threshold",
    "detect",
    "evaluate_ad",
    "explain",
    "evaluate_ed",
];

pub const PLAN_FILE: &str = "plan.json";
pub const TRANSFORM_FILE: &str = "transform.json";
pub const MODEL_FILE: &str = "model.json";
pub const SCORES_DIR: &str = "scores";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const AD_REPORT_FILE: &str = "ad_report.json";
pub const PR_CURVES_FILE: &str = "pr_curves.json";
pub const EXPLANATIONS_FILE: &str = "explanations.json";
pub const ED_REPORT_FILE: &str = "ed_report.json";
pub const PERF_REPORT_FILE: &str = "perf_report.json";
const CACHE_DIR: &str = ".cache";

/// A dataset read from disk, with a digest of every file it came from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub traces: Vec<Trace>,
    pub ground_truth: GroundTruthTable,
    pub digest: String,
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") && path.is_file() {
            out.push(path);
        }
    }
    Ok(out)
}

/// Reads every trace under `dir` (flat or in `app_<id>/` folders) and the
/// ground-truth table.
pub fn load_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let gt_path = cfg.ground_truth_path();
    let gt_canon = gt_path.canonicalize().map_err(|e| Error::io(&gt_path, e))?;
    let mut files: Vec<PathBuf> = csv_files(&cfg.dir)?
        .into_iter()
        .filter(|p| p.canonicalize().map_or(true, |c| c != gt_canon))
        .collect();
    for entry in std::fs::read_dir(&cfg.dir).map_err(|e| Error::io(&cfg.dir, e))? {
        let path = entry.map_err(|e| Error::io(&cfg.dir, e))?.path();
        let is_app = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("app_"));
        if is_app && path.is_dir() {
            files.extend(csv_files(&path)?);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Invalid(format!("no trace files in {}", cfg.dir.display())));
    }
    let loaded: Vec<(Trace, Vec<u8>)> = files
        .par_iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            Ok((read_trace(p, cfg.fill_value)?, bytes))
        })
        .collect::<Result<_>>()?;
    let ground_truth = read_ground_truth(&gt_path)?;

    let mut h = Sha256::new();
    h.update(cfg.fill_value.to_le_bytes());
    let mut seen = BTreeSet::new();
    let mut traces = Vec::with_capacity(loaded.len());
    for (path, (trace, bytes)) in files.iter().zip(loaded) {
        if !seen.insert(trace.trace_id.clone()) {
            return Err(Error::Integrity(format!(
                "trace id `{}` appears twice ({})",
                trace.trace_id,
                path.display()
            )));
        }
        h.update((trace.trace_id.len() as u64).to_le_bytes());
        h.update(trace.trace_id.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
        traces.push(trace);
    }
    let gt_bytes = std::fs::read(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    h.update(&gt_bytes);
    for e in &ground_truth.entries {
        if !seen.contains(&e.trace_id) {
            return Err(Error::Integrity(format!(
                "ground truth names trace `{}`, which is not in the dataset",
                e.trace_id
            )));
        }
    }
    traces.sort_by(|a, b| (a.app_id, &a.trace_id).cmp(&(b.app_id, &b.trace_id)));
    Ok(Dataset {
        traces,
        ground_truth,
        digest: hex(&h.finalize()),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of length-prefixed parts.
fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Output directory with JSON helpers and stage keys.
struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<Vec<u8>> {
        let bytes = to_json(value)?;
        write_atomic(&self.path(name), &bytes)?;
        Ok(bytes)
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str) -> Option<T> {
        let bytes = std::fs::read(self.path(name)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn cache_path(&self, stage: &str, ext: &str) -> PathBuf {
        self.root.join(CACHE_DIR).join(format!("{stage}.{ext}"))
    }

    fn key_matches(&self, stage: &str, key: &str) -> bool {
        std::fs::read_to_string(self.cache_path(stage, "key")).is_ok_and(|k| k == key)
    }

    /// Records a finished stage with its key and stage-specific timing data.
    fn commit<T: Serialize>(&self, stage: &str, key: &str, perf: &T) -> Result<()> {
        write_atomic(&self.cache_path(stage, "perf.json"), &to_json(perf)?)?;
        write_atomic(&self.cache_path(stage, "key"), key.as_bytes())
    }

    fn cached_perf<T: DeserializeOwned>(&self, stage: &str, key: &str) -> Option<T> {
        if !self.key_matches(stage, key) {
            return None;
        }
        let bytes = std::fs::read(self.cache_path(stage, "perf.json")).ok()?;
        serde_json::from_slice(&bytes).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanArtifact {
    pub plan: PartitionPlan,
    /// Training units; peeked prefixes carry a `.prefix` suffix.
    pub d0: Vec<String>,
    pub d1: Vec<String>,
    pub d2: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformArtifact {
    pub features: Vec<String>,
    /// Dimensionality after transformation.
    pub m: usize,
    /// Cardinality factor, one record per `resample_seconds`.
    pub alpha: f64,
    pub resample_seconds: i64,
    pub pca: Option<PcaModel>,
    pub scaler: Option<ScalerModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleThreshold {
    pub rule: String,
    pub method: ThresholdMethod,
    pub c: f64,
    pub iterations: u8,
    pub threshold: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdArtifact {
    pub rules: Vec<RuleThreshold>,
    /// Median of the rule thresholds.
    pub median: f64,
    pub n_scores: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleDetections {
    pub rule: String,
    pub threshold: f64,
    pub ranges: BTreeMap<String, Vec<PredictedRange>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionArtifact {
    pub rules: Vec<RuleDetections>,
    pub median_threshold: RuleDetections,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuprcRow {
    pub level: AdLevel,
    pub global: Option<f64>,
    pub app: Option<f64>,
    pub trace: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub rule: String,
    pub threshold: f64,
    pub report: AdReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdRunReport {
    pub n_test_traces: usize,
    pub n_real_ranges: usize,
    pub auprc: Vec<AuprcRow>,
    pub rules: Vec<RuleReport>,
    /// Detection at the median of the rule thresholds.
    pub median_threshold: RuleReport,
    /// Per-metric medians over the rule rows.
    pub median_of_rules: Vec<LevelReport>,
}

impl AdRunReport {
    pub fn auprc_at(&self, level: AdLevel) -> Option<&AuprcRow> {
        self.auprc.iter().find(|r| r.level == level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub level: AdLevel,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedAnomaly {
    pub trace_id: String,
    pub anomaly_type: AnomalyType,
    pub n_anomalous: usize,
    pub n_reference: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub cached: bool,
}

/// Wall-clock measurements of a run. Kept apart from the reports, which are
/// byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    /// Dimensionality M seen by the detector.
    pub m_features: usize,
    /// Cardinality factor α.
    pub alpha: f64,
    /// Fit time (P1).
    pub p1_fit_seconds: f64,
    /// Scoring time over the test records (P2).
    pub p2_scoring_seconds: f64,
    pub p2_records: usize,
    /// Mean time to build one explanation (P3).
    pub p3_explanation_seconds: Option<f64>,
    pub p3_by_type: BTreeMap<AnomalyType, f64>,
    /// Mean build time over every explanation built during ED evaluation.
    pub ed_mean_build_seconds: Option<f64>,
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitPerf {
    seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScorePerf {
    test_seconds: f64,
    test_records: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExplainPerf {
    mean_seconds: Option<f64>,
    by_type: BTreeMap<AnomalyType, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdPerf {
    mean_build_seconds: Option<f64>,
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub ad: AdRunReport,
    pub ed: Option<EdReport>,
    pub perf: PerfReport,
}

/// CLI flags that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
    }
}

/// Loads a config file, applies overrides and runs it.
pub fn cmd_run(config_path: &Path, overrides: &RunOverrides) -> Result<RunSummary> {
    let mut cfg = RunConfig::load(config_path)?;
    overrides.apply(&mut cfg);
    run(&cfg)
}

/// Runs the pipeline on a worker pool sized by the config.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| Runner::new(cfg).and_then(|r| r.execute()))
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    dir: RunDir,
    started: Instant,
    timings: Vec<StageTiming>,
}

/// A training or test slice after transformation.
struct Unit {
    name: String,
    trace: Trace,
}

fn prefix_name(trace_id: &str) -> String {
    format!("{trace_id}.prefix")
}

/// A stage value and whether it came from the cache.
type Cached<T> = Result<(T, bool)>;
/// Fitted model (none for external scores), its cache key and fit seconds.
type FitOutcome = (Option<FittedDetector>, String, f64);
type ScoreMap = BTreeMap<String, Vec<f64>>;

impl<'a> Runner<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        let root = cfg.output_dir.clone();
        std::fs::create_dir_all(root.join(CACHE_DIR)).map_err(|e| Error::io(&root, e))?;
        std::fs::create_dir_all(root.join(SCORES_DIR)).map_err(|e| Error::io(&root, e))?;
        Ok(Runner {
            cfg,
            dir: RunDir { root },
            started: Instant::now(),
            timings: Vec::new(),
        })
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<(T, bool)>) -> Result<T> {
        log::info!("stage {name}");
        let t = Instant::now();
        let (out, cached) = f(self).map_err(|e| e.in_stage(name))?;
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
            cached,
        });
        Ok(out)
    }

    fn execute(mut self) -> Result<RunSummary> {
        let cfg = self.cfg;
        let data = self.stage("load", |_| Ok((load_dataset(&cfg.dataset)?, false)))?;

        let (plan, plan_bytes) = self.stage("partition", |r| {
            let plan = partition(&data.traces, &data.ground_truth, cfg.setting, cfg.app_id)?;
            if plan.test_traces.is_empty() {
                return Err(Error::Invalid("the test set is empty; nothing to evaluate".into()));
            }
            let (d0, d1, d2) = split_train(
                &plan,
                (cfg.split[0], cfg.split[1], cfg.split[2]),
                derive_seed(cfg.seed, "split", ""),
            )?;
            let name = |id: String| {
                if plan.peeked_segments.contains_key(&id) {
                    prefix_name(&id)
                } else {
                    id
                }
            };
            let artifact = PlanArtifact {
                d0: d0.into_iter().map(name).collect(),
                d1: d1.into_iter().map(name).collect(),
                d2: d2.into_iter().map(name).collect(),
                plan,
            };
            let bytes = r.dir.write_json(PLAN_FILE, &artifact)?;
            Ok(((artifact, bytes), false))
        })?;

        let (units, transform, transform_bytes) =
            self.stage("transform", |r| r.transform(&data, &plan).map(|x| (x, false)))?;
        let upstream = digest(&[data.digest.as_bytes(), &plan_bytes, &transform_bytes]);

        let by_name: BTreeMap<&str, &Unit> = units.iter().map(|u| (u.name.as_str(), u)).collect();
        let pick = |names: &[String]| -> Vec<&Unit> { names.iter().map(|n| by_name[n.as_str()]).collect() };
        let d0 = pick(&plan.d0);
        let d2 = pick(&plan.d2);
        let test = pick(&plan.plan.test_traces);

        let spec = cfg.detector.spec()?;
        let (fitted, model_key, p1) = self.stage("fit", |r| r.fit(spec.as_ref(), &d0, &upstream))?;

        let (scores, p2) = self.stage("score", |r| r.score(fitted.as_ref(), &d2, &test, &model_key))?;

        let thresholds = self.stage("threshold", |r| {
            let pooled: Vec<f64> = plan.d2.iter().flat_map(|n| scores[n].iter().copied()).collect();
            let mut rules = Vec::new();
            for rule in cfg.thresholds.rules() {
                let t = select_threshold(&pooled, &rule)?;
                rules.push(RuleThreshold {
                    rule: rule.label(),
                    method: rule.method,
                    c: rule.c,
                    iterations: rule.iterations,
                    threshold: t.value,
                    degenerate: t.degenerate,
                });
            }
            let values: Vec<f64> = rules.iter().map(|r| r.threshold).collect();
            let artifact = ThresholdArtifact {
                median: stats::median(&values),
                rules,
                n_scores: pooled.len(),
            };
            r.dir.write_json(THRESHOLDS_FILE, &artifact)?;
            Ok((artifact, false))
        })?;

        let detections = self.stage("detect", |r| {
            let at = |rule: &str, threshold: f64| RuleDetections {
                rule: rule.to_string(),
                threshold,
                ranges: test
                    .iter()
                    .map(|u| (u.name.clone(), ranges_from_binary(&detect(&scores[&u.name], threshold))))
                    .collect(),
            };
            let artifact = DetectionArtifact {
                rules: thresholds.rules.iter().map(|t| at(&t.rule, t.threshold)).collect(),
                median_threshold: at("median-threshold", thresholds.median),
            };
            let bytes = r.dir.write_json(DETECTIONS_FILE, &artifact)?;
            Ok(((artifact, bytes), false))
        })?;
        let (detections, detections_bytes) = detections;

        let real: BTreeMap<String, Vec<AnomalyRange>> = test
            .iter()
            .map(|u| {
                Ok((
                    u.name.clone(),
                    anomaly_ranges_with(&data.ground_truth, &u.trace, cfg.range_span)?,
                ))
            })
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("evaluate_ad"))?;

        let ad = self.stage("evaluate_ad", |r| {
            r.evaluate_ad(&test, &scores, &real, &detections).map(|a| (a, false))
        })?;

        let mut explain_perf = None;
        let mut ed_perf = None;
        let mut ed = None;
        if let Some(kind) = cfg.explainer {
            let instances = self.instances(&test, &real, &detections);
            let mut key_parts: Vec<Vec<u8>> = vec![
                upstream.as_bytes().to_vec(),
                serde_json::to_vec(&(kind, &cfg.explainer_config, &cfg.ed, cfg.seed, cfg.range_span))?,
            ];
            if kind == ExplainerKind::Surrogate {
                key_parts.push(model_key.as_bytes().to_vec());
            }
            if cfg.ed.anomalies == AnomalySource::Detected {
                key_parts.push(detections_bytes.clone());
            }
            let key = digest(&key_parts.iter().map(Vec::as_slice).collect::<Vec<_>>());
            let features = transform.features.clone();
            let score_fn = fitted.as_ref().map(|det| {
                move |rows: &[Vec<f64>]| -> Result<f64> {
                    let n = rows.len() as i64;
                    let t = Trace::from_rows("perturbed", 0, (0..n).collect(), features.clone(), rows)?;
                    Ok(stats::mean(&det.score(&t)?.scores))
                }
            });
            let score_fn: Option<&ScoreFn<'_>> = score_fn.as_ref().map(|f| f as &ScoreFn<'_>);
            let explain_fn =
                |pair: &ReferencePair, seed: u64| explain(kind, pair, &cfg.explainer_config, score_fn, seed);

            explain_perf = Some(self.stage("explain", |r| {
                if let Some(p) = r.dir.cached_perf::<ExplainPerf>("explain", &key) {
                    if r.dir.path(EXPLANATIONS_FILE).is_file() {
                        return Ok((p, true));
                    }
                }
                let list: Vec<ExplainedAnomaly> = instances
                    .par_iter()
                    .enumerate()
                    .map(|(i, inst)| {
                        let seed = derive_seed(cfg.seed, "explain", &format!("{}/{i}", inst.trace_id));
                        let result = inst.pair().and_then(|p| explain_fn(&p, seed));
                        ExplainedAnomaly {
                            trace_id: inst.trace_id.clone(),
                            anomaly_type: inst.anomaly_type,
                            n_anomalous: inst.anomalous.len(),
                            n_reference: inst.reference.len(),
                            error: result.as_ref().err().map(|e| e.to_string()),
                            explanation: result.ok(),
                        }
                    })
                    .collect();
                let mut by_type: BTreeMap<AnomalyType, Vec<f64>> = BTreeMap::new();
                for e in &list {
                    if let Some(x) = &e.explanation {
                        by_type.entry(e.anomaly_type).or_default().push(x.build_time_seconds);
                    }
                }
                let all: Vec<f64> = by_type.values().flatten().copied().collect();
                let perf = ExplainPerf {
                    mean_seconds: (!all.is_empty()).then(|| stats::mean(&all)),
                    by_type: by_type.into_iter().map(|(t, v)| (t, stats::mean(&v))).collect(),
                };
                // Build times go to the perf report so this file stays reproducible.
                let list: Vec<ExplainedAnomaly> = list
                    .into_iter()
                    .map(|mut e| {
                        if let Some(x) = &mut e.explanation {
                            x.build_time_seconds = 0.0;
                        }
                        e
                    })
                    .collect();
                r.dir.write_json(EXPLANATIONS_FILE, &list)?;
                r.dir.commit("explain", &key, &perf)?;
                Ok((perf, false))
            })?);

            let (report, perf) = self.stage("evaluate_ed", |r| {
                if let Some(p) = r.dir.cached_perf::<EdPerf>("evaluate_ed", &key) {
                    if let Some(rep) = r.dir.read_json::<EdReport>(ED_REPORT_FILE) {
                        return Ok(((rep, p), true));
                    }
                }
                let ed_cfg = EdConfig {
                    n_samples: cfg.ed.n_samples,
                };
                let report = evaluate_ed(
                    kind.as_str(),
                    &instances,
                    &explain_fn,
                    &ed_cfg,
                    derive_seed(cfg.seed, "evaluate_ed", ""),
                )?;
                let perf = EdPerf {
                    mean_build_seconds: report.mean_build_time(),
                };
                let stable = report.without_timings();
                r.dir.write_json(ED_REPORT_FILE, &stable)?;
                r.dir.commit("evaluate_ed", &key, &perf)?;
                Ok(((stable, perf), false))
            })?;
            ed = Some(report);
            ed_perf = Some(perf);
        } else {
            for stale in [EXPLANATIONS_FILE, ED_REPORT_FILE] {
                let _ = std::fs::remove_file(self.dir.path(stale));
            }
        }

        let perf = PerfReport {
            m_features: transform.m,
            alpha: transform.alpha,
            p1_fit_seconds: p1,
            p2_scoring_seconds: p2.test_seconds,
            p2_records: p2.test_records,
            p3_explanation_seconds: explain_perf.as_ref().and_then(|p| p.mean_seconds),
            p3_by_type: explain_perf.map(|p| p.by_type).unwrap_or_default(),
            ed_mean_build_seconds: ed_perf.and_then(|p| p.mean_build_seconds),
            stages: self.timings.clone(),
            total_seconds: self.started.elapsed().as_secs_f64(),
        };
        self.dir.write_json(PERF_REPORT_FILE, &perf)?;
        Ok(RunSummary {
            output_dir: self.dir.root.clone(),
            ad,
            ed,
            perf,
        })
    }

    /// Slices, resamples, reduces and scales every training and test unit.
    fn transform(&self, data: &Dataset, plan: &PlanArtifact) -> Result<(Vec<Unit>, TransformArtifact, Vec<u8>)> {
        let cfg = self.cfg;
        let by_id: BTreeMap<&str, &Trace> = data.traces.iter().map(|t| (t.trace_id.as_str(), t)).collect();
        let mut raw: Vec<(String, Trace)> = Vec::new();
        for id in &plan.plan.train_traces {
            raw.push((id.clone(), by_id[id.as_str()].clone()));
        }
        for id in &plan.plan.test_traces {
            let t = by_id[id.as_str()];
            match plan.plan.peeked_segments.get(id) {
                Some(&end) => {
                    let mut prefix = t.slice(0..end);
                    prefix.trace_id = prefix_name(id);
                    raw.push((prefix_name(id), prefix));
                    raw.push((id.clone(), t.slice(end..t.len())));
                }
                None => raw.push((id.clone(), t.clone())),
            }
        }
        let l = cfg.resample_seconds;
        let mut units: Vec<Unit> = raw
            .into_par_iter()
            .map(|(name, t)| {
                let t = match &cfg.features {
                    FeatureStrategy::Subset(names) => t.select_features(names)?,
                    _ => t,
                };
                let t = resample(&t, l)?;
                Ok(Unit { name, trace: t })
            })
            .collect::<Result<_>>()?;

        let d0: BTreeSet<&str> = plan.d0.iter().map(String::as_str).collect();
        let pca = match &cfg.features {
            FeatureStrategy::Pca(target) => {
                let train: Vec<&Trace> = units
                    .iter()
                    .filter(|u| d0.contains(u.name.as_str()))
                    .map(|u| &u.trace)
                    .collect();
                let model = fit_pca_traces(&train, *target)?;
                units = units
                    .into_par_iter()
                    .map(|u| {
                        Ok(Unit {
                            trace: apply_pca(&model, &u.trace)?,
                            name: u.name,
                        })
                    })
                    .collect::<Result<_>>()?;
                Some(model)
            }
            _ => None,
        };

        let scaler = match cfg.scaling {
            Scaling::Training => {
                let train: Vec<&Trace> = units
                    .iter()
                    .filter(|u| d0.contains(u.name.as_str()))
                    .map(|u| &u.trace)
                    .collect();
                Some(ScalerModel::fit(&train)?)
            }
            _ => None,
        };
        let units: Vec<Unit> = units
            .into_par_iter()
            .map(|u| {
                let trace = match (cfg.scaling, &scaler) {
                    (Scaling::PerTrace, _) => ScalerModel::fit(&[&u.trace])?.apply(&u.trace)?,
                    (Scaling::Training, Some(s)) => s.apply(&u.trace)?,
                    _ => u.trace,
                };
                Ok(Unit { name: u.name, trace })
            })
            .collect::<Result<_>>()?;

        let features = units[0].trace.features().to_vec();
        let artifact = TransformArtifact {
            m: features.len(),
            features,
            alpha: 1.0 / l as f64,
            resample_seconds: l,
            pca,
            scaler,
        };
        let bytes = self.dir.write_json(TRANSFORM_FILE, &artifact)?;
        Ok((units, artifact, bytes))
    }

    fn fit(&self, spec: Option<&crate::detectors::DetectorSpec>, d0: &[&Unit], upstream: &str) -> Cached<FitOutcome> {
        let Some(spec) = spec else {
            let DetectorConfig::External { dir } = &self.cfg.detector else {
                unreachable!("only external detectors have no spec")
            };
            let key = digest(&[upstream.as_bytes(), dir.to_string_lossy().as_bytes()]);
            return Ok(((None, key, 0.0), false));
        };
        let spec_bytes = serde_json::to_vec(spec)?;
        let key = digest(&[upstream.as_bytes(), &spec_bytes]);
        if let Some(p) = self.dir.cached_perf::<FitPerf>("fit", &key) {
            if let Ok(bytes) = std::fs::read(self.dir.path(MODEL_FILE)) {
                if let Ok(model) = serde_json::from_slice::<FittedDetector>(&bytes) {
                    let model_key = digest(&[key.as_bytes(), &bytes]);
                    return Ok(((Some(model), model_key, p.seconds), true));
                }
            }
        }
        let traces: Vec<&Trace> = d0.iter().map(|u| &u.trace).collect();
        let t = Instant::now();
        let model = spec.fit(&traces)?;
        let seconds = t.elapsed().as_secs_f64();
        let bytes = self.dir.write_json(MODEL_FILE, &model)?;
        self.dir.commit("fit", &key, &FitPerf { seconds })?;
        let model_key = digest(&[key.as_bytes(), &bytes]);
        Ok(((Some(model), model_key, seconds), false))
    }

    fn score(
        &self,
        model: Option<&FittedDetector>,
        d2: &[&Unit],
        test: &[&Unit],
        model_key: &str,
    ) -> Cached<(ScoreMap, ScorePerf)> {
        let names: Vec<&str> = d2.iter().chain(test).map(|u| u.name.as_str()).collect();
        let key = digest(&[model_key.as_bytes(), names.join("\n").as_bytes()]);
        let file = |name: &str| self.dir.path(SCORES_DIR).join(format!("{name}.csv"));
        let load = |u: &Unit, path: &Path| -> Result<Vec<f64>> {
            let (ts, s) = read_score_file(path)?;
            if ts != u.trace.timestamps() {
                return Err(Error::Integrity(format!(
                    "{}: timestamps do not match unit `{}`",
                    path.display(),
                    u.name
                )));
            }
            if s.scores.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("{}: non-finite score", path.display())));
            }
            Ok(s.scores)
        };

        if let Some(p) = self.dir.cached_perf::<ScorePerf>("score", &key) {
            let cached: Result<Vec<(String, Vec<f64>)>> = d2
                .iter()
                .chain(test)
                .map(|u| Ok((u.name.clone(), load(u, &file(&u.name))?)))
                .collect();
            if let Ok(map) = cached {
                return Ok(((map.into_iter().collect(), p), true));
            }
        }

        let score_units = |units: &[&Unit]| -> Result<Vec<(String, Vec<f64>)>> {
            units
                .par_iter()
                .map(|u| {
                    let scores = match model {
                        Some(m) => m.score(&u.trace)?.scores,
                        None => {
                            let DetectorConfig::External { dir } = &self.cfg.detector else {
                                unreachable!("no model means external scores")
                            };
                            load(u, &dir.join(format!("{}.csv", u.name)))?
                        }
                    };
                    Ok((u.name.clone(), scores))
                })
                .collect()
        };
        let mut out = score_units(d2)?;
        let t = Instant::now();
        let test_scores = score_units(test)?;
        let perf = ScorePerf {
            test_seconds: t.elapsed().as_secs_f64(),
            test_records: test.iter().map(|u| u.trace.len()).sum(),
        };
        out.extend(test_scores);
        let units: BTreeMap<&str, &Unit> = d2.iter().chain(test).map(|u| (u.name.as_str(), *u)).collect();
        out.par_iter().try_for_each(|(name, scores)| {
            let series = ScoreSeries {
                trace_id: name.clone(),
                scores: scores.clone(),
            };
            write_score_file(&file(name), units[name.as_str()].trace.timestamps(), &series)
        })?;
        self.dir.commit("score", &key, &perf)?;
        Ok(((out.into_iter().collect(), perf), false))
    }

    fn evaluate_ad(
        &self,
        test: &[&Unit],
        scores: &BTreeMap<String, Vec<f64>>,
        real: &BTreeMap<String, Vec<AnomalyRange>>,
        detections: &DetectionArtifact,
    ) -> Result<AdRunReport> {
        let cfg = self.cfg;
        let mut levels = cfg.ad_levels.clone();
        levels.sort();
        levels.dedup();

        let report_for = |d: &RuleDetections| -> Result<RuleReport> {
            let sets: Vec<RangeSet<'_>> = test
                .iter()
                .map(|u| RangeSet {
                    real: &real[&u.name],
                    predicted: &d.ranges[&u.name],
                })
                .collect();
            Ok(RuleReport {
                rule: d.rule.clone(),
                threshold: d.threshold,
                report: evaluate_ad(&sets, &levels)?,
            })
        };
        let rules: Vec<RuleReport> = detections.rules.par_iter().map(report_for).collect::<Result<_>>()?;
        let median_threshold = report_for(&detections.median_threshold)?;

        let median_of_rules: Vec<LevelReport> = levels
            .iter()
            .map(|&level| {
                let rows: Vec<&LevelReport> = rules.iter().filter_map(|r| r.report.level(level)).collect();
                let med =
                    |f: &dyn Fn(&LevelReport) -> f64| stats::median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                let types: BTreeSet<AnomalyType> =
                    rows.iter().flat_map(|r| r.typewise_recall.keys().copied()).collect();
                LevelReport {
                    level,
                    precision: med(&|r| r.precision),
                    recall: med(&|r| r.recall),
                    f_score: med(&|r| r.f_score),
                    typewise_recall: types
                        .into_iter()
                        .map(|t| (t, med(&|r| r.typewise_recall.get(&t).copied().unwrap_or(0.0))))
                        .collect(),
                }
            })
            .collect();
        check_monotone(&median_of_rules)?;

        let scored: Vec<ScoredTrace<'_>> = test
            .iter()
            .map(|u| ScoredTrace {
                trace_id: &u.name,
                app_id: u.trace.app_id,
                scores: &scores[&u.name],
                real: &real[&u.name],
            })
            .collect();
        let has_ranges = scored.iter().any(|s| !s.real.is_empty());
        let grid = cfg.auprc_grid;
        let auprc_rows: Vec<(AuprcRow, PrCurve)> = levels
            .par_iter()
            .map(|&level| {
                let at = |g| {
                    if has_ranges {
                        auprc(&scored, level, g, grid).ok()
                    } else {
                        None
                    }
                };
                (
                    AuprcRow {
                        level,
                        global: at(Granularity::Global),
                        app: at(Granularity::App),
                        trace: at(Granularity::Trace),
                    },
                    pr_curve(&scored, level, grid),
                )
            })
            .collect();
        let curves: Vec<CurveSet> = auprc_rows
            .iter()
            .map(|(row, curve)| CurveSet {
                level: row.level,
                curve: curve.clone(),
            })
            .collect();
        self.dir.write_json(PR_CURVES_FILE, &curves)?;

        let report = AdRunReport {
            n_test_traces: test.len(),
            n_real_ranges: real.values().map(Vec::len).sum(),
            auprc: auprc_rows.into_iter().map(|(r, _)| r).collect(),
            rules,
            median_threshold,
            median_of_rules,
        };
        self.dir.write_json(AD_REPORT_FILE, &report)?;
        Ok(report)
    }

    /// Anomalies to explain, in test-unit order.
    fn instances(
        &self,
        test: &[&Unit],
        real: &BTreeMap<String, Vec<AnomalyRange>>,
        detections: &DetectionArtifact,
    ) -> Vec<AnomalyInstance> {
        test.iter()
            .flat_map(|u| {
                let labeled = &real[&u.name];
                let ranges = match self.cfg.ed.anomalies {
                    AnomalySource::GroundTruth => labeled.clone(),
                    AnomalySource::Detected => typed_detections(&detections.median_threshold.ranges[&u.name], labeled),
                };
                instances_from_trace(&u.trace, &ranges)
            })
            .collect()
    }
}

/// Detected ranges labeled with the type of the real range they overlap most;
/// detections overlapping no real range are dropped.
fn typed_detections(predicted: &[PredictedRange], real: &[AnomalyRange]) -> Vec<AnomalyRange> {
    predicted
        .iter()
        .filter_map(|p| {
            let best = real
                .iter()
                .map(|r| (r.end.min(p.end).saturating_sub(r.start.max(p.start)), r.anomaly_type))
                .filter(|(overlap, _)| *overlap > 0)
                .max_by_key(|(overlap, _)| *overlap)?;
            Some(AnomalyRange {
                start: p.start,
                end: p.end,
                anomaly_type: best.1,
            })
        })
        .collect()
}
