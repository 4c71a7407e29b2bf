use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ad_eval::{AdLevel, ThresholdGrid};
use crate::detectors::{DetectorSpec, ThresholdMethod, ThresholdRule, DEFAULT_C_GRID};
use crate::error::{Error, Result};
use crate::explainers::{ExplainerConfig, ExplainerKind};
use crate::model::RangeSpan;
use crate::transform::{LearningSetting, PcaTarget, DEFAULT_SPLIT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory of trace CSVs, either flat or under `app_<id>/`.
    pub dir: PathBuf,
    /// Defaults to `<dir>/ground_truth.csv`.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    /// Replaces empty cells.
    #[serde(default)]
    pub fill_value: f64,
}

impl DatasetConfig {
    pub fn ground_truth_path(&self) -> PathBuf {
        self.ground_truth
            .clone()
            .unwrap_or_else(|| self.dir.join("ground_truth.csv"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureStrategy {
    #[default]
    All,
    Subset(Vec<String>),
    /// PCA fitted on the internal training set.
    Pca(PcaTarget),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Min-max per trace, test traces included.
    #[default]
    PerTrace,
    /// Min-max fitted on the internal training set and applied everywhere.
    Training,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorConfig {
    Forecast {
        lambda: f64,
    },
    Reconstruct {
        window: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        components: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coverage: Option<f64>,
    },
    /// Precomputed `t,score` files named after each scored unit.
    External {
        dir: PathBuf,
    },
}

impl DetectorConfig {
    /// The built-in detector, or `None` for external scores.
    pub fn spec(&self) -> Result<Option<DetectorSpec>> {
        match self {
            DetectorConfig::Forecast { lambda } => Ok(Some(DetectorSpec::Forecast { lambda: *lambda })),
            DetectorConfig::Reconstruct {
                window,
                components,
                coverage,
            } => {
                let target = match (components, coverage) {
                    (Some(k), None) => PcaTarget::Components(*k),
                    (None, Some(c)) => PcaTarget::Coverage(*c),
                    _ => {
                        return Err(Error::Invalid(
                            "reconstruct detector needs exactly one of `components` or `coverage`".into(),
                        ))
                    }
                };
                Ok(Some(DetectorSpec::Reconstruct {
                    window: *window,
                    target,
                }))
            }
            DetectorConfig::External { .. } => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub c: Vec<f64>,
    pub methods: Vec<ThresholdMethod>,
    pub iterations: Vec<u8>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            c: DEFAULT_C_GRID.to_vec(),
            methods: ThresholdMethod::ALL.to_vec(),
            iterations: vec![1, 2],
        }
    }
}

impl ThresholdConfig {
    pub fn rules(&self) -> Vec<ThresholdRule> {
        ThresholdRule::grid(&self.c)
            .into_iter()
            .filter(|r| self.methods.contains(&r.method) && self.iterations.contains(&r.iterations))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalySource {
    /// Labeled ranges of the test traces.
    #[default]
    GroundTruth,
    /// Ranges detected at the median threshold, typed by the labeled range they overlap.
    Detected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdSettings {
    pub n_samples: usize,
    pub anomalies: AnomalySource,
}

impl Default for EdSettings {
    fn default() -> Self {
        EdSettings {
            n_samples: crate::ed_eval::DEFAULT_SAMPLES,
            anomalies: AnomalySource::GroundTruth,
        }
    }
}

fn default_setting() -> LearningSetting {
    LearningSetting::LS4
}
fn default_resample() -> i64 {
    15
}
fn default_levels() -> Vec<AdLevel> {
    AdLevel::ALL.to_vec()
}
fn default_split() -> [f64; 3] {
    [DEFAULT_SPLIT.0, DEFAULT_SPLIT.1, DEFAULT_SPLIT.2]
}
fn default_output() -> PathBuf {
    PathBuf::from("run")
}

/// One JSON document describing a run. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_setting")]
    pub setting: LearningSetting,
    #[serde(default)]
    pub app_id: Option<u32>,
    /// Bucket length in seconds; 1 keeps the raw sampling.
    #[serde(default = "default_resample")]
    pub resample_seconds: i64,
    #[serde(default)]
    pub features: FeatureStrategy,
    #[serde(default)]
    pub scaling: Scaling,
    pub detector: DetectorConfig,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default = "default_levels")]
    pub ad_levels: Vec<AdLevel>,
    #[serde(default)]
    pub range_span: RangeSpan,
    #[serde(default)]
    pub auprc_grid: ThresholdGrid,
    #[serde(default)]
    pub explainer: Option<ExplainerKind>,
    #[serde(default)]
    pub explainer_config: ExplainerConfig,
    #[serde(default)]
    pub ed: EdSettings,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; defaults to the number of CPUs.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dataset.dir);
        if let Some(g) = &mut self.dataset.ground_truth {
            resolve(base, g);
        }
        if let DetectorConfig::External { dir } = &mut self.detector {
            resolve(base, dir);
        }
        resolve(base, &mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.dir.is_dir() {
            return Err(Error::Invalid(format!(
                "dataset directory {} does not exist",
                self.dataset.dir.display()
            )));
        }
        let gt = self.dataset.ground_truth_path();
        if !gt.is_file() {
            return Err(Error::Invalid(format!("ground truth {} does not exist", gt.display())));
        }
        if let DetectorConfig::External { dir } = &self.detector {
            if !dir.is_dir() {
                return Err(Error::Invalid(format!(
                    "score directory {} does not exist",
                    dir.display()
                )));
            }
            if self.explainer == Some(ExplainerKind::Surrogate) {
                return Err(Error::Invalid(
                    "the surrogate explainer needs a built-in detector to query".into(),
                ));
            }
        }
        self.detector.spec()?;
        if self.setting.single_app() && self.app_id.is_none() {
            return Err(Error::Invalid(format!("{:?} needs `app_id`", self.setting)));
        }
        if self.resample_seconds < 1 {
            return Err(Error::Invalid("resample_seconds must be at least 1".into()));
        }
        if self.split.iter().any(|f| !(*f > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "split {:?} must be positive and sum to 1",
                self.split
            )));
        }
        if self.thresholds.rules().is_empty() {
            return Err(Error::Invalid("threshold grid is empty".into()));
        }
        if self.ad_levels.is_empty() {
            return Err(Error::Invalid("no AD levels requested".into()));
        }
        if self.ed.n_samples < 2 {
            return Err(Error::Invalid("ed.n_samples must be at least 2".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Invalid("workers must be at least 1".into()));
        }
        self.explainer_config.validate()
    }
}
