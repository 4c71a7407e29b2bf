use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use super::{
    AdRunReport, CurveSet, PerfReport, AD_REPORT_FILE, DETECTIONS_FILE, ED_REPORT_FILE, PERF_REPORT_FILE, PLAN_FILE,
    PR_CURVES_FILE, SCORES_DIR, THRESHOLDS_FILE, TRANSFORM_FILE,
};
use crate::ad_eval::LevelReport;
use crate::ed_eval::{EdMetrics, EdReport, EdRow};
use crate::error::{Error, Result};
use crate::model::{write_atomic, AnomalyType};

pub const AD_LEVELS_CSV: &str = "ad_levels.csv";
pub const AD_TYPEWISE_CSV: &str = "ad_typewise.csv";
pub const ED_TABLE_CSV: &str = "ed_table.csv";
pub const CURVES_DIR: &str = "curves";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub tables: Vec<PathBuf>,
    pub curves: Vec<PathBuf>,
    /// The run had no explanation stage.
    pub ed_skipped: bool,
}

fn read<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Stages whose artifacts are absent from `run_dir`.
pub fn missing_stages(run_dir: &Path) -> Vec<&'static str> {
    [
        ("partition", PLAN_FILE),
        ("transform", TRANSFORM_FILE),
        ("score", SCORES_DIR),
        ("threshold", THRESHOLDS_FILE),
        ("detect", DETECTIONS_FILE),
        ("evaluate_ad", AD_REPORT_FILE),
    ]
    .into_iter()
    .filter(|(_, f)| !run_dir.join(f).exists())
    .map(|(s, _)| s)
    .collect()
}

fn level_row(rule: &str, threshold: Option<f64>, l: &LevelReport, ad: &AdRunReport) -> Vec<String> {
    let a = ad.auprc_at(l.level);
    vec![
        rule.to_string(),
        opt(threshold),
        l.level.as_str().to_string(),
        num(l.precision),
        num(l.recall),
        num(l.f_score),
        opt(a.and_then(|a| a.global)),
        opt(a.and_then(|a| a.app)),
        opt(a.and_then(|a| a.trace)),
    ]
}

fn typewise_row(rule: &str, l: &LevelReport) -> Vec<String> {
    let mut row = vec![rule.to_string(), l.level.as_str().to_string()];
    row.extend(AnomalyType::ALL.iter().map(|t| opt(l.typewise_recall.get(t).copied())));
    row
}

fn ed_cells(m: Option<&EdMetrics>) -> Vec<String> {
    match m {
        None => vec![String::new(); 5],
        Some(m) => vec![
            num(m.conciseness),
            num(m.consistency),
            num(m.normalized_consistency),
            opt(m.accuracy.map(|a| a.precision)),
            opt(m.accuracy.map(|a| a.recall)),
        ],
    }
}

fn ed_row(explainer: &str, row: &EdRow, time: Option<f64>) -> Vec<String> {
    let mut out = vec![
        explainer.to_string(),
        row.anomaly_type.map_or("avg".to_string(), |t| t.to_string()),
        row.n_anomalies.to_string(),
        row.n_unexplained.to_string(),
    ];
    out.extend(ed_cells(row.ed1.as_ref()));
    out.extend(ed_cells(row.ed2.as_ref()));
    out.push(opt(time));
    out
}

/// Flat CSV tables and precision/recall curve files from a finished run.
pub fn write_report_tables(run_dir: &Path) -> Result<ReportSummary> {
    if !run_dir.is_dir() {
        return Err(Error::Invalid(format!(
            "run directory {} does not exist",
            run_dir.display()
        )));
    }
    let missing = missing_stages(run_dir);
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "run directory {} lacks artifacts of stages: {}",
            run_dir.display(),
            missing.join(", ")
        )));
    }
    let ad: AdRunReport = read(&run_dir.join(AD_REPORT_FILE))?;
    let mut tables = Vec::new();

    let header: Vec<String> = [
        "rule",
        "threshold",
        "level",
        "precision",
        "recall",
        "f_score",
        "auprc_global",
        "auprc_app",
        "auprc_trace",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    let mut typewise = Vec::new();
    for r in ad.rules.iter().chain(std::iter::once(&ad.median_threshold)) {
        for l in &r.report.levels {
            rows.push(level_row(&r.rule, Some(r.threshold), l, &ad));
            typewise.push(typewise_row(&r.rule, l));
        }
    }
    for l in &ad.median_of_rules {
        rows.push(level_row("median-of-rules", None, l, &ad));
        typewise.push(typewise_row("median-of-rules", l));
    }
    let path = run_dir.join(AD_LEVELS_CSV);
    write_csv(&path, &header, &rows)?;
    tables.push(path);

    let mut header = vec!["rule".to_string(), "level".to_string()];
    header.extend(AnomalyType::ALL.iter().map(|t| t.to_string()));
    let path = run_dir.join(AD_TYPEWISE_CSV);
    write_csv(&path, &header, &typewise)?;
    tables.push(path);

    let ed_path = run_dir.join(ED_REPORT_FILE);
    let ed_skipped = !ed_path.is_file();
    if !ed_skipped {
        let ed: EdReport = read(&ed_path)?;
        let perf: Option<PerfReport> = read(&run_dir.join(PERF_REPORT_FILE)).ok();
        let mut header: Vec<String> = ["explainer", "type", "n_anomalies", "n_unexplained"]
            .map(String::from)
            .to_vec();
        for g in ["ED1", "ED2"] {
            for c in ["Concise", "Consistency", "Norm.Cons", "Prec", "Rec"] {
                header.push(format!("{g} {c}"));
            }
        }
        header.push("Time".into());
        let time_of = |t: Option<AnomalyType>| {
            perf.as_ref().and_then(|p| match t {
                Some(t) => p.p3_by_type.get(&t).copied(),
                None => p.p3_explanation_seconds,
            })
        };
        let mut rows: Vec<Vec<String>> = ed
            .rows
            .iter()
            .map(|r| ed_row(&ed.explainer, r, time_of(r.anomaly_type)))
            .collect();
        rows.push(ed_row(&ed.explainer, &ed.average, time_of(None)));
        let path = run_dir.join(ED_TABLE_CSV);
        write_csv(&path, &header, &rows)?;
        tables.push(path);
    }

    let mut curves = Vec::new();
    let curve_path = run_dir.join(PR_CURVES_FILE);
    if curve_path.is_file() {
        let sets: Vec<CurveSet> = read(&curve_path)?;
        let dir = run_dir.join(CURVES_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in sets {
            let path = dir.join(format!("pr_{}.csv", s.level.as_str()));
            let rows: Vec<Vec<String>> = s
                .curve
                .points
                .iter()
                .map(|p| vec![num(p.threshold), num(p.recall), num(p.precision)])
                .collect();
            write_csv(&path, &["threshold", "recall", "precision"].map(String::from), &rows)?;
            curves.push(path);
        }
    }
    Ok(ReportSummary {
        tables,
        curves,
        ed_skipped,
    })
}
