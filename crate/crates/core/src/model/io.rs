use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{AnomalyType, GroundTruthEntry, GroundTruthTable, ScoreSeries, Trace};

pub const GROUND_TRUTH_HEADER: [&str; 7] = [
    "app_id",
    "trace_id",
    "anomaly_type",
    "root_cause_start",
    "root_cause_end",
    "extended_effect_start",
    "extended_effect_end",
];

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { .. } => {
            Error::Format(format!("{}: rows of unequal width ({e})", path.display()))
        }
        csv::ErrorKind::Io(_) => Error::Format(format!("{}: {e}", path.display())),
        _ => Error::Csv(e),
    }
}

/// `app_<n>` parent directories carry the application id.
fn app_id_from_path(path: &Path) -> u32 {
    path.parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("app_"))
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

/// Reads a trace CSV (`t,<feature>,...`), replacing empty cells by `fill_value`.
///
/// The trace id is the file stem; the app id comes from an `app_<n>` parent
/// directory when there is one.
pub fn read_trace(path: &Path, fill_value: f64) -> Result<Trace> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() || header.get(0).map(str::trim) != Some("t") {
        return Err(Error::Format(format!("{}: header must start with `t`", path.display())));
    }
    let features: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if features.iter().any(String::is_empty) {
        return Err(Error::Format(format!(
            "{}: empty feature name in header",
            path.display()
        )));
    }

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let t = record[0].trim();
        let t: i64 = t.parse().map_err(|_| {
            Error::Format(format!(
                "{}: row {}: timestamp `{t}` is not an integer",
                path.display(),
                line + 1
            ))
        })?;
        if let Some(&prev) = timestamps.last() {
            if t <= prev {
                return Err(Error::Integrity(format!(
                    "{}: timestamps not increasing at row {} ({prev} then {t})",
                    path.display(),
                    line + 1
                )));
            }
        }
        timestamps.push(t);
        for cell in record.iter().skip(1) {
            let cell = cell.trim();
            if cell.is_empty() {
                values.push(fill_value);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Format(format!(
                        "{}: row {}: value `{cell}` is not a number",
                        path.display(),
                        line + 1
                    ))
                })?;
                values.push(if v.is_nan() { fill_value } else { v });
            }
        }
    }

    let trace_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    Trace::new(trace_id, app_id_from_path(path), timestamps, features, values)
}

/// Writes a trace CSV; NaN cells are written empty.
pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(trace.features().iter().cloned());
    w.write_record(&header)?;
    let mut cells = Vec::with_capacity(trace.n_features() + 1);
    for (i, &t) in trace.timestamps().iter().enumerate() {
        cells.clear();
        cells.push(t.to_string());
        cells.extend(
            trace
                .row(i)
                .iter()
                .map(|v| if v.is_nan() { String::new() } else { v.to_string() }),
        );
        w.write_record(&cells)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

fn opt_i64(cell: &str, what: &str, row: usize) -> Result<Option<i64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("row {row}: {what} `{cell}` is not an integer")))
}

fn req_i64(cell: &str, what: &str, row: usize) -> Result<i64> {
    opt_i64(cell, what, row)?.ok_or_else(|| Error::Format(format!("row {row}: {what} is missing")))
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruthTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != GROUND_TRUTH_HEADER {
        return Err(Error::Format(format!(
            "{}: expected header `{}`",
            path.display(),
            GROUND_TRUTH_HEADER.join(",")
        )));
    }
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = i + 1;
        let app_id = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("row {row}: app_id `{}` is not an integer", &record[0])))?;
        let entry = GroundTruthEntry {
            app_id,
            trace_id: record[1].trim().to_string(),
            anomaly_type: record[2].parse::<AnomalyType>()?,
            root_cause_start: req_i64(&record[3], "root_cause_start", row)?,
            root_cause_end: req_i64(&record[4], "root_cause_end", row)?,
            extended_effect_start: opt_i64(&record[5], "extended_effect_start", row)?,
            extended_effect_end: opt_i64(&record[6], "extended_effect_end", row)?,
        };
        entry.validate()?;
        entries.push(entry);
    }
    Ok(GroundTruthTable { entries })
}

pub fn write_ground_truth(path: &Path, table: &GroundTruthTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GROUND_TRUTH_HEADER)?;
    let opt = |v: Option<i64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in &table.entries {
        w.write_record([
            e.app_id.to_string(),
            e.trace_id.clone(),
            e.anomaly_type.to_string(),
            e.root_cause_start.to_string(),
            e.root_cause_end.to_string(),
            opt(e.extended_effect_start),
            opt(e.extended_effect_end),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Score file: `t,score` per record.
pub fn write_score_file(path: &Path, timestamps: &[i64], scores: &ScoreSeries) -> Result<()> {
    if timestamps.len() != scores.scores.len() {
        return Err(Error::Integrity(format!(
            "{} scores for {} timestamps",
            scores.scores.len(),
            timestamps.len()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "score"])?;
    for (t, s) in timestamps.iter().zip(&scores.scores) {
        w.write_record([t.to_string(), s.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Reads a `t,score` file; returns timestamps and the series keyed by file stem.
pub fn read_score_file(path: &Path) -> Result<(Vec<i64>, ScoreSeries)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["t", "score"] {
        return Err(Error::Format(format!("{}: expected header `t,score`", path.display())));
    }
    let mut ts = Vec::new();
    let mut scores = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let t = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: row {}: bad timestamp", path.display(), i + 1)))?;
        let s: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: row {}: bad score", path.display(), i + 1)))?;
        ts.push(t);
        scores.push(s);
    }
    let trace_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    Ok((ts, ScoreSeries { trace_id, scores }))
}
