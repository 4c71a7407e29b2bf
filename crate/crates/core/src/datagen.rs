//! Synthetic streaming-application telemetry with injectable anomalies.
//!
//! A trace is a 1 Hz simulation of a micro-batch stream processor: a driver
//! receives records, splits each batch evenly across executor nodes and waits
//! for the slowest one. All noise is drawn up front from the trace seed, so a
//! trace with injections replays exactly the same noise as its undisturbed
//! counterpart and differs only where the injected event acts.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, AnomalyType, GroundTruthEntry, GroundTruthTable, Trace};
use crate::seed::{derive_seed, rng};

/// Processing load of a healthy node under the base input rate.
const NORMAL_LOAD: f64 = 0.6;
/// Extra processing time of a benign spike, in batch intervals.
const SPIKE_BATCHES: f64 = 0.9;
const SPIKE_MIN_SECONDS: i64 = 5;
const SPIKE_MAX_SECONDS: i64 = 30;
/// Share of records that benign spikes may cover at most.
const SPIKE_BUDGET: f64 = 0.02;
/// Cap on per-node load when capacity collapses.
const MAX_LOAD: f64 = 5.0;

const MEM_BASE_GB: f64 = 2.0;
/// Memory gained per node when its backlog reaches 300 s of base input.
const MEM_BACKLOG_GB: f64 = 6.0;
const MEM_CAP_GB: f64 = 8.0;

const T5_DOWN_SECONDS: i64 = 20;
const T5_WARMUP_SECONDS: i64 = 60;
const T5_RCI_SECONDS: i64 = 60;
const T6_RCI_SECONDS: i64 = 10;
/// Scheduling delay added by recomputing the lost executor's tasks.
const T6_LUMP_BATCHES: f64 = 8.0;

const BASELINE_SECONDS: i64 = 300;
const ROLLING_SECONDS: usize = 60;
const STABLE_SECONDS: usize = 60;

/// Generator parameters. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub duration_seconds: i64,
    /// Records per second.
    pub base_input_rate: f64,
    pub batch_interval: i64,
    pub node_count: usize,
    /// Noise level as a fraction of each metric's base level.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Timestamp of the first record.
    pub start_epoch: i64,
    /// Width of the normal band used to end extended effects.
    pub band_factor: f64,
    pub spikes_per_hour: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            duration_seconds: 7200,
            base_input_rate: 1000.0,
            batch_interval: 10,
            node_count: 4,
            noise_sigma: 0.05,
            seed: 0,
            start_epoch: 1_600_000_000,
            band_factor: 1.2,
            spikes_per_hour: 2.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.duration_seconds < 600 {
            return bad(format!("duration {} < 600 s", self.duration_seconds));
        }
        if self.batch_interval < 1 {
            return bad(format!("batch interval {} < 1", self.batch_interval));
        }
        if self.node_count < 1 {
            return bad("node_count must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} < 0", self.noise_sigma));
        }
        if !(self.base_input_rate > 0.0) {
            return bad("base_input_rate must be positive".into());
        }
        if !(self.band_factor >= 1.0) {
            return bad("band_factor must be at least 1".into());
        }
        if !(self.spikes_per_hour >= 0.0) {
            return bad("spikes_per_hour must be non-negative".into());
        }
        Ok(())
    }

    /// Feature names: driver metrics, then three per node, then driver JVM metrics.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "input_rate",
            "received_records",
            "processed_records",
            "processing_time",
            "scheduling_delay",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for i in 0..self.node_count {
            names.push(format!("node{i}_cpu_idle"));
            names.push(format!("node{i}_memory_used"));
            names.push(format!("node{i}_net_io"));
        }
        names.push("driver_heap_used".into());
        names.push("driver_gc_time".into());
        names
    }

    pub fn n_features(&self) -> usize {
        5 + 3 * self.node_count + 2
    }
}

/// One anomaly to inject. Duration is ignored for T2, T5 and T6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    pub anomaly_type: AnomalyType,
    /// Seconds since the trace start.
    pub start_second: i64,
    #[serde(default)]
    pub duration_seconds: Option<i64>,
    /// Input-rate factor for T1/T2, capacity loss for T4 (capacity / (1 + m)).
    #[serde(default)]
    pub magnitude: Option<f64>,
}

impl InjectionSpec {
    pub fn new(anomaly_type: AnomalyType, start_second: i64) -> Self {
        InjectionSpec {
            anomaly_type,
            start_second,
            duration_seconds: None,
            magnitude: None,
        }
    }

    pub fn with_duration(mut self, seconds: i64) -> Self {
        self.duration_seconds = Some(seconds);
        self
    }

    pub fn with_magnitude(mut self, magnitude: f64) -> Self {
        self.magnitude = Some(magnitude);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Resolved {
    kind: AnomalyType,
    start: usize,
    /// RCI length before truncation to the trace.
    duration: usize,
    magnitude: f64,
    node: usize,
}

impl Resolved {
    fn from_spec(spec: &InjectionSpec, config: &GeneratorConfig, seed: u64) -> Result<Self> {
        let kind = spec.anomaly_type;
        if spec.start_second < 1 || spec.start_second >= config.duration_seconds {
            return Err(Error::Invalid(format!(
                "{kind} start {} outside (0, {})",
                spec.start_second, config.duration_seconds
            )));
        }
        let duration = match kind {
            AnomalyType::T1 => spec.duration_seconds.unwrap_or(1200),
            AnomalyType::T3 | AnomalyType::T4 => spec.duration_seconds.unwrap_or(900),
            AnomalyType::T2 => config.duration_seconds,
            AnomalyType::T5 => T5_RCI_SECONDS,
            AnomalyType::T6 => T6_RCI_SECONDS,
        };
        if duration < 1 {
            return Err(Error::Invalid(format!("{kind} duration {duration} < 1")));
        }
        let magnitude = match kind {
            AnomalyType::T1 => spec.magnitude.unwrap_or(2.0),
            AnomalyType::T2 => spec.magnitude.unwrap_or(4.0),
            AnomalyType::T4 => spec.magnitude.unwrap_or(1.0),
            _ => spec.magnitude.unwrap_or(1.0),
        };
        if !(magnitude >= 0.0 && magnitude.is_finite()) {
            return Err(Error::Invalid(format!("{kind} magnitude {magnitude}")));
        }
        let node = rng(seed).random_range(0..config.node_count);
        Ok(Resolved {
            kind,
            start: spec.start_second as usize,
            duration: duration as usize,
            magnitude,
            node,
        })
    }

    fn active(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

/// Pre-drawn randomness for one trace.
struct Noise {
    /// `per_second` standard normals per second.
    z: Vec<f64>,
    per_second: usize,
    spike: Vec<bool>,
}

impl Noise {
    fn draw(config: &GeneratorConfig, seed: u64) -> Self {
        let d = config.duration_seconds as usize;
        let per_second = 4 + 3 * config.node_count;
        let mut r = rng(derive_seed(seed, "noise", ""));
        let z = (0..d * per_second).map(|_| StandardNormal.sample(&mut r)).collect();

        let mut spike = vec![false; d];
        if config.noise_sigma > 0.0 && config.spikes_per_hour > 0.0 {
            let mut r = rng(derive_seed(seed, "spikes", ""));
            let gap = Exp::new(config.spikes_per_hour / 3600.0).expect("positive rate");
            let budget = (SPIKE_BUDGET * d as f64).floor() as usize;
            let mut used = 0usize;
            let mut t = gap.sample(&mut r);
            while (t as usize) < d {
                let len = r.random_range(SPIKE_MIN_SECONDS..=SPIKE_MAX_SECONDS) as usize;
                let start = t as usize;
                let end = (start + len).min(d);
                if used + (end - start) > budget {
                    break;
                }
                spike[start..end].iter_mut().for_each(|s| *s = true);
                used += end - start;
                // Next spike starts after this one ends.
                t = end as f64 + gap.sample(&mut r);
            }
        }
        Noise { z, per_second, spike }
    }

    fn at(&self, t: usize) -> &[f64] {
        &self.z[t * self.per_second..(t + 1) * self.per_second]
    }
}

struct Simulation {
    /// Row-major, `len × n_features`.
    values: Vec<f64>,
    len: usize,
    processing_time: Vec<f64>,
    scheduling_delay: Vec<f64>,
    /// First second after an application crash.
    crash: Option<usize>,
}

fn simulate(config: &GeneratorConfig, noise: &Noise, injections: &[Resolved]) -> Simulation {
    let d = config.duration_seconds as usize;
    let n = config.node_count;
    let m = config.n_features();
    let b = config.batch_interval as f64;
    let r0 = config.base_input_rate;
    let sigma = config.noise_sigma;
    let node_rate = r0 / (NORMAL_LOAD * n as f64);
    let backlog_scale = 300.0 * r0 / n as f64;
    let mem_cap: Vec<f64> = (0..n).map(|i| MEM_CAP_GB * (1.0 + 0.05 * i as f64)).collect();
    let min_alive = n.div_ceil(2);

    let mut values = Vec::with_capacity(d * m);
    let mut pt_series = Vec::with_capacity(d);
    let mut sd_series = Vec::with_capacity(d);
    let mut crashed = vec![false; n];
    let mut received = 0.0;
    let mut processed_cum = 0.0;
    let mut backlog = 0.0f64;
    let mut sd = 0.0f64;
    let mut crash = None;

    for t in 0..d {
        let z = noise.at(t);
        let (z_rate, z_pt, z_heap, z_gc) = (z[0], z[1], z[2], z[3]);
        let z_node = &z[4..];

        let mut rate_factor = 1.0;
        let mut cap = vec![1.0f64; n];
        let mut zeroed_node = None;
        let mut driver_down = false;
        let mut t2_active = false;
        for inj in injections {
            match inj.kind {
                AnomalyType::T1 if inj.active(t) => rate_factor *= inj.magnitude,
                AnomalyType::T2 if t >= inj.start => {
                    rate_factor *= inj.magnitude;
                    t2_active = true;
                }
                AnomalyType::T3 if inj.active(t) => rate_factor = 0.0,
                AnomalyType::T4 if inj.active(t) => {
                    cap[inj.node] /= 1.0 + inj.magnitude;
                }
                AnomalyType::T5 => {
                    let down_end = inj.start + T5_DOWN_SECONDS as usize;
                    if t > inj.start && t <= down_end {
                        driver_down = true;
                    } else if t > down_end && t <= down_end + T5_WARMUP_SECONDS as usize {
                        cap.iter_mut().for_each(|c| *c *= 0.5);
                    }
                }
                AnomalyType::T6 if inj.active(t) => {
                    cap[inj.node] = 0.0;
                    zeroed_node = Some(inj.node);
                    if t == inj.start {
                        sd += T6_LUMP_BATCHES * b;
                    }
                }
                _ => {}
            }
        }
        for (c, dead) in cap.iter_mut().zip(&crashed) {
            if *dead {
                *c = 0.0;
            }
        }

        let row_start = values.len();
        values.resize(row_start + m, 0.0);
        let row = &mut values[row_start..];

        if driver_down {
            // Driver metrics read zero and cumulative counters restart.
            received = 0.0;
            processed_cum = 0.0;
            backlog = 0.0;
            sd = 0.0;
            pt_series.push(0.0);
            sd_series.push(0.0);
            for i in 0..n {
                let zi = &z_node[3 * i..3 * i + 3];
                let off = 5 + 3 * i;
                if crashed[i] {
                    row[off..off + 3].fill(f64::NAN);
                    continue;
                }
                row[off] = (100.0 + 40.0 * sigma * zi[0]).clamp(0.0, 100.0);
                row[off + 1] = (MEM_BASE_GB + 2.0 * sigma * zi[1]).max(0.0);
                row[off + 2] = 0.0;
            }
            continue;
        }

        let rate = (r0 * rate_factor * (1.0 + sigma * z_rate)).max(0.0);
        let alive: Vec<usize> = (0..n).filter(|&i| cap[i] > 0.0).collect();
        let (max_load, throughput) = if alive.is_empty() {
            (MAX_LOAD, 0.0)
        } else {
            let share = rate / alive.len() as f64;
            let min_cap = alive.iter().map(|&i| cap[i]).fold(f64::INFINITY, f64::min);
            (
                (share / (min_cap * node_rate)).min(MAX_LOAD),
                alive.len() as f64 * node_rate * min_cap,
            )
        };
        let processed = (rate + backlog).min(throughput);
        backlog += rate - processed;
        received += rate;
        processed_cum += processed;

        let spike = if noise.spike[t] { SPIKE_BATCHES * b } else { 0.0 };
        let pt = (b * max_load + sigma * b * NORMAL_LOAD * z_pt + spike).max(0.0);
        pt_series.push(pt);
        sd_series.push(sd);

        row[0] = rate;
        row[1] = received;
        row[2] = processed_cum;
        row[3] = pt;
        row[4] = sd;
        let n_alive = alive.len().max(1) as f64;
        let mut mem_clean = vec![0.0; n];
        for i in 0..n {
            let zi = &z_node[3 * i..3 * i + 3];
            let off = 5 + 3 * i;
            if crashed[i] {
                row[off..off + 3].fill(f64::NAN);
                continue;
            }
            if zeroed_node == Some(i) {
                row[off..off + 3].fill(0.0);
                continue;
            }
            let load = if cap[i] > 0.0 {
                (rate / n_alive) / (cap[i] * node_rate)
            } else {
                0.0
            };
            let usage = load.min(1.0);
            mem_clean[i] = MEM_BASE_GB + MEM_BACKLOG_GB * (backlog / n_alive) / backlog_scale;
            row[off] = (100.0 * (1.0 - usage) + 40.0 * sigma * zi[0]).clamp(0.0, 100.0);
            row[off + 1] = (mem_clean[i] + 2.0 * sigma * zi[1]).max(0.0);
            row[off + 2] = (100.0 * (processed / n_alive) / r0 * (1.0 + sigma * zi[2])).max(0.0);
        }
        let heap = 1.0 + 0.5 * rate / r0 + 0.1 * backlog / (300.0 * r0);
        row[5 + 3 * n] = (heap * (1.0 + sigma * z_heap)).max(0.0);
        row[6 + 3 * n] = (20.0 * heap * (1.0 + sigma * z_gc)).max(0.0);

        sd = (sd + pt - b).max(0.0);

        if t2_active {
            for i in 0..n {
                if !crashed[i] && cap[i] > 0.0 && mem_clean[i] > mem_cap[i] {
                    crashed[i] = true;
                }
            }
            if crashed.iter().filter(|c| !**c).count() < min_alive {
                crash = Some(t + 1);
                break;
            }
        }
    }

    for v in values.iter_mut() {
        if v.is_finite() {
            *v = (*v * 1e4).round() / 1e4;
        }
    }
    let len = values.len() / m;
    Simulation {
        values,
        len,
        processing_time: pt_series,
        scheduling_delay: sd_series,
        crash,
    }
}

/// Trailing mean over at most `window` values ending at each index.
fn rolling_mean(xs: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for i in 0..xs.len() {
        acc += xs[i];
        if i >= window {
            acc -= xs[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Normal-band test for the metrics that end an extended effect.
struct Band<'a> {
    rolling: Vec<Vec<f64>>,
    low: Vec<f64>,
    high: Vec<f64>,
    _metrics: std::marker::PhantomData<&'a ()>,
}

impl<'a> Band<'a> {
    fn new(metrics: &[&'a [f64]], start: usize, factor: f64, floor: f64) -> Self {
        let lo = start.saturating_sub(BASELINE_SECONDS as usize);
        let mut band = Band {
            rolling: Vec::new(),
            low: Vec::new(),
            high: Vec::new(),
            _metrics: std::marker::PhantomData,
        };
        for m in metrics {
            // Median, so benign spikes in the window do not shift the baseline.
            let base = crate::stats::median(&m[lo..start]);
            band.rolling.push(rolling_mean(m, ROLLING_SECONDS));
            band.low.push(base / factor - floor);
            band.high.push(base * factor + floor);
        }
        band
    }

    fn inside(&self, t: usize) -> bool {
        self.rolling
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(r, (lo, hi))| r[t] >= *lo && r[t] <= *hi)
    }
}

/// EEI end index (exclusive), or `None` when the metrics are in band at the RCI end.
fn eei_end(band: &Band<'_>, rci_end: usize, len: usize) -> Option<usize> {
    if rci_end >= len || band.inside(rci_end) {
        return None;
    }
    let mut run = 0usize;
    let mut first_stable = None;
    // Scan backwards to get the in-band run length starting at each index.
    let mut runs = vec![0usize; len + 1];
    for t in (rci_end..len).rev() {
        run = if band.inside(t) { run + 1 } else { 0 };
        runs[t] = run;
    }
    for (t, &r) in runs.iter().enumerate().take(len).skip(rci_end + 1) {
        if r >= STABLE_SECONDS {
            first_stable = Some(t);
            break;
        }
    }
    Some(first_stable.unwrap_or(len))
}

fn label(
    config: &GeneratorConfig,
    sim: &Simulation,
    inj: &Resolved,
    trace_id: &str,
    app_id: u32,
) -> Result<GroundTruthEntry> {
    let len = sim.len;
    if inj.start >= len {
        return Err(Error::Rejected {
            trace_id: trace_id.into(),
            reason: format!(
                "{} at second {} falls after the application crash at {len}",
                inj.kind, inj.start
            ),
        });
    }
    let rci_end = match inj.kind {
        AnomalyType::T2 => sim.crash.unwrap_or(len),
        _ => (inj.start + inj.duration).min(len),
    };
    let b = config.batch_interval as f64;
    let floor = 0.05 * b;
    let pt = sim.processing_time.as_slice();
    let sd = sim.scheduling_delay.as_slice();
    let metrics: Vec<&[f64]> = match inj.kind {
        AnomalyType::T1 | AnomalyType::T4 => vec![pt, sd],
        AnomalyType::T3 => vec![pt],
        AnomalyType::T6 => vec![sd],
        AnomalyType::T2 | AnomalyType::T5 => vec![],
    };
    let eei = match inj.kind {
        AnomalyType::T2 => None,
        AnomalyType::T5 => {
            let restarted = inj.start + (T5_DOWN_SECONDS + 1 + T5_WARMUP_SECONDS) as usize;
            (restarted.min(len) > rci_end).then(|| restarted.min(len))
        }
        _ => {
            let band = Band::new(&metrics, inj.start, config.band_factor, floor);
            eei_end(&band, rci_end, len)
        }
    };
    let t0 = config.start_epoch;
    let entry = GroundTruthEntry {
        app_id,
        trace_id: trace_id.into(),
        anomaly_type: inj.kind,
        root_cause_start: t0 + inj.start as i64,
        root_cause_end: t0 + rci_end as i64,
        extended_effect_start: eei.map(|_| t0 + rci_end as i64),
        extended_effect_end: eei.map(|e| t0 + e as i64),
    };
    entry.validate()?;
    Ok(entry)
}

/// A generated trace together with everything needed to inject more anomalies.
#[derive(Debug, Clone)]
pub struct SyntheticTrace {
    pub trace: Trace,
    pub ground_truth: Vec<GroundTruthEntry>,
    config: GeneratorConfig,
    seed: u64,
    injections: Vec<Resolved>,
}

impl SyntheticTrace {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Executor node affected by the i-th injection (meaningful for T4 and T6).
    pub fn injected_node(&self, i: usize) -> Option<usize> {
        self.injections.get(i).map(|r| r.node)
    }

    fn build(
        config: &GeneratorConfig,
        seed: u64,
        trace_id: &str,
        app_id: u32,
        injections: Vec<Resolved>,
    ) -> Result<Self> {
        let noise = Noise::draw(config, seed);
        let sim = simulate(config, &noise, &injections);
        let mut ground_truth = injections
            .iter()
            .map(|inj| label(config, &sim, inj, trace_id, app_id))
            .collect::<Result<Vec<_>>>()?;
        ground_truth.sort_by_key(|e| e.root_cause_start);
        for w in ground_truth.windows(2) {
            if w[1].root_cause_start < w[0].anomaly_end() {
                return Err(Error::Rejected {
                    trace_id: trace_id.into(),
                    reason: format!(
                        "{} starting at {} overlaps {} spanning [{}, {})",
                        w[1].anomaly_type,
                        w[1].root_cause_start,
                        w[0].anomaly_type,
                        w[0].root_cause_start,
                        w[0].anomaly_end()
                    ),
                });
            }
        }
        let timestamps = (0..sim.len as i64).map(|i| config.start_epoch + i).collect();
        let trace = Trace::new(trace_id, app_id, timestamps, config.feature_names(), sim.values)?;
        Ok(SyntheticTrace {
            trace,
            ground_truth,
            config: config.clone(),
            seed,
            injections,
        })
    }

    /// Adds one anomaly and re-labels the trace.
    pub fn inject(&self, spec: &InjectionSpec, seed: u64) -> Result<(SyntheticTrace, GroundTruthEntry)> {
        let resolved = Resolved::from_spec(spec, &self.config, seed)?;
        let mut injections = self.injections.clone();
        injections.push(resolved.clone());
        let out = SyntheticTrace::build(
            &self.config,
            self.seed,
            &self.trace.trace_id,
            self.trace.app_id,
            injections,
        )?;
        let t0 = self.config.start_epoch;
        let entry = out
            .ground_truth
            .iter()
            .find(|e| e.anomaly_type == resolved.kind && e.root_cause_start == t0 + resolved.start as i64)
            .cloned()
            .expect("injected entry is labeled");
        Ok((out, entry))
    }
}

/// An undisturbed trace named `trace` with app id 0.
pub fn generate_normal(config: &GeneratorConfig, seed: u64) -> Result<SyntheticTrace> {
    generate_trace(config, seed, "trace", 0)
}

pub fn generate_trace(config: &GeneratorConfig, seed: u64, trace_id: &str, app_id: u32) -> Result<SyntheticTrace> {
    config.validate()?;
    SyntheticTrace::build(config, seed, trace_id, app_id, Vec::new())
}

pub fn inject(trace: &SyntheticTrace, spec: &InjectionSpec, seed: u64) -> Result<(SyntheticTrace, GroundTruthEntry)> {
    trace.inject(spec, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecipe {
    pub trace_id: String,
    pub app_id: u32,
    #[serde(default)]
    pub duration_seconds: Option<i64>,
    #[serde(default)]
    pub injections: Vec<InjectionSpec>,
}

/// Dataset description: generator defaults plus one entry per trace.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub traces: Vec<TraceRecipe>,
}

impl Recipe {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub traces: usize,
    pub disturbed_traces: usize,
    pub counts: BTreeMap<AnomalyType, usize>,
}

/// Builds every trace of the recipe in memory; nothing is written.
pub fn build_dataset(recipe: &Recipe) -> Result<(Vec<Trace>, GroundTruthTable)> {
    recipe.generator.validate()?;
    let mut seen = HashSet::new();
    for tr in &recipe.traces {
        let ok_name = !tr.trace_id.is_empty()
            && tr
                .trace_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if !ok_name || tr.trace_id.starts_with('.') {
            return Err(Error::Invalid(format!("bad trace id {:?}", tr.trace_id)));
        }
        if !seen.insert(&tr.trace_id) {
            return Err(Error::Invalid(format!("duplicate trace id {}", tr.trace_id)));
        }
    }
    let master = recipe.generator.seed;
    let built = recipe
        .traces
        .par_iter()
        .map(|tr| {
            let mut config = recipe.generator.clone();
            if let Some(d) = tr.duration_seconds {
                config.duration_seconds = d;
            }
            config.validate()?;
            let seed = derive_seed(master, "trace", &tr.trace_id);
            let mut injections = Vec::with_capacity(tr.injections.len());
            for (i, spec) in tr.injections.iter().enumerate() {
                let s = derive_seed(master, "inject", &format!("{}/{i}", tr.trace_id));
                injections.push(Resolved::from_spec(spec, &config, s).map_err(|e| match e {
                    Error::Invalid(reason) => Error::Rejected {
                        trace_id: tr.trace_id.clone(),
                        reason,
                    },
                    other => other,
                })?);
            }
            SyntheticTrace::build(&config, seed, &tr.trace_id, tr.app_id, injections)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = GroundTruthTable::default();
    let mut traces = Vec::with_capacity(built.len());
    for st in built {
        table.entries.extend(st.ground_truth);
        traces.push(st.trace);
    }
    Ok((traces, table))
}

/// Writes `<out>/app_<id>/<trace_id>.csv` per trace and `<out>/ground_truth.csv`.
pub fn generate_dataset(recipe: &Recipe, out_dir: &Path) -> Result<DatasetSummary> {
    let (traces, table) = build_dataset(recipe)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    traces.par_iter().try_for_each(|t| {
        let dir = out_dir.join(format!("app_{}", t.app_id));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        model::write_trace(&dir.join(format!("{}.csv", t.trace_id)), t)
    })?;
    model::write_ground_truth(&out_dir.join("ground_truth.csv"), &table)?;
    let mut counts: BTreeMap<AnomalyType, usize> = AnomalyType::ALL.iter().map(|&k| (k, 0)).collect();
    for e in &table.entries {
        *counts.entry(e.anomaly_type).or_default() += 1;
    }
    Ok(DatasetSummary {
        traces: traces.len(),
        disturbed_traces: traces.iter().filter(|t| table.is_disturbed(&t.trace_id)).count(),
        counts,
    })
}
