//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use adbench::ad_eval::{
    auprc, evaluate_level, evaluate_level_multi, AdLevel, Granularity, RangeSet, ScoredTrace, ThresholdGrid,
};
use adbench::datagen::{generate_dataset, generate_normal, GeneratorConfig, InjectionSpec, Recipe, TraceRecipe};
use adbench::detectors::{select_threshold, ThresholdMethod, ThresholdRule, DEFAULT_C_GRID, MAD_SCALE};
use adbench::ed_eval::{consistency_entropy, Consistency};
use adbench::explainers::{
    explain_exstream, explain_macrobase, ExplainerKind, ExstreamConfig, MacrobaseConfig, ReferencePair,
};
use adbench::model::{AnomalyRange, AnomalyType, Explanation, Predicate, PredictedRange};
use adbench::pipeline::{cmd_run, run, write_report_tables, RunConfig, RunOverrides, RunSummary};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Sorted disjoint ranges over `0..n` with random gaps and lengths.
fn random_spans(rng: &mut ChaCha8Rng, n: usize, max_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut pos = rng.random_range(0..=max_len);
    while pos < n {
        let len = rng.random_range(1..=max_len).min(n - pos);
        out.push((pos, pos + len));
        pos += len + rng.random_range(0..=2 * max_len);
    }
    out
}

fn real(spans: &[(usize, usize)]) -> Vec<AnomalyRange> {
    spans
        .iter()
        .map(|&(start, end)| AnomalyRange {
            start,
            end,
            anomaly_type: AnomalyType::T1,
        })
        .collect()
}

fn predicted(spans: &[(usize, usize)]) -> Vec<PredictedRange> {
    spans
        .iter()
        .map(|&(start, end)| PredictedRange { start, end })
        .collect()
}

fn c1_monotone_levels() -> Outcome {
    let started = Instant::now();
    let mut rng = adbench::seed::rng(1);
    let n_sets = 2000;
    for i in 0..n_sets {
        let n = rng.random_range(10..300);
        let (lr, lp) = (rng.random_range(1..30), rng.random_range(1..30));
        let r = real(&random_spans(&mut rng, n, lr));
        let p = predicted(&random_spans(&mut rng, n, lp));
        let s: Vec<_> = AdLevel::ALL.iter().map(|&l| evaluate_level(&r, &p, l)).collect();
        for w in s.windows(2) {
            ensure(
                w[0].recall >= w[1].recall && w[0].precision >= w[1].precision && w[0].f_score >= w[1].f_score,
                format!("set {i}: {:?} then {:?}", w[0], w[1]),
            )?;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.1} s"))?;
    Ok(format!("{n_sets} random range sets monotone in {secs:.2} s"))
}

fn c2_point_reduction() -> Outcome {
    let mut rng = adbench::seed::rng(2);
    for i in 0..500 {
        let n = rng.random_range(5..200);
        let pick = |rng: &mut ChaCha8Rng, p: f64| -> BTreeSet<usize> {
            loop {
                let s: BTreeSet<usize> = (0..n).filter(|_| rng.random_bool(p)).collect();
                if !s.is_empty() {
                    return s;
                }
            }
        };
        let pr = rng.random_range(0.05..0.6);
        let pp = rng.random_range(0.05..0.6);
        let r_pts = pick(&mut rng, pr);
        let p_pts = pick(&mut rng, pp);
        let hits = r_pts.intersection(&p_pts).count() as f64;
        let point_recall = hits / r_pts.len() as f64;
        let point_precision = hits / p_pts.len() as f64;
        let r = real(&r_pts.iter().map(|&t| (t, t + 1)).collect::<Vec<_>>());
        let p = predicted(&p_pts.iter().map(|&t| (t, t + 1)).collect::<Vec<_>>());
        let ad2 = evaluate_level(&r, &p, AdLevel::AD2);
        ensure(
            close(ad2.recall, point_recall, 1e-12),
            format!("instance {i}: AD2 recall {} vs {point_recall}", ad2.recall),
        )?;
        for level in [AdLevel::AD1, AdLevel::AD2, AdLevel::AD3] {
            let s = evaluate_level(&r, &p, level);
            ensure(
                close(s.precision, point_precision, 1e-12),
                format!("instance {i}: {level} precision {} vs {point_precision}", s.precision),
            )?;
        }
    }
    Ok("500 unit-length instances match point-based counts".into())
}

fn c3_front_bias_hand_value() -> Outcome {
    let r = real(&[(0, 10)]);
    // Front weights on [0,10) are 9..0; detecting [5,10) earns 4+3+2+1+0 out of
    // the best 9+8+7+6+5 for five positions, scaled by 5/10 coverage.
    let expected = 0.5 * 10.0 / 35.0;
    let late = evaluate_level(&r, &predicted(&[(5, 10)]), AdLevel::AD3).recall;
    ensure(close(late, expected, 1e-9), format!("late detection AD3 recall {late}"))?;
    ensure(close(late, 0.142857, 1e-6), format!("late detection AD3 recall {late}"))?;
    let early3 = evaluate_level(&r, &predicted(&[(0, 5)]), AdLevel::AD3).recall;
    let early2 = evaluate_level(&r, &predicted(&[(0, 5)]), AdLevel::AD2).recall;
    ensure(
        close(early3, 0.5, 1e-9) && close(early2, 0.5, 1e-9),
        format!("early AD3 {early3}, AD2 {early2}"),
    )?;
    Ok(format!("late AD3 recall {late:.9}; early AD3 = AD2 = {early3}"))
}

fn explanation_of(features: &[String]) -> Explanation {
    Explanation::from_predicates(
        features
            .iter()
            .map(|f| Predicate {
                feature: f.clone(),
                low: 0.0,
                high: 1.0,
            })
            .collect(),
    )
    .unwrap()
}

fn c4_entropy_constants() -> Outcome {
    let names: Vec<String> = (0..10).map(|j| format!("f{j}")).collect();
    let stated = [0.0, 1.0, 1.58];
    let mut got = Vec::new();
    for size in 1..=10 {
        let es = vec![explanation_of(&names[..size]); 5];
        let h = consistency_entropy(&es);
        ensure(
            close(h, (size as f64).log2(), 1e-12),
            format!("size {size}: entropy {h}"),
        )?;
        if size <= 3 {
            ensure(close(h, stated[size - 1], 0.005), format!("size {size}: entropy {h}"))?;
            got.push(h);
        }
        let c = Consistency::of(&es).map_err(|e| e.to_string())?;
        ensure(
            close(c.normalized, 1.0, 1e-9),
            format!("size {size}: normalized {}", c.normalized),
        )?;
    }
    Ok(format!(
        "H1/H2/H3 = {:.4}/{:.4}/{:.4}; normalized 1.0 for sizes 1..10",
        got[0], got[1], got[2]
    ))
}

fn c5_threshold_formulas() -> Outcome {
    ensure(MAD_SCALE == 1.4826, format!("MAD scale {MAD_SCALE}"))?;
    let rules = ThresholdRule::grid(&DEFAULT_C_GRID);
    let distinct: BTreeSet<String> = rules.iter().map(|r| r.label()).collect();
    ensure(
        rules.len() == 24 && distinct.len() == 24,
        format!("{} rules", rules.len()),
    )?;
    let mut rng = adbench::seed::rng(5);
    let scores: Vec<f64> = (0..500).map(|_| rng.random::<f64>().powi(3)).collect();
    let thresholds: Vec<f64> = rules
        .iter()
        .map(|r| select_threshold(&scores, r).map(|t| t.value))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(
        thresholds.len() == 24 && thresholds.iter().all(|t| t.is_finite()),
        "threshold grid",
    )?;
    let mad = select_threshold(
        &[1.0, 2.0, 3.0, 4.0, 5.0],
        &ThresholdRule::new(ThresholdMethod::Mad, 2.0, 1),
    )
    .map_err(|e| e.to_string())?
    .value;
    // median 3, median absolute deviation 1.
    ensure(
        close(mad, 3.0 + 2.0 * 1.4826, 1e-9) && close(mad, 5.9652, 1e-9),
        format!("MAD example {mad}"),
    )?;
    Ok(format!("24 thresholds; MAD example {mad:.4}"))
}

/// Step-interpolated area over every threshold, computed by enumeration.
fn brute_auprc(traces: &[(Vec<f64>, Vec<AnomalyRange>)], level: AdLevel) -> f64 {
    let mut thresholds: Vec<f64> = traces.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    thresholds.push(f64::NEG_INFINITY);
    let mut best: Vec<(f64, f64)> = Vec::new();
    for &thr in &thresholds {
        let preds: Vec<Vec<PredictedRange>> = traces
            .iter()
            .map(|(s, _)| {
                let mut out = Vec::new();
                let mut open: Option<usize> = None;
                for (i, &x) in s.iter().chain([f64::NEG_INFINITY].iter()).enumerate() {
                    match (x > thr, open) {
                        (true, None) => open = Some(i),
                        (false, Some(a)) => {
                            out.push(PredictedRange { start: a, end: i });
                            open = None;
                        }
                        _ => {}
                    }
                }
                out
            })
            .collect();
        let sets: Vec<RangeSet<'_>> = traces
            .iter()
            .zip(&preds)
            .map(|((_, r), p)| RangeSet { real: r, predicted: p })
            .collect();
        let s = evaluate_level_multi(&sets, level);
        best.push((s.recall, s.precision));
    }
    let recalls: BTreeSet<u64> = best.iter().map(|(r, _)| r.to_bits()).collect();
    let mut area = 0.0;
    let mut prev = 0.0;
    for bits in recalls {
        let r = f64::from_bits(bits);
        let p = best
            .iter()
            .filter(|(x, _)| *x == r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        if r > prev {
            area += (r - prev) * p;
            prev = r;
        }
    }
    area
}

fn c6_auprc_oracle() -> Outcome {
    let mut rng = adbench::seed::rng(6);
    let mut checked = 0;
    for i in 0..300 {
        let n_traces = rng.random_range(1..=3);
        let traces: Vec<(Vec<f64>, Vec<AnomalyRange>)> = (0..n_traces)
            .map(|_| {
                let n = rng.random_range(5..=50 / n_traces);
                // One decimal place so that ties occur.
                let scores = (0..n).map(|_| (rng.random::<f64>() * 10.0).round() / 10.0).collect();
                (scores, real(&random_spans(&mut rng, n, 6)))
            })
            .collect();
        if traces.iter().all(|(_, r)| r.is_empty()) {
            continue;
        }
        let scored: Vec<ScoredTrace<'_>> = traces
            .iter()
            .enumerate()
            .map(|(k, (s, r))| ScoredTrace {
                trace_id: "t",
                app_id: k as u32,
                scores: s,
                real: r,
            })
            .collect();
        for level in AdLevel::ALL {
            let got =
                auprc(&scored, level, Granularity::Global, ThresholdGrid::default()).map_err(|e| e.to_string())?;
            let want = brute_auprc(&traces, level);
            ensure(close(got, want, 1e-9), format!("instance {i} {level}: {got} vs {want}"))?;
        }
        checked += 1;
    }
    let r = real(&[(5, 12), (30, 31), (40, 48)]);
    let scores: Vec<f64> = (0..50)
        .map(|t| {
            if r.iter().any(|a| (a.start..a.end).contains(&t)) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let perfect = [ScoredTrace {
        trace_id: "p",
        app_id: 0,
        scores: &scores,
        real: &r,
    }];
    let a = auprc(&perfect, AdLevel::AD1, Granularity::Global, ThresholdGrid::default()).map_err(|e| e.to_string())?;
    ensure(a == 1.0, format!("perfect separator AD1 AUPRC {a}"))?;
    Ok(format!(
        "{checked} instances match brute force at all levels; perfect separator 1.0"
    ))
}

/// Shared synthetic dataset: 10 undisturbed and 6 disturbed traces of two hours.
struct Bench {
    dir: tempfile::TempDir,
}

impl Bench {
    fn new() -> Bench {
        let dir = tempfile::tempdir().unwrap();
        let mut traces: Vec<TraceRecipe> = (0..10)
            .map(|i| TraceRecipe {
                trace_id: format!("normal_{i}"),
                app_id: i % 2,
                duration_seconds: None,
                injections: vec![],
            })
            .collect();
        for (i, &kind) in AnomalyType::ALL.iter().enumerate() {
            traces.push(TraceRecipe {
                trace_id: format!("disturbed_{i}"),
                app_id: i as u32 % 2,
                duration_seconds: None,
                injections: vec![InjectionSpec::new(kind, 3600)],
            });
        }
        let recipe = Recipe {
            generator: GeneratorConfig {
                duration_seconds: 7200,
                seed: 7,
                ..GeneratorConfig::default()
            },
            traces,
        };
        generate_dataset(&recipe, &dir.path().join("data")).unwrap();
        Bench { dir }
    }

    fn config_json(&self, out: &str, explainer: Option<ExplainerKind>) -> serde_json::Value {
        let mut v = serde_json::json!({
            "dataset": {"dir": self.dir.path().join("data")},
            "resample_seconds": 15,
            "detector": {"kind": "reconstruct", "window": 8, "components": 3},
            "scaling": "training",
            "output_dir": self.dir.path().join(out),
            "seed": 1
        });
        if let Some(k) = explainer {
            v["explainer"] = serde_json::to_value(k).unwrap();
        }
        v
    }

    fn run(&self, out: &str, explainer: Option<ExplainerKind>) -> Result<RunSummary, String> {
        let cfg: RunConfig = serde_json::from_value(self.config_json(out, explainer)).map_err(|e| e.to_string())?;
        run(&cfg).map_err(|e| e.to_string())
    }
}

fn c7_end_to_end(bench: &Bench) -> Outcome {
    let started = Instant::now();
    let s = bench.run("c7", None)?;
    let secs = started.elapsed().as_secs_f64();
    let ad = &s.ad;
    let ad2 = ad
        .auprc_at(AdLevel::AD2)
        .and_then(|a| a.global)
        .ok_or("no global AD2 AUPRC")?;
    let ad1 = ad.median_threshold.report.level(AdLevel::AD1).ok_or("no AD1 report")?;
    let mut recalls = Vec::new();
    for t in [AnomalyType::T1, AnomalyType::T3, AnomalyType::T4] {
        let r = ad1.typewise_recall.get(&t).copied().ok_or(format!("no {t} recall"))?;
        ensure(r > 0.6, format!("{t} AD1 recall at the median threshold {r}"))?;
        recalls.push(format!("{t} {r:.2}"));
    }
    ensure(ad2 > 0.5, format!("global AD2 AUPRC {ad2:.3}"))?;
    ensure(secs < 300.0, format!("run took {secs:.0} s"))?;
    Ok(format!(
        "AD2 AUPRC {ad2:.3}; AD1 recall {}; {secs:.1} s",
        recalls.join(", ")
    ))
}

/// Reference and anomalous rows are a random split of one normal segment, so
/// only the shifted feature tells them apart.
fn one_feature_anomaly(case: u64) -> (ReferencePair, String) {
    let cfg = GeneratorConfig {
        duration_seconds: 900,
        seed: case,
        ..GeneratorConfig::default()
    };
    let trace = generate_normal(&cfg, case).unwrap().trace;
    let mut rng = adbench::seed::derived_rng(8, "one-feature", &case.to_string());
    let mut rows = trace.row_block(300..900);
    rows.shuffle(&mut rng);
    let reference = rows.split_off(120);
    let mut anomalous = rows;
    let spread = |j: usize| {
        let col = reference.iter().map(|r| r[j]);
        col.clone().fold(f64::NEG_INFINITY, f64::max) - col.fold(f64::INFINITY, f64::min)
    };
    let k = loop {
        let k = rng.random_range(0..trace.n_features());
        if spread(k) > 0.0 {
            break k;
        }
    };
    // Shift beyond the normal range by 2 to 4 times its width.
    let shift = rng.random_range(2.0..4.0) * spread(k);
    for r in &mut anomalous {
        r[k] += shift;
    }
    let name = trace.features()[k].clone();
    (
        ReferencePair::new(trace.features().to_vec(), anomalous, reference).unwrap(),
        name,
    )
}

fn c8_ground_truth_recovery() -> Outcome {
    let (mut ex, mut mb) = (0, 0);
    for case in 0..100 {
        let (pair, feature) = one_feature_anomaly(case);
        if explain_exstream(&pair, &ExstreamConfig::default()).is_ok_and(|e| e.feature_set.contains(&feature)) {
            ex += 1;
        }
        if explain_macrobase(&pair, &MacrobaseConfig::default()).is_ok_and(|e| e.feature_set.contains(&feature)) {
            mb += 1;
        }
    }
    ensure(ex >= 95 && mb >= 90, format!("EXstream {ex}/100, MacroBase {mb}/100"))?;
    Ok(format!("EXstream {ex}/100, MacroBase {mb}/100"))
}

fn c9_timing_order(bench: &Bench) -> Outcome {
    let mut means = Vec::new();
    for kind in [
        ExplainerKind::Exstream,
        ExplainerKind::Macrobase,
        ExplainerKind::Surrogate,
    ] {
        // Same output directory: the detector stages are reused from the cache.
        let s = bench.run("c9", Some(kind))?;
        let p3 = s
            .perf
            .p3_explanation_seconds
            .ok_or(format!("{kind:?}: no explanation time"))?;
        means.push((kind.as_str(), p3));
    }
    let report = means
        .iter()
        .map(|(k, t)| format!("{k} {:.3} ms", t * 1e3))
        .collect::<Vec<_>>()
        .join(" < ");
    ensure(
        means[0].1 < means[1].1 && means[1].1 < means[2].1,
        format!("order violated: {report}"),
    )?;
    Ok(report)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Drops the trailing wall-clock column of the explanation table.
fn without_time_column(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn c10_determinism(bench: &Bench) -> Outcome {
    let path = bench.dir.path().join("c10.json");
    std::fs::write(
        &path,
        bench.config_json("unused", Some(ExplainerKind::Macrobase)).to_string(),
    )
    .unwrap();
    let dirs = [bench.dir.path().join("c10a"), bench.dir.path().join("c10b")];
    for d in &dirs {
        let o = RunOverrides {
            output_dir: Some(d.clone()),
            ..RunOverrides::default()
        };
        cmd_run(&path, &o).map_err(|e| e.to_string())?;
        write_report_tables(d).map_err(|e| e.to_string())?;
    }
    let files = files_under(&dirs[0]);
    ensure(files == files_under(&dirs[1]), "different file sets")?;
    let mut compared = 0;
    for f in &files {
        let name = f.to_string_lossy();
        // Timings are measured, not computed.
        if name.ends_with("perf_report.json") || name.ends_with(".perf.json") {
            continue;
        }
        let (a, b) = (
            std::fs::read(dirs[0].join(f)).unwrap(),
            std::fs::read(dirs[1].join(f)).unwrap(),
        );
        let same = if name == "ed_table.csv" {
            without_time_column(&String::from_utf8_lossy(&a)) == without_time_column(&String::from_utf8_lossy(&b))
        } else {
            a == b
        };
        ensure(same, format!("{name} differs"))?;
        compared += 1;
    }
    Ok(format!("{compared} report and artifact files identical"))
}

fn perf_dataset(dir: &Path, seconds: i64) {
    let traces = (0..6)
        .map(|i| TraceRecipe {
            trace_id: format!("t{i}"),
            app_id: 0,
            duration_seconds: None,
            injections: if i >= 4 {
                vec![InjectionSpec::new(AnomalyType::T1, seconds / 2)]
            } else {
                vec![]
            },
        })
        .collect();
    let recipe = Recipe {
        generator: GeneratorConfig {
            duration_seconds: seconds,
            seed: 11,
            ..GeneratorConfig::default()
        },
        traces,
    };
    generate_dataset(&recipe, dir).unwrap();
}

fn c11_performance_reporting(bench: &Bench) -> Outcome {
    let perf: adbench::pipeline::PerfReport =
        serde_json::from_slice(&std::fs::read(bench.dir.path().join("c9/perf_report.json")).unwrap())
            .map_err(|e| e.to_string())?;
    ensure(perf.m_features > 0 && perf.alpha > 0.0, "M or alpha missing")?;
    ensure(
        perf.p1_fit_seconds > 0.0 && perf.p2_scoring_seconds > 0.0,
        "P1 or P2 missing",
    )?;
    ensure(perf.p3_explanation_seconds.is_some_and(|p| p > 0.0), "P3 missing")?;

    let mut p2 = Vec::new();
    for seconds in [7200, 14400] {
        let data = bench.dir.path().join(format!("perf_{seconds}"));
        perf_dataset(&data, seconds);
        let mut best = f64::INFINITY;
        let mut records = 0;
        for rep in 0..3 {
            let cfg: RunConfig = serde_json::from_value(serde_json::json!({
                "dataset": {"dir": data},
                "resample_seconds": 1,
                "detector": {"kind": "reconstruct", "window": 8, "components": 3},
                "output_dir": bench.dir.path().join(format!("perf_{seconds}_{rep}")),
                "seed": 1
            }))
            .map_err(|e| e.to_string())?;
            let s = run(&cfg).map_err(|e| e.to_string())?;
            best = best.min(s.perf.p2_scoring_seconds);
            records = s.perf.p2_records;
        }
        p2.push((records, best));
    }
    let ratio = p2[1].1 / p2[0].1;
    ensure(p2[1].0 == 2 * p2[0].0, format!("records {} vs {}", p2[0].0, p2[1].0))?;
    ensure(ratio <= 2.5, format!("P2 ratio {ratio:.2}"))?;
    Ok(format!(
        "M {} alpha {:.4}; P2 {:.1} ms -> {:.1} ms (x{ratio:.2}) for {} -> {} records",
        perf.m_features,
        perf.alpha,
        p2[0].1 * 1e3,
        p2[1].1 * 1e3,
        p2[0].0,
        p2[1].0
    ))
}

fn main() {
    let bench = Bench::new();
    let criteria: Vec<Criterion<'_>> = vec![
        ("AD-level monotonicity", Box::new(c1_monotone_levels)),
        ("point-reduction oracle", Box::new(c2_point_reduction)),
        ("AD3 hand value", Box::new(c3_front_bias_hand_value)),
        ("entropy constants", Box::new(c4_entropy_constants)),
        ("threshold formulas", Box::new(c5_threshold_formulas)),
        ("AUPRC oracle", Box::new(c6_auprc_oracle)),
        ("end-to-end synthetic detection", Box::new(|| c7_end_to_end(&bench))),
        ("ED ground-truth recovery", Box::new(c8_ground_truth_recovery)),
        ("ED timing order", Box::new(|| c9_timing_order(&bench))),
        ("determinism", Box::new(|| c10_determinism(&bench))),
        ("performance reporting", Box::new(|| c11_performance_reporting(&bench))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
