//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hevc_energy::benchgen::{self, GroundTruth, SynthSpec};
use hevc_energy::catalog::{FeatureCatalog, Variant};
use hevc_energy::cli;
use hevc_energy::dataset::Preset;
use hevc_energy::evaluation::{
    self, CvOptions, Grouping, PlotOptions, ReportFormat, ResidualRow, DEFAULT_SEED,
};
use hevc_energy::fitting::{self, DesignMatrix, FitOptions};
use hevc_energy::measurement::{self, MeasurementSet};
use hevc_energy::models::{Model, ModelKind};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

// pinned tolerances and budgets
const SOLVER_REL_TOL: f64 = 1e-6;
const SOLVER_SYSTEMS: usize = 100;
const RECOVERY_REL_TOL: f64 = 1e-6;
const NOISE_REL: f64 = 0.02;
const NOISE_CV_BOUND: f64 = 0.03;
const NOISE_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const T_9_EXPECTED: f64 = 2.821;
const T_9_TOL: f64 = 0.01;
const T_1_EXPECTED: f64 = 31.821;
const T_1_TOL: f64 = 0.05;
const T_CDF_TOL: f64 = 1e-9;
const STOPPING_SETS: usize = 100;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> Result<(), String> {
    check(elapsed < budget, format!("runtime {elapsed:.2?} exceeds {budget:?}"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn catalog_fidelity() -> Outcome {
    let start = Instant::now();
    let c = FeatureCatalog::canonical();
    let table = std::fs::read_to_string(fixtures().join("feature_table.csv")).map_err(|e| e.to_string())?;
    let totals: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("tick_totals.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let mut rows = 0;
    for (line, def) in table.lines().skip(1).zip(c.defs()) {
        let f: Vec<&str> = line.split(',').collect();
        let expect = (
            f[0],
            f[1] == "1",
            f[2].parse::<u16>().unwrap(),
            f[3].parse::<u16>().unwrap(),
            f[4].parse::<u8>().unwrap(),
            f[5],
            f[6] == "1",
            f[7] == "1",
        );
        let got = (
            def.label,
            def.has_depth,
            def.feature_id_lo,
            def.feature_id_hi,
            def.depth_count,
            def.category.as_str(),
            def.in_sm,
            def.in_em,
        );
        check(expect == got, format!("row {}: fixture {expect:?} vs catalog {got:?}", def.label))?;
        rows += 1;
    }
    check(rows == c.defs().len() && rows as u64 == totals["rows"].as_u64().unwrap(), format!("row count {rows}"))?;
    let pop = |v| c.selection_mask(v).iter().filter(|&&b| b).count() as u64;
    let (sm, em) = (pop(Variant::Sm), pop(Variant::Em));
    check(sm == totals["sm_slots"].as_u64().unwrap(), format!("SM popcount {sm}"))?;
    check(em == totals["em_slots"].as_u64().unwrap(), format!("EM popcount {em}"))?;
    check(c.slot_count() as u64 == totals["total_slots"].as_u64().unwrap(), "slot count")?;
    within_budget(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "{rows} rows tick-for-tick, SM {sm} / EM {em} slots (round figures {} / {} reconciled), {:.0?}",
        totals["stated_sm"], totals["stated_em"], start.elapsed()
    ))
}

fn solver_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let mut solved = 0;
    let mut worst: f64 = 0.0;
    let mut attempts = 0;
    while solved < SOLVER_SYSTEMS {
        attempts += 1;
        check(attempts < 10 * SOLVER_SYSTEMS, "too many systems with active bounds")?;
        let n = rng.gen_range(1..=20);
        let m = rng.gen_range(n.max(2)..=200);
        let x: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() * (1.0 + rng.gen_range(-0.05..0.05)))
            .collect();
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..10.0)).collect();
        let design = DesignMatrix::new(DMatrix::from_fn(m, n, |i, j| x[i][j]), y.clone(), w.clone()).map_err(|e| e.to_string())?;
        let bounds = vec![Some(0.0); n];
        let fit = fitting::solve_bounded_ls(&design, Some(&bounds)).map_err(|e| e.to_string())?;
        if !fit.active_bounds.is_empty() {
            continue;
        }
        let oracle = benchgen::oracle_wls(&x, &y, &w).map_err(|e| e.to_string())?;
        for (a, b) in fit.coeffs.iter().zip(&oracle) {
            let rel = (a - b).abs() / b.abs();
            worst = worst.max(rel);
            check(rel <= SOLVER_REL_TOL, format!("system {solved} ({m}x{n}): {a} vs oracle {b}"))?;
        }
        solved += 1;
    }
    within_budget(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{solved} systems, worst relative deviation {worst:.1e} <= {SOLVER_REL_TOL:e}, {:.0?}", start.elapsed()))
}

fn noiseless_recovery() -> Outcome {
    let start = Instant::now();
    let c = FeatureCatalog::canonical();
    let mut parts = Vec::new();
    for variant in [Variant::Sm, Variant::Em] {
        let spec = SynthSpec::reference(variant, DEFAULT_SEED, c).with_noise(0.0);
        let ds = benchgen::generate(&spec, c).map_err(|e| e.to_string())?;
        check(ds.len() == 792, format!("corpus has {} records", ds.len()))?;
        let truth = GroundTruth::from_spec(&spec, c).values(c).map_err(|e| e.to_string())?;
        let fitted = fitting::fit(&ds, variant.into(), None, FitOptions::default(), c).map_err(|e| e.to_string())?;
        let Model::Feature(m) = fitted.model else { return Err("not a feature model".into()) };
        let slots = c.selected_slots(variant);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for (i, (&got, &want)) in m.coeffs.iter().zip(&truth).enumerate() {
            if m.unidentifiable.contains(&slots[i]) {
                continue;
            }
            let rel = (got - want).abs() / want.abs();
            worst = worst.max(rel);
            check(rel <= RECOVERY_REL_TOL, format!("{variant} {}: {got} vs {want}", c.slot_name(slots[i])))?;
            checked += 1;
        }
        parts.push(format!("{variant} {checked}/{} coefficients (worst {worst:.1e})", truth.len()));
    }
    within_budget(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{}, {:.0?}", parts.join(", "), start.elapsed()))
}

fn noise_floor_cv() -> Outcome {
    let start = Instant::now();
    let c = FeatureCatalog::canonical();
    let opts = CvOptions { grouping: Grouping::PerPreset, ..CvOptions::default() };
    let mut worst: f64 = 0.0;
    for seed in NOISE_SEEDS {
        let ds = benchgen::generate(&SynthSpec::reference(Variant::Sm, seed, c).with_noise(NOISE_REL), c).map_err(|e| e.to_string())?;
        let r = evaluation::cross_validate(&ds, ModelKind::Sm, opts, c).map_err(|e| e.to_string())?;
        check(r.per_preset.len() == 9, "missing preset rows")?;
        for (p, &e) in &r.per_preset {
            worst = worst.max(e);
            check(e <= NOISE_CV_BOUND, format!("seed {seed}, {p}: mean |eps| {e}"))?;
        }
    }
    within_budget(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{} seeds x 9 presets, worst per-preset mean |eps| {:.2}% <= {:.0}%, {:.1?}",
        NOISE_SEEDS.len(),
        100.0 * worst,
        100.0 * NOISE_CV_BOUND,
        start.elapsed()
    ))
}

fn metric_hand_checks() -> Outcome {
    let e = |a, b| evaluation::relative_error(a, b).map_err(|e| e.to_string());
    check(e(110.0, 100.0)? == 0.10, "(110, 100)")?;
    check(e(90.0, 100.0)? == -0.10, "(90, 100)")?;
    check(e(7.5, 7.5)? == 0.0, "(E, E)")?;
    let row = |eps| ResidualRow {
        key: "Cactus/medium/23".into(),
        preset: Preset::Medium,
        grouping: Grouping::PerPreset,
        fold: 0,
        model_held_out: 0,
        measured: 1.0,
        estimated: 1.0 + eps,
        eps,
    };
    let mae = |v: &[f64]| evaluation::mean_abs_error(&v.iter().map(|&x| row(x)).collect::<Vec<_>>()).map_err(|e| e.to_string());
    check(mae(&[0.1, -0.1])? == 0.10, "{+0.1, -0.1}")?;
    check(mae(&[0.0])? == 0.0, "{0}")?;
    check(mae(&[0.02, 0.04, 0.06])? == 0.04, "{0.02, 0.04, 0.06}")?;
    check(evaluation::mean_abs_error(&[]).is_err(), "empty input accepted")?;
    Ok("+0.10, -0.10, 0, 0.10, 0, 0.04 exact".into())
}

fn student_t() -> Outcome {
    let t9 = measurement::t_critical(0.99, 9).map_err(|e| e.to_string())?;
    let t1 = measurement::t_critical(0.99, 1).map_err(|e| e.to_string())?;
    check((t9 - T_9_EXPECTED).abs() < T_9_TOL, format!("t(0.99, 9) = {t9}"))?;
    check((t1 - T_1_EXPECTED).abs() < T_1_TOL, format!("t(0.99, 1) = {t1}"))?;
    for (df, t) in [(9.0, t9), (1.0, t1)] {
        let d = StudentsT::new(0.0, 1.0, df).unwrap();
        let p = d.cdf(t);
        check((p - 0.99).abs() < T_CDF_TOL, format!("reference CDF at t(0.99, {df}) = {p}"))?;
        let inv = d.inverse_cdf(0.99);
        check((inv - t).abs() < 1e-6 * t, format!("reference inverse {inv} vs {t}"))?;
    }
    Ok(format!("t(0.99,9) = {t9:.4}, t(0.99,1) = {t1:.3}, reference CDF within {T_CDF_TOL:e}"))
}

fn stopping_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5709);
    for _ in 0..STOPPING_SETS {
        let n = rng.gen_range(2..=20);
        let v = rng.gen_range(1e-3..1e6);
        let verdict = measurement::confidence_check(&MeasurementSet::new(vec![v; n])).map_err(|e| e.to_string())?;
        check(verdict.satisfied && verdict.lhs == 0.0, format!("zero variance set of {n} x {v} rejected"))?;
    }
    let mut flips = 0;
    let mut satisfied = 0;
    for _ in 0..STOPPING_SETS {
        let n = rng.gen_range(2..=20);
        let base = rng.gen_range(10.0..1000.0);
        let spread = rng.gen_range(0.0..0.03);
        let values: Vec<f64> = (0..n).map(|_| base * (1.0 + rng.gen_range(-spread..=spread))).collect();
        let scale = 10f64.powf(rng.gen_range(-6.0..6.0));
        let a = measurement::confidence_check(&MeasurementSet::new(values.clone())).map_err(|e| e.to_string())?;
        let b = measurement::confidence_check(&MeasurementSet::new(values.iter().map(|x| x * scale).collect()))
            .map_err(|e| e.to_string())?;
        satisfied += a.satisfied as usize;
        if a.satisfied != b.satisfied {
            flips += 1;
        }
    }
    check(flips == 0, format!("{flips} verdicts changed under scaling"))?;
    check(satisfied > 0 && satisfied < STOPPING_SETS, format!("degenerate sample: {satisfied} satisfied"))?;
    Ok(format!("{STOPPING_SETS} zero-variance sets satisfied, {STOPPING_SETS} scaled sets unchanged ({satisfied} satisfied)"))
}

fn report_shape() -> Outcome {
    let c = FeatureCatalog::canonical();
    let ds = benchgen::generate(&SynthSpec::reference(Variant::Sm, 7, c), c).map_err(|e| e.to_string())?;
    let reports = ModelKind::ALL
        .iter()
        .map(|&k| evaluation::cross_validate(&ds, k, CvOptions::default(), c))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let plot = PlotOptions { sequence: Some("Cactus".into()), crf: None, kind: None };
    let text = evaluation::render_report(&reports, ReportFormat::Text, &plot).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    let body: Vec<&str> = lines[1..lines.len() - 1].to_vec();
    check(body.len() == 11, format!("{} table rows", body.len()))?;
    for (line, p) in body.iter().zip(Preset::ALL) {
        check(line.starts_with(p.as_str()), format!("row '{line}' should be {p}"))?;
    }
    check(body[9].starts_with("average"), "average row")?;
    check(body[10].starts_with("all presets"), "all presets row")?;
    let delimited = evaluation::render_report(&reports, ReportFormat::Delimited, &plot).map_err(|e| e.to_string())?;
    let parsed = evaluation::parse_delimited(&delimited).map_err(|e| e.to_string())?;
    check(parsed == evaluation::DelimitedReport::from_reports(&reports), "delimited export does not round-trip")?;
    for ((label, vals), line) in parsed.rows.iter().zip(&body) {
        let min = vals.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let flagged: Vec<usize> = line.split_whitespace().filter(|c| c.ends_with('%') || c.ends_with("%*")).enumerate().filter(|(_, c)| c.ends_with('*')).map(|(i, _)| i).collect();
        let minima: Vec<usize> = vals.iter().enumerate().filter(|(_, v)| **v == Some(min)).map(|(i, _)| i).collect();
        check(!flagged.is_empty() && flagged == minima, format!("row {label}: flagged {flagged:?}, minima {minima:?}"))?;
    }
    Ok("9 presets + average + all presets, row minima flagged, delimited export round-trips exactly".into())
}

fn run_pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let d = dir.to_str().unwrap();
    let steps: Vec<Vec<String>> = [
        "synth --variant sm --seed 99 --truth {d}/truth.json -o {d}/ds.json",
        "fit --dataset {d}/ds.json --kind sm -o {d}/sm.json",
        "predict --dataset {d}/ds.json --model {d}/sm.json -o {d}/pred.csv",
        "crossval --dataset {d}/ds.json --kind qp,t,uf,em,sm -o {d}/cv.json",
        "report --input {d}/cv.json -o {d}/report.txt",
        "report --input {d}/cv.json --format delimited -o {d}/report.csv",
        "report --input {d}/cv.json --format plot-data -o {d}/plot.csv",
    ]
    .iter()
    .map(|s| std::iter::once("hevc-energy".to_string()).chain(s.replace("{d}", d).split(' ').map(String::from)).collect())
    .collect();
    for args in steps {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = cli::run(&args, &mut out, &mut err);
        if code != 0 {
            return Err(format!("{}: exit {code}: {}", args[1], String::from_utf8_lossy(&err)));
        }
    }
    ["truth.json", "ds.json", "sm.json", "pred.csv", "cv.json", "report.txt", "report.csv", "plot.csv"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map(|b| (f.to_string(), b)).map_err(|e| e.to_string()))
        .collect()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(a.path())?;
    let rb = run_pipeline(b.path())?;
    for ((name, x), (_, y)) in ra.iter().zip(&rb) {
        // model files record the dataset hash, never paths, so every file must match
        check(x == y, format!("{name} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical across two synth/fit/crossval/report runs", ra.len()))
}

fn non_reproducibility_statement() -> Outcome {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for f in ["README.md", "docs/reference_results.md"] {
        let text = std::fs::read_to_string(root.join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(text.contains("4.88%") && text.contains("13.56%"), format!("{f} lacks the reference values"))?;
        check(text.to_lowercase().contains("not reproducible"), format!("{f} lacks the reproducibility statement"))?;
    }
    Ok("reference values documented as not reproducible in README.md and docs/reference_results.md".into())
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("non-reproducibility statement", non_reproducibility_statement),
        ("catalog fidelity", catalog_fidelity),
        ("solver-oracle equivalence", solver_oracle),
        ("noiseless recovery", noiseless_recovery),
        ("noise-floor cross-validation", noise_floor_cv),
        ("metric hand-checks", metric_hand_checks),
        ("student-t quantiles", student_t),
        ("stopping rule", stopping_rule),
        ("report shape", report_shape),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

