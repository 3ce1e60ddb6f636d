use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hevc-energy")).args(args).current_dir(dir).output().unwrap()
}

fn error_json(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not a JSON error report: {err}"))
}

#[test]
fn help_lists_defaults_and_exits_zero() {
    let d = tempfile::tempdir().unwrap();
    let o = bin(&["crossval", "--help"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("[default: 10]"));
    assert!(s.contains("[default: 20221107]"));
    let o = bin(&["--help"], d.path());
    assert_eq!(o.status.code(), Some(0));
    for sub in ["ingest", "fit", "crossval", "predict", "report", "synth", "measure-reduce", "catalog"] {
        assert!(String::from_utf8_lossy(&o.stdout).contains(sub), "{sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["frobnicate"], d.path()).status.code(), Some(1));
    assert_eq!(bin(&["fit"], d.path()).status.code(), Some(1));
    let o = bin(&["synth", "--variant", "XM"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"]["class"], "usage");
}

#[test]
fn data_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.json"), "{\"catalog_version\":\"other/9\",\"records\":[]}").unwrap();
    let o = bin(&["fit", "--dataset", "bad.json"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&o);
    assert_eq!(e["error"]["class"], "data");
    assert_eq!(e["error"]["tag"], "version_mismatch");
    let o = bin(&["fit", "--dataset", "missing.json"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_three() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert!(bin(&["synth", "--noise", "0", "-o", "ds.json"], p).status.success());
    assert!(bin(&["fit", "--dataset", "ds.json", "--kind", "t", "-o", "t.json"], p).status.success());
    // a slope near f64::MAX overflows every estimate
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("t.json")).unwrap()).unwrap();
    m["coeffs"]["p"] = serde_json::json!(1e308);
    fs::write(p.join("t.json"), m.to_string()).unwrap();
    let o = bin(&["predict", "--dataset", "ds.json", "--model", "t.json"], p);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_json(&o)["error"]["class"], "numerical");
}

#[test]
fn pipeline_synth_fit_predict_crossval_report() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let ok = |args: &[&str]| {
        let o = bin(args, p);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(&["synth", "--variant", "em", "--noise", "0", "--seed", "4", "--truth", "truth.json", "-o", "ds.json"]);
    ok(&["fit", "--dataset", "ds.json", "--kind", "em", "-o", "em.json"]);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("em.json")).unwrap()).unwrap();
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("truth.json")).unwrap()).unwrap();
    for (name, t) in truth["coeffs"].as_object().unwrap() {
        let (t, m) = (t.as_f64().unwrap(), model["coeffs"][name].as_f64().unwrap());
        assert!((m - t).abs() <= 1e-6 * t.abs(), "{name}: {m} vs {t}");
    }
    let o = ok(&["predict", "--dataset", "ds.json", "--model", "em.json"]);
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 793);
    for l in out.lines().skip(1) {
        let f: Vec<f64> = l.split(',').skip(3).map(|x| x.parse().unwrap()).collect();
        assert!((f[0] - f[1]).abs() <= 1e-6 * f[1]);
    }
    ok(&["crossval", "--dataset", "ds.json", "--kind", "qp,t,uf,em,sm", "--k", "5", "-o", "cv.json"]);
    let text = String::from_utf8(ok(&["report", "--input", "cv.json"]).stdout).unwrap();
    assert!(text.contains("average") && text.contains("all presets"));
    let delim = String::from_utf8(ok(&["report", "--input", "cv.json", "--format", "delimited"]).stdout).unwrap();
    assert!(delim.starts_with("preset,QP,T,UF,EM,SM"));
    let plot = String::from_utf8(ok(&["report", "--input", "cv.json", "--format", "plot-data"]).stdout).unwrap();
    assert_eq!(plot.lines().count(), 10);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("cfg.toml"), "seed = 11\nnoise = 0.0\nvariant = \"em\"\n").unwrap();
    assert!(bin(&["synth", "--config", "cfg.toml", "--truth", "a.json", "-o", "a.ds"], p).status.success());
    assert!(bin(&["synth", "--config", "cfg.toml", "--seed", "12", "--truth", "b.json", "-o", "b.ds"], p).status.success());
    let a: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("a.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("b.json")).unwrap()).unwrap();
    assert_eq!((a["seed"].as_u64(), a["variant"].as_str()), (Some(11), Some("EM")));
    assert_eq!(b["seed"].as_u64(), Some(12));
    fs::write(p.join("bad.toml"), "sed = 1\n").unwrap();
    assert_eq!(bin(&["synth", "--config", "bad.toml"], p).status.code(), Some(1));
}

#[test]
fn ingest_joins_tables_and_reports_orphans() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("f.csv"), "sequence_name,preset,crf,E0,Islice,PBslice\nCactus,medium,23,1,1,63\nCactus,medium,28,1,1,63\n").unwrap();
    fs::write(p.join("m.csv"), "sequence_name,preset,crf,energy_j\nCactus,medium,23,1500.5\nJohnny,medium,23,900\n").unwrap();
    let o = bin(&["ingest", "--features", "f.csv", "--measurements", "m.csv", "-o", "ds.json"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Cactus/medium/28"));
    assert!(err.contains("Johnny/medium/23"));
    assert!(err.contains("1 records"));
    fs::write(p.join("m2.csv"), "sequence_name,preset,crf,energy_j\nCactus,medium,23,abc\n").unwrap();
    let o = bin(&["ingest", "--features", "f.csv", "--measurements", "m2.csv"], p);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["tag"], "parse");
}

#[test]
fn measure_reduce_integrates_and_checks() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    // 10 s at 60 W total vs 10 W idle -> 500 J
    let trace = |w: f64| (0..=10).map(|t| format!("{t},{w}\n")).collect::<String>();
    fs::write(p.join("idle.csv"), trace(10.0)).unwrap();
    fs::write(p.join("t1.csv"), trace(60.0)).unwrap();
    fs::write(p.join("t2.csv"), trace(60.01)).unwrap();
    fs::write(
        p.join("manifest.csv"),
        "sequence_name,preset,crf,total,idle\n\
         Cactus,slow,23,t1.csv,idle.csv\nCactus,slow,23,t2.csv,idle.csv\n\
         Cactus,slow,23,t1.csv,idle.csv\nCactus,slow,23,t2.csv,idle.csv\n\
         Cactus,fast,23,t1.csv,idle.csv\n",
    )
    .unwrap();
    let o = bin(&["measure-reduce", "--manifest", "manifest.csv", "--verdicts", "v.csv"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let row = out.lines().find(|l| l.starts_with("Cactus,slow,23")).unwrap();
    let e: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((e - 500.05).abs() < 1e-9);
    let v = fs::read_to_string(p.join("v.csv")).unwrap();
    assert!(v.lines().any(|l| l.starts_with("Cactus,slow,23,4,") && l.ends_with(",true")));
    assert!(v.lines().any(|l| l.starts_with("Cactus,fast,23,1,") && l.ends_with(",false")));
}

#[test]
fn catalog_export_is_json() {
    let d = tempfile::tempdir().unwrap();
    let o = bin(&["catalog"], d.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["slots"].as_array().unwrap().len(), 114);
}
