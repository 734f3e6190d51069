use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn geodreg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geodreg")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = geodreg(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
#[allow(clippy::approx_constant)]
fn tune_prints_table_one_constants() {
    let dir = tempfile::tempdir().unwrap();
    let v: Value = serde_json::from_str(&ok(&["tune", "--dim", "2"], dir.path())).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert!((v["xi"].as_f64().unwrap() - 1.17741).abs() < 1e-4);
    assert!((v["c_huber"].as_f64().unwrap() - 1.50114).abs() < 1e-4);
    assert!((v["c_tukey"].as_f64().unwrap() - 5.12299).abs() < 1e-4);
    assert!((v["are_l1"].as_f64().unwrap() - 0.78540).abs() < 1e-4);

    let v: Value = serde_json::from_str(&ok(&["tune", "--dim", "96", "--estimator", "tukey"], dir.path())).unwrap();
    assert!((v["c_tukey"].as_f64().unwrap() - 14.723).abs() < 1e-3);
    assert!(v.get("c_huber").is_none());

    // L1 already beats 95% at n = 96, so a Huber cutoff cannot reach it.
    let out = geodreg(&["tune", "--dim", "96", "--estimator", "huber"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not attainable"));
    let v: Value = serde_json::from_str(&ok(&["tune", "--dim", "96"], dir.path())).unwrap();
    assert!(v["c_huber"].is_null());
}

#[test]
fn sample_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args =
        ["--seed", "7", "sample", "--manifold", "hyperbolic", "--dim", "2", "--sigma", "0.2", "--n-samples", "400"];
    ok(&[&args[..], &["--out", "a.csv"]].concat(), d);
    ok(&[&args[..], &["--out", "b.csv"]].concat(), d);
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("#manifold=hyperbolic:2,schema_version=1\ny1,y2,y3\n"));
    assert_eq!(text.lines().count(), 402);
    for line in text.lines().skip(2) {
        let y: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((y[0] * y[0] - y[1] * y[1] - y[2] * y[2] - 1.0).abs() < 1e-9);
    }

    ok(&["fit", "--data", "a.csv", "--loss", "huber", "--out", "fit.json"], d);
    let fit = json_file(&d.join("fit.json"));
    assert_eq!(fit["schema_version"], 1);
    assert_eq!(fit["manifold"], "hyperbolic:2");
    assert_eq!(fit["loss"], "huber");
    assert!(fit["converged"].as_bool().unwrap());
    assert!(fit["cutoff"].as_f64().unwrap() > 0.0);
    assert!(!fit["trace"].as_array().unwrap().is_empty());
    // 400 draws around the base point: the location estimate is close to it.
    let p: Vec<f64> = fit["model"]["p"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(p[0] - 1.0 < 0.01, "{p:?}");

    let out = geodreg(&["fit", "--data", "a.csv", "--manifold", "sphere:2"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("declares"));
}

#[test]
fn fit_with_a_covariate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("x1,y1,y2,y3\n");
    for i in 0..9 {
        let t = -0.4 + 0.1 * i as f64;
        csv.push_str(&format!("{},{},{},0\n", t, t.cos(), t.sin()));
    }
    std::fs::write(d.join("arc.csv"), csv).unwrap();
    ok(&["fit", "--manifold", "sphere:2", "--loss", "l1", "--data", "arc.csv", "--out", "fit.json"], d);
    let fit = json_file(&d.join("fit.json"));
    let v = &fit["uncentered_model"]["v"][0];
    assert!((v[1].as_f64().unwrap() - 1.0).abs() < 1e-6, "{v}");
    let p = &fit["uncentered_model"]["p"];
    assert!((p[0].as_f64().unwrap() - 1.0).abs() < 1e-6, "{p}");

    let out = geodreg(&["fit", "--data", "arc.csv"], d);
    assert!(!out.status.success());
    let out = geodreg(&["fit", "--manifold", "sphere:2", "--loss", "l3", "--data", "arc.csv"], d);
    assert!(!out.status.success());
}

#[test]
fn simulate_mse_from_config_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec =
        r#"{"manifold":"sphere:2","noise":{"type":"normal","sigma":0.3},"sample_sizes":[8,16],"trials":4,"seed":1}"#;
    std::fs::write(d.join("spec.json"), spec).unwrap();
    let a = ok(&["simulate", "mse", "--config", "spec.json"], d);
    assert_eq!(a, ok(&["simulate", "mse", "--config", "spec.json"], d));
    assert_ne!(a, ok(&["--seed", "2", "simulate", "mse", "--config", "spec.json"], d));
    assert!(a.starts_with("schema_version,manifold,noise,loss,n,trials_ok,failures,not_converged,mse_p,mse_v1\n"));
    assert_eq!(a.lines().count(), 9);
    assert!(a.lines().skip(1).all(|l| l.starts_with("1,sphere:2,N,")));

    ok(
        &[
            "simulate",
            "mse",
            "--manifold",
            "hyperbolic:2",
            "--noise",
            "T",
            "--trials",
            "2",
            "--out",
            "t.csv",
            "--failures",
            "f.csv",
        ],
        d,
    );
    let t = std::fs::read_to_string(d.join("t.csv")).unwrap();
    // N = 4..64 by default, four losses each.
    assert_eq!(t.lines().count(), 1 + 5 * 4);
    assert!(std::fs::read_to_string(d.join("f.csv")).unwrap().starts_with("schema_version,n,trial,loss,message"));

    assert!(!geodreg(&["simulate", "mse", "--manifold", "sphere:2"], d).status.success());
    std::fs::write(d.join("bad.json"), r#"{"manifold":"sphere:2"}"#).unwrap();
    assert!(!geodreg(&["simulate", "mse", "--config", "bad.json"], d).status.success());
}

#[test]
fn simulate_efficiency_writes_one_row_per_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &["simulate", "efficiency", "--manifold", "sphere:2", "--sigmas", "0.1,0.2", "--n", "16", "--trials", "4"],
        dir.path(),
    );
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].ends_with("ratio_l1,ratio_huber,ratio_tukey"));
    assert!(lines[1].starts_with("1,sphere:2,0.1,16,4,0,"));
    assert!(!geodreg(&["simulate", "efficiency", "--manifold", "kendall:4"], dir.path()).status.success());
}

#[test]
fn shapes_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--seed", "3", "shapes", "synthetic", "--landmarks", "12", "--subjects", "40", "--out", "sh.csv"], d);
    let text = std::fs::read_to_string(d.join("sh.csv")).unwrap();
    assert!(text.starts_with("age,x1,y1,"));
    assert_eq!(text.lines().count(), 41);

    ok(&["shapes", "fit", "--data", "sh.csv", "--tamper-indices", "0,5,9,20,33", "--out", "r.json"], d);
    let r = json_file(&d.join("r.json"));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["manifold"], "kendall:12");
    assert_eq!(r["tampered_indices"], serde_json::json!([0, 5, 9, 20, 33]));
    let cmp = |label: &str| {
        r["comparisons"].as_array().unwrap().iter().find(|c| c["label"] == label).unwrap()["d_p"].as_f64().unwrap()
    };
    assert!(cmp("l2_tampered") > cmp("tukey_tampered"));
    assert_eq!(r["sequences"][0]["ages"].as_array().unwrap().len(), 10);

    let out = geodreg(&["shapes", "fit", "--data", "sh.csv", "--tamper-indices", "40"], d);
    assert!(!out.status.success());
    std::fs::write(d.join("bad.csv"), "age,x1,y1\n1,2,3\n").unwrap();
    assert!(!geodreg(&["shapes", "fit", "--data", "bad.csv"], d).status.success());
}
