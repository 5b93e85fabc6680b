mod common;

use common::*;
use serde_json::Value;

fn schema_of(cmd: &str) -> Value {
    let o = run(&["schema", cmd, "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn json_of(args: &[&str]) -> Value {
    let mut a = args.to_vec();
    a.extend(["--format", "json"]);
    let o = run(&a);
    assert!(o.status.success(), "{:?}: {}", args, stderr(&o));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn validator_rejects_bad_documents() {
    let s = schema_of("test");
    assert!(validate(&s, &serde_json::json!({"tau": 0.5})).is_err());
    let fit = schema_of("fit");
    let bad = serde_json::json!({"tau": 1.5, "n": 3, "coefficients": [], "objective": 0.0, "iterations": 1});
    assert!(validate(&fit, &bad).is_err());
}

#[test]
fn data_commands_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_linear_csv(dir.path(), 120, 5);
    let input = csv.to_str().unwrap();
    let base = ["--input", input, "--response", "y", "--tau", "0.5"];

    let fit = json_of(&[&["fit"], &base[..]].concat());
    validate(&schema_of("fit"), &fit).unwrap();
    let coefs = fit["coefficients"].as_array().unwrap();
    assert_eq!(coefs.len(), 7);
    assert_eq!(coefs[0]["name"], "(intercept)");
    assert!((coefs[1]["estimate"].as_f64().unwrap() - 2.0).abs() < 0.5);

    let t = json_of(&[&["test"], &base[..], &["--partition", "d,e,f"]].concat());
    validate(&schema_of("test"), &t).unwrap();
    assert_eq!(t["dof"], 3);
    assert_eq!(t["restricted"], serde_json::json!(["d", "e", "f"]));

    let same = json_of(&[&["test"], &base[..], &["--p2", "3"]].concat());
    assert_eq!(same["statistic"], t["statistic"]);

    let s = json_of(&[&["shrink"], &base[..], &["--p2", "3"]].concat());
    validate(&schema_of("shrink"), &s).unwrap();
    assert_eq!(s["estimators"].as_array().unwrap().len(), 5);

    let p = json_of(&[&["path"], &base[..], &["--nlambda", "8"]].concat());
    validate(&schema_of("path"), &p).unwrap();
    assert_eq!(p["lambdas"].as_array().unwrap().len(), 8);
    // the largest lambda zeroes every slope
    let first = p["betas"][0].as_array().unwrap();
    assert!(first[1..].iter().all(|b| b.as_f64().unwrap().abs() < 1e-6));
}

#[test]
fn csv_outputs_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_linear_csv(dir.path(), 80, 9);
    let input = csv.to_str().unwrap();
    let o = run(&["fit", "--input", input, "--response", "y", "--tau", "0.25", "--format", "csv", "--no-intercept"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "name,estimate");
    assert_eq!(lines.len(), 7);

    let o = run(&["path", "--input", input, "--response", "y", "--tau", "0.5", "--alpha", "0.5", "--nlambda", "4", "--format", "csv"]);
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), "lambda,(intercept),a,b,c,d,e,f");
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn risk_curve_grid_and_schema() {
    let o = run(&["risk-curve", "--p1", "3", "--p2", "5", "--grid", "0:10:0.25", "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), "delta,estimator,bias_norm,qb,risk");
    assert_eq!(text.lines().count(), 1 + 41 * 5);
    let j = json_of(&["risk-curve", "--p1", "3", "--p2", "5", "--grid", "0,1,4", "--formula", "as-printed"]);
    validate(&schema_of("risk-curve"), &j).unwrap();
    assert_eq!(j["formula"], "as-printed");
}

#[test]
fn simulate_and_sweep_match_schemas() {
    let j = json_of(&["simulate", "--example", "1", "--reps", "4", "--tau", "0.5", "--seed", "3"]);
    validate(&schema_of("simulate"), &j).unwrap();
    assert!(j["rows"].as_array().unwrap().iter().any(|r| r["estimator"] == "ENET(0.5)" || r["estimator"] == "Lasso"));

    let j = json_of(&["mrme-sweep", "--n", "40", "--p1", "3", "--p2", "4", "--reps", "6", "--grid", "0:1:0.5"]);
    validate(&schema_of("mrme-sweep"), &j).unwrap();
    let deltas: Vec<f64> = j["rows"].as_array().unwrap().iter().filter_map(|r| r["delta_star"].as_f64()).collect();
    assert!(deltas.contains(&0.0) && deltas.contains(&1.0));
}

#[test]
fn analyze_synthetic_with_diagnostics_file() {
    let dir = tempfile::tempdir().unwrap();
    let diag = dir.path().join("diag.json");
    let out = dir.path().join("result.json");
    let o = run(&[
        "analyze", "--synthetic", "97", "--tau", "0.25,0.75", "--reps", "3", "--seed", "11",
        "--diagnostics-out", diag.to_str().unwrap(), "--out", out.to_str().unwrap(), "--format", "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let j: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    validate(&schema_of("analyze"), &j).unwrap();
    assert_eq!(j["n"], 97);
    let d: Value = serde_json::from_str(&std::fs::read_to_string(&diag).unwrap()).unwrap();
    assert_eq!(d, j["diagnostics"]);
    // 2 levels x 11 estimators + LSE
    assert_eq!(j["rows"].as_array().unwrap().len(), 2 * 11 + 1);
}

#[test]
fn analyze_with_explicit_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_linear_csv(dir.path(), 90, 2);
    let o = run(&[
        "analyze", "--input", csv.to_str().unwrap(), "--response", "y", "--partition", "d,e,f",
        "--tau", "0.5", "--reps", "2", "--format", "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("tau,estimator,metric,value,se\n"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["frobnicate"],
        vec!["fit", "--tau", "0.5"],
        vec!["risk-curve", "--p1", "2", "--p2", "3", "--grid", "1:0:1"],
        vec!["simulate", "--example", "3"],
        vec!["simulate", "--example", "1", "--error-dist", "cauchy"],
        vec!["schema", "nope"],
        vec!["--threads", "0", "schema", "fit"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = run(&["schema", "nope"]);
    assert!(stderr(&o).starts_with("error[usage]: "));
}

#[test]
fn core_errors_exit_1_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_linear_csv(dir.path(), 30, 1);
    let input = csv.to_str().unwrap();
    let cases: [(&[&str], &str); 4] = [
        (&["fit", "--input", input, "--response", "zz", "--tau", "0.5"], "missing-column"),
        (&["fit", "--input", input, "--response", "y", "--tau", "1.5"], "domain"),
        (&["test", "--input", input, "--response", "y", "--tau", "0.5", "--partition", "q"], "missing-column"),
        (&["fit", "--input", "/nonexistent/x.csv", "--response", "y", "--tau", "0.5"], "io"),
    ];
    for (args, cat) in cases {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = stderr(&o);
        assert!(err.starts_with(&format!("error[{cat}]: ")), "{args:?}: {err}");
        assert_eq!(err.lines().count(), 1);
    }
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,y\n1,2\nx,3\n").unwrap();
    let o = run(&["fit", "--input", bad.to_str().unwrap(), "--response", "y", "--tau", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[parse]: "), "{}", stderr(&o));
}

#[test]
fn output_is_byte_identical_across_thread_counts() {
    let run_with = |t: &str| {
        let o = run(&["--threads", t, "simulate", "--example", "1", "--reps", "6", "--tau", "0.25,0.75", "--seed", "9", "--format", "csv"]);
        assert!(o.status.success(), "{}", stderr(&o));
        o.stdout
    };
    let one = run_with("1");
    assert_eq!(one, run_with("3"));
}

#[test]
fn shipped_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let text = std::fs::read_to_string(&p).unwrap();
        qrshrink::SimConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
