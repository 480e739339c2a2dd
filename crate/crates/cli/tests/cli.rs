use serde_json::Value;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output};

fn qchern(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qchern")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn modulus(v: &Value) -> f64 {
    f(&v["re"]).hypot(f(&v["im"]))
}

fn temp_file(name: &str, text: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qchern-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
    p
}

fn assert_error(out: &Output, code: i32, kind: &str, stage: &str) {
    assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stdout));
    let e = json(out);
    assert_eq!(e["error"], kind);
    assert_eq!(e["stage"], stage);
    assert!(e["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[test]
fn chern_torus_vanishes_and_sphere_is_eight_pi_squared() {
    let out = qchern(&["chern", "torus-derham", "--eta", "one"]);
    assert!(out.status.success());
    let d = json(&out);
    assert!(modulus(&d["lhs_integral"]) < 1e-8);
    assert_eq!(d["model"], "torus-derham");
    assert!(d["timing"].is_null());

    let d = json(&qchern(&["chern", "sphere-derham"]));
    let want = 8.0 * std::f64::consts::PI.powi(2);
    assert!((f(&d["lhs_integral"]["re"]) - want).abs() < 1e-6 * want);
}

#[test]
fn chern_of_exact_form_vanishes() {
    let d = json(&qchern(&["chern", "sphere-derham", "--eta", "exact1"]));
    assert!(modulus(&d["lhs_integral"]) < 1e-6);
}

#[test]
fn load_errors_exit_two_with_json() {
    assert_error(&qchern(&["chern", "torus-derham", "--eta", "missing"]), 2, "unknown_eta", "load");
    assert_error(&qchern(&["chern", "klein-bottle"]), 2, "unknown_model", "load");
    assert_error(&qchern(&["residues", "toy-gauss", "--eta", "area"]), 2, "unknown_eta", "load");
    assert_error(&qchern(&["verify", "everything"]), 2, "bad_suite", "arguments");
    assert_error(&qchern(&["table", "sphere-derham", "--scan", "theta"]), 2, "bad_scan", "arguments");
    assert_error(&qchern(&["residues", "toy-gauss", "--R=-1"]), 2, "usage", "arguments");
    assert_error(&qchern(&["residues", "toy-gauss", "--R", "abc"]), 2, "usage", "arguments");
    assert_error(&qchern(&["frobnicate"]), 2, "usage", "arguments");
}

#[test]
fn toy_gauss_residue_sum_matches_closed_form() {
    let out = qchern(&["residues", "toy-gauss", "--R", "0.5"]);
    assert!(out.status.success());
    let d = &json(&out)[0];
    let want = 0.5 * (-0.25f64).exp();
    assert!((f(&d["residue_sum"]["re"]) - want).abs() < 1e-8 * want);
    assert!((f(&d["lhs_integral"]["re"]) - want).abs() < 1e-8 * want);
    assert!(d["extrapolated_limit"].is_null());
    assert_eq!(f(&d["R"]), 0.5);
}

#[test]
fn residue_sum_is_the_sum_of_listed_residues() {
    for args in [&["residues", "toy-gauss", "--R", "0.3"][..], &["residues", "sphere-derham", "--R", "0.5"][..]] {
        let d = &json(&qchern(args))[0];
        let list = d["residues"].as_array().unwrap();
        assert!(!list.is_empty());
        let (re, im) = list.iter().fold((0.0, 0.0), |(a, b), r| (a + f(&r["residue_re"]), b + f(&r["residue_im"])));
        assert_eq!(re, f(&d["residue_sum"]["re"]));
        assert_eq!(im, f(&d["residue_sum"]["im"]));
        for r in list {
            assert!(["gamma", "zeta", "double"].contains(&r["provenance"].as_str().unwrap()), "{r}");
        }
    }
}

#[test]
fn torus_residue_sums_vanish_and_limit_is_reported() {
    let d = json(&qchern(&["residues", "torus-derham", "--eta", "one", "--R", "1,0.5,0.25"]));
    let docs = d.as_array().unwrap();
    assert_eq!(docs.len(), 3);
    for (doc, r) in docs.iter().zip([1.0, 0.5, 0.25]) {
        assert_eq!(f(&doc["R"]), r);
        assert!(modulus(&doc["residue_sum"]) < 1e-8);
        assert!(modulus(&doc["extrapolated_limit"]["value"]) < 1e-8);
    }
    let d = json(&qchern(&["residues", "sphere-derham", "--R", "1,0.5,0.25"]));
    let want = 8.0 * std::f64::consts::PI.powi(2);
    for doc in d.as_array().unwrap() {
        assert!((modulus(&doc["residue_sum"]) - modulus(&doc["lhs_integral"])).abs() < 1e-4 * want);
    }
    assert!((f(&d[0]["extrapolated_limit"]["value"]["re"]) - want).abs() < 1e-4 * want);
}

#[test]
fn truncation_difference_is_within_tail_bound() {
    for model in ["toy-gauss", "sphere-derham"] {
        let lo = &json(&qchern(&["residues", model, "--R", "1", "--zmax", "3"]))[0];
        let hi = &json(&qchern(&["residues", model, "--R", "1", "--zmax", "12"]))[0];
        let d = (f(&lo["residue_sum"]["re"]) - f(&hi["residue_sum"]["re"])).hypot(f(&lo["residue_sum"]["im"]) - f(&hi["residue_sum"]["im"]));
        assert!(d < f(&lo["tail_bound"]), "{model}: {d} vs {}", lo["tail_bound"]);
    }
}

#[test]
fn numbers_carry_seventeen_significant_digits() {
    let out = qchern(&["chern", "sphere-derham"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.contains("\"re\"")).unwrap();
    let digits: String = line.split(':').nth(1).unwrap().trim().trim_end_matches(',').split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(digits.len(), 17, "{line}");
}

#[test]
fn verify_algebra_passes_with_fixed_seed() {
    let out = qchern(&["verify", "algebra", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d = json(&out);
    assert_eq!(d["passed"], true);
    assert_eq!(d["seed"], 7);
    assert_eq!(d["checks"].as_array().unwrap().len(), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("PASS"));
}

#[test]
fn verify_all_is_byte_identical_across_runs_and_job_counts() {
    let a = std::thread::spawn(|| qchern(&["verify", "all", "--seed", "3"]));
    let b = std::thread::spawn(|| qchern(&["--jobs", "1", "verify", "all", "--seed", "3"]));
    let (a, b) = (a.join().unwrap(), b.join().unwrap());
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    let d = json(&a);
    let zeta_rows = d["checks"].as_array().unwrap().iter().filter(|c| c["check"].as_str().unwrap().contains("|LHS − ΣRes|")).count();
    assert_eq!(zeta_rows, 6 + 4 + 6 + 4 + 3);
}

#[test]
fn contour_path_is_independent_of_job_count() {
    let p = temp_file("contour.toml", "[model]\nbase = \"torus-spinor\"\n\n[quadrature]\nbase_level = 0\n\n[zeta]\npath = \"contour\"\nR = [1.0]\n");
    let p = p.to_str().unwrap();
    let a = qchern(&["--jobs", "1", "residues", p, "--eta", "area"]);
    let b = qchern(&["--jobs", "3", "residues", p, "--eta", "area"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn rho_decay_table_decreases_with_gaussian_fit() {
    let out = qchern(&["table", "sphere-derham", "--scan", "rho-decay"]);
    assert!(out.status.success());
    assert!(!out.stdout.contains(&b'\r'));
    let mut rd = csv::Reader::from_reader(&out.stdout[..]);
    assert_eq!(rd.headers().unwrap(), vec!["rho", "log_norm"]);
    let rows: Vec<(f64, f64)> = rd.records().map(|r| {
        let r = r.unwrap();
        (r[0].parse().unwrap(), r[1].parse().unwrap())
    }).collect();
    assert_eq!(rows.len() + 1, out.stdout.iter().filter(|b| **b == b'\n').count());
    assert!(rows.windows(2).all(|w| w[1].1 < w[0].1));
    // Least squares of log_norm against ρ².
    let n = rows.len() as f64;
    let (sx, sy) = rows.iter().fold((0.0, 0.0), |(a, b), (r, y)| (a + r * r, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = rows.iter().map(|(r, y)| (r * r - mx) * (y - my)).sum();
    let sxx: f64 = rows.iter().map(|(r, _)| (r * r - mx).powi(2)).sum();
    assert!(sxy / sxx < 0.0);
}

#[test]
fn rez_decay_table_decreases_and_writes_file() {
    let dir = std::env::temp_dir().join(format!("qchern-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("rez.csv");
    let out = qchern(&["table", "torus-spinor", "--scan", "rez-decay", "--eta", "area", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let mut rd = csv::Reader::from_path(&path).unwrap();
    let ys: Vec<f64> = rd.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(ys.len(), 16);
    assert!(ys.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn model_file_overrides_metric_and_adds_forms() {
    let p = temp_file(
        "squashed.toml",
        r#"
[model]
name = "big-sphere"
base = "sphere-derham"
fiber_dim = 2
ranks = [2, 2]

[metric]
scale = "3/2"
conformal = "cos(phi)/4"

[eta.twice]
terms = { "1" = "2" }

[eta.bump]
terms = { "dphi^dpsi" = "sin(phi)*cos(phi)" }
exact = true
"#,
    );
    let p = p.to_str().unwrap();
    let d = json(&qchern(&["chern", p, "--eta", "twice"]));
    assert_eq!(d["model"], "big-sphere");
    let want = 16.0 * std::f64::consts::PI.powi(2);
    assert!((f(&d["lhs_integral"]["re"]) - want).abs() < 1e-4 * want);
    let d = json(&qchern(&["chern", p, "--eta", "bump"]));
    assert!(modulus(&d["lhs_integral"]) < 1e-6);
}

#[test]
fn model_file_connection_override_keeps_the_current() {
    // A gauge-trivial change of connection on the torus: θ = 0 plus a closed one-form times J.
    let j = r#"[["0","0","0","0"],["0","0","0","0"],["0","0","0","-1"],["0","0","1","0"]]"#;
    let p = temp_file("theta.toml", &format!("[model]\nbase = \"torus-derham\"\n\n[theta]\ndx2 = {}\n", j.replace("-1", "-sin(x1)/2").replace("\"1\"", "\"sin(x1)/2\"")));
    let d = json(&qchern(&["chern", p.to_str().unwrap(), "--eta", "one"]));
    assert!(modulus(&d["lhs_integral"]) < 1e-8);
}

#[test]
fn malformed_model_files_are_load_errors() {
    let cases = [
        ("bad-expr.toml", "[model]\nbase = \"sphere-derham\"\n[eta.x]\nterms = { \"1\" = \"sin(\" }\n"),
        ("bad-rank.toml", "[model]\nbase = \"sphere-derham\"\nranks = [1, 1]\n"),
        ("bad-key.toml", "[model]\nbase = \"sphere-derham\"\ncolour = \"red\"\n"),
        ("bad-metric.toml", "[model]\nbase = \"torus-spinor\"\n[metric]\nscale = \"2\"\n"),
        ("bad-theta.toml", "[model]\nbase = \"torus-derham\"\n[theta]\ndx1 = [[\"0\"]]\n"),
    ];
    for (name, text) in cases {
        let p = temp_file(name, text);
        assert_error(&qchern(&["chern", p.to_str().unwrap()]), 2, "model_file", "load");
    }
    let p = temp_file("unknown-base.toml", "[model]\nbase = \"cylinder\"\n");
    assert_error(&qchern(&["chern", p.to_str().unwrap()]), 2, "unknown_model", "load");
    assert_error(&qchern(&["chern", "/nonexistent/model.toml"]), 2, "model_file", "load");
}

#[test]
fn unattainable_quadrature_tolerance_exits_three() {
    let p = temp_file("strict.toml", "[model]\nbase = \"sphere-derham\"\n\n[quadrature]\nlevel = 0\nrel_tol = 1e-300\n");
    assert_error(&qchern(&["chern", p.to_str().unwrap()]), 3, "quadrature_failure", "quadrature");
}

#[test]
fn timing_flag_adds_seconds() {
    let d = json(&qchern(&["--timing", "chern", "torus-derham"]));
    assert!(f(&d["timing"]["seconds"]) >= 0.0);
}
