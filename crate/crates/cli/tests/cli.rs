use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pnp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnp"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn vectors(dir: &Path) {
    fs::write(dir.join("v.csv"), "1,0\n0,1\n0.6,0.8\n").unwrap();
}

#[test]
fn similarity_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    vectors(dir.path());
    let out = pnp(
        dir.path(),
        &["similarity", "--input", "v.csv", "--epsilon", "1", "--delta", "1e-6", "--sensitivity", "1",
          "--mode", "practical", "--iters", "40", "--seed", "7", "--out", "x.csv"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("x.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let side = json(&dir.path().join("x.csv.json"));
    assert_eq!(side["mode"], "practical");
    assert_eq!(side["seed"], 7);
    assert_eq!(side["iterations"], 40);
    assert_eq!(side["noise_draws"], 1);
    for key in ["epsilon", "delta", "sensitivity", "sigma", "final_residuals"] {
        assert!(!side[key].is_null(), "{key}");
    }
}

#[test]
fn similarity_exact_default_iterations() {
    let dir = tempfile::tempdir().unwrap();
    vectors(dir.path());
    let out = pnp(
        dir.path(),
        &["similarity", "--input", "v.csv", "--epsilon", "2", "--delta", "1e-5", "--seed", "1", "--out", "x.csv"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let side = json(&dir.path().join("x.csv.json"));
    assert_eq!(side["mode"], "exact_set");
    assert_eq!(side["iterations"], 20);
    assert!(side["polish_iterations"].is_u64());
}

#[test]
fn similarity_bad_row_names_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("v.csv"), "1,0\n0.5,0\n").unwrap();
    let out = pnp(
        dir.path(),
        &["similarity", "--input", "v.csv", "--epsilon", "1", "--delta", "1e-6", "--seed", "1", "--out", "x.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn similarity_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    vectors(dir.path());
    let args = ["similarity", "--input", "v.csv", "--epsilon", "1", "--delta", "1e-6", "--seed", "5", "--out", "x.csv"];
    assert!(pnp(dir.path(), &args).status.success());
    let first = (fs::read(dir.path().join("x.csv")).unwrap(), fs::read(dir.path().join("x.csv.json")).unwrap());
    assert!(pnp(dir.path(), &args).status.success());
    let second = (fs::read(dir.path().join("x.csv")).unwrap(), fs::read(dir.path().join("x.csv.json")).unwrap());
    assert_eq!(first, second);
}

#[test]
fn rejects_bad_privacy_flags() {
    let dir = tempfile::tempdir().unwrap();
    vectors(dir.path());
    for (eps, delta) in [("0", "1e-6"), ("-1", "1e-6"), ("1", "1"), ("1", "2")] {
        let out = pnp(
            dir.path(),
            &["similarity", "--input", "v.csv", "--epsilon", eps, "--delta", delta, "--seed", "1", "--out", "x.csv"],
        );
        assert_eq!(out.status.code(), Some(2), "eps {eps} delta {delta}");
    }
    let out = pnp(
        dir.path(),
        &["similarity", "--input", "v.csv", "--epsilon", "1", "--delta", "0.1", "--iters", "0", "--seed", "1", "--out", "x.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn marginals_zero_noise_even_flatten() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), "1,0\n1,1\n").unwrap();
    let out = pnp(
        dir.path(),
        &["marginals", "--input", "d.csv", "--k", "2", "--method", "even-flatten", "--epsilon", "1e300",
          "--delta", "0.5", "--seed", "1", "--out", "t.bin", "--report-error"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let bytes = fs::read(dir.path().join("t.bin")).unwrap();
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(values, vec![2.0, 1.0, 1.0, 1.0]);
    let side = json(&dir.path().join("t.bin.json"));
    assert_eq!(side["order"], 2);
    assert_eq!(side["side"], 2);
    assert_eq!(side["method"], "even-flatten");
    assert_eq!(side["sensitivity"], 1.0);
    assert_eq!(side["noise_draws"], 1);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("avg_query_sq_error"));
}

#[test]
fn marginals_guards() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), "1,0,1\n1,1,0\n").unwrap();
    let base = ["marginals", "--input", "d.csv", "--epsilon", "1", "--delta", "1e-6", "--seed", "1", "--out", "t.bin"];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        pnp(dir.path(), &args)
    };
    let odd = run(&["--k", "3", "--method", "even-flatten"]);
    assert_eq!(odd.status.code(), Some(2));
    assert!(stderr(&odd).contains("threshold"), "{}", stderr(&odd));
    assert_eq!(run(&["--k", "2", "--method", "threshold"]).status.code(), Some(2));
    let violated = run(&["--k", "2", "--method", "threshold", "--sparsity", "1"]);
    assert_eq!(violated.status.code(), Some(2));
    assert!(stderr(&violated).contains("line 1"), "{}", stderr(&violated));
    assert!(run(&["--k", "3", "--method", "gaussian"]).status.success());
    assert!(run(&["--k", "2", "--method", "threshold", "--sparsity", "2"]).status.success());
}

#[test]
fn marginals_header_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), "a,b,count\n1,0,4\n0,1,1\n").unwrap();
    let out = pnp(
        dir.path(),
        &["marginals", "--input", "d.csv", "--header", "--k", "1", "--method", "gaussian", "--epsilon", "1e300",
          "--delta", "0.5", "--seed", "1", "--out", "t.bin"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let bytes = fs::read(dir.path().join("t.bin")).unwrap();
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    assert!((values[0] - 4.0).abs() < 1e-12 && (values[1] - 1.0).abs() < 1e-12);
}

#[test]
fn bench_stability_reports_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnp(dir.path(), &["bench", "stability", "--n", "4", "--trials", "10000", "--seed", "1"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["within_bound"], true);
    assert!(v["estimate"]["std_error"].as_f64().unwrap() > 0.0);
    assert!(v["wall_time_s"].is_null());
}

#[test]
fn bench_cosine_scaling_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnp(
        dir.path(),
        &["bench", "cosine-scaling", "--sizes", "8,16,32", "--trials", "4", "--seed", "1", "--out", "r.json",
          "--raw-csv", "raw.csv", "--timing"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&dir.path().join("r.json"));
    assert_eq!(v["experiment"], "cosine-scaling");
    assert!(v["fitted_exponent"].is_f64());
    assert!(v["fit_r2"].is_f64());
    assert!(v["wall_time_s"].is_f64());
    assert_eq!(v["points"].as_array().unwrap().len(), 3);
    let raw = fs::read_to_string(dir.path().join("raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 3 * 4 * 2);
}

#[test]
fn bench_rejects_unknown_experiment() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pnp(dir.path(), &["bench", "nope"]).status.code(), Some(2));
    assert_eq!(
        pnp(dir.path(), &["bench", "cosine-scaling", "--sizes", "32,16", "--seed", "1"]).status.code(),
        Some(2)
    );
}

#[test]
fn complexity_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnp(dir.path(), &["complexity", "--set", "vector-box", "--n", "4", "--trials", "20000", "--seed", "3"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let est = v["estimate"]["value"].as_f64().unwrap();
    let se = v["estimate"]["std_error"].as_f64().unwrap();
    let closed = v["closed_form"].as_f64().unwrap();
    assert!((est - closed).abs() <= 3.0 * se);

    let bad = pnp(dir.path(), &["bench", "complexity", "--set", "box", "--n", "3", "--trials", "1", "--seed", "3"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_pnp"))
            .args(["bench", "marginal-scaling", "--sizes", "4,6", "--records", "10", "--trials", "5", "--seed", "2"])
            .env("PP_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap()
    };
    let one = run("1");
    let four = run("4");
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(run("zero").status.code(), Some(2));
}
