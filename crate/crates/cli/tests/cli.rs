use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mpb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpb")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Noiseless rank-1 marginal-product data on a 12^3 grid with 4 subjects.
fn simulate_rank_one(dir: &Path) -> PathBuf {
    let cfg = write(
        dir,
        "sim.json",
        r#"{"sim": {"true_rank": 1, "noise_var": 0, "points": 12, "subjects": 4, "eval_points": 13},
            "replications": 2, "fit": null}"#,
    );
    let out = dir.join("sim");
    let o = mpb(&["simulate", "product", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn fourier_config(dir: &Path, rank: usize, extra: &str) -> PathBuf {
    let dim = r#"{"domain": [0, 1], "basis": {"kind": "fourier", "rank": 11}, "grid": {"equispaced": 12}}"#;
    let text = format!(r#"{{"dimensions": [{dim}, {dim}, {dim}], "solver": {{"rank": {rank}}}, "seed": 7{extra}}}"#);
    write(dir, "fit.json", &text)
}

#[test]
fn bad_magic_exits_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let cfg = fourier_config(dir.path(), 1, "");
    let bad = write(dir.path(), "bad.mpbt", "NOPE\x01\x01");
    let o = mpb(&["fit", "--config", s(&cfg), "--tensor", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_names_the_field() {
    let dir = TempDir::new().unwrap();
    let sim = simulate_rank_one(dir.path());
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"dimensions": [{"domain": [0, 1], "basis": {"kind": "bspline", "rank": 6, "degre": 3}, "grid": {"equispaced": 12}}]}"#,
    );
    let o = mpb(&["fit", "--config", s(&cfg), "--tensor", s(&sim.join("rep000_noisy.mpbt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dimensions[0].basis"), "{}", stderr(&o));
}

#[test]
fn noiseless_rank_one_fit_is_exact_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let sim = simulate_rank_one(dir.path());
    let cfg = fourier_config(dir.path(), 1, "");
    let tensor = sim.join("rep000_noisy.mpbt");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mpb(&["fit", "--config", s(&cfg), "--tensor", s(&tensor), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let report = json(&a.join("fit_report.json"));
    let ratio = report["residual_ratio"].as_f64().unwrap();
    assert!(ratio < 1e-8, "residual ratio {ratio}");
    assert_eq!(fs::read(a.join("model.mpbm")).unwrap(), fs::read(b.join("model.mpbm")).unwrap());

    // a different seed flag changes the starting point but the file format stays valid
    let c = dir.path().join("c");
    let o = mpb(&["fit", "--config", s(&cfg), "--tensor", s(&tensor), "--out", s(&c), "--seed", "99"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&c.join("fit_report.json"))["seed"], 99);
    assert!(mpb(&["verify", "--model", s(&c.join("model.mpbm"))]).status.success());
}

#[test]
fn iteration_cap_returns_code_four_with_outputs() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    let o = mpb(&["simulate", "product", "--out", s(&sim), "--config", s(&write(
        dir.path(),
        "s.json",
        r#"{"sim": {"points": 12, "eval_points": 13}, "replications": 1, "fit": null}"#,
    ))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = write(
        dir.path(),
        "c.json",
        &fs::read_to_string(fourier_config(dir.path(), 4, "")).unwrap().replace(r#""rank": 4"#, r#""rank": 4, "max_outer_iters": 1"#),
    );
    let out = dir.path().join("o");
    let o = mpb(&["fit", "--config", s(&cfg), "--tensor", s(&sim.join("rep000_noisy.mpbt")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(out.join("model.mpbm").exists());
    assert_eq!(json(&out.join("fit_report.json"))["converged"], false);
}

#[test]
fn simulate_noiseless_files_match_truth_and_headers_match_config() {
    let dir = TempDir::new().unwrap();
    let sim = simulate_rank_one(dir.path());
    for r in 0..2 {
        let truth = fs::read(sim.join(format!("rep{r:03}_truth.mpbt"))).unwrap();
        let noisy = fs::read(sim.join(format!("rep{r:03}_noisy.mpbt"))).unwrap();
        assert_eq!(truth, noisy);
        assert_eq!(&truth[..6], b"MPBT\x01\x04");
        let dims: Vec<u64> = truth[6..38].chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(dims, [12, 12, 12, 4]);
        assert_eq!(truth.len(), 38 + 8 * 12 * 12 * 12 * 4);
    }
}

#[test]
fn momise_is_the_mean_of_the_metrics_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "sim.json",
        r#"{"sim": {"points": 12, "eval_points": 13, "true_rank": 3},
            "replications": 5,
            "fit": {"basis_rank": 6, "solver": {"rank": 3, "lambda_marginal": 1e-4, "lambda_coef": 1e-4, "max_outer_iters": 30}}}"#,
    );
    let out = dir.path().join("sim");
    let o = mpb(&["simulate", "product", "--config", s(&cfg), "--out", s(&out), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("replication,mise"));
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 5);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let summary = json(&out.join("simulation.json"));
    assert_eq!(summary["momise"].as_f64().unwrap(), mean);
    assert_eq!(summary["config"]["sim"]["seed"], 4);
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.json", r#"{"sim": {"points": 10, "eval_points": 11}, "replications": 2, "fit": null}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(mpb(&["simulate", "product", "--config", s(&cfg), "--out", s(out)]).status.success());
    }
    for name in ["rep000_noisy.mpbt", "rep001_noisy.mpbt", "rep001_model.mpbm"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn field_simulation_writes_train_test_and_truth_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"sim": {"points": 20, "train_subjects": 12, "test_subjects": 4, "replications": 2, "marginal_ranks": [5, 4]},
            "fit": {"solver": {"rank": 6, "lambda_marginal": 1e-8, "lambda_coef": 1e-8}}}"#,
    );
    let out = dir.path().join("sim");
    let o = mpb(&["simulate", "field", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["eigenfunctions.mpbt", "eigenvalues.mpbt", "rep000_train.mpbt", "rep001_test.mpbt", "rep001_test_scores.mpbt"] {
        let v = mpb(&["verify", "--tensor", s(&out.join(name))]);
        assert!(v.status.success(), "{name}: {}", stderr(&v));
    }
    let info = stdout(&mpb(&["info", "--tensor", s(&out.join("rep000_train.mpbt"))]));
    let info: serde_json::Value = serde_json::from_str(&info).unwrap();
    assert_eq!(info["dims"], serde_json::json!([20, 20, 12]));
    let summary = json(&out.join("simulation.json"));
    assert!(summary["momise"].as_f64().unwrap().is_finite());
}

#[test]
fn fpca_outputs_pass_verification() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.json", r#"{"sim": {"points": 10, "eval_points": 11, "subjects": 15}, "replications": 1, "fit": null}"#);
    let sim = dir.path().join("sim");
    assert!(mpb(&["simulate", "product", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let model = sim.join("rep000_model.mpbm");
    for (lambda, name) in [("0", "plain"), ("0.001", "smooth")] {
        let out = dir.path().join(name);
        let o = mpb(&["fpca", "--model", s(&model), "--out", s(&out), "--lambda", lambda, "--threshold", "0.95"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("cumulative"));
        let file = json(&out.join("fpca.json"));
        let cum: Vec<f64> = file["cumulative_variance"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert!(*cum.last().unwrap() >= 0.95);
        assert!(cum.len() == 1 || cum[cum.len() - 2] < 0.95);
        let v = mpb(&["verify", "--model", s(&model), "--fpca", s(&out.join("fpca.json"))]);
        assert!(v.status.success(), "{}{}", stdout(&v), stderr(&v));
        if lambda == "0" {
            assert!(stdout(&v).contains("score variance equals eigenvalue: ok"));
        }
        let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
        assert_eq!(scores.lines().count(), 16);
        assert!(mpb(&["info", "--model", s(&out.join("eigenfunctions.mpbm"))]).status.success());
    }
}

#[test]
fn verify_detects_tampered_eigenvectors() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.json", r#"{"sim": {"points": 10, "eval_points": 11, "subjects": 8}, "replications": 1, "fit": null}"#);
    let sim = dir.path().join("sim");
    assert!(mpb(&["simulate", "product", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let model = sim.join("rep000_model.mpbm");
    let out = dir.path().join("f");
    assert!(mpb(&["fpca", "--model", s(&model), "--out", s(&out), "--components", "2"]).status.success());
    let mut file = json(&out.join("fpca.json"));
    let x = file["eigenvectors"][0][0].as_f64().unwrap();
    file["eigenvectors"][0][0] = serde_json::json!(x * 1.01 + 0.01);
    let tampered = write(dir.path(), "t.json", &file.to_string());
    let v = mpb(&["verify", "--model", s(&model), "--fpca", s(&tampered)]);
    assert_eq!(v.status.code(), Some(3));
    assert!(stdout(&v).contains("FAILED"));
}

#[test]
fn select_modes_report_every_candidate() {
    let dir = TempDir::new().unwrap();
    let sim = simulate_rank_one(dir.path());
    let tensor = sim.join("rep000_noisy.mpbt");
    let cfg = fourier_config(
        dir.path(),
        1,
        r#", "select": {"marginal_ranks": [3, 5, 7, 9, 11], "global_ranks": [1, 2, 3], "cv_lambdas": [[1e-6, 1e-6]], "cv_folds": 2}"#,
    );
    let text = fs::read_to_string(&cfg).unwrap().replace(r#""rank": 1}"#, r#""rank": 1, "lambda_coef": 1e-8}"#);
    fs::write(&cfg, text).unwrap();
    for (mode, rows) in [("marginal-rank", 5), ("global-rank", 3), ("cv", 1)] {
        let out = dir.path().join(mode);
        let o = mpb(&["select", mode, "--config", s(&cfg), "--tensor", s(&tensor), "--out", s(&out)]);
        assert!(o.status.success(), "{mode}: {}", stderr(&o));
        let csv = fs::read_to_string(out.join("selection.csv")).unwrap();
        assert_eq!(csv.lines().count(), rows + 1, "{mode}");
        let chosen: Vec<&str> = csv.lines().skip(1).filter(|l| l.ends_with(",true")).collect();
        assert_eq!(chosen.len(), 1, "{mode}");
        match mode {
            // the data lie in the span of the 11-function Fourier system
            "marginal-rank" => assert!(chosen[0].starts_with("11.0,11.0,11.0,")),
            "global-rank" => assert!(chosen[0].starts_with("1.0,")),
            _ => assert!(chosen[0].starts_with("1e-6,1e-6,")),
        }
    }
}

#[test]
fn info_without_files_describes_formats() {
    let o = mpb(&["info"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("MPBT"));
}
