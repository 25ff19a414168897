use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robdesign"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Example 1 with a short swarm so the tests stay fast.
fn quick_example1(dir: &TempDir) -> PathBuf {
    let text = fs::read_to_string(configs().join("example1.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["pso"] = serde_json::json!({"swarm": 16, "iters": 40, "restarts": 1});
    let path = dir.path().join("quick.json");
    fs::write(&path, v.to_string()).unwrap();
    path
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn solve_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = quick_example1(&dir);
    let out = dir.path().join("out");
    let res = run(&["--config", path_str(&cfg), "--out", path_str(&out), "solve"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in [
        "design.json",
        "design.csv",
        "loss_report.json",
        "weights.svg",
        "run_meta.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(out.join("design.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "index,x,xi,n_i_rounded");
    assert_eq!(csv.lines().count(), 101);
    let meta = json(&out.join("run_meta.json"));
    assert_eq!(meta["seed"], 1);
    assert_eq!(meta["variant"], "paper-literal");
    assert!(meta["versions"]["robdesign_core"].is_string());
    assert!(meta["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    let loss = json(&out.join("loss_report.json"));
    let terms: f64 = [
        "bias_eig_term",
        "variance_term",
        "constant_term",
        "bias_correction",
        "variance_correction",
    ]
    .iter()
    .map(|k| loss[k].as_f64().unwrap())
    .sum();
    assert!((terms - loss["total"].as_f64().unwrap()).abs() < 1e-15);
}

#[test]
fn outputs_are_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = quick_example1(&dir);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        code(&run(&[
            "--config",
            path_str(&cfg),
            "--out",
            path_str(&a),
            "--threads",
            "1",
            "solve"
        ])),
        0
    );
    assert_eq!(
        code(&run(&[
            "--config",
            path_str(&cfg),
            "--out",
            path_str(&b),
            "--threads",
            "3",
            "solve"
        ])),
        0
    );
    for f in ["design.json", "design.csv", "loss_report.json", "weights.svg"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn eval_reproduces_solve_and_uniform_is_worse() {
    let dir = TempDir::new().unwrap();
    let cfg = quick_example1(&dir);
    let out = dir.path().join("solve");
    assert_eq!(
        code(&run(&["--config", path_str(&cfg), "--out", path_str(&out), "solve"])),
        0
    );
    let best = json(&out.join("run_meta.json"))["best_value"].as_f64().unwrap();

    let eval_out = dir.path().join("eval");
    let design = out.join("design.json");
    let res = run(&[
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&eval_out),
        "eval",
        "--design",
        path_str(&design),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let again = json(&eval_out.join("loss_report.json"))["total"].as_f64().unwrap();
    assert!((again - best).abs() <= 1e-12, "{again} vs {best}");

    let mut uniform = json(&design);
    uniform["weights"] = serde_json::json!(vec![0.01; 100]);
    let uniform_path = write(&dir, "uniform.json", &uniform.to_string());
    let res = run(&[
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&eval_out),
        "eval",
        "--design",
        path_str(&uniform_path),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let uni = json(&eval_out.join("loss_report.json"))["total"].as_f64().unwrap();
    assert!(uni >= best, "uniform {uni} beat solved {best}");
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = quick_example1(&dir);
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["unexpected"] = Value::from(1);
    let bad = write(&dir, "bad.json", &v.to_string());
    let out = path_str(dir.path());
    assert_eq!(code(&run(&["--config", path_str(&bad), "--out", out, "solve"])), 2);
    assert_eq!(code(&run(&["--out", out, "solve"])), 2);
    assert_eq!(
        code(&run(&["--config", path_str(&cfg), "--variant", "neither", "solve"])),
        2
    );

    let garbage = write(&dir, "garbage.json", "{\"n\": 30, \"points\": ");
    assert_eq!(
        code(&run(&[
            "--config",
            path_str(&cfg),
            "--out",
            out,
            "eval",
            "--design",
            path_str(&garbage)
        ])),
        2
    );
    let wrong_space = write(
        &dir,
        "small.json",
        r#"{"n": 4, "points": [[0], [1]], "weights": [0.5, 0.5], "counts": [2, 2]}"#,
    );
    assert_eq!(
        code(&run(&[
            "--config",
            path_str(&cfg),
            "--out",
            out,
            "eval",
            "--design",
            path_str(&wrong_space)
        ])),
        2
    );
}

#[test]
fn variant_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = quick_example1(&dir);
    let out = dir.path().join("out");
    assert_eq!(
        code(&run(&[
            "--config",
            path_str(&cfg),
            "--out",
            path_str(&out),
            "--variant",
            "derivation",
            "solve"
        ])),
        0
    );
    assert_eq!(json(&out.join("loss_report.json"))["variant"], "derivation-consistent");
}

#[test]
fn singular_design_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = quick_example1(&dir);
    let mut design = vec![0.0; 100];
    design[0] = 0.5;
    design[99] = 0.5;
    let points: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 99.0]).collect();
    let mut counts = vec![0; 100];
    counts[0] = 15;
    counts[99] = 15;
    let file = serde_json::json!({"n": 30, "points": points, "weights": design, "counts": counts});
    let path = write(&dir, "two_point.json", &file.to_string());
    let res = run(&[
        "--config",
        path_str(&cfg),
        "--out",
        path_str(dir.path()),
        "eval",
        "--design",
        path_str(&path),
    ]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn saturated_problem_takes_zero_contamination_path() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cfg = configs().join("saturated.json");
    let res = run(&["--config", path_str(&cfg), "--out", path_str(&out), "solve"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("only admissible contamination is zero"));
    let wc = &json(&out.join("loss_report.json"))["worst_case"];
    assert_eq!(wc["saturated"], true);
    assert_eq!(wc["psi_norm"], 0.0);
    assert!(wc["bound"].as_f64().unwrap() > wc["value"].as_f64().unwrap());
}

#[test]
fn round_apportions_and_rejects_small_n() {
    let dir = TempDir::new().unwrap();
    let design = write(
        &dir,
        "d.json",
        r#"{"n": 7, "points": [[0], [0.5], [1]], "weights": [0.55, 0.25, 0.2], "counts": [4, 2, 1]}"#,
    );
    let out = dir.path().join("out");
    let res = run(&["--out", path_str(&out), "round", "--design", path_str(&design)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        json(&out.join("exact_design.json"))["counts"],
        serde_json::json!([3, 2, 2])
    );
    let csv = fs::read_to_string(out.join("exact_design.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "index,x,n_i");

    let res = run(&[
        "--out",
        path_str(&out),
        "round",
        "--design",
        path_str(&out.join("exact_design.json")),
    ]);
    assert_eq!(code(&res), 0);
    assert_eq!(
        json(&out.join("exact_design.json"))["counts"],
        serde_json::json!([3, 2, 2])
    );

    assert_eq!(
        code(&run(&[
            "--out",
            path_str(&out),
            "round",
            "--design",
            path_str(&design),
            "--n",
            "2"
        ])),
        2
    );
}

fn line_problem(dir: &TempDir, gamma: &str, extra: &str) -> PathBuf {
    write(
        dir,
        "line.json",
        &format!(
            r#"{{
                "space": {{"type": "grid", "axes": [{{"lo": 0, "hi": 1, "count": 5}}]}},
                "model": {{"type": "polynomial", "degree": 1}},
                "gamma": {gamma}, "eta2": 0.5, "sigma2": 0.2, "n": 10, "seed": 5
                {extra}
            }}"#
        ),
    )
}

#[test]
fn worstcase_psi_is_orthogonal_with_norm_eta() {
    let dir = TempDir::new().unwrap();
    let cfg = line_problem(&dir, "[2, 0.5]", r#", "worst_case": {"mode": "enumerate"}"#);
    let design = write(
        &dir,
        "d.json",
        r#"{"n": 10, "points": [[0], [0.25], [0.5], [0.75], [1]], "counts": [3, 1, 2, 1, 3]}"#,
    );
    let out = dir.path().join("out");
    let res = run(&[
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&out),
        "worstcase",
        "--design",
        path_str(&design),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let mut reader = csv::Reader::from_path(out.join("psi.csv")).unwrap();
    let rows: Vec<(f64, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 5);
    let norm: f64 = rows.iter().map(|(_, p)| p * p).sum::<f64>().sqrt();
    assert!((norm - 0.5f64.sqrt()).abs() < 1e-12);
    let ortho_1: f64 = rows.iter().map(|(_, p)| p).sum();
    let ortho_x: f64 = rows.iter().map(|(x, p)| x * p).sum();
    assert!(ortho_1.abs() < 1e-12 && ortho_x.abs() < 1e-12);
    let wc = json(&out.join("worst_case.json"));
    assert!(wc["value"].as_f64().unwrap() <= wc["bound"].as_f64().unwrap() + 1e-15);
    assert_eq!(wc["mode"], "enumerate");
}

#[test]
fn simulate_matches_its_analytic_reference() {
    let dir = TempDir::new().unwrap();
    let cfg = line_problem(
        &dir,
        "[2, 0.5]",
        r#", "simulation": {"reps": 4000, "beta_true": [1, -1]}"#,
    );
    let design = write(
        &dir,
        "d.json",
        r#"{"n": 10, "points": [[0], [0.25], [0.5], [0.75], [1]], "counts": [3, 1, 2, 1, 3]}"#,
    );
    for contamination in ["zero", "worst"] {
        let out = dir.path().join(contamination);
        let res = run(&[
            "--config",
            path_str(&cfg),
            "--out",
            path_str(&out),
            "simulate",
            "--design",
            path_str(&design),
            "--contamination",
            contamination,
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        let sim = json(&out.join("simulation.json"));
        let z = (sim["mmpe_hat"].as_f64().unwrap() - sim["analytic"].as_f64().unwrap()).abs()
            / sim["se_mmpe"].as_f64().unwrap();
        assert!(z < 4.0, "{contamination}: z = {z}");
        assert_eq!(sim["identity_holds"], true);
        let csv = fs::read_to_string(out.join("decomposition.csv")).unwrap();
        assert!(csv.starts_with("term,estimate,std_error\nmmpe,"));
    }
}

#[test]
fn hopeless_missingness_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = line_problem(&dir, "[0, 0]", r#", "simulation": {"reps": 2000}"#);
    let design = write(
        &dir,
        "d.json",
        r#"{"n": 2, "points": [[0], [0.25], [0.5], [0.75], [1]], "counts": [1, 0, 0, 0, 1]}"#,
    );
    let res = run(&[
        "--config",
        path_str(&cfg),
        "--out",
        path_str(dir.path()),
        "simulate",
        "--design",
        path_str(&design),
    ]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}
