//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robdesign_core::apportion::efficient_apportionment;
use robdesign_core::criterion::{
    expected_mmpe_max, hat, taylor_loss, worst_case_contamination, ExpectationMode, Projector, Variant, WorstCaseMode,
};
use robdesign_core::model::{
    design_matrix, Design, DesignSpace, ExactDesign, LinearBasis, ModelSpec, RobustnessParams,
};
use robdesign_core::simulate::{simulate_mmpe, taylor_vs_exact_report, SimulationSetup};
use robdesign_core::Sequential;

/// Name, check and runtime budget.
type Criterion = (&'static str, fn() -> Outcome, Duration);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn random_z(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Random design on `n_pts` points with at least `p` clearly positive weights.
fn random_design(rng: &mut ChaCha8Rng, n_pts: usize, n: usize) -> Design {
    let masses: Vec<f64> = (0..n_pts).map(|_| 0.05 + rng.random::<f64>()).collect();
    Design::from_masses(&masses, n).unwrap()
}

/// Top eigenvalue and gap ratio of a symmetric matrix, independently of the crate.
fn dense_top(m: &DMatrix<f64>) -> (f64, f64) {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let gap = if ev.len() > 1 {
        (ev[0] - ev[1]) / ev[0].max(1e-300)
    } else {
        1.0
    };
    (ev[0], gap)
}

/// `R = Z (Zᵀ D Z)⁻¹ Zᵀ` by a plain dense inverse.
fn dense_hat(z: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d));
    let info = z.transpose() * &dm * z;
    z * info.try_inverse().unwrap() * z.transpose()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_corr = 0.0f64;
    let mut worst_gap = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(1..=4);
        let big_n = rng.random_range(p.max(2)..=20);
        let n = rng.random_range(big_n..=3 * big_n);
        let z = random_z(&mut rng, big_n, p);
        let design = random_design(&mut rng, big_n, n);
        let params = RobustnessParams::new(rng.random_range(0.01..2.0), rng.random_range(0.01..1.0)).unwrap();
        let probs = vec![1.0; big_n];
        let r = taylor_loss(&z, &design, &probs, params, Variant::DerivationConsistent).unwrap();
        worst_corr = worst_corr.max(r.bias_correction.abs()).max(r.variance_correction.abs());

        let d = design.scaled_counts();
        let rr = dense_hat(&z, &d);
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
        let (ch, _) = dense_top(&(&dm * &rr * &rr * &dm));
        let a = params.eta2() / (big_n as f64 * n as f64);
        let expected = a * (ch + 1.0) + params.sigma2() / big_n as f64 * rr.trace();
        worst_gap = worst_gap.max(rel(r.total, expected));
    }
    outcome(
        worst_corr <= 1e-12 && worst_gap <= 1e-12,
        format!("max |correction| {worst_corr:.2e}, max rel gap to closed form {worst_gap:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_rdr = 0.0f64;
    let mut worst_tr = 0.0f64;
    for _ in 0..1000 {
        let p = rng.random_range(1..=5);
        let big_n = rng.random_range(p..=25);
        let z = random_z(&mut rng, big_n, p);
        let d: Vec<f64> = (0..big_n).map(|_| rng.random_range(0.1..5.0)).collect();
        let h = hat(&z, &d).unwrap();
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
        let rdr = &h.r * &dm * &h.r;
        let scale = h.r.amax();
        worst_rdr = worst_rdr.max((&rdr - &h.r).amax() / scale);
        worst_tr = worst_tr.max(rel((&dm * &h.r).trace(), p as f64));
    }
    outcome(
        worst_rdr <= 1e-8 && worst_tr <= 1e-8,
        format!("max rel |RDR - R| {worst_rdr:.2e}, max rel |tr(DR) - p| {worst_tr:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut used = 0;
    let mut worst = 0.0f64;
    let mut worst_exact = 0.0f64;
    let mut ratios = Vec::new();
    while used < 50 {
        let p = rng.random_range(1..=4);
        let big_n = rng.random_range(p + 1..=12);
        let z = random_z(&mut rng, big_n, p);
        let d: Vec<f64> = (0..big_n).map(|_| rng.random_range(0.2..3.0)).collect();
        let proj = Projector::new(&z).unwrap();
        let h = hat(&z, &d).unwrap();
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
        let (lambda, gap) = dense_top(&(&dm * &h.r * &h.r * &dm));
        if gap <= 1e-3 {
            continue;
        }
        used += 1;
        let analytic = proj.correction_sensitivity(&d).unwrap();
        let exact = proj.ch_max_gradient(&d).unwrap();
        for i in 0..big_n {
            let step = 1e-5 * d[i];
            let mut up = d.clone();
            let mut down = d.clone();
            up[i] += step;
            down[i] -= step;
            let fd =
                (proj.pattern_terms(&up).unwrap().ch_max - proj.pattern_terms(&down).unwrap().ch_max) / (2.0 * step);
            let tol_scale = fd.abs().max(analytic[i].abs()).max(1e-8 * lambda);
            worst = worst.max((analytic[i] - fd).abs() / tol_scale);
            worst_exact = worst_exact.max((exact[i] - fd).abs() / fd.abs().max(exact[i].abs()).max(1e-8 * lambda));
            if fd.abs() > 1e-6 * lambda {
                ratios.push(fd / analytic[i] / lambda);
            }
        }
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    outcome(
        worst <= 1e-5,
        format!(
            "max rel error of the stated formula {worst:.2e}; FD/formula equals lambda_1 (mean FD/(formula*lambda_1) = {mean_ratio:.6}); lambda_1-scaled gradient max rel error {worst_exact:.2e}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let z = DMatrix::from_element(2, 1, 1.0);
    let params = RobustnessParams::new(1.0, 1.0).unwrap();
    let counts = [1, 1];
    let probs = [0.5, 0.5];
    let e = expected_mmpe_max(&z, &counts, &probs, params, ExpectationMode::Enumerate, &Sequential).unwrap();
    let target = 5.0 / 3.0;
    let exact_ok = rel(e.trace_r.mean, target) <= 1e-15 && rel(e.ch_max.mean, target) <= 1e-15;
    let mc = expected_mmpe_max(
        &z,
        &counts,
        &probs,
        params,
        ExpectationMode::MonteCarlo { reps: 100_000, seed: 4 },
        &Sequential,
    )
    .unwrap();
    let z_tr = (mc.trace_r.mean - target).abs() / mc.trace_r.std_error;
    let z_ch = (mc.ch_max.mean - target).abs() / mc.ch_max.std_error;
    outcome(
        exact_ok && z_tr <= 3.0 && z_ch <= 3.0,
        format!(
            "enumerated tr R {:.17}, Ch_max {:.17}; Monte Carlo z-scores {z_tr:.2}, {z_ch:.2}",
            e.trace_r.mean, e.ch_max.mean
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut within = 0;
    let mut closer = 0;
    let mut worst_gap = 0.0f64;
    let total = 20;
    for _ in 0..total {
        let big_n = rng.random_range(3..=8);
        let p = rng.random_range(1..=big_n.min(3));
        let pts: Vec<Vec<f64>> = (0..big_n).map(|i| vec![i as f64 / (big_n - 1) as f64]).collect();
        let space = DesignSpace::new(pts).unwrap();
        let model = ModelSpec::Linear(LinearBasis::polynomial(p - 1));
        let z = design_matrix(&model, &space, None).unwrap();
        let max_count = if big_n >= 8 { 4 } else { 5 };
        let counts: Vec<usize> = (0..big_n).map(|_| rng.random_range(3..=max_count)).collect();
        let exact = ExactDesign::new(counts).unwrap();
        let probs: Vec<f64> = (0..big_n).map(|_| rng.random_range(0.85..0.99)).collect();
        let params = RobustnessParams::new(rng.random_range(0.01..1.5), rng.random_range(0.01..0.5)).unwrap();
        let rows = taylor_vs_exact_report(&z, &exact, &probs, params, &Variant::ALL, &Sequential).unwrap();
        let gap_of = |v: Variant| {
            let row = rows.iter().find(|r| r.variant == v).unwrap();
            (row.taylor - row.exact).abs() / row.exact
        };
        let derivation = gap_of(Variant::DerivationConsistent);
        let paper = gap_of(Variant::PaperLiteral);
        worst_gap = worst_gap.max(derivation);
        within += usize::from(derivation <= 0.10);
        closer += usize::from(derivation < paper);
    }
    outcome(
        within == total && closer * 5 >= total * 4,
        format!("derivation-consistent within 10% on {within}/{total} (worst {worst_gap:.3}); strictly closer on {closer}/{total}"),
    )
}

fn criterion_6() -> Outcome {
    let space = DesignSpace::grid_1d(0.0, 1.0, 5).unwrap();
    let model = ModelSpec::Linear(LinearBasis::polynomial(1));
    let z = design_matrix(&model, &space, None).unwrap();
    let exact = ExactDesign::new(vec![3, 1, 2, 1, 3]).unwrap();
    let probs = [0.9, 0.8, 0.85, 0.8, 0.9];
    let params = RobustnessParams::new(0.5, 0.2).unwrap();
    let beta = [1.0, -2.0];
    let reps = 20_000;
    let design = exact.to_design();
    let mode = WorstCaseMode::Expected(ExpectationMode::Enumerate);

    let zero_params = RobustnessParams::new(0.0, params.sigma2()).unwrap();
    let variance = expected_mmpe_max(
        &z,
        exact.counts(),
        &probs,
        zero_params,
        ExpectationMode::Enumerate,
        &Sequential,
    )
    .unwrap()
    .value
    .mean;
    let zero_psi = vec![0.0; 5];
    let setup = SimulationSetup {
        model: &model,
        space: &space,
        exact: &exact,
        probs: &probs,
        psi: &zero_psi,
        beta_true: &beta,
        sigma2: params.sigma2(),
    };
    let clean = simulate_mmpe(&setup, reps, 61, &Sequential).unwrap();
    let z_clean = (clean.mmpe_hat - variance).abs() / clean.se_mmpe;

    let wc = worst_case_contamination(&z, &design, &probs, params, mode, &Sequential).unwrap();
    let setup = SimulationSetup { psi: &wc.psi, ..setup };
    let dirty = simulate_mmpe(&setup, reps, 62, &Sequential).unwrap();
    let z_dirty = (dirty.mmpe_hat - wc.value).abs() / dirty.se_mmpe;
    outcome(
        z_clean <= 3.0 && z_dirty <= 3.0,
        format!(
            "psi = 0: {:.5e} vs {variance:.5e} (z {z_clean:.2}); worst psi: {:.5e} vs {:.5e} (z {z_dirty:.2})",
            clean.mmpe_hat, dirty.mmpe_hat, wc.value
        ),
    )
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_robdesign"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(format!("{name}.json"))
}

fn solve(config: &Path, out: &Path, extra: &[&str]) -> (f64, Duration) {
    let start = Instant::now();
    let status = Command::new(bin())
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .arg("solve")
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    assert!(
        status.status.success(),
        "solve failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("loss_report.json")).unwrap()).unwrap();
    (report["total"].as_f64().unwrap(), elapsed)
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("example1", 4.1406e-2, 0.10),
        ("example2", 5.0803e-2, 0.10),
        ("example3", 1.3611e-3, 0.15),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, target, tol) in cases {
        let (value, elapsed) = solve(&config(name), &dir.path().join(name), &[]);
        let gap = (value - target) / target;
        let ok = gap.abs() <= tol && elapsed < Duration::from_secs(300);
        pass &= ok;
        parts.push(format!(
            "{name} {value:.4e} vs {target:.4e} ({:+.1}%, {:.0}s) {}",
            100.0 * gap,
            elapsed.as_secs_f64(),
            if ok { "ok" } else { "miss" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut failures = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=15);
        let masses: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random::<f64>() < 0.3 {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let design = Design::from_masses(&masses, 1).unwrap();
        let support = design.support();
        let n = support.len() + rng.random_range(0..60);
        let exact = efficient_apportionment(&design, n).unwrap();
        let sums = exact.n() == n;
        let kept = exact
            .counts()
            .iter()
            .zip(design.weights())
            .all(|(&c, &w)| (c > 0) == (w > 0.0));
        let again = efficient_apportionment(&exact.to_design(), n).unwrap();
        if !(sums && kept && again == exact) {
            failures += 1;
        }
    }
    let worked = efficient_apportionment(&Design::new(vec![0.55, 0.25, 0.20], 7).unwrap(), 7).unwrap();
    let worked_ok = worked.counts() == [3, 2, 2];
    outcome(
        failures == 0 && worked_ok,
        format!("{failures} failing pairs of 10000; worked case {:?}", worked.counts()),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example2");
    let mut files = Vec::new();
    for (run, threads) in [(0, "1"), (1, "8"), (2, "1"), (3, "8")] {
        let out = dir.path().join(format!("run{run}"));
        solve(&cfg, &out, &["--threads", threads, "--seed", "17"]);
        files.push(std::fs::read(out.join("design.json")).unwrap());
    }
    let identical = files.windows(2).all(|w| w[0] == w[1]);
    outcome(
        identical,
        format!("design.json identical across 4 runs (threads 1, 8, 1, 8): {identical}"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "exact reduction without missingness",
            criterion_1,
            Duration::from_secs(1),
        ),
        ("projection invariants", criterion_2, Duration::from_secs(5)),
        ("eigenvalue derivative formula", criterion_3, Duration::from_secs(10)),
        ("enumeration oracle", criterion_4, Duration::from_secs(5)),
        ("Taylor versus exact expectation", criterion_5, Duration::from_secs(120)),
        ("simulation decomposition", criterion_6, Duration::from_secs(120)),
        ("published example losses", criterion_7, Duration::from_secs(900)),
        ("apportionment", criterion_8, Duration::from_secs(5)),
        (
            "determinism across thread counts",
            criterion_9,
            Duration::from_secs(600),
        ),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= *budget, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id} [{}] {name}: {detail} ({:.2}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
