//! The five subcommands, callable as library functions.

use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use robdesign_core::apportion::efficient_apportionment;
use robdesign_core::criterion::{
    expected_mmpe_max, pattern_count, rounded_counts, worst_case_contamination, BayesianCriterion, ExpectationMode,
    LossReport, Projector, Variant, WorstCase, WorstCaseMode, ENUMERATION_LIMIT,
};
use robdesign_core::model::{design_matrix, Design, DesignSpace, ExactDesign, ModelSpec, RobustnessParams};
use robdesign_core::numerics::linalg::DEGENERATE_GAP;
use robdesign_core::optimizer::{minimize_over_simplex, SolveResult};
use robdesign_core::simulate::{simulate_mmpe, DecompositionReport, SimulationSetup};
use robdesign_core::{Executor, Sequential};

use crate::config::{Problem, ProblemConfig, WorstCaseKind};
use crate::io::{fmt_all, write_json, write_point_table, DesignFile};
use crate::svg::weight_profile;
use crate::ConfigContext;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub swarm: Option<usize>,
    pub iters: Option<usize>,
    pub restarts: Option<usize>,
}

/// Reads, overrides and validates a config. Every failure is a config error.
pub fn load_problem(path: &Path, overrides: &Overrides) -> Result<Problem> {
    let mut config = ProblemConfig::load(path).tag_config()?;
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    if let Some(v) = overrides.variant {
        config.variant = v;
    }
    if let Some(s) = overrides.swarm {
        config.pso.swarm = s;
    }
    if let Some(i) = overrides.iters {
        config.pso.iters = i;
    }
    if let Some(r) = overrides.restarts {
        config.pso.restarts = r;
    }
    config.build().tag_config()
}

/// The loss being minimized: plain Taylor criterion for linear models,
/// prior-averaged for nonlinear ones.
pub enum Criterion {
    Linear(Projector),
    Bayesian(BayesianCriterion),
}

impl Criterion {
    pub fn new(problem: &Problem) -> Result<Self> {
        match &problem.model {
            ModelSpec::Linear(_) => {
                let z = design_matrix(&problem.model, &problem.space, None)?;
                Ok(Criterion::Linear(Projector::new(&z).tag_config()?))
            }
            ModelSpec::Nonlinear(m) => Ok(Criterion::Bayesian(
                BayesianCriterion::from_priors(m, &problem.space, problem.config.quadrature_nodes).tag_config()?,
            )),
        }
    }

    pub fn evaluate<E: Executor>(
        &self,
        problem: &Problem,
        design: &Design,
        exec: &E,
    ) -> robdesign_core::Result<LossReport> {
        let variant = problem.config.variant;
        match self {
            Criterion::Linear(proj) => proj.taylor(design, &problem.probs, problem.params, variant),
            Criterion::Bayesian(b) => b.evaluate(design, &problem.probs, problem.params, variant, exec),
        }
    }
}

/// `Z`, or `Z(β)` at the reference parameter for nonlinear models.
pub fn reference_design_matrix(problem: &Problem) -> Result<DMatrix<f64>> {
    let beta = problem.reference_beta();
    Ok(design_matrix(&problem.model, &problem.space, Some(&beta))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseSummary {
    pub value: f64,
    pub bound: f64,
    pub saturated: bool,
    pub psi_norm: f64,
}

impl From<&WorstCase> for WorstCaseSummary {
    fn from(w: &WorstCase) -> Self {
        WorstCaseSummary {
            value: w.value,
            bound: w.bound,
            saturated: w.saturated,
            psi_norm: w.psi.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// Contents of `loss_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFile {
    #[serde(flatten)]
    pub report: LossReport,
    pub n: usize,
    pub eta2: f64,
    pub sigma2: f64,
    /// Least-favorable contamination at the reference parameter, without missingness.
    pub worst_case: WorstCaseSummary,
}

fn loss_file(problem: &Problem, design: &Design, report: LossReport) -> Result<LossFile> {
    if report.eig_gap_ratio < DEGENERATE_GAP {
        log::warn!(
            "top eigenvalue is not simple at this design (gap ratio {:e}); the correction terms depend on the chosen eigenvector",
            report.eig_gap_ratio
        );
    }
    let z = reference_design_matrix(problem)?;
    let wc = worst_case_contamination(
        &z,
        design,
        &problem.probs,
        problem.params,
        WorstCaseMode::Plugin,
        &Sequential,
    )?;
    Ok(LossFile {
        report,
        n: problem.config.n,
        eta2: problem.params.eta2(),
        sigma2: problem.params.sigma2(),
        worst_case: (&wc).into(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub robdesign: &'static str,
    pub robdesign_core: &'static str,
}

const VERSIONS: Versions = Versions {
    robdesign: env!("CARGO_PKG_VERSION"),
    robdesign_core: robdesign_core::VERSION,
};

/// Contents of `run_meta.json`; only the timing fields vary between runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub seed: u64,
    pub variant: Variant,
    pub versions: Versions,
    pub threads: usize,
    pub evaluations: usize,
    pub iterations: usize,
    pub best_value: f64,
    pub started_unix_seconds: u64,
    pub wall_time_seconds: f64,
}

/// Everything `solve` produced, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub result: SolveResult,
    pub loss: LossFile,
    pub meta: RunMeta,
}

fn axis_labels(space: &DesignSpace) -> (String, String) {
    let fmt = |x: &[f64]| {
        let parts: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        parts.join(", ")
    };
    let pts = space.points();
    (fmt(&pts[0]), fmt(&pts[pts.len() - 1]))
}

fn write_design(out: &Path, problem: &Problem, design: &Design) -> Result<()> {
    let counts = rounded_counts(design);
    write_json(
        &out.join("design.json"),
        &DesignFile::continuous(&problem.space, design, counts.clone()),
    )?;
    write_point_table(
        &out.join("design.csv"),
        &problem.space,
        &[("xi", fmt_all(design.weights())), ("n_i_rounded", fmt_all(&counts))],
    )?;
    let labels = axis_labels(&problem.space);
    let title = format!(
        "design weights, n = {}, eta2 = {}, sigma2 = {}, {}",
        design.n(),
        problem.params.eta2(),
        problem.params.sigma2(),
        problem.config.variant
    );
    fs::write(
        out.join("weights.svg"),
        weight_profile(&title, design.weights(), (&labels.0, &labels.1)),
    )?;
    Ok(())
}

/// Minimizes the configured loss and writes the five solve artifacts to `out`.
pub fn solve<E: Executor>(problem: &Problem, out: &Path, exec: &E, threads: usize) -> Result<SolveOutput> {
    let started = SystemTime::now();
    let clock = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let criterion = Criterion::new(problem)?;
    let pso = problem.config.pso_config();
    let result = minimize_over_simplex(
        |d| criterion.evaluate(problem, d, &Sequential).map(|r| r.total),
        problem.n_points(),
        problem.config.n,
        problem.model.n_params(),
        &pso,
        exec,
    )?;
    let report = criterion.evaluate(problem, &result.best_design, &Sequential)?;
    let loss = loss_file(problem, &result.best_design, report)?;
    write_design(out, problem, &result.best_design)?;
    write_json(&out.join("loss_report.json"), &loss)?;
    let meta = RunMeta {
        seed: problem.config.seed,
        variant: problem.config.variant,
        versions: VERSIONS,
        threads,
        evaluations: result.evaluations,
        iterations: result.history.len(),
        best_value: result.best_value,
        started_unix_seconds: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        wall_time_seconds: clock.elapsed().as_secs_f64(),
    };
    write_json(&out.join("run_meta.json"), &meta)?;
    Ok(SolveOutput { result, loss, meta })
}

fn load_design_for(problem: &Problem, path: &Path) -> Result<DesignFile> {
    let file = DesignFile::load(path).tag_config()?;
    file.check_space(&problem.space).tag_config()?;
    Ok(file)
}

/// Evaluates the loss of a stored design and writes `loss_report.json`.
pub fn eval<E: Executor>(problem: &Problem, design_path: &Path, out: &Path, exec: &E) -> Result<LossFile> {
    let file = load_design_for(problem, design_path)?;
    let design = file.design().tag_config()?;
    let design = if design.n() == problem.config.n {
        design
    } else {
        log::warn!(
            "design file has n = {}; using n = {} from the config",
            design.n(),
            problem.config.n
        );
        Design::new(design.weights().to_vec(), problem.config.n)?
    };
    let report = Criterion::new(problem)?.evaluate(problem, &design, exec)?;
    let loss = loss_file(problem, &design, report)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("loss_report.json"), &loss)?;
    Ok(loss)
}

/// Apportions a continuous design to `n` runs (default: the file's `n`).
pub fn round(design_path: &Path, n: Option<usize>, out: &Path) -> Result<ExactDesign> {
    let file = DesignFile::load(design_path).tag_config()?;
    let space = file.space().tag_config()?;
    let design = file.design().tag_config()?;
    let exact = efficient_apportionment(&design, n.unwrap_or(file.n)).tag_config()?;
    fs::create_dir_all(out)?;
    write_json(&out.join("exact_design.json"), &DesignFile::exact(&space, &exact))?;
    write_point_table(
        &out.join("exact_design.csv"),
        &space,
        &[("n_i", fmt_all(exact.counts()))],
    )?;
    Ok(exact)
}

/// Contamination used by `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Contamination {
    #[default]
    Zero,
    Worst,
}

impl std::str::FromStr for Contamination {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "zero" => Ok(Contamination::Zero),
            "worst" => Ok(Contamination::Worst),
            other => Err(format!("unknown contamination {other:?} (expected zero or worst)")),
        }
    }
}

fn exact_from_file(file: &DesignFile) -> Result<ExactDesign> {
    if file.is_exact() {
        return file.exact_design().tag_config();
    }
    let design = file.design().tag_config()?;
    efficient_apportionment(&design, file.n)
        .context("apportion the design with `round` first")
        .tag_config()
}

/// Expectation mode for analytic references: the configured one, with the
/// plug-in choice replaced by enumeration when it is small enough.
fn reference_mode(problem: &Problem, counts: &[usize]) -> ExpectationMode {
    let monte_carlo = ExpectationMode::MonteCarlo {
        reps: problem.config.worst_case.reps,
        seed: problem.config.seed,
    };
    match problem.config.worst_case.mode {
        WorstCaseKind::Enumerate => ExpectationMode::Enumerate,
        WorstCaseKind::MonteCarlo => monte_carlo,
        WorstCaseKind::Plugin => match pattern_count(counts) {
            Some(c) if c <= ENUMERATION_LIMIT => ExpectationMode::Enumerate,
            _ => monte_carlo,
        },
    }
}

/// `simulation.json`: the decomposition and the analytic value it should match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationFile {
    #[serde(flatten)]
    pub report: DecompositionReport,
    pub contamination: String,
    pub seed: u64,
    pub counts: Vec<usize>,
    /// `(σ²/N) E tr R` for zero contamination, the maximized MMPE otherwise.
    pub analytic: f64,
    pub identity_holds: bool,
}

pub fn simulate<E: Executor>(
    problem: &Problem,
    design_path: &Path,
    reps: Option<usize>,
    contamination: Contamination,
    out: &Path,
    exec: &E,
) -> Result<SimulationFile> {
    let file = load_design_for(problem, design_path)?;
    let exact = exact_from_file(&file)?;
    let reps = reps.unwrap_or(problem.config.simulation.reps);
    let beta = problem.reference_beta();
    let z = design_matrix(&problem.model, &problem.space, Some(&beta))?;
    let mode = reference_mode(problem, exact.counts());
    let (psi, analytic) = match contamination {
        Contamination::Zero => {
            let params = RobustnessParams::new_unchecked(0.0, problem.params.sigma2());
            let e = expected_mmpe_max(&z, exact.counts(), &problem.probs, params, mode, exec)?;
            (vec![0.0; problem.n_points()], e.value.mean)
        }
        Contamination::Worst => {
            let design = exact.to_design();
            let wc = worst_case_contamination(
                &z,
                &design,
                &problem.probs,
                problem.params,
                WorstCaseMode::Expected(mode),
                exec,
            )?;
            (wc.psi, wc.value)
        }
    };
    let setup = SimulationSetup {
        model: &problem.model,
        space: &problem.space,
        exact: &exact,
        probs: &problem.probs,
        psi: &psi,
        beta_true: &beta,
        sigma2: problem.params.sigma2(),
    };
    let report = simulate_mmpe(&setup, reps, problem.config.seed, exec)?;
    let sim = SimulationFile {
        identity_holds: report.identity_holds(),
        report,
        contamination: match contamination {
            Contamination::Zero => "zero".into(),
            Contamination::Worst => "worst".into(),
        },
        seed: problem.config.seed,
        counts: exact.counts().to_vec(),
        analytic,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("simulation.json"), &sim)?;
    write_decomposition_csv(&out.join("decomposition.csv"), &sim)?;
    Ok(sim)
}

fn write_decomposition_csv(path: &Path, sim: &SimulationFile) -> Result<()> {
    let r = &sim.report;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["term", "estimate", "std_error"])?;
    for (name, value, se) in [
        ("mmpe", r.mmpe_hat, r.se_mmpe),
        ("bias", r.mb_hat, r.se_mb),
        ("variance", r.mv_hat, r.se_mv),
        ("cross", r.cross_hat, r.se_cross),
        ("psi_norm", r.psi_norm_term, 0.0),
        ("analytic", sim.analytic, 0.0),
    ] {
        w.write_record([name.to_string(), value.to_string(), se.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `worst_case.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseFile {
    #[serde(flatten)]
    pub summary: WorstCaseSummary,
    pub mode: WorstCaseKind,
}

/// Least-favorable contamination for a stored design; writes `psi.csv`.
pub fn worstcase<E: Executor>(problem: &Problem, design_path: &Path, out: &Path, exec: &E) -> Result<WorstCase> {
    let file = load_design_for(problem, design_path)?;
    let design = file.design().tag_config()?;
    let z = reference_design_matrix(problem)?;
    let wc = worst_case_contamination(
        &z,
        &design,
        &problem.probs,
        problem.params,
        problem.config.worst_case_mode(),
        exec,
    )?;
    fs::create_dir_all(out)?;
    write_point_table(&out.join("psi.csv"), &problem.space, &[("psi", fmt_all(&wc.psi))])?;
    write_json(
        &out.join("worst_case.json"),
        &WorstCaseFile {
            summary: (&wc).into(),
            mode: problem.config.worst_case.mode,
        },
    )?;
    Ok(wc)
}
