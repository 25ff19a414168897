//! Problem configuration files.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use robdesign_core::criterion::{ExpectationMode, Variant, WorstCaseMode};
use robdesign_core::model::{
    jacobian_check, DesignSpace, LinearBasis, MissingnessModel, ModelSpec, NonlinearModel, ParamTransform,
    RobustnessParams,
};
use robdesign_core::numerics::quadrature::{Prior, DEFAULT_NODES};
use robdesign_core::optimizer::{PsoConfig, Topology};

/// Largest accepted relative deviation between analytic and numeric Jacobians.
const JACOBIAN_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceConfig {
    /// Cartesian grid, last axis fastest.
    Grid {
        axes: Vec<Axis>,
    },
    Points {
        points: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Polynomial {
        degree: usize,
    },
    #[serde(rename = "full_quadratic_2d")]
    FullQuadratic2d,
    /// `β₀ exp(β₁ x)` with `β = offset + scale ∘ t`, `t` in the unit square.
    Exponential {
        #[serde(default)]
        transform: Option<ParamTransform>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoSection {
    pub swarm: usize,
    pub iters: usize,
    pub restarts: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub tolerance: f64,
    pub patience: usize,
    pub topology: Topology,
}

impl Default for PsoSection {
    fn default() -> Self {
        let d = PsoConfig::default();
        PsoSection {
            swarm: d.swarm_size,
            iters: d.iterations,
            restarts: d.restarts,
            inertia: d.inertia,
            cognitive: d.cognitive,
            social: d.social,
            tolerance: d.tolerance,
            patience: d.patience,
            topology: d.topology,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorstCaseKind {
    #[default]
    Plugin,
    Enumerate,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorstCaseSection {
    pub mode: WorstCaseKind,
    pub reps: usize,
}

impl Default for WorstCaseSection {
    fn default() -> Self {
        WorstCaseSection {
            mode: WorstCaseKind::Plugin,
            reps: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub reps: usize,
    /// Defaults to zeros (linear) or the centre of the prior box (nonlinear).
    pub beta_true: Option<Vec<f64>>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            reps: 20_000,
            beta_true: None,
        }
    }
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

/// Everything needed to set up and solve one design problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub space: SpaceConfig,
    pub model: ModelConfig,
    /// Intercept followed by one slope per covariate.
    pub gamma: Vec<f64>,
    pub eta2: f64,
    pub sigma2: f64,
    pub n: usize,
    #[serde(default)]
    pub variant: Variant,
    /// One prior per parameter; nonlinear models only.
    #[serde(default)]
    pub priors: Option<Vec<Prior>>,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default)]
    pub pso: PsoSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub worst_case: WorstCaseSection,
    #[serde(default)]
    pub simulation: SimulationSection,
}

/// Validated configuration with the derived objects built.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ProblemConfig,
    pub space: DesignSpace,
    pub model: ModelSpec,
    pub probs: Vec<f64>,
    pub params: RobustnessParams,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn pso_config(&self) -> PsoConfig {
        PsoConfig {
            swarm_size: self.pso.swarm,
            iterations: self.pso.iters,
            inertia: self.pso.inertia,
            cognitive: self.pso.cognitive,
            social: self.pso.social,
            seed: self.seed,
            restarts: self.pso.restarts,
            tolerance: self.pso.tolerance,
            patience: self.pso.patience,
            topology: self.pso.topology,
        }
    }

    pub fn worst_case_mode(&self) -> WorstCaseMode {
        match self.worst_case.mode {
            WorstCaseKind::Plugin => WorstCaseMode::Plugin,
            WorstCaseKind::Enumerate => WorstCaseMode::Expected(ExpectationMode::Enumerate),
            WorstCaseKind::MonteCarlo => WorstCaseMode::Expected(ExpectationMode::MonteCarlo {
                reps: self.worst_case.reps,
                seed: self.seed,
            }),
        }
    }

    /// Checks every precondition and builds the problem objects.
    pub fn build(self) -> Result<Problem> {
        let space = match &self.space {
            SpaceConfig::Grid { axes } => {
                let axes: Vec<_> = axes.iter().map(|a| (a.lo, a.hi, a.count)).collect();
                DesignSpace::grid(&axes)?
            }
            SpaceConfig::Points { points } => DesignSpace::new(points.clone())?,
        };
        let model = match &self.model {
            ModelConfig::Polynomial { degree } => ModelSpec::Linear(LinearBasis::polynomial(*degree)),
            ModelConfig::FullQuadratic2d => {
                ensure!(space.dim() == 2, "full_quadratic_2d needs two covariates");
                ModelSpec::Linear(LinearBasis::full_quadratic_2d())
            }
            ModelConfig::Exponential { transform } => {
                ensure!(space.dim() == 1, "exponential model needs one covariate");
                let priors = self
                    .priors
                    .clone()
                    .context("nonlinear models need `priors`, one per parameter")?;
                let transform = transform.clone().unwrap_or_else(ParamTransform::recovery_example);
                ModelSpec::Nonlinear(NonlinearModel::new(
                    "exponential",
                    std::sync::Arc::new(robdesign_core::model::Exponential),
                    transform,
                    priors,
                )?)
            }
        };
        if let ModelSpec::Linear(_) = model {
            ensure!(self.priors.is_none(), "`priors` only apply to nonlinear models");
        }
        model.validate(&space)?;
        if let ModelSpec::Nonlinear(m) = &model {
            let dev = jacobian_check(m.response(), &m.nominal_beta(), &space);
            ensure!(
                dev <= JACOBIAN_TOL,
                "analytic Jacobian deviates from finite differences by {dev:e}"
            );
        }
        ensure!(
            self.gamma.len() == space.dim() + 1,
            "gamma needs {} entries (intercept plus one per covariate), got {}",
            space.dim() + 1,
            self.gamma.len()
        );
        let probs = MissingnessModel::new(self.gamma.clone())?.probabilities(&space)?;
        let params = RobustnessParams::new(self.eta2, self.sigma2)?;
        ensure!(self.n >= 1, "n must be positive");
        ensure!(self.quadrature_nodes >= 2, "quadrature_nodes must be at least 2");
        self.pso_config().validate()?;
        if self.worst_case.mode == WorstCaseKind::MonteCarlo {
            ensure!(self.worst_case.reps > 0, "worst_case.reps must be positive");
        }
        ensure!(self.simulation.reps > 0, "simulation.reps must be positive");
        if let Some(beta) = &self.simulation.beta_true {
            if beta.len() != model.n_params() {
                bail!("simulation.beta_true needs {} entries", model.n_params());
            }
        }
        Ok(Problem {
            config: self,
            space,
            model,
            probs,
            params,
        })
    }
}

impl Problem {
    pub fn n_points(&self) -> usize {
        self.space.len()
    }

    /// Parameter vector used for worst-case and simulation runs.
    pub fn reference_beta(&self) -> Vec<f64> {
        if let Some(b) = &self.config.simulation.beta_true {
            return b.clone();
        }
        match &self.model {
            ModelSpec::Linear(b) => vec![0.0; b.dim()],
            ModelSpec::Nonlinear(m) => m.nominal_beta(),
        }
    }
}
