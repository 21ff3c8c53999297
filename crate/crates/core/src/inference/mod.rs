//! Projected solvers for `min_μ -H_B(μ) - ⟨θ, μ⟩ + L_ψ(μ)` over the chain's
//! marginal polytope. Each step is one call to the exact marginal oracle, so
//! every iterate is a valid marginal vector.

mod accelerated;
mod md;
mod rda;
pub(crate) mod trace;

pub use accelerated::solve_accelerated_rda;
pub use md::solve_bethe_md;
pub use rda::solve_bethe_rda;
pub use trace::{IterateRecord, SolverTrace, TraceStep};

use serde::{Deserialize, Serialize};

use crate::chain::{dot, ChainModel, Labeling, MarginalVector};
use crate::energy::Energy;
use crate::error::{Error, Result};
use crate::oracle::{bethe_entropy_unchecked, map_decode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Rda,
    Md,
    #[serde(alias = "acc-rda")]
    AcceleratedRda,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rda" => Ok(Algorithm::Rda),
            "md" => Ok(Algorithm::Md),
            "acc-rda" | "accelerated-rda" => Ok(Algorithm::AcceleratedRda),
            other => Err(Error::InvalidParameter(format!("unknown solver `{other}`"))),
        }
    }
}

/// Step sizes `η_t` for mirror descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "kebab-case")]
pub enum LearningRate {
    /// `η_t = 1 / (λ t)`; `λ` defaults to `½ (2n - 1)^{-2}`.
    InverseTime { lambda: Option<f64> },
    Constant { eta: f64 },
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate::InverseTime { lambda: None }
    }
}

impl LearningRate {
    pub fn at(&self, t: usize, n: usize) -> f64 {
        match *self {
            LearningRate::InverseTime { lambda } => {
                let lambda = lambda.unwrap_or_else(|| strong_convexity(n));
                1.0 / (lambda * t as f64)
            }
            LearningRate::Constant { eta } => eta,
        }
    }
}

/// Strong-convexity modulus of `-H_B` in the 2-norm for a chain of length `n`.
pub fn strong_convexity(n: usize) -> f64 {
    let blocks = (2 * n - 1) as f64;
    0.5 / (blocks * blocks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Proximal weight `β ≥ 0` of dual averaging.
    pub beta: f64,
    pub learning_rate: LearningRate,
    pub max_iters: usize,
    /// Threshold on `‖μ_t - μ_{t-1}‖₁ / (2n - 1)`.
    pub tolerance: f64,
    /// Lipschitz constant of `∇L`; falls back to the energy's own bound.
    pub smoothness: Option<f64>,
    /// Return the running average of the iterates instead of the last one.
    pub primal_average: bool,
    /// Keep `θ_t`, `μ_t` and `ḡ_t` for every iteration.
    pub record_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            algorithm: Algorithm::Rda,
            beta: 0.0,
            learning_rate: LearningRate::default(),
            max_iters: 500,
            tolerance: 1e-6,
            smoothness: None,
            primal_average: false,
            record_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        SolverConfig {
            algorithm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidParameter("beta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `θ` together with the energy `L_ψ`.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedProblem<'a> {
    pub base: &'a ChainModel,
    pub energy: &'a dyn Energy,
}

impl<'a> AugmentedProblem<'a> {
    pub fn new(base: &'a ChainModel, energy: &'a dyn Energy) -> Result<Self> {
        if let Some(layout) = energy.layout() {
            if layout != base.layout() {
                return Err(Error::DimensionMismatch {
                    what: "energy layout",
                    expected: base.layout().dim(),
                    found: layout.dim(),
                });
            }
        }
        Ok(AugmentedProblem { base, energy })
    }

    /// `-H_B(μ) - ⟨θ, μ⟩ + L_ψ(μ)`.
    pub fn objective(&self, mu: &MarginalVector) -> Result<f64> {
        Ok(-bethe_entropy_unchecked(mu) - dot(self.base, mu)? + self.energy.value(mu)?)
    }

    /// `∇L(μ)`, rejecting non-finite entries.
    pub(crate) fn energy_gradient(&self, mu: &MarginalVector, iteration: usize) -> Result<Vec<f64>> {
        let g = self.energy.grad_mu(mu).map_err(|e| Error::Solver {
            iteration,
            message: e.to_string(),
        })?;
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Solver {
                iteration,
                message: format!("energy gradient entry {i} is {} for {:?}", g[i], self.energy),
            });
        }
        Ok(g)
    }

    /// `θ - ∇L(μ)`, the parameter of the variational MRF at `μ`.
    pub fn modified_parameters(&self, mu: &MarginalVector) -> Result<ChainModel> {
        let g = self.energy_gradient(mu, 0)?;
        self.base.shifted(&g, -1.0)
    }
}

pub fn objective_value(problem: &AugmentedProblem<'_>, mu: &MarginalVector) -> Result<f64> {
    problem.objective(mu)
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub marginals: MarginalVector,
    /// Parameter whose MRF has (approximately) `marginals` as its marginals.
    pub modified_params: ChainModel,
    pub trace: SolverTrace,
}

pub fn solve(problem: &AugmentedProblem<'_>, cfg: &SolverConfig) -> Result<SolverOutput> {
    match cfg.algorithm {
        Algorithm::Rda => solve_bethe_rda(problem, cfg),
        Algorithm::Md => solve_bethe_md(problem, cfg),
        Algorithm::AcceleratedRda => solve_accelerated_rda(problem, cfg),
    }
}

/// Runs the configured solver and decodes the MAP labeling of the modified
/// parameters.
pub fn map_predict(problem: &AugmentedProblem<'_>, cfg: &SolverConfig) -> Result<Labeling> {
    let out = solve(problem, cfg)?;
    map_decode(&out.modified_params)
}

/// `oracle(θ_t)` wrapped with the iteration number on failure.
pub(crate) fn call_oracle(theta: &ChainModel, iteration: usize) -> Result<MarginalVector> {
    crate::oracle::marginals(theta)
        .map(|r| r.marginals)
        .map_err(|e| Error::Solver {
            iteration,
            message: format!("marginal oracle: {e}"),
        })
}
