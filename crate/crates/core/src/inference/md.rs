use super::trace::Recorder;
use super::{call_oracle, AugmentedProblem, SolverConfig, SolverOutput};
use crate::chain::ChainModel;
use crate::error::Result;
use crate::oracle::{bethe_entropy_gradient_unchecked, INTERIOR_THRESHOLD};

/// Bethe-MD: composite mirror descent in the Bethe geometry, which also
/// handles non-convex energies.
///
/// With `μ̂` the previous iterate clamped into the interior,
/// `g_t = ∇H_B(μ̂) + η_t ∇L(μ̂)` and `μ_t = oracle((η_t θ - g_t) / (1 + η_t))`.
pub fn solve_bethe_md(problem: &AugmentedProblem<'_>, cfg: &SolverConfig) -> Result<SolverOutput> {
    cfg.validate()?;
    let theta = problem.base;
    let n = theta.n();
    let mut mu = call_oracle(theta, 0)?;
    let mut rec = Recorder::new(problem, &mu, cfg.primal_average, cfg.record_iterates)?;
    let mut theta_t = theta.clone();
    for t in 1..=cfg.max_iters {
        let interior = mu.clamped(INTERIOR_THRESHOLD);
        let entropy_grad = bethe_entropy_gradient_unchecked(&interior);
        let energy_grad = problem.energy_gradient(&interior, t)?;
        let eta = cfg.learning_rate.at(t, n);
        let params = theta
            .as_slice()
            .iter()
            .zip(&entropy_grad)
            .zip(&energy_grad)
            .map(|((th, h), l)| (eta * th - h - eta * l) / (1.0 + eta))
            .collect();
        theta_t = ChainModel::from_flat(theta.layout(), params)?;
        let next = call_oracle(&theta_t, t)?;
        let step = rec.push(t, &next, &mu, || theta_t.clone(), &energy_grad)?;
        mu = next;
        if step < cfg.tolerance {
            rec.trace.converged = true;
            break;
        }
    }
    let marginals = match rec.average() {
        Some(avg) => avg.clone(),
        None => mu,
    };
    Ok(SolverOutput {
        marginals,
        modified_params: theta_t,
        trace: rec.trace,
    })
}
