use super::trace::Recorder;
use super::{call_oracle, AugmentedProblem, SolverConfig, SolverOutput};
use crate::chain::ChainModel;
use crate::error::{Error, Result};

/// Accelerated Bethe-RDA for energies with an `L`-Lipschitz gradient.
///
/// With `c_t = 2/(t+1)`, the gradient is taken at `u_t = (1 - c_t) μ_{t-1} + c_t ν_{t-1}`,
/// averaged into `ḡ_t` with the same weights, and
/// `ν_t = oracle(t(t+1) / (4L + t(t+1)) · (θ - ḡ_t))`,
/// `μ_t = (1 - c_t) μ_{t-1} + c_t ν_t`.
/// The returned modified parameter is `θ - ∇L(μ_T)`.
pub fn solve_accelerated_rda(
    problem: &AugmentedProblem<'_>,
    cfg: &SolverConfig,
) -> Result<SolverOutput> {
    cfg.validate()?;
    let lipschitz = cfg
        .smoothness
        .or_else(|| problem.energy.smoothness_bound())
        .ok_or(Error::MissingSmoothness)?;
    if !(lipschitz >= 0.0) {
        return Err(Error::InvalidParameter("smoothness bound must be nonnegative".into()));
    }
    let theta = problem.base;
    let mut mu = call_oracle(theta, 0)?;
    let mut nu = mu.clone();
    let mut rec = Recorder::new(problem, &mu, cfg.primal_average, cfg.record_iterates)?;
    let mut avg_grad = vec![0.0; theta.layout().dim()];
    for t in 1..=cfg.max_iters {
        let tf = t as f64;
        let c = 2.0 / (tf + 1.0);
        let query = mu.lerp(&nu, c)?;
        let g = problem.energy_gradient(&query, t)?;
        for (a, gi) in avg_grad.iter_mut().zip(&g) {
            *a = (1.0 - c) * *a + c * gi;
        }
        let ramp = tf * (tf + 1.0) / (4.0 * lipschitz + tf * (tf + 1.0));
        let params = theta
            .as_slice()
            .iter()
            .zip(&avg_grad)
            .map(|(th, g)| ramp * (th - g))
            .collect();
        let dual = ChainModel::from_flat(theta.layout(), params)?;
        nu = call_oracle(&dual, t)?;
        let next = mu.lerp(&nu, c)?;
        let step = rec.push(t, &next, &mu, || dual.clone(), &avg_grad)?;
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
    let modified_params = problem.modified_parameters(&marginals)?;
    Ok(SolverOutput {
        marginals,
        modified_params,
        trace: rec.trace,
    })
}
