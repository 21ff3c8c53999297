use super::trace::Recorder;
use super::{call_oracle, AugmentedProblem, SolverConfig, SolverOutput};
use crate::error::Result;

/// Bethe-RDA: dual averaging with the negative Bethe entropy as regularizer.
///
/// Each iteration averages `∇L(μ_{t-1})` into `ḡ_t`, sets
/// `θ_t = θ - t/(t + β) ḡ_t` and calls the oracle on `θ_t`. The returned
/// modified parameter is the final `θ_t`.
pub fn solve_bethe_rda(problem: &AugmentedProblem<'_>, cfg: &SolverConfig) -> Result<SolverOutput> {
    cfg.validate()?;
    let theta = problem.base;
    let mut mu = call_oracle(theta, 0)?;
    let mut rec = Recorder::new(problem, &mu, cfg.primal_average, cfg.record_iterates)?;
    let mut avg_grad = vec![0.0; theta.layout().dim()];
    let mut theta_t = theta.clone();
    for t in 1..=cfg.max_iters {
        let g = problem.energy_gradient(&mu, t)?;
        let tf = t as f64;
        for (a, gi) in avg_grad.iter_mut().zip(&g) {
            *a += (gi - *a) / tf;
        }
        theta_t = theta.shifted(&avg_grad, -tf / (tf + cfg.beta))?;
        let next = call_oracle(&theta_t, t)?;
        let step = rec.push(t, &next, &mu, || theta_t.clone(), &avg_grad)?;
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
