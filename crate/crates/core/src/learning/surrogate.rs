//! The surrogate likelihood `log Q(y; μ)`, where `Q` is the chain MRF with
//! parameters `ρ = θ - ∇L_ψ(μ)`, and its gradients at fixed `μ`.

use crate::chain::{dot, ChainModel, MarginalVector, SufficientStatistics};
use crate::energy::Energy;
use crate::error::Result;
use crate::oracle::marginals;

#[derive(Debug, Clone)]
pub struct SurrogateTerms {
    pub log_q: f64,
    /// `S(y) - m`, the gradient of `log Q` with respect to `θ`.
    pub theta_direction: Vec<f64>,
    /// Gradient of `log Q` with respect to `ψ`.
    pub psi_gradient: Vec<f64>,
    /// `m = marginals(ρ)`.
    pub model_marginals: MarginalVector,
}

/// `ρ = θ - ∇L_ψ(μ)`.
pub fn modified_parameters(theta: &ChainModel, energy: &dyn Energy, mu: &MarginalVector) -> Result<ChainModel> {
    let g = energy.grad_mu(mu)?;
    theta.shifted(&g, -1.0)
}

/// `⟨ρ, S(y)⟩ - log Z(ρ)` and its gradients. Since `∂ρ/∂ψ_j = -∂(∇L)/∂ψ_j`,
/// the `ψ` component is `-⟨∂(∇L)/∂ψ_j, S(y) - m⟩`.
pub fn surrogate_terms(
    theta: &ChainModel,
    energy: &dyn Energy,
    mu: &MarginalVector,
    s: &SufficientStatistics,
) -> Result<SurrogateTerms> {
    let rho = modified_parameters(theta, energy, mu)?;
    let result = marginals(&rho)?;
    let log_q = dot(&rho, s.as_marginals())? - result.log_partition;
    let theta_direction: Vec<f64> = s
        .as_slice()
        .iter()
        .zip(result.marginals.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let psi_gradient = if energy.num_psi() == 0 {
        Vec::new()
    } else {
        energy
            .psi_jacobian_dot(mu, &theta_direction)?
            .into_iter()
            .map(|g| -g)
            .collect()
    };
    Ok(SurrogateTerms {
        log_q,
        theta_direction,
        psi_gradient,
        model_marginals: result.marginals,
    })
}

pub fn surrogate_log_likelihood(
    theta: &ChainModel,
    energy: &dyn Energy,
    mu: &MarginalVector,
    s: &SufficientStatistics,
) -> Result<f64> {
    let rho = modified_parameters(theta, energy, mu)?;
    Ok(dot(&rho, s.as_marginals())? - crate::oracle::log_partition(&rho)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{sufficient_statistics, Labeling, Layout};
    use crate::energy::{EnergyFunction, LinearMeasurement, MeasurementEnergy, MeasurementTerm, ScalarLoss};
    use crate::oracle::marginals;

    fn instance() -> (ChainModel, EnergyFunction, MarginalVector, SufficientStatistics) {
        let layout = Layout::new(3, 2).unwrap();
        let theta = ChainModel::from_flat(layout, (0..layout.dim()).map(|i| 0.4 * (i as f64).cos()).collect()).unwrap();
        let terms = (0..2)
            .map(|j| MeasurementTerm {
                measurement: LinearMeasurement::new(
                    (0..layout.dim()).map(|i| (i, ((i + 3 * j) as f64 * 1.3).sin())).collect(),
                    0.2,
                )
                .unwrap(),
                loss: ScalarLoss::SmoothedHinge,
            })
            .collect();
        let energy = MeasurementEnergy::new(layout, terms, vec![0.8, 1.7]).unwrap().into();
        let mu = marginals(&theta.shifted(&vec![0.3; layout.dim()], 1.0).unwrap()).unwrap().marginals;
        let s = sufficient_statistics(layout, &Labeling::new(vec![1, 0, 1])).unwrap();
        (theta, energy, mu, s)
    }

    #[test]
    fn moment_matching_gives_zero_theta_gradient() {
        let layout = Layout::new(3, 2).unwrap();
        let theta = ChainModel::zeros(3, 2).unwrap();
        let s = sufficient_statistics(layout, &Labeling::new(vec![1, 1, 0])).unwrap();
        // Potentials this large put all but e^-60 of the mass on y.
        let peaked = ChainModel::from_flat(layout, s.as_slice().iter().map(|v| 60.0 * v).collect()).unwrap();
        let t = surrogate_terms(&peaked, &crate::energy::ZeroEnergy, s.as_marginals(), &s).unwrap();
        assert!(t.theta_direction.iter().all(|v| v.abs() < 1e-12));
        let flat = surrogate_terms(&theta, &crate::energy::ZeroEnergy, s.as_marginals(), &s).unwrap();
        assert!((flat.log_q + 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn theta_gradient_matches_finite_differences() {
        let (theta, energy, mu, s) = instance();
        let t = surrogate_terms(&theta, &energy, &mu, &s).unwrap();
        let h = 1e-6;
        for i in 0..theta.layout().dim() {
            let mut dir = vec![0.0; theta.layout().dim()];
            dir[i] = h;
            let hi = surrogate_log_likelihood(&theta.shifted(&dir, 1.0).unwrap(), &energy, &mu, &s).unwrap();
            let lo = surrogate_log_likelihood(&theta.shifted(&dir, -1.0).unwrap(), &energy, &mu, &s).unwrap();
            let fd = (hi - lo) / (2.0 * h);
            assert!((fd - t.theta_direction[i]).abs() < 1e-7, "{i}: {fd} vs {}", t.theta_direction[i]);
        }
    }

    #[test]
    fn psi_gradient_matches_finite_differences() {
        let (theta, energy, mu, s) = instance();
        let t = surrogate_terms(&theta, &energy, &mu, &s).unwrap();
        let psi = energy.psi();
        let h = 1e-6;
        for j in 0..psi.len() {
            let mut up = psi.clone();
            up[j] += h;
            let mut down = psi.clone();
            down[j] -= h;
            let hi = surrogate_log_likelihood(&theta, &energy.with_psi(&up).unwrap(), &mu, &s).unwrap();
            let lo = surrogate_log_likelihood(&theta, &energy.with_psi(&down).unwrap(), &mu, &s).unwrap();
            let fd = (hi - lo) / (2.0 * h);
            assert!((fd - t.psi_gradient[j]).abs() < 1e-7 * (1.0 + fd.abs()), "{fd} vs {}", t.psi_gradient[j]);
        }
    }
}
