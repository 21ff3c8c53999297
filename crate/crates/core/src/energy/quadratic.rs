use super::Energy;
use crate::chain::MarginalVector;
use crate::error::{ensure_len, Result};

/// `(w / 2) ‖μ - target‖²`, a smooth test energy with `ψ = w`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnergy {
    target: Vec<f64>,
    weight: f64,
}

impl QuadraticEnergy {
    pub fn new(target: Vec<f64>, weight: f64) -> Self {
        QuadraticEnergy { target, weight }
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn set_weight(&mut self, weight: f64) {
        self.weight = weight;
    }

    fn residual(&self, mu: &MarginalVector) -> Result<Vec<f64>> {
        ensure_len("quadratic target", self.target.len(), mu.as_slice().len())?;
        Ok(mu
            .as_slice()
            .iter()
            .zip(&self.target)
            .map(|(m, t)| m - t)
            .collect())
    }
}

impl Energy for QuadraticEnergy {
    fn value(&self, mu: &MarginalVector) -> Result<f64> {
        let r = self.residual(mu)?;
        Ok(0.5 * self.weight * r.iter().map(|v| v * v).sum::<f64>())
    }

    fn grad_mu(&self, mu: &MarginalVector) -> Result<Vec<f64>> {
        Ok(self.residual(mu)?.into_iter().map(|v| self.weight * v).collect())
    }

    fn num_psi(&self) -> usize {
        1
    }

    fn psi_jacobian_dot(&self, mu: &MarginalVector, v: &[f64]) -> Result<Vec<f64>> {
        ensure_len("direction", self.target.len(), v.len())?;
        let r = self.residual(mu)?;
        Ok(vec![r.iter().zip(v).map(|(a, b)| a * b).sum()])
    }

    fn is_convex(&self) -> bool {
        self.weight >= 0.0
    }

    fn smoothness_bound(&self) -> Option<f64> {
        Some(self.weight.abs())
    }
}
