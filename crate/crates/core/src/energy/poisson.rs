use serde::{Deserialize, Serialize};

use super::{check_layout, Energy};
use crate::chain::{Layout, MarginalVector};
use crate::error::{ensure_len, Error, Result};

/// Node entries are floored here before the `y / μ` term is evaluated.
pub const POISSON_FLOOR: f64 = 1e-8;

/// Observed count at one node entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountObservation {
    pub node: usize,
    pub state: usize,
    pub count: u64,
}

/// Negative Poisson log-likelihood of noisy counts:
/// `w Σ_obs [s μ - y log(s μ)]` with the `log y!` constant dropped.
///
/// `scale` is the detection rate times the population; `weight` rescales the
/// whole term (use `1 / population` to keep gradients of order one).
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonEnergy {
    layout: Layout,
    observations: Vec<CountObservation>,
    scale: f64,
    weight: f64,
}

impl PoissonEnergy {
    pub fn new(
        layout: Layout,
        observations: Vec<CountObservation>,
        scale: f64,
        weight: f64,
    ) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!("poisson scale must be positive, got {scale}")));
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::InvalidParameter(format!("poisson weight must be nonnegative, got {weight}")));
        }
        for o in &observations {
            if o.node >= layout.n || o.state >= layout.k {
                return Err(Error::InvalidParameter(format!(
                    "observation at node {} state {} is outside the chain",
                    o.node, o.state
                )));
            }
        }
        Ok(PoissonEnergy {
            layout,
            observations,
            scale,
            weight,
        })
    }

    /// Observes every node entry, reading counts row by row from `counts[i][a]`.
    pub fn dense(layout: Layout, counts: &[Vec<u64>], scale: f64, weight: f64) -> Result<Self> {
        ensure_len("count rows", layout.n, counts.len())?;
        let mut obs = Vec::with_capacity(layout.node_len());
        for (node, row) in counts.iter().enumerate() {
            ensure_len("count row", layout.k, row.len())?;
            for (state, &count) in row.iter().enumerate() {
                obs.push(CountObservation { node, state, count });
            }
        }
        Self::new(layout, obs, scale, weight)
    }

    pub fn observations(&self) -> &[CountObservation] {
        &self.observations
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    fn entry(&self, mu: &MarginalVector, o: &CountObservation) -> f64 {
        mu.as_slice()[self.layout.node_index(o.node, o.state)].max(POISSON_FLOOR)
    }
}

impl Energy for PoissonEnergy {
    fn value(&self, mu: &MarginalVector) -> Result<f64> {
        check_layout(self.layout, mu)?;
        let total: f64 = self
            .observations
            .iter()
            .map(|o| {
                let rate = self.scale * self.entry(mu, o);
                rate - o.count as f64 * rate.ln()
            })
            .sum();
        Ok(self.weight * total)
    }

    fn grad_mu(&self, mu: &MarginalVector) -> Result<Vec<f64>> {
        check_layout(self.layout, mu)?;
        let mut grad = vec![0.0; self.layout.dim()];
        for o in &self.observations {
            let m = self.entry(mu, o);
            grad[self.layout.node_index(o.node, o.state)] +=
                self.weight * (self.scale - o.count as f64 / m);
        }
        Ok(grad)
    }

    fn num_psi(&self) -> usize {
        0
    }

    fn psi_jacobian_dot(&self, mu: &MarginalVector, _v: &[f64]) -> Result<Vec<f64>> {
        check_layout(self.layout, mu)?;
        Ok(Vec::new())
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn smoothness_bound(&self) -> Option<f64> {
        None
    }

    fn smooth_near(&self, mu: &MarginalVector, index: usize, radius: f64) -> bool {
        index >= self.layout.node_len() || mu.as_slice()[index] - radius > POISSON_FLOOR
    }

    fn layout(&self) -> Option<Layout> {
        Some(self.layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::check_gradient;
    use rand::{Rng, SeedableRng};

    fn single(count: u64, scale: f64) -> PoissonEnergy {
        let l = Layout::new(1, 2).unwrap();
        PoissonEnergy::new(l, vec![CountObservation { node: 0, state: 0, count }], scale, 1.0).unwrap()
    }

    #[test]
    fn gradient_arithmetic() {
        let mu = MarginalVector::uniform(1, 2).unwrap();
        assert_eq!(single(3, 10.0).grad_mu(&mu).unwrap(), vec![4.0, 0.0]);
        assert_eq!(single(5, 10.0).grad_mu(&mu).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_nonpositive_scale() {
        let l = Layout::new(1, 2).unwrap();
        assert!(PoissonEnergy::new(l, vec![], 0.0, 1.0).is_err());
        assert!(PoissonEnergy::new(l, vec![], -1.0, 1.0).is_err());
    }

    #[test]
    fn boundary_values_stay_finite() {
        let l = Layout::new(2, 2).unwrap();
        let e = PoissonEnergy::dense(l, &[vec![0, 0], vec![0, 0]], 1e-3, 1.0).unwrap();
        let mut mu = MarginalVector::uniform(2, 2).unwrap();
        mu.as_mut_slice()[0] = 0.0;
        assert!(e.value(&mu).unwrap().is_finite());
        assert!(e.grad_mu(&mu).unwrap()[..4].iter().all(|g| g.is_finite() && *g > 0.0));
        let e = PoissonEnergy::dense(l, &[vec![4, 0], vec![0, 0]], 1e-3, 1.0).unwrap();
        assert!(e.grad_mu(&mu).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn random_gradient_check() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let l = Layout::new(4, 3).unwrap();
        let counts: Vec<Vec<u64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(0..40)).collect()).collect();
        let e = PoissonEnergy::dense(l, &counts, 50.0, 0.02).unwrap();
        let theta = crate::chain::ChainModel::from_flat(
            l,
            (0..l.dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mu = crate::oracle::marginals(&theta).unwrap().marginals;
        assert!(check_gradient(&e, &mu, 1e-6).max_rel_error < 1e-4);
    }
}
