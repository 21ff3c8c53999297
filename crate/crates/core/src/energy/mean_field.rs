use serde::{Deserialize, Serialize};

use super::{check_layout, Energy};
use crate::chain::{Layout, MarginalVector};
use crate::error::{ensure_len, Error, Result};

/// A higher-order factor left out of the chain, scored on the product of its
/// members' node marginals. The potential is row-major over the members'
/// joint states, first member most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clique {
    pub nodes: Vec<usize>,
    pub potential: Vec<f64>,
}

/// `L(μ) = -w Σ_c ⟨θ_c, ⊗_{i ∈ c} μ_i⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldEnergy {
    layout: Layout,
    cliques: Vec<Clique>,
    weight: f64,
}

impl MeanFieldEnergy {
    pub fn new(layout: Layout, cliques: Vec<Clique>, weight: f64) -> Result<Self> {
        for c in &cliques {
            if c.nodes.is_empty() {
                return Err(Error::InvalidParameter("empty clique".into()));
            }
            for (pos, &i) in c.nodes.iter().enumerate() {
                if i >= layout.n {
                    return Err(Error::InvalidParameter(format!(
                        "clique node {i} outside a chain of length {}",
                        layout.n
                    )));
                }
                if c.nodes[..pos].contains(&i) {
                    return Err(Error::InvalidParameter(format!("clique repeats node {i}")));
                }
            }
            let size = layout.k.pow(c.nodes.len() as u32);
            ensure_len("clique potential", size, c.potential.len())?;
            if c.potential.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("clique potential".into()));
            }
        }
        Ok(MeanFieldEnergy {
            layout,
            cliques,
            weight,
        })
    }

    pub fn cliques(&self) -> &[Clique] {
        &self.cliques
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn set_weight(&mut self, weight: f64) {
        self.weight = weight;
    }

    /// Unweighted `(value, gradient)` of `-Σ_c ⟨θ_c, ⊗ μ_i⟩`.
    fn evaluate(&self, mu: &MarginalVector) -> (f64, Vec<f64>) {
        let l = self.layout;
        let k = l.k;
        let mut value = 0.0;
        let mut grad = vec![0.0; l.dim()];
        for c in &self.cliques {
            let m = c.nodes.len();
            let mut states = vec![0usize; m];
            for &theta in &c.potential {
                let probs: Vec<f64> = (0..m).map(|p| mu.node(c.nodes[p])[states[p]]).collect();
                value -= theta * probs.iter().product::<f64>();
                for p in 0..m {
                    let others: f64 = (0..m).filter(|&q| q != p).map(|q| probs[q]).product();
                    grad[l.node_index(c.nodes[p], states[p])] -= theta * others;
                }
                for slot in states.iter_mut().rev() {
                    *slot += 1;
                    if *slot < k {
                        break;
                    }
                    *slot = 0;
                }
            }
        }
        (value, grad)
    }
}

impl Energy for MeanFieldEnergy {
    fn value(&self, mu: &MarginalVector) -> Result<f64> {
        check_layout(self.layout, mu)?;
        Ok(self.weight * self.evaluate(mu).0)
    }

    fn grad_mu(&self, mu: &MarginalVector) -> Result<Vec<f64>> {
        check_layout(self.layout, mu)?;
        Ok(self.evaluate(mu).1.into_iter().map(|g| self.weight * g).collect())
    }

    fn num_psi(&self) -> usize {
        1
    }

    fn psi_jacobian_dot(&self, mu: &MarginalVector, v: &[f64]) -> Result<Vec<f64>> {
        check_layout(self.layout, mu)?;
        ensure_len("direction", self.layout.dim(), v.len())?;
        let g = self.evaluate(mu).1;
        Ok(vec![g.iter().zip(v).map(|(a, b)| a * b).sum()])
    }

    fn is_convex(&self) -> bool {
        self.weight == 0.0 || self.cliques.iter().all(|c| c.potential.iter().all(|&t| t == 0.0))
    }

    /// Each pair of members contributes a `k × k` Hessian block whose entries
    /// are bounded by `max |θ_c|` on the polytope.
    fn smoothness_bound(&self) -> Option<f64> {
        let k = self.layout.k as f64;
        Some(
            self.weight.abs()
                * self
                    .cliques
                    .iter()
                    .map(|c| {
                        let max = c.potential.iter().fold(0.0f64, |m, t| m.max(t.abs()));
                        (c.nodes.len().saturating_sub(1)) as f64 * k * max
                    })
                    .sum::<f64>(),
        )
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

    #[test]
    fn zero_potential_vanishes() {
        let l = Layout::new(3, 2).unwrap();
        let e = MeanFieldEnergy::new(l, vec![Clique { nodes: vec![0, 2], potential: vec![0.0; 4] }], 1.0)
            .unwrap();
        let mu = MarginalVector::uniform(3, 2).unwrap();
        assert_eq!(e.value(&mu).unwrap(), 0.0);
        assert!(e.grad_mu(&mu).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identity_pair_at_uniform() {
        let l = Layout::new(3, 2).unwrap();
        let e = MeanFieldEnergy::new(
            l,
            vec![Clique { nodes: vec![0, 2], potential: vec![1.0, 0.0, 0.0, 1.0] }],
            1.0,
        )
        .unwrap();
        let mu = MarginalVector::uniform(3, 2).unwrap();
        assert!((e.value(&mu).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_cliques() {
        let l = Layout::new(3, 2).unwrap();
        let bad = |nodes: Vec<usize>, len| {
            MeanFieldEnergy::new(l, vec![Clique { nodes, potential: vec![0.0; len] }], 1.0).is_err()
        };
        assert!(bad(vec![0, 0], 4));
        assert!(bad(vec![0, 5], 4));
        assert!(bad(vec![0, 1], 3));
        assert!(bad(vec![], 1));
    }

    #[test]
    fn triple_clique_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let l = Layout::new(4, 2).unwrap();
        let potential = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let e = MeanFieldEnergy::new(l, vec![Clique { nodes: vec![0, 1, 3], potential }], 0.7).unwrap();
        let theta = crate::chain::ChainModel::from_flat(
            l,
            (0..l.dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mu = crate::oracle::marginals(&theta).unwrap().marginals;
        assert!(check_gradient(&e, &mu, 1e-5).max_rel_error < 1e-5);
    }
}
