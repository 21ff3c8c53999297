use serde::{Deserialize, Serialize};

use super::Energy;
use crate::chain::{Layout, MarginalVector};
use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMode {
    /// Compare the summed node marginals `U(μ) = Σ_i μ_i` against unigram
    /// count vectors of length `k`.
    Unigram,
    /// Compare the concatenated node marginals against one-hot word
    /// encodings of length `n k`; only prototypes of matching length count.
    Full,
}

/// Result of evaluating a prototype energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeEval {
    pub value: f64,
    pub subgradient: Vec<f64>,
    pub argmin: usize,
}

/// `ψ min_i ‖p_i - T(μ)‖₁` where `T` is either `U` or the node part of `μ`.
///
/// Non-convex. The subgradient uses `sign(0) = 0` and breaks argmin ties
/// toward the lowest prototype index.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeEnergy {
    mode: PrototypeMode,
    prototypes: Vec<Vec<f64>>,
    psi: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl PrototypeEnergy {
    pub fn new(mode: PrototypeMode, prototypes: Vec<Vec<f64>>, psi: f64) -> Result<Self> {
        if prototypes.iter().flatten().any(|v| !v.is_finite()) || !psi.is_finite() {
            return Err(Error::NonFinite("prototypes".into()));
        }
        if mode == PrototypeMode::Unigram {
            if let Some(k) = prototypes.first().map(Vec::len) {
                for p in &prototypes {
                    ensure_len("unigram prototype", k, p.len())?;
                }
            }
        }
        Ok(PrototypeEnergy {
            mode,
            prototypes,
            psi,
        })
    }

    pub fn mode(&self) -> PrototypeMode {
        self.mode
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn set_psi(&mut self, psi: f64) {
        self.psi = psi;
    }

    /// Vector the prototypes are compared against.
    fn target(&self, mu: &MarginalVector) -> Vec<f64> {
        match self.mode {
            PrototypeMode::Unigram => {
                let mut u = vec![0.0; mu.k()];
                for i in 0..mu.n() {
                    u.iter_mut().zip(mu.node(i)).for_each(|(a, b)| *a += b);
                }
                u
            }
            PrototypeMode::Full => mu.node_part().to_vec(),
        }
    }

    /// Sorted `(distance, index)` pairs over the admissible prototypes.
    fn distances(&self, mu: &MarginalVector) -> Result<(Vec<f64>, Vec<(f64, usize)>)> {
        let layout = mu.layout();
        let target = self.target(mu);
        let mut out = Vec::new();
        for (idx, p) in self.prototypes.iter().enumerate() {
            if p.len() != target.len() {
                if self.mode == PrototypeMode::Unigram {
                    return Err(Error::DimensionMismatch {
                        what: "unigram prototype",
                        expected: layout.k,
                        found: p.len(),
                    });
                }
                continue;
            }
            let d = p.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>();
            out.push((d, idx));
        }
        if out.is_empty() {
            return Err(Error::EmptyPrototypes { length: layout.n });
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok((target, out))
    }

    /// Sign pattern of `T(μ) - p*` mapped back onto the flat layout.
    fn sign_pattern(&self, layout: Layout, target: &[f64], best: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; layout.dim()];
        match self.mode {
            PrototypeMode::Unigram => {
                for i in 0..layout.n {
                    for a in 0..layout.k {
                        g[layout.node_index(i, a)] = sign(target[a] - best[a]);
                    }
                }
            }
            PrototypeMode::Full => {
                for (idx, (t, p)) in target.iter().zip(best).enumerate() {
                    g[idx] = sign(t - p);
                }
            }
        }
        g
    }

    pub fn evaluate(&self, mu: &MarginalVector) -> Result<PrototypeEval> {
        let (target, ranked) = self.distances(mu)?;
        let (d, argmin) = ranked[0];
        let pattern = self.sign_pattern(mu.layout(), &target, &self.prototypes[argmin]);
        Ok(PrototypeEval {
            value: self.psi * d,
            subgradient: pattern.into_iter().map(|s| self.psi * s).collect(),
            argmin,
        })
    }
}

impl Energy for PrototypeEnergy {
    fn value(&self, mu: &MarginalVector) -> Result<f64> {
        let (_, ranked) = self.distances(mu)?;
        Ok(self.psi * ranked[0].0)
    }

    fn grad_mu(&self, mu: &MarginalVector) -> Result<Vec<f64>> {
        Ok(self.evaluate(mu)?.subgradient)
    }

    fn num_psi(&self) -> usize {
        1
    }

    fn psi_jacobian_dot(&self, mu: &MarginalVector, v: &[f64]) -> Result<Vec<f64>> {
        ensure_len("direction", mu.layout().dim(), v.len())?;
        let (target, ranked) = self.distances(mu)?;
        let pattern = self.sign_pattern(mu.layout(), &target, &self.prototypes[ranked[0].1]);
        Ok(vec![pattern.iter().zip(v).map(|(a, b)| a * b).sum()])
    }

    fn is_convex(&self) -> bool {
        false
    }

    fn smoothness_bound(&self) -> Option<f64> {
        None
    }

    fn smooth_near(&self, mu: &MarginalVector, index: usize, radius: f64) -> bool {
        let layout = mu.layout();
        if index >= layout.node_len() {
            return true;
        }
        let Ok((target, ranked)) = self.distances(mu) else {
            return false;
        };
        // Moving one coordinate by `radius` moves every distance by at most `radius`.
        if ranked.len() > 1 && ranked[1].0 - ranked[0].0 <= 2.0 * radius {
            return false;
        }
        let best = &self.prototypes[ranked[0].1];
        let slot = match self.mode {
            PrototypeMode::Unigram => index % layout.k,
            PrototypeMode::Full => index,
        };
        (target[slot] - best[slot]).abs() > radius
    }
}
