//! Brute-force ground truth for small chains.
//!
//! Everything here enumerates all `k^n` labelings, so it is only usable for
//! tiny instances and exists to check the fast code paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::{all_labelings, ChainModel, Labeling, Layout, MarginalVector};
use crate::error::{Error, Result};
use crate::inference::AugmentedProblem;

/// Largest joint table we are willing to materialize.
pub const MAX_CONFIGURATIONS: usize = 1_000_000;

fn guard(layout: Layout) -> Result<usize> {
    let states = layout.num_labelings();
    if states > MAX_CONFIGURATIONS as f64 {
        return Err(Error::SizeGuard {
            states,
            limit: MAX_CONFIGURATIONS,
        });
    }
    Ok(states as usize)
}

/// Flat indices set to one in `S(y)`, for every labeling in enumeration order.
fn active_indices(layout: Layout) -> Vec<Vec<usize>> {
    all_labelings(layout)
        .map(|y| {
            let labels = y.as_slice();
            let mut idx: Vec<usize> = labels
                .iter()
                .enumerate()
                .map(|(i, &a)| layout.node_index(i, a))
                .collect();
            idx.extend((0..layout.num_edges()).map(|e| layout.edge_index(e, labels[e], labels[e + 1])));
            idx
        })
        .collect()
}

/// A distribution over all labelings, indexed in the order of
/// [`all_labelings`] (position 0 most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    layout: Layout,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn new(layout: Layout, probs: Vec<f64>) -> Result<Self> {
        let size = guard(layout)?;
        crate::error::ensure_len("joint table", size, probs.len())?;
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "joint table must be a distribution (total {total})"
            )));
        }
        Ok(JointTable { layout, probs })
    }

    /// Point mass on one labeling.
    pub fn point_mass(layout: Layout, y: &Labeling) -> Result<Self> {
        y.check(layout)?;
        let size = guard(layout)?;
        let idx = y.as_slice().iter().fold(0, |acc, &a| acc * layout.k + a);
        let mut probs = vec![0.0; size];
        probs[idx] = 1.0;
        Ok(JointTable { layout, probs })
    }

    pub fn uniform(layout: Layout) -> Result<Self> {
        let size = guard(layout)?;
        Ok(JointTable {
            layout,
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Shannon entropy `-Σ q log q`.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// `E_q[f(y)]` for an arbitrary function of the labeling.
    pub fn expectation(&self, mut f: impl FnMut(&Labeling) -> f64) -> f64 {
        all_labelings(self.layout)
            .zip(&self.probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(y, &p)| p * f(&y))
            .sum()
    }
}

/// Normalized `exp(scores)`.
fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

fn scores(active: &[Vec<usize>], params: &[f64]) -> Vec<f64> {
    active
        .iter()
        .map(|idx| idx.iter().map(|&i| params[i]).sum())
        .collect()
}

fn marginals_of(layout: Layout, active: &[Vec<usize>], probs: &[f64]) -> MarginalVector {
    let mut values = vec![0.0; layout.dim()];
    for (idx, &p) in active.iter().zip(probs) {
        for &i in idx {
            values[i] += p;
        }
    }
    MarginalVector::from_flat(layout, values).expect("layout matches by construction")
}

/// Gibbs distribution `q_y ∝ exp⟨θ, S(y)⟩` by enumeration.
pub fn enumerate_distribution(theta: &ChainModel) -> Result<JointTable> {
    let layout = theta.layout();
    guard(layout)?;
    if !theta.is_finite() {
        return Err(Error::NonFinite("potentials".into()));
    }
    let active = active_indices(layout);
    Ok(JointTable {
        layout,
        probs: softmax(&scores(&active, theta.as_slice())),
    })
}

/// `Σ_y q_y S(y)`.
pub fn exact_marginals(table: &JointTable) -> MarginalVector {
    marginals_of(table.layout, &active_indices(table.layout), &table.probs)
}

/// Log-partition by enumeration.
pub fn enumerate_log_partition(theta: &ChainModel) -> Result<f64> {
    let layout = theta.layout();
    guard(layout)?;
    let s = scores(&active_indices(layout), theta.as_slice());
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln())
}

/// Highest `⟨θ, S(y)⟩` over all labelings, with the lowest-index maximizer.
pub fn enumerate_map(theta: &ChainModel) -> Result<(Labeling, f64)> {
    let layout = theta.layout();
    guard(layout)?;
    let s = scores(&active_indices(layout), theta.as_slice());
    let mut best = 0;
    for (i, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = i;
        }
    }
    let y = all_labelings(layout).nth(best).expect("index in range");
    Ok((y, s[best]))
}

/// Settings for [`solve_augmented_exact`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactConfig {
    /// Exponentiated-gradient iterations per start.
    pub iterations: usize,
    /// The step at iteration `t` is `step / √t`.
    pub step: f64,
    /// Random starts used when the energy is not convex.
    pub restarts: usize,
    /// Stop once `max_y |log q_y - log q̂_y| < tolerance`, where `q̂` is the
    /// Gibbs table of the current modified parameters.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            iterations: 5000,
            step: 0.1,
            restarts: 20,
            tolerance: 1e-14,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub table: JointTable,
    pub marginals: MarginalVector,
    /// `-H(q) - ⟨θ, μ(q)⟩ + L(μ(q))`.
    pub objective: f64,
    pub iterations: usize,
}

/// Minimizes `-H(q) - ⟨θ, μ(q)⟩ + L_ψ(μ(q))` over the full simplex of
/// joint tables by exponentiated-gradient descent. Non-convex energies get
/// the best of several random starts.
pub fn solve_augmented_exact(
    problem: &AugmentedProblem<'_>,
    cfg: &ExactConfig,
) -> Result<ExactSolution> {
    let layout = problem.base.layout();
    let size = guard(layout)?;
    let active = active_indices(layout);
    let starts = if problem.energy.is_convex() {
        1
    } else {
        cfg.restarts.max(1)
    };
    let runs: Vec<Result<ExactSolution>> = (0..starts)
        .into_par_iter()
        .map(|r| {
            // The first start is the Gibbs table of the base model.
            let init = if r == 0 {
                scores(&active, problem.base.as_slice())
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
                (0..size).map(|_| rng.random_range(-3.0..3.0)).collect()
            };
            descend(problem, &active, init, cfg)
        })
        .collect();
    let mut best: Option<ExactSolution> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

fn descend(
    problem: &AugmentedProblem<'_>,
    active: &[Vec<usize>],
    init_logits: Vec<f64>,
    cfg: &ExactConfig,
) -> Result<ExactSolution> {
    let layout = problem.base.layout();
    let theta = problem.base.as_slice();
    let mut probs = softmax(&init_logits);
    let mut log_q: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let mut done = 0;
    for t in 1..=cfg.iterations {
        let mu = marginals_of(layout, active, &probs);
        let grad = problem.energy.grad_mu(&mu)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("energy gradient in exact solver".into()));
        }
        let rho: Vec<f64> = theta.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let target = scores(active, &rho);
        let target_log = {
            let p = softmax(&target);
            p.iter().map(|v| v.ln()).collect::<Vec<_>>()
        };
        let gap = log_q
            .iter()
            .zip(&target_log)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        done = t;
        if gap < cfg.tolerance {
            break;
        }
        let eta = (cfg.step / (t as f64).sqrt()).min(1.0);
        let mixed: Vec<f64> = log_q
            .iter()
            .zip(&target_log)
            .map(|(a, b)| (1.0 - eta) * a + eta * b)
            .collect();
        probs = softmax(&mixed);
        log_q = probs.iter().map(|p| p.ln()).collect();
    }
    let marginals = marginals_of(layout, active, &probs);
    let table = JointTable {
        layout,
        probs,
    };
    let value = problem.energy.value(&marginals)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("energy value in exact solver".into()));
    }
    let objective = -table.entropy() - crate::chain::dot(problem.base, &marginals)? + value;
    Ok(ExactSolution {
        table,
        marginals,
        objective,
        iterations: done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{sufficient_statistics, validate_marginals};
    use crate::energy::{QuadraticEnergy, ZeroEnergy};
    use crate::oracle::{log_partition, marginals};

    fn random_theta(n: usize, k: usize, seed: u64) -> ChainModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = Layout::new(n, k).unwrap();
        ChainModel::from_flat(l, (0..l.dim()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn table_examples() {
        let t = enumerate_distribution(&ChainModel::zeros(3, 2).unwrap()).unwrap();
        assert!(t.probs().iter().all(|&p| (p - 0.125).abs() < 1e-15));
        let theta = ChainModel::from_tables(&[vec![3f64.ln(), 0.0]], &[]).unwrap();
        let t = enumerate_distribution(&theta).unwrap();
        assert!((t.probs()[0] - 0.75).abs() < 1e-15 && (t.probs()[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn table_marginals_match_oracle() {
        for seed in 0..10 {
            let theta = random_theta(4, 3, seed);
            let mu = exact_marginals(&enumerate_distribution(&theta).unwrap());
            assert!(mu.max_abs_diff(&marginals(&theta).unwrap().marginals) < 1e-10);
        }
    }

    #[test]
    fn point_mass_and_uniform() {
        let l = Layout::new(3, 3).unwrap();
        let y = Labeling::new(vec![2, 0, 1]);
        let mu = exact_marginals(&JointTable::point_mass(l, &y).unwrap());
        assert_eq!(&mu, sufficient_statistics(l, &y).unwrap().as_marginals());
        let mu = exact_marginals(&JointTable::uniform(l).unwrap());
        assert!(mu.max_abs_diff(&MarginalVector::uniform(3, 3).unwrap()) < 1e-15);
    }

    #[test]
    fn random_table_is_locally_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = Layout::new(4, 2).unwrap();
        let raw: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let t = JointTable::new(l, raw.iter().map(|v| v / total).collect()).unwrap();
        assert!(validate_marginals(&exact_marginals(&t)).passed());
    }

    #[test]
    fn guard_trips() {
        let theta = ChainModel::zeros(21, 2).unwrap();
        assert!(matches!(enumerate_distribution(&theta), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn zero_energy_recovers_gibbs() {
        let theta = random_theta(3, 3, 4);
        let p = AugmentedProblem::new(&theta, &ZeroEnergy).unwrap();
        let sol = solve_augmented_exact(&p, &ExactConfig::default()).unwrap();
        assert!(sol.marginals.max_abs_diff(&marginals(&theta).unwrap().marginals) < 1e-8);
        assert!((sol.objective + log_partition(&theta).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn strong_quadratic_pulls_to_vertex() {
        let theta = random_theta(3, 2, 5);
        let l = theta.layout();
        let y0 = Labeling::new(vec![1, 0, 1]);
        let s = sufficient_statistics(l, &y0).unwrap();
        let e = QuadraticEnergy::new(s.as_slice().to_vec(), 50.0);
        let p = AugmentedProblem::new(&theta, &e).unwrap();
        let sol = solve_augmented_exact(&p, &ExactConfig::default()).unwrap();
        let base = p.objective(&marginals(&theta).unwrap().marginals).unwrap();
        assert!(sol.objective < base);
        for (i, &a) in y0.as_slice().iter().enumerate() {
            assert!(sol.marginals.node(i)[a] > 0.9);
        }
    }
}
