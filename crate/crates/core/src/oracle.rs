//! Exact inference in the base chain: forward–backward marginals and
//! log-partition, max-product decoding, and the Bethe entropy.

use rand::Rng;

use crate::chain::{validate_marginals, ChainModel, Labeling, Layout, MarginalVector};
use crate::error::{Error, Result};

/// Entries at or below this are treated as boundary points by
/// [`bethe_entropy_gradient`].
pub const INTERIOR_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub marginals: MarginalVector,
    pub log_partition: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_finite(theta: &ChainModel) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("oracle input potentials".into()))
    }
}

/// Forward messages `α_i(b) = θ_i(b) + log Σ_a exp(α_{i-1}(a) + θ_e(a, b))`.
fn forward(theta: &ChainModel) -> Vec<Vec<f64>> {
    let l = theta.layout();
    let k = l.k;
    let mut alpha = Vec::with_capacity(l.n);
    alpha.push(theta.node(0).to_vec());
    for i in 1..l.n {
        let prev = &alpha[i - 1];
        let edge = theta.edge(i - 1);
        let node = theta.node(i);
        let next: Vec<f64> = (0..k)
            .map(|b| node[b] + log_sum_exp((0..k).map(|a| prev[a] + edge[a * k + b])))
            .collect();
        alpha.push(next);
    }
    alpha
}

/// Backward messages `β_i(a) = log Σ_b exp(θ_e(a, b) + θ_{i+1}(b) + β_{i+1}(b))`.
fn backward(theta: &ChainModel) -> Vec<Vec<f64>> {
    let l = theta.layout();
    let k = l.k;
    let mut beta = vec![vec![0.0; k]; l.n];
    for i in (0..l.n - 1).rev() {
        let edge = theta.edge(i);
        let node = theta.node(i + 1);
        let (head, tail) = beta.split_at_mut(i + 1);
        let next = &tail[0];
        for (a, slot) in head[i].iter_mut().enumerate() {
            *slot = log_sum_exp((0..k).map(|b| edge[a * k + b] + node[b] + next[b]));
        }
    }
    beta
}

/// Log-partition `log Σ_y exp⟨θ, S(y)⟩`.
pub fn log_partition(theta: &ChainModel) -> Result<f64> {
    check_finite(theta)?;
    let alpha = forward(theta);
    Ok(log_sum_exp(alpha[theta.n() - 1].iter().copied()))
}

/// Node and edge marginals of `P(y) ∝ exp⟨θ, S(y)⟩`.
///
/// Edge blocks are normalized directly and node blocks are read off as
/// edge row/column sums, so the output is locally consistent to rounding.
pub fn marginals(theta: &ChainModel) -> Result<OracleResult> {
    check_finite(theta)?;
    let l = theta.layout();
    let k = l.k;
    let alpha = forward(theta);
    let beta = backward(theta);
    let log_z = log_sum_exp(alpha[l.n - 1].iter().copied());
    if !log_z.is_finite() {
        return Err(Error::NonFinite("log partition".into()));
    }
    let mut values = vec![0.0; l.dim()];
    if l.n == 1 {
        let node = &mut values[l.node_range(0)];
        for (a, v) in node.iter_mut().enumerate() {
            *v = (alpha[0][a] - log_z).exp();
        }
        let s: f64 = node.iter().sum();
        node.iter_mut().for_each(|v| *v /= s);
    } else {
        for e in 0..l.num_edges() {
            let edge_theta = theta.edge(e);
            let right = theta.node(e + 1);
            let range = l.edge_range(e);
            let block = &mut values[range];
            for a in 0..k {
                for b in 0..k {
                    block[a * k + b] = (alpha[e][a]
                        + edge_theta[a * k + b]
                        + right[b]
                        + beta[e + 1][b]
                        - log_z)
                        .exp();
                }
            }
            let s: f64 = block.iter().sum();
            block.iter_mut().for_each(|v| *v /= s);
        }
        for i in 0..l.n {
            let mut node = vec![0.0; k];
            if i < l.num_edges() {
                let edge = &values[l.edge_range(i)];
                for a in 0..k {
                    node[a] = edge[a * k..(a + 1) * k].iter().sum();
                }
            } else {
                let edge = &values[l.edge_range(i - 1)];
                for b in 0..k {
                    node[b] = (0..k).map(|a| edge[a * k + b]).sum();
                }
            }
            values[l.node_range(i)].copy_from_slice(&node);
        }
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("oracle marginals".into()));
    }
    Ok(OracleResult {
        marginals: MarginalVector::from_flat(l, values)?,
        log_partition: log_z,
    })
}

/// A labeling maximizing `⟨θ, S(y)⟩`.
///
/// Ties go to the lowest label: at the last position when choosing where to
/// start the backtrace, and at every earlier position when following
/// back-pointers.
pub fn map_decode(theta: &ChainModel) -> Result<Labeling> {
    check_finite(theta)?;
    let l = theta.layout();
    let k = l.k;
    let mut delta = theta.node(0).to_vec();
    let mut back = vec![vec![0usize; k]; l.n];
    for i in 1..l.n {
        let edge = theta.edge(i - 1);
        let node = theta.node(i);
        let mut next = vec![0.0; k];
        for b in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for a in 0..k {
                let v = delta[a] + edge[a * k + b];
                if v > best {
                    best = v;
                    arg = a;
                }
            }
            next[b] = best + node[b];
            back[i][b] = arg;
        }
        delta = next;
    }
    let mut last = 0;
    for a in 1..k {
        if delta[a] > delta[last] {
            last = a;
        }
    }
    let mut labels = vec![0; l.n];
    labels[l.n - 1] = last;
    for i in (1..l.n).rev() {
        labels[i - 1] = back[i][labels[i]];
    }
    Ok(Labeling::new(labels))
}

/// Draws one labeling from `P(y) ∝ exp⟨θ, S(y)⟩` by sampling node 0 from its
/// marginal and each later node from the edge conditional.
pub fn sample_labeling<R: Rng + ?Sized>(theta: &ChainModel, rng: &mut R) -> Result<Labeling> {
    let mu = marginals(theta)?.marginals;
    let l = theta.layout();
    let k = l.k;
    let draw = |weights: &[f64], rng: &mut R| -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (a, &w) in weights.iter().enumerate() {
            if u < w {
                return a;
            }
            u -= w;
        }
        weights.len() - 1
    };
    let mut labels = Vec::with_capacity(l.n);
    labels.push(draw(mu.node(0), rng));
    for e in 0..l.num_edges() {
        let prev = labels[e];
        let row = &mu.edge(e)[prev * k..(prev + 1) * k];
        labels.push(draw(row, rng));
    }
    Ok(Labeling::new(labels))
}

fn entropy_of(block: &[f64]) -> f64 {
    block
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Bethe entropy `Σ_e H(μ_e) - Σ_i (deg(i) - 1) H(μ_i)`, with `0 log 0 = 0`.
pub fn bethe_entropy(mu: &MarginalVector) -> Result<f64> {
    validate_marginals(mu).into_result()?;
    Ok(bethe_entropy_unchecked(mu))
}

pub(crate) fn bethe_entropy_unchecked(mu: &MarginalVector) -> f64 {
    let l = mu.layout();
    let edges: f64 = (0..l.num_edges()).map(|e| entropy_of(mu.edge(e))).sum();
    let nodes: f64 = (0..l.n)
        .map(|i| (l.degree(i) as f64 - 1.0) * entropy_of(mu.node(i)))
        .sum();
    edges - nodes
}

/// Gradient of the Bethe entropy in the flat layout: `-log μ - 1` on edge
/// entries and `(deg(i) - 1)(log μ + 1)` on node entries.
pub fn bethe_entropy_gradient(mu: &MarginalVector) -> Result<Vec<f64>> {
    if let Some((index, &value)) = mu
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > INTERIOR_THRESHOLD))
    {
        return Err(Error::BoundaryPoint { index, value });
    }
    Ok(bethe_entropy_gradient_unchecked(mu))
}

pub(crate) fn bethe_entropy_gradient_unchecked(mu: &MarginalVector) -> Vec<f64> {
    let l: Layout = mu.layout();
    let mut grad = vec![0.0; l.dim()];
    for i in 0..l.n {
        let coeff = l.degree(i) as f64 - 1.0;
        for idx in l.node_range(i) {
            grad[idx] = coeff * (mu.as_slice()[idx].ln() + 1.0);
        }
    }
    for idx in l.node_len()..l.dim() {
        grad[idx] = -mu.as_slice()[idx].ln() - 1.0;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{all_labelings, dot, sufficient_statistics};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(n: usize, k: usize, scale: f64, rng: &mut ChaCha8Rng) -> ChainModel {
        let layout = Layout::new(n, k).unwrap();
        let params = (0..layout.dim())
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        ChainModel::from_flat(layout, params).unwrap()
    }

    /// Brute-force marginals, log Z and entropy by enumeration.
    fn enumerate(theta: &ChainModel) -> (Vec<f64>, f64, f64) {
        let l = theta.layout();
        let scores: Vec<(Labeling, f64)> = all_labelings(l)
            .map(|y| {
                let s = theta.score(&y).unwrap();
                (y, s)
            })
            .collect();
        let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s.1 - max).exp()).sum();
        let log_z = max + z.ln();
        let mut mu = vec![0.0; l.dim()];
        let mut h = 0.0;
        for (y, s) in &scores {
            let p = (s - log_z).exp();
            h -= p * (s - log_z);
            let stats = sufficient_statistics(l, y).unwrap();
            mu.iter_mut().zip(stats.as_slice()).for_each(|(m, v)| *m += p * v);
        }
        (mu, log_z, h)
    }

    #[test]
    fn zero_potentials_give_uniform() {
        let theta = ChainModel::zeros(4, 3).unwrap();
        let out = marginals(&theta).unwrap();
        let uniform = MarginalVector::uniform(4, 3).unwrap();
        assert!(out.marginals.max_abs_diff(&uniform) < 1e-15);
        assert!((out.log_partition - 4.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_node_normalization() {
        let theta = ChainModel::from_tables(&[vec![3f64.ln(), 0.0]], &[]).unwrap();
        let out = marginals(&theta).unwrap();
        assert!((out.marginals.node(0)[0] - 0.75).abs() < 1e-15);
        assert!((out.marginals.node(0)[1] - 0.25).abs() < 1e-15);
        assert!((out.log_partition - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn marginals_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let theta = random_model(5, 3, 2.0, &mut rng);
            let (mu, log_z, h) = enumerate(&theta);
            let out = marginals(&theta).unwrap();
            for (a, b) in out.marginals.as_slice().iter().zip(&mu) {
                assert!((a - b).abs() < 1e-8);
            }
            assert!((out.log_partition - log_z).abs() < 1e-8);
            assert!((bethe_entropy(&out.marginals).unwrap() - h).abs() < 1e-8);
            assert!(validate_marginals(&out.marginals).passed());
        }
    }

    #[test]
    fn oracle_survives_large_potentials() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta = random_model(30, 4, 800.0, &mut rng);
        let out = marginals(&theta).unwrap();
        assert!(validate_marginals(&out.marginals).passed());
        assert!(out.log_partition.is_finite());
    }

    #[test]
    fn oracle_rejects_non_finite() {
        let layout = Layout::new(2, 2).unwrap();
        let theta = ChainModel::zeros(2, 2).unwrap();
        let mut bad = theta.into_vec();
        bad[0] = f64::INFINITY;
        assert!(ChainModel::from_flat(layout, bad).is_err());
    }

    #[test]
    fn oracle_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = random_model(6, 3, 1.0, &mut rng);
        let a = marginals(&theta).unwrap().marginals;
        let b = marginals(&theta).unwrap().marginals;
        assert_eq!(a, b);
    }

    #[test]
    fn map_tie_breaks() {
        let theta = ChainModel::zeros(5, 3).unwrap();
        assert_eq!(map_decode(&theta).unwrap().as_slice(), &[0, 0, 0, 0, 0]);

        let theta =
            ChainModel::from_tables(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[vec![5.0, 0.0, 0.0, 5.0]])
                .unwrap();
        assert_eq!(map_decode(&theta).unwrap().as_slice(), &[0, 0]);
    }

    #[test]
    fn map_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let theta = random_model(6, 3, 2.0, &mut rng);
            let best = all_labelings(theta.layout())
                .map(|y| theta.score(&y).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            let y = map_decode(&theta).unwrap();
            assert_eq!(theta.score(&y).unwrap(), best);
            for _ in 0..100 {
                let other = Labeling::new((0..6).map(|_| rng.random_range(0..3)).collect());
                assert!(theta.score(&y).unwrap() >= theta.score(&other).unwrap());
            }
        }
    }

    #[test]
    fn entropy_examples() {
        let uniform = MarginalVector::uniform(2, 2).unwrap();
        assert!((bethe_entropy(&uniform).unwrap() - 4f64.ln()).abs() < 1e-12);

        let s = sufficient_statistics(Layout::new(4, 3).unwrap(), &Labeling::new(vec![0, 2, 1, 1]))
            .unwrap();
        assert_eq!(bethe_entropy(s.as_marginals()).unwrap(), 0.0);

        let mut bad = MarginalVector::uniform(2, 2).unwrap();
        bad.as_mut_slice()[0] = 0.9;
        assert!(bethe_entropy(&bad).is_err());
    }

    #[test]
    fn entropy_gradient_at_uniform() {
        let uniform = MarginalVector::uniform(2, 2).unwrap();
        let g = bethe_entropy_gradient(&uniform).unwrap();
        for v in &g[..4] {
            assert_eq!(*v, 0.0);
        }
        for v in &g[4..] {
            assert!((v - (4f64.ln() - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_gradient_rejects_boundary() {
        let s = sufficient_statistics(Layout::new(2, 2).unwrap(), &Labeling::new(vec![0, 1]))
            .unwrap();
        assert!(matches!(
            bethe_entropy_gradient(s.as_marginals()),
            Err(Error::BoundaryPoint { .. })
        ));
        let clipped = s.as_marginals().clamped(1e-6);
        let g = bethe_entropy_gradient(&clipped).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let k = rng.random_range(2..4);
            let theta = random_model(n, k, 1.5, &mut rng);
            let mu = marginals(&theta).unwrap().marginals;
            let g = bethe_entropy_gradient(&mu).unwrap();
            for idx in 0..mu.layout().dim() {
                let mut plus = mu.clone();
                plus.as_mut_slice()[idx] += h;
                let mut minus = mu.clone();
                minus.as_mut_slice()[idx] -= h;
                let fd = (bethe_entropy_unchecked(&plus) - bethe_entropy_unchecked(&minus)) / (2.0 * h);
                let err = (fd - g[idx]).abs() / g[idx].abs().max(1.0);
                assert!(err < 1e-4, "idx {idx}: fd {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn duality_and_variational_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let n = rng.random_range(1..6);
            let k = rng.random_range(2..4);
            let theta = random_model(n, k, 2.0, &mut rng);
            let out = marginals(&theta).unwrap();
            let value = dot(&theta, &out.marginals).unwrap() + bethe_entropy(&out.marginals).unwrap();
            assert!((value - out.log_partition).abs() < 1e-8);

            // Any other chain distribution is a feasible perturbation.
            let other = random_model(n, k, 2.0, &mut rng);
            let nu = marginals(&other).unwrap().marginals;
            for w in [0.01, 0.3, 1.0] {
                let mixed = out.marginals.lerp(&nu, w).unwrap();
                let v = dot(&theta, &mixed).unwrap() + bethe_entropy(&mixed).unwrap();
                assert!(v <= out.log_partition + 1e-10);
            }
        }
    }

    #[test]
    fn negative_entropy_gradient_reproduces_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = random_model(5, 3, 1.0, &mut rng);
        let mu = marginals(&theta).unwrap().marginals;
        let g = bethe_entropy_gradient(&mu).unwrap();
        let dual = ChainModel::from_flat(mu.layout(), g.iter().map(|v| -v).collect()).unwrap();
        let back = marginals(&dual).unwrap().marginals;
        assert!(back.max_abs_diff(&mu) < 1e-12);
    }

    #[test]
    fn sampling_matches_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let theta = random_model(3, 2, 1.0, &mut rng);
        let mu = marginals(&theta).unwrap().marginals;
        let mut counts = vec![0.0; mu.layout().dim()];
        let draws = 40_000;
        for _ in 0..draws {
            let y = sample_labeling(&theta, &mut rng).unwrap();
            let s = sufficient_statistics(theta.layout(), &y).unwrap();
            counts.iter_mut().zip(s.as_slice()).for_each(|(c, v)| *c += v);
        }
        for (c, m) in counts.iter().zip(mu.as_slice()) {
            assert!((c / draws as f64 - m).abs() < 0.02);
        }
    }
}
