//! Chain-structured CRF parameters and marginal vectors.
//!
//! Parameters `θ`, marginals `μ` and sufficient statistics `S(y)` all share
//! one flat layout: the `n` node blocks (`k` entries each) come first, followed
//! by the `n - 1` edge blocks (`k * k` entries each, row-major so that entry
//! `(a, b)` of edge `e` pairs state `a` at node `e` with state `b` at node
//! `e + 1`). Every gradient in the crate uses the same layout.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// Tolerance on block sums and nonnegativity used by [`validate_marginals`].
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Tolerance on local consistency used by [`validate_marginals`].
pub const CONSISTENCY_TOL: f64 = 1e-8;

pub const MODEL_SCHEMA: &str = "bethe.chain_model/v1";

/// Shape of a chain: `n` nodes with `k` states each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub k: usize,
}

impl Layout {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParameter("chain length must be at least 1".into()));
        }
        if k < 2 {
            return Err(Error::InvalidParameter("a chain needs at least 2 states".into()));
        }
        Ok(Layout { n, k })
    }

    pub fn num_edges(&self) -> usize {
        self.n - 1
    }

    /// Number of node plus edge blocks, `2n - 1`.
    pub fn num_blocks(&self) -> usize {
        2 * self.n - 1
    }

    pub fn node_len(&self) -> usize {
        self.n * self.k
    }

    /// Total parameter dimension `n k + (n - 1) k^2`.
    pub fn dim(&self) -> usize {
        self.n * self.k + self.num_edges() * self.k * self.k
    }

    pub fn node_range(&self, i: usize) -> Range<usize> {
        debug_assert!(i < self.n);
        i * self.k..(i + 1) * self.k
    }

    pub fn edge_range(&self, e: usize) -> Range<usize> {
        debug_assert!(e < self.num_edges());
        let kk = self.k * self.k;
        let start = self.node_len() + e * kk;
        start..start + kk
    }

    /// Range of block `b`, counting node blocks first and then edge blocks.
    pub fn block_range(&self, b: usize) -> Range<usize> {
        if b < self.n {
            self.node_range(b)
        } else {
            self.edge_range(b - self.n)
        }
    }

    pub fn node_index(&self, i: usize, a: usize) -> usize {
        i * self.k + a
    }

    pub fn edge_index(&self, e: usize, a: usize, b: usize) -> usize {
        self.node_len() + e * self.k * self.k + a * self.k + b
    }

    /// Degree of node `i` in the chain.
    pub fn degree(&self, i: usize) -> usize {
        if self.n == 1 {
            0
        } else if i == 0 || i == self.n - 1 {
            1
        } else {
            2
        }
    }

    /// Number of labelings, `k^n`, as a float so that it cannot overflow.
    pub fn num_labelings(&self) -> f64 {
        (self.k as f64).powi(self.n as i32)
    }
}

/// Log-potentials `θ` of a chain CRF.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    layout: Layout,
    params: Vec<f64>,
}

impl ChainModel {
    pub fn zeros(n: usize, k: usize) -> Result<Self> {
        let layout = Layout::new(n, k)?;
        Ok(ChainModel {
            layout,
            params: vec![0.0; layout.dim()],
        })
    }

    pub fn from_flat(layout: Layout, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(layout.n, layout.k)?;
        ensure_len("chain parameters", layout.dim(), params.len())?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("chain potentials".into()));
        }
        Ok(ChainModel { layout, params })
    }

    /// Builds a model from per-node tables (`k` entries) and per-edge tables
    /// (`k * k` entries, row-major).
    pub fn from_tables(node: &[Vec<f64>], edge: &[Vec<f64>]) -> Result<Self> {
        let n = node.len();
        let k = node.first().map_or(0, Vec::len);
        let layout = Layout::new(n, k)?;
        ensure_len("edge tables", layout.num_edges(), edge.len())?;
        let mut params = Vec::with_capacity(layout.dim());
        for table in node {
            ensure_len("node table", k, table.len())?;
            params.extend_from_slice(table);
        }
        for table in edge {
            ensure_len("edge table", k * k, table.len())?;
            params.extend_from_slice(table);
        }
        Self::from_flat(layout, params)
    }

    /// Expands a position-tied (homogeneous) chain into per-position tables.
    pub fn homogeneous(n: usize, node: &[f64], edge: &[f64]) -> Result<Self> {
        let k = node.len();
        let layout = Layout::new(n, k)?;
        ensure_len("edge table", k * k, edge.len())?;
        let mut params = Vec::with_capacity(layout.dim());
        for _ in 0..n {
            params.extend_from_slice(node);
        }
        for _ in 0..layout.num_edges() {
            params.extend_from_slice(edge);
        }
        Self::from_flat(layout, params)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    pub fn k(&self) -> usize {
        self.layout.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.params
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.params[self.layout.node_range(i)]
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.params[self.layout.edge_range(e)]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    /// `a * self + b * other`.
    pub fn affine(&self, a: f64, other: &ChainModel, b: f64) -> Result<ChainModel> {
        ensure_len("chain parameters", self.params.len(), other.params.len())?;
        let params = self
            .params
            .iter()
            .zip(&other.params)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(ChainModel {
            layout: self.layout,
            params,
        })
    }

    /// Parameters `self + scale * direction` for a flat direction vector.
    pub fn shifted(&self, direction: &[f64], scale: f64) -> Result<ChainModel> {
        ensure_len("parameter shift", self.params.len(), direction.len())?;
        let params = self
            .params
            .iter()
            .zip(direction)
            .map(|(x, d)| x + scale * d)
            .collect();
        Self::from_flat(self.layout, params)
    }

    /// Score `⟨θ, S(y)⟩` of a labeling.
    pub fn score(&self, y: &Labeling) -> Result<f64> {
        y.check(self.layout)?;
        let l = self.layout;
        let labels = y.as_slice();
        let mut s: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &a)| self.params[l.node_index(i, a)])
            .sum();
        for e in 0..l.num_edges() {
            s += self.params[l.edge_index(e, labels[e], labels[e + 1])];
        }
        Ok(s)
    }

    pub fn to_file(&self) -> ChainModelFile {
        let l = self.layout;
        ChainModelFile {
            schema: MODEL_SCHEMA.to_string(),
            n: l.n,
            k: l.k,
            node_potentials: (0..l.n).map(|i| self.node(i).to_vec()).collect(),
            edge_potentials: (0..l.num_edges()).map(|e| self.edge(e).to_vec()).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ChainModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form of a [`ChainModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModelFile {
    pub schema: String,
    pub n: usize,
    pub k: usize,
    /// One row of `k` log-potentials per node.
    pub node_potentials: Vec<Vec<f64>>,
    /// One row-major `k * k` table per edge.
    pub edge_potentials: Vec<Vec<f64>>,
}

impl ChainModelFile {
    pub fn into_model(self) -> Result<ChainModel> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::Schema {
                expected: MODEL_SCHEMA.into(),
                found: self.schema,
            });
        }
        ensure_len("node tables", self.n, self.node_potentials.len())?;
        let model = ChainModel::from_tables(&self.node_potentials, &self.edge_potentials)?;
        ensure_len("states", self.k, model.k())?;
        Ok(model)
    }
}

/// An assignment of one state to every node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Labeling(Vec<usize>);

impl Labeling {
    pub fn new(labels: Vec<usize>) -> Self {
        Labeling(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn check(&self, layout: Layout) -> Result<()> {
        ensure_len("labeling", layout.n, self.0.len())?;
        for (position, &label) in self.0.iter().enumerate() {
            if label >= layout.k {
                return Err(Error::LabelOutOfRange {
                    position,
                    label,
                    num_states: layout.k,
                });
            }
        }
        Ok(())
    }

    /// Number of positions carrying each label.
    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for &a in &self.0 {
            c[a] += 1;
        }
        c
    }
}

impl From<Vec<usize>> for Labeling {
    fn from(v: Vec<usize>) -> Self {
        Labeling(v)
    }
}

/// Node and edge marginals `μ` in the shared flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVector {
    layout: Layout,
    values: Vec<f64>,
}

impl MarginalVector {
    /// Wraps a flat vector without checking polytope membership; use
    /// [`validate_marginals`] for that.
    pub fn from_flat(layout: Layout, values: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(layout.n, layout.k)?;
        ensure_len("marginal vector", layout.dim(), values.len())?;
        Ok(MarginalVector { layout, values })
    }

    pub fn uniform(n: usize, k: usize) -> Result<Self> {
        let layout = Layout::new(n, k)?;
        let mut values = vec![1.0 / k as f64; layout.node_len()];
        values.resize(layout.dim(), 1.0 / (k * k) as f64);
        Ok(MarginalVector { layout, values })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    pub fn k(&self) -> usize {
        self.layout.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[self.layout.node_range(i)]
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.values[self.layout.edge_range(e)]
    }

    /// Only the concatenated node blocks.
    pub fn node_part(&self) -> &[f64] {
        &self.values[..self.layout.node_len()]
    }

    /// `(1 - w) * self + w * other`.
    pub fn lerp(&self, other: &MarginalVector, w: f64) -> Result<MarginalVector> {
        ensure_len("marginal vector", self.values.len(), other.values.len())?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        Ok(MarginalVector {
            layout: self.layout,
            values,
        })
    }

    pub fn l1_distance(&self, other: &MarginalVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn max_abs_diff(&self, other: &MarginalVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Normalized change `‖self - other‖₁ / (2n - 1)` used as the stopping test.
    pub fn block_step(&self, other: &MarginalVector) -> f64 {
        self.l1_distance(other) / self.layout.num_blocks() as f64
    }

    /// Copy with every entry clamped to `[floor, 1]` and every block renormalized.
    pub fn clamped(&self, floor: f64) -> MarginalVector {
        let mut out = self.clone();
        for b in 0..self.layout.num_blocks() {
            let block = &mut out.values[self.layout.block_range(b)];
            block.iter_mut().for_each(|v| *v = v.clamp(floor, 1.0));
            let s: f64 = block.iter().sum();
            block.iter_mut().for_each(|v| *v /= s);
        }
        out
    }
}

/// The 0-1 indicator vector `S(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStatistics {
    labels: Labeling,
    indicators: MarginalVector,
}

impl SufficientStatistics {
    pub fn labeling(&self) -> &Labeling {
        &self.labels
    }

    pub fn as_slice(&self) -> &[f64] {
        self.indicators.as_slice()
    }

    /// `S(y)` viewed as a vertex of the marginal polytope.
    pub fn as_marginals(&self) -> &MarginalVector {
        &self.indicators
    }

    pub fn node_indicator(&self, i: usize) -> &[f64] {
        self.indicators.node(i)
    }

    pub fn edge_indicator(&self, e: usize) -> &[f64] {
        self.indicators.edge(e)
    }
}

pub fn sufficient_statistics(layout: Layout, y: &Labeling) -> Result<SufficientStatistics> {
    y.check(layout)?;
    let mut values = vec![0.0; layout.dim()];
    let labels = y.as_slice();
    for (i, &a) in labels.iter().enumerate() {
        values[layout.node_index(i, a)] = 1.0;
    }
    for e in 0..layout.num_edges() {
        values[layout.edge_index(e, labels[e], labels[e + 1])] = 1.0;
    }
    Ok(SufficientStatistics {
        labels: y.clone(),
        indicators: MarginalVector { layout, values },
    })
}

/// Inner product `⟨θ, μ⟩` over all node and edge entries.
pub fn dot(theta: &ChainModel, mu: &MarginalVector) -> Result<f64> {
    if theta.layout() != mu.layout() {
        return Err(Error::DimensionMismatch {
            what: "dot product",
            expected: theta.layout().dim(),
            found: mu.layout().dim(),
        });
    }
    Ok(dot_slices(theta.as_slice(), mu.as_slice()))
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of [`validate_marginals`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalCheck {
    /// Largest deviation of a block sum from one, or largest negative entry.
    pub max_simplex_violation: f64,
    /// Largest mismatch between an edge row/column sum and its node block.
    pub max_consistency_violation: f64,
}

impl MarginalCheck {
    pub fn passed(&self) -> bool {
        self.max_simplex_violation <= SIMPLEX_TOL
            && self.max_consistency_violation <= CONSISTENCY_TOL
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::InvalidMarginals {
                simplex: self.max_simplex_violation,
                consistency: self.max_consistency_violation,
            })
        }
    }
}

pub fn validate_marginals(mu: &MarginalVector) -> MarginalCheck {
    let l = mu.layout();
    let k = l.k;
    let mut simplex: f64 = 0.0;
    for b in 0..l.num_blocks() {
        let block = &mu.as_slice()[l.block_range(b)];
        let sum: f64 = block.iter().sum();
        simplex = simplex.max((sum - 1.0).abs());
        for &v in block {
            if v.is_nan() {
                simplex = f64::INFINITY;
            } else {
                simplex = simplex.max(-v);
            }
        }
    }
    let mut consistency: f64 = 0.0;
    for e in 0..l.num_edges() {
        let edge = mu.edge(e);
        let left = mu.node(e);
        let right = mu.node(e + 1);
        for a in 0..k {
            let row: f64 = edge[a * k..(a + 1) * k].iter().sum();
            let col: f64 = (0..k).map(|r| edge[r * k + a]).sum();
            consistency = consistency.max((row - left[a]).abs());
            consistency = consistency.max((col - right[a]).abs());
        }
    }
    if simplex.is_nan() {
        simplex = f64::INFINITY;
    }
    if consistency.is_nan() {
        consistency = f64::INFINITY;
    }
    MarginalCheck {
        max_simplex_violation: simplex,
        max_consistency_violation: consistency,
    }
}

/// Iterates over every labeling of a layout in lexicographic order
/// (position 0 most significant).
pub fn all_labelings(layout: Layout) -> impl Iterator<Item = Labeling> {
    let total = layout.num_labelings() as usize;
    (0..total).map(move |mut idx| {
        let mut labels = vec![0; layout.n];
        for slot in labels.iter_mut().rev() {
            *slot = idx % layout.k;
            idx /= layout.k;
        }
        Labeling(labels)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(n: usize, k: usize, rng: &mut ChaCha8Rng) -> ChainModel {
        let layout = Layout::new(n, k).unwrap();
        let params = (0..layout.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        ChainModel::from_flat(layout, params).unwrap()
    }

    #[test]
    fn layout_dimension() {
        let l = Layout::new(4, 3).unwrap();
        assert_eq!(l.dim(), 4 * 3 + 3 * 9);
        assert_eq!(l.num_blocks(), 7);
        assert_eq!(l.edge_range(2), 12 + 18..12 + 27);
        assert!(Layout::new(0, 3).is_err());
        assert!(Layout::new(3, 1).is_err());
    }

    #[test]
    fn sufficient_statistics_two_nodes() {
        let l = Layout::new(2, 2).unwrap();
        let s = sufficient_statistics(l, &Labeling::new(vec![0, 1])).unwrap();
        assert_eq!(s.node_indicator(0), &[1.0, 0.0]);
        assert_eq!(s.node_indicator(1), &[0.0, 1.0]);
        assert_eq!(s.edge_indicator(0), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn sufficient_statistics_single_node() {
        let l = Layout::new(1, 3).unwrap();
        let s = sufficient_statistics(l, &Labeling::new(vec![2])).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sufficient_statistics_rejects_bad_labels() {
        let l = Layout::new(3, 2).unwrap();
        assert!(matches!(
            sufficient_statistics(l, &Labeling::new(vec![0, 1])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            sufficient_statistics(l, &Labeling::new(vec![0, 2, 1])),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn average_statistics_is_uniform() {
        for n in 1..=6 {
            for k in 2..=3 {
                let l = Layout::new(n, k).unwrap();
                let mut mean = vec![0.0; l.dim()];
                let mut count = 0.0;
                for y in all_labelings(l) {
                    let s = sufficient_statistics(l, &y).unwrap();
                    mean.iter_mut().zip(s.as_slice()).for_each(|(m, v)| *m += v);
                    count += 1.0;
                }
                let uniform = MarginalVector::uniform(n, k).unwrap();
                for (m, u) in mean.iter().zip(uniform.as_slice()) {
                    assert!((m / count - u).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dot_examples() {
        let theta = ChainModel::zeros(3, 2).unwrap();
        let mu = MarginalVector::uniform(3, 2).unwrap();
        assert_eq!(dot(&theta, &mu).unwrap(), 0.0);

        let theta = ChainModel::from_tables(&[vec![1.0, -1.0]], &[]).unwrap();
        let mu = MarginalVector::uniform(1, 2).unwrap();
        assert_eq!(dot(&theta, &mu).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = random_model(5, 3, &mut rng);
        let y = Labeling::new(vec![2, 0, 1, 1, 0]);
        let s = sufficient_statistics(theta.layout(), &y).unwrap();
        let mut lookup = 0.0;
        for (i, &a) in y.as_slice().iter().enumerate() {
            lookup += theta.node(i)[a];
        }
        for e in 0..4 {
            let (a, b) = (y.as_slice()[e], y.as_slice()[e + 1]);
            lookup += theta.edge(e)[a * 3 + b];
        }
        let d = dot(&theta, s.as_marginals()).unwrap();
        assert!((d - lookup).abs() < 1e-12);
        assert!((theta.score(&y).unwrap() - lookup).abs() < 1e-12);
    }

    #[test]
    fn dot_rejects_mismatched_shapes() {
        let theta = ChainModel::zeros(3, 2).unwrap();
        let mu = MarginalVector::uniform(2, 2).unwrap();
        assert!(dot(&theta, &mu).is_err());
    }

    #[test]
    fn validate_examples() {
        let mu = MarginalVector::uniform(4, 3).unwrap();
        let check = validate_marginals(&mu);
        assert!(check.passed());
        assert!(check.max_simplex_violation < 1e-15);
        assert!(check.max_consistency_violation < 1e-15);

        let mut bad = MarginalVector::uniform(2, 2).unwrap();
        bad.as_mut_slice()[0] += 0.1;
        let check = validate_marginals(&bad);
        assert!(!check.passed());
        assert!((check.max_simplex_violation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn every_vertex_is_locally_consistent() {
        let l = Layout::new(4, 3).unwrap();
        for y in all_labelings(l) {
            let s = sufficient_statistics(l, &y).unwrap();
            assert!(validate_marginals(s.as_marginals()).passed());
        }
    }

    #[test]
    fn homogeneous_expansion() {
        let m = ChainModel::homogeneous(3, &[1.0, 2.0], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(m.node(2), &[1.0, 2.0]);
        assert_eq!(m.edge(1), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn model_rejects_non_finite() {
        assert!(ChainModel::from_tables(&[vec![f64::NAN, 0.0]], &[]).is_err());
    }

    proptest! {
        #[test]
        fn dot_is_bilinear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..6);
            let k = rng.random_range(2..4);
            let t1 = random_model(n, k, &mut rng);
            let t2 = random_model(n, k, &mut rng);
            let mu = MarginalVector::uniform(n, k).unwrap().lerp(
                sufficient_statistics(t1.layout(), &Labeling::new((0..n).map(|_| rng.random_range(0..k)).collect())).unwrap().as_marginals(),
                rng.random_range(0.0..1.0),
            ).unwrap();
            let combined = t1.affine(a, &t2, b).unwrap();
            let lhs = dot(&combined, &mu).unwrap();
            let rhs = a * dot(&t1, &mu).unwrap() + b * dot(&t2, &mu).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn model_json_round_trip_is_bit_identical(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..5);
            let k = rng.random_range(2..4);
            let layout = Layout::new(n, k).unwrap();
            let params: Vec<f64> = (0..layout.dim())
                .map(|_| rng.random::<f64>() * 10f64.powi(rng.random_range(-30..30)) * if rng.random() { -1.0 } else { 1.0 })
                .collect();
            let m = ChainModel::from_flat(layout, params).unwrap();
            let back = ChainModel::from_json(&m.to_json().unwrap()).unwrap();
            prop_assert_eq!(m.layout(), back.layout());
            for (x, y) in m.as_slice().iter().zip(back.as_slice()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
