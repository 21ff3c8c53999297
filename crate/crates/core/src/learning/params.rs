use serde::{Deserialize, Serialize};

use super::dataset::Features;
use super::features::MeanMapFeatures;
use crate::chain::{ChainModel, Layout};
use crate::error::{ensure_len, Error, Result};

/// Linear map from per-position features to node potentials, plus one edge
/// table shared by every position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParametrization {
    pub num_states: usize,
    pub feature_dim: usize,
    /// `feature_dim × num_states`, row-major.
    pub node_weights: Vec<f64>,
    /// `num_states × num_states`, row-major.
    pub edge_weights: Vec<f64>,
}

impl ThetaParametrization {
    pub fn zeros(feature_dim: usize, num_states: usize) -> Self {
        ThetaParametrization {
            num_states,
            feature_dim,
            node_weights: vec![0.0; feature_dim * num_states],
            edge_weights: vec![0.0; num_states * num_states],
        }
    }

    pub fn from_parts(
        feature_dim: usize,
        num_states: usize,
        node_weights: Vec<f64>,
        edge_weights: Vec<f64>,
    ) -> Result<Self> {
        ensure_len("node weights", feature_dim * num_states, node_weights.len())?;
        ensure_len("edge weights", num_states * num_states, edge_weights.len())?;
        if node_weights.iter().chain(&edge_weights).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theta parametrization".into()));
        }
        Ok(ThetaParametrization {
            num_states,
            feature_dim,
            node_weights,
            edge_weights,
        })
    }

    pub fn theta_of(&self, x: &Features) -> Result<ChainModel> {
        let k = self.num_states;
        let layout = Layout::new(x.len(), k)?;
        let mut params = vec![0.0; layout.dim()];
        for (i, row) in x.nodes.iter().enumerate() {
            ensure_len("node features", self.feature_dim, row.len())?;
            let out = &mut params[layout.node_range(i)];
            for (f, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let w = &self.node_weights[f * k..(f + 1) * k];
                out.iter_mut().zip(w).for_each(|(o, w)| *o += v * w);
            }
        }
        for e in 0..layout.num_edges() {
            params[layout.edge_range(e)].copy_from_slice(&self.edge_weights);
        }
        ChainModel::from_flat(layout, params)
    }

    /// Adds `scale · (∂θ(x)/∂w)^T dir` into `self`, treating `self` as a gradient buffer.
    pub fn accumulate(&mut self, x: &Features, dir: &[f64], scale: f64) -> Result<()> {
        let k = self.num_states;
        let layout = Layout::new(x.len(), k)?;
        ensure_len("parameter direction", layout.dim(), dir.len())?;
        for (i, row) in x.nodes.iter().enumerate() {
            let g = &dir[layout.node_range(i)];
            for (f, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let w = &mut self.node_weights[f * k..(f + 1) * k];
                w.iter_mut().zip(g).for_each(|(w, g)| *w += scale * v * g);
            }
        }
        for e in 0..layout.num_edges() {
            let g = &dir[layout.edge_range(e)];
            self.edge_weights.iter_mut().zip(g).for_each(|(w, g)| *w += scale * g);
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_dim, self.num_states)
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.node_weights
            .iter_mut()
            .zip(&other.node_weights)
            .for_each(|(s, o)| *s += a * o);
        self.edge_weights
            .iter_mut()
            .zip(&other.edge_weights)
            .for_each(|(s, o)| *s += a * o);
    }

    pub fn norm_sq(&self) -> f64 {
        self.node_weights
            .iter()
            .chain(&self.edge_weights)
            .map(|v| v * v)
            .sum()
    }
}

/// Keeps learned weights nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `ψ = log(1 + e^z)`.
    #[default]
    Softplus,
    /// `ψ = z`, clipped at zero when nonnegativity is required.
    Projected,
}

impl Link {
    fn apply(self, z: f64, nonnegative: bool) -> (f64, f64) {
        match self {
            Link::Softplus => {
                let value = if z > 30.0 { z } else { z.exp().ln_1p() };
                (value, 1.0 / (1.0 + (-z).exp()))
            }
            Link::Projected if nonnegative && z < 0.0 => (0.0, 0.0),
            Link::Projected => (z, 1.0),
        }
    }

    fn inverse(self, psi: f64) -> f64 {
        match self {
            Link::Softplus => {
                let p = psi.max(1e-6);
                if p > 30.0 {
                    p
                } else {
                    p.exp_m1().ln()
                }
            }
            Link::Projected => psi,
        }
    }
}

/// Where the sequence-level features feeding `ψ(x)` come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalSource {
    /// The example's own `global` vector.
    Provided,
    MeanMap(MeanMapFeatures),
}

impl GlobalSource {
    pub fn features(&self, x: &Features) -> Result<Vec<f64>> {
        match self {
            GlobalSource::Provided => x
                .global
                .clone()
                .ok_or_else(|| Error::InvalidParameter("example has no global features".into())),
            GlobalSource::MeanMap(map) => map.mean_map(&x.nodes),
        }
    }

    pub fn dim(&self, provided: Option<usize>) -> Result<usize> {
        match self {
            GlobalSource::Provided => provided
                .ok_or_else(|| Error::InvalidParameter("dataset has no global features".into())),
            GlobalSource::MeanMap(map) => Ok(map.num_features()),
        }
    }
}

/// Energy weights, either shared by all examples or computed from features
/// as `ψ(x) = link(b + W^T φ(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PsiParametrization {
    Constant {
        values: Vec<f64>,
    },
    Featurized {
        /// `global_dim × num_psi`, row-major.
        weights: Vec<f64>,
        bias: Vec<f64>,
        link: Link,
        source: GlobalSource,
    },
}

impl PsiParametrization {
    pub fn constant(values: Vec<f64>) -> Self {
        PsiParametrization::Constant { values }
    }

    /// Featurized weights that start out reproducing `values` on every input.
    pub fn featurized_from(values: &[f64], global_dim: usize, link: Link, source: GlobalSource) -> Self {
        PsiParametrization::Featurized {
            weights: vec![0.0; global_dim * values.len()],
            bias: values.iter().map(|&v| link.inverse(v)).collect(),
            link,
            source,
        }
    }

    pub fn num_psi(&self) -> usize {
        match self {
            PsiParametrization::Constant { values } => values.len(),
            PsiParametrization::Featurized { bias, .. } => bias.len(),
        }
    }

    /// `(ψ(x), dψ/dz)` where `z` is the pre-link activation.
    fn forward(&self, x: &Features, nonnegative: bool) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        match self {
            PsiParametrization::Constant { values } => {
                let psi = values
                    .iter()
                    .map(|&v| if nonnegative { v.max(0.0) } else { v })
                    .collect();
                Ok((psi, vec![1.0; values.len()], Vec::new()))
            }
            PsiParametrization::Featurized {
                weights,
                bias,
                link,
                source,
            } => {
                let m = bias.len();
                let phi = source.features(x)?;
                ensure_len("psi weights", phi.len() * m, weights.len())?;
                let mut z = bias.clone();
                for (f, &p) in phi.iter().enumerate() {
                    let row = &weights[f * m..(f + 1) * m];
                    z.iter_mut().zip(row).for_each(|(z, w)| *z += p * w);
                }
                let (psi, slope) = z.iter().map(|&z| link.apply(z, nonnegative)).unzip();
                Ok((psi, slope, phi))
            }
        }
    }

    pub fn realize(&self, x: &Features, nonnegative: bool) -> Result<Vec<f64>> {
        Ok(self.forward(x, nonnegative)?.0)
    }

    /// Adds `scale · (∂ψ(x)/∂params)^T dpsi` into `grad`, which must have the
    /// same shape as `self`.
    pub fn accumulate(
        &self,
        grad: &mut Self,
        x: &Features,
        dpsi: &[f64],
        scale: f64,
        nonnegative: bool,
    ) -> Result<()> {
        ensure_len("psi gradient", self.num_psi(), dpsi.len())?;
        let (_, slope, phi) = self.forward(x, nonnegative)?;
        match grad {
            PsiParametrization::Constant { values } => {
                values.iter_mut().zip(dpsi).for_each(|(v, g)| *v += scale * g);
            }
            PsiParametrization::Featurized { weights, bias, .. } => {
                let m = bias.len();
                let dz: Vec<f64> = dpsi.iter().zip(&slope).map(|(g, s)| scale * g * s).collect();
                bias.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
                for (f, &p) in phi.iter().enumerate() {
                    let row = &mut weights[f * m..(f + 1) * m];
                    row.iter_mut().zip(&dz).for_each(|(w, d)| *w += p * d);
                }
            }
        }
        Ok(())
    }

    /// Same shape as `self`, all learnable entries zero.
    pub fn zeros_like(&self) -> Self {
        match self {
            PsiParametrization::Constant { values } => PsiParametrization::Constant {
                values: vec![0.0; values.len()],
            },
            PsiParametrization::Featurized {
                weights,
                bias,
                link,
                source,
            } => PsiParametrization::Featurized {
                weights: vec![0.0; weights.len()],
                bias: vec![0.0; bias.len()],
                link: *link,
                source: source.clone(),
            },
        }
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        match (self, other) {
            (PsiParametrization::Constant { values }, PsiParametrization::Constant { values: o }) => {
                values.iter_mut().zip(o).for_each(|(v, o)| *v += a * o);
            }
            (
                PsiParametrization::Featurized { weights, bias, .. },
                PsiParametrization::Featurized {
                    weights: ow,
                    bias: ob,
                    ..
                },
            ) => {
                weights.iter_mut().zip(ow).for_each(|(v, o)| *v += a * o);
                bias.iter_mut().zip(ob).for_each(|(v, o)| *v += a * o);
            }
            _ => panic!("psi parametrizations of different modes"),
        }
    }

    /// Clips constant weights at zero; featurized weights rely on the link.
    pub fn project_nonnegative(&mut self) {
        if let PsiParametrization::Constant { values } = self {
            values.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    pub fn learnable_len(&self) -> usize {
        match self {
            PsiParametrization::Constant { values } => values.len(),
            PsiParametrization::Featurized { weights, bias, .. } => weights.len() + bias.len(),
        }
    }
}
