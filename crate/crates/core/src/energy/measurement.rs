use serde::{Deserialize, Serialize};

use super::{check_layout, Energy};
use crate::chain::{Layout, MarginalVector};
use crate::error::{ensure_len, Error, Result};

/// Smoothed hinge: `1/2 - z` for `z <= 0`, `(1 - z)^2 / 2` on `(0, 1)`, and
/// `0` for `z >= 1`. Returns `(value, derivative)`.
pub fn smoothed_hinge(z: f64) -> (f64, f64) {
    if z <= 0.0 {
        (0.5 - z, -1.0)
    } else if z < 1.0 {
        let r = 1.0 - z;
        (0.5 * r * r, z - 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// Univariate convex loss applied to a linear measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalarLoss {
    #[default]
    SmoothedHinge,
    /// `z^2 / 2`.
    Squared,
}

impl ScalarLoss {
    pub fn eval(self, z: f64) -> (f64, f64) {
        match self {
            ScalarLoss::SmoothedHinge => smoothed_hinge(z),
            ScalarLoss::Squared => (0.5 * z * z, z),
        }
    }

    /// Bound on the second derivative.
    pub fn curvature(self) -> f64 {
        1.0
    }
}

/// Sparse linear functional `a^T μ + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMeasurement {
    pub entries: Vec<(usize, f64)>,
    pub offset: f64,
}

impl LinearMeasurement {
    pub fn new(entries: Vec<(usize, f64)>, offset: f64) -> Result<Self> {
        if entries.iter().any(|(_, w)| !w.is_finite()) || !offset.is_finite() {
            return Err(Error::NonFinite("measurement weights".into()));
        }
        Ok(LinearMeasurement { entries, offset })
    }

    /// Weight `w` on every node entry of `label`, which measures the expected
    /// number of positions carrying each label.
    pub fn label_counts(layout: Layout, label_weights: &[f64], offset: f64) -> Result<Self> {
        ensure_len("label weights", layout.k, label_weights.len())?;
        let mut entries = Vec::new();
        for i in 0..layout.n {
            for (a, &w) in label_weights.iter().enumerate() {
                if w != 0.0 {
                    entries.push((layout.node_index(i, a), w));
                }
            }
        }
        Self::new(entries, offset)
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.offset + self.linear(values)
    }

    /// `a^T v` without the offset.
    pub fn linear(&self, values: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * values[i]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        let mut dense: std::collections::BTreeMap<usize, f64> = Default::default();
        for &(i, w) in &self.entries {
            *dense.entry(i).or_default() += w;
        }
        dense.values().map(|w| w * w).sum()
    }

    fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.0).max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementTerm {
    pub measurement: LinearMeasurement,
    pub loss: ScalarLoss,
}

/// `L(μ) = Σ_j ψ_j ℓ_j(a_j^T μ + b_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnergy {
    layout: Layout,
    terms: Vec<MeasurementTerm>,
    psi: Vec<f64>,
}

impl MeasurementEnergy {
    pub fn new(layout: Layout, terms: Vec<MeasurementTerm>, psi: Vec<f64>) -> Result<Self> {
        ensure_len("measurement weights psi", terms.len(), psi.len())?;
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement psi".into()));
        }
        for term in &terms {
            if let Some(i) = term.measurement.max_index() {
                if i >= layout.dim() {
                    return Err(Error::DimensionMismatch {
                        what: "measurement index",
                        expected: layout.dim(),
                        found: i + 1,
                    });
                }
            }
        }
        Ok(MeasurementEnergy { layout, terms, psi })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn terms(&self) -> &[MeasurementTerm] {
        &self.terms
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn set_psi(&mut self, psi: &[f64]) -> Result<()> {
        ensure_len("measurement weights psi", self.terms.len(), psi.len())?;
        self.psi.copy_from_slice(psi);
        Ok(())
    }

    /// Per-term `(value, derivative)` of the scalar loss at the current measurement.
    fn scalar_terms(&self, mu: &MarginalVector) -> Vec<(f64, f64)> {
        self.terms
            .iter()
            .map(|t| t.loss.eval(t.measurement.apply(mu.as_slice())))
            .collect()
    }
}

impl Energy for MeasurementEnergy {
    fn value(&self, mu: &MarginalVector) -> Result<f64> {
        check_layout(self.layout, mu)?;
        Ok(self
            .scalar_terms(mu)
            .iter()
            .zip(&self.psi)
            .map(|((v, _), p)| p * v)
            .sum())
    }

    fn grad_mu(&self, mu: &MarginalVector) -> Result<Vec<f64>> {
        check_layout(self.layout, mu)?;
        let mut grad = vec![0.0; self.layout.dim()];
        for ((term, (_, d)), p) in self.terms.iter().zip(self.scalar_terms(mu)).zip(&self.psi) {
            let scale = p * d;
            if scale != 0.0 {
                for &(i, w) in &term.measurement.entries {
                    grad[i] += scale * w;
                }
            }
        }
        Ok(grad)
    }

    fn num_psi(&self) -> usize {
        self.terms.len()
    }

    fn psi_jacobian_dot(&self, mu: &MarginalVector, v: &[f64]) -> Result<Vec<f64>> {
        check_layout(self.layout, mu)?;
        ensure_len("direction", self.layout.dim(), v.len())?;
        Ok(self
            .terms
            .iter()
            .zip(self.scalar_terms(mu))
            .map(|(t, (_, d))| d * t.measurement.linear(v))
            .collect())
    }

    fn is_convex(&self) -> bool {
        self.psi.iter().all(|&p| p >= 0.0)
    }

    fn smoothness_bound(&self) -> Option<f64> {
        Some(
            self.terms
                .iter()
                .zip(&self.psi)
                .map(|(t, p)| p.abs() * t.loss.curvature() * t.measurement.norm_sq())
                .sum(),
        )
    }

    fn layout(&self) -> Option<Layout> {
        Some(self.layout)
    }
}
