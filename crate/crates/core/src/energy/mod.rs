//! Non-local energies `L_ψ(μ)` added to the variational objective.
//!
//! Every energy is a penalty that the solvers minimize. Families that carry
//! learnable weights `ψ` also expose the Jacobian products needed to
//! differentiate the surrogate likelihood.

mod mean_field;
mod measurement;
mod poisson;
mod prototype;
mod quadratic;
mod spec;

pub use mean_field::{Clique, MeanFieldEnergy};
pub use measurement::{
    smoothed_hinge, LinearMeasurement, MeasurementEnergy, MeasurementTerm, ScalarLoss,
};
pub use poisson::{CountObservation, PoissonEnergy, POISSON_FLOOR};
pub use prototype::{PrototypeEnergy, PrototypeEval, PrototypeMode};
pub use quadratic::QuadraticEnergy;
pub use spec::{EnergyFile, EnergySpec, MeasurementSpec, ENERGY_SCHEMA};

use crate::chain::{Layout, MarginalVector, SufficientStatistics};
use crate::error::{ensure_len, Error, Result};

pub trait Energy: Send + Sync + std::fmt::Debug {
    fn value(&self, mu: &MarginalVector) -> Result<f64>;

    /// `∇_μ L_ψ(μ)` in the flat layout (a subgradient where `L` is not smooth).
    fn grad_mu(&self, mu: &MarginalVector) -> Result<Vec<f64>>;

    fn num_psi(&self) -> usize;

    /// `[⟨∂(∇_μ L)/∂ψ_j, v⟩]_j`.
    fn psi_jacobian_dot(&self, mu: &MarginalVector, v: &[f64]) -> Result<Vec<f64>>;

    /// Ascent direction of `log Q(y; μ)` in `ψ`, using `μ` in place of the
    /// marginals of the modified parameters.
    ///
    /// With `ρ = θ - ∇L_ψ(μ)` we have `∂ρ/∂ψ_j = -∂(∇L)/∂ψ_j`, so the
    /// component is `-⟨∂(∇L)/∂ψ_j, S(y) - μ⟩`.
    fn psi_grad(&self, mu: &MarginalVector, s: &SufficientStatistics) -> Result<Vec<f64>> {
        ensure_len("sufficient statistics", mu.layout().dim(), s.as_slice().len())?;
        let diff: Vec<f64> = s
            .as_slice()
            .iter()
            .zip(mu.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        Ok(self
            .psi_jacobian_dot(mu, &diff)?
            .into_iter()
            .map(|g| -g)
            .collect())
    }

    fn is_convex(&self) -> bool;

    /// Lipschitz constant of `grad_mu` on the polytope, when known.
    fn smoothness_bound(&self) -> Option<f64>;

    /// Whether the energy is differentiable in coordinate `index` within
    /// `radius` of `mu`.
    fn smooth_near(&self, _mu: &MarginalVector, _index: usize, _radius: f64) -> bool {
        true
    }

    /// Shape the energy was built for, if it is tied to one.
    fn layout(&self) -> Option<Layout> {
        None
    }
}

pub(crate) fn check_layout(layout: Layout, mu: &MarginalVector) -> Result<()> {
    if layout != mu.layout() {
        return Err(Error::DimensionMismatch {
            what: "energy input",
            expected: layout.dim(),
            found: mu.layout().dim(),
        });
    }
    Ok(())
}

/// `L ≡ 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZeroEnergy;

impl Energy for ZeroEnergy {
    fn value(&self, _mu: &MarginalVector) -> Result<f64> {
        Ok(0.0)
    }

    fn grad_mu(&self, mu: &MarginalVector) -> Result<Vec<f64>> {
        Ok(vec![0.0; mu.layout().dim()])
    }

    fn num_psi(&self) -> usize {
        0
    }

    fn psi_jacobian_dot(&self, _mu: &MarginalVector, _v: &[f64]) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn smoothness_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Closed set of the energy families shipped with the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyFunction {
    Zero(ZeroEnergy),
    Measurement(MeasurementEnergy),
    Quadratic(QuadraticEnergy),
    MeanField(MeanFieldEnergy),
    Prototype(PrototypeEnergy),
    Poisson(PoissonEnergy),
}

macro_rules! dispatch {
    ($self:expr, $e:ident => $body:expr) => {
        match $self {
            EnergyFunction::Zero($e) => $body,
            EnergyFunction::Measurement($e) => $body,
            EnergyFunction::Quadratic($e) => $body,
            EnergyFunction::MeanField($e) => $body,
            EnergyFunction::Prototype($e) => $body,
            EnergyFunction::Poisson($e) => $body,
        }
    };
}

impl EnergyFunction {
    pub fn family(&self) -> &'static str {
        match self {
            EnergyFunction::Zero(_) => "zero",
            EnergyFunction::Measurement(_) => "measurement",
            EnergyFunction::Quadratic(_) => "quadratic",
            EnergyFunction::MeanField(_) => "mean_field",
            EnergyFunction::Prototype(_) => "prototype",
            EnergyFunction::Poisson(_) => "poisson",
        }
    }

    /// Current weights, one per `ψ` component.
    pub fn psi(&self) -> Vec<f64> {
        match self {
            EnergyFunction::Zero(_) | EnergyFunction::Poisson(_) => Vec::new(),
            EnergyFunction::Measurement(e) => e.psi().to_vec(),
            EnergyFunction::Quadratic(e) => vec![e.weight()],
            EnergyFunction::MeanField(e) => vec![e.weight()],
            EnergyFunction::Prototype(e) => vec![e.psi()],
        }
    }

    pub fn set_psi(&mut self, psi: &[f64]) -> Result<()> {
        ensure_len("psi", self.num_psi(), psi.len())?;
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("psi".into()));
        }
        match self {
            EnergyFunction::Zero(_) | EnergyFunction::Poisson(_) => {}
            EnergyFunction::Measurement(e) => e.set_psi(psi)?,
            EnergyFunction::Quadratic(e) => e.set_weight(psi[0]),
            EnergyFunction::MeanField(e) => e.set_weight(psi[0]),
            EnergyFunction::Prototype(e) => e.set_psi(psi[0]),
        }
        Ok(())
    }

    pub fn with_psi(&self, psi: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_psi(psi)?;
        Ok(out)
    }
}

impl Energy for EnergyFunction {
    fn value(&self, mu: &MarginalVector) -> Result<f64> {
        dispatch!(self, e => e.value(mu))
    }

    fn grad_mu(&self, mu: &MarginalVector) -> Result<Vec<f64>> {
        dispatch!(self, e => e.grad_mu(mu))
    }

    fn num_psi(&self) -> usize {
        dispatch!(self, e => e.num_psi())
    }

    fn psi_jacobian_dot(&self, mu: &MarginalVector, v: &[f64]) -> Result<Vec<f64>> {
        dispatch!(self, e => e.psi_jacobian_dot(mu, v))
    }

    fn psi_grad(&self, mu: &MarginalVector, s: &SufficientStatistics) -> Result<Vec<f64>> {
        dispatch!(self, e => e.psi_grad(mu, s))
    }

    fn is_convex(&self) -> bool {
        dispatch!(self, e => e.is_convex())
    }

    fn smoothness_bound(&self) -> Option<f64> {
        dispatch!(self, e => e.smoothness_bound())
    }

    fn smooth_near(&self, mu: &MarginalVector, index: usize, radius: f64) -> bool {
        dispatch!(self, e => e.smooth_near(mu, index, radius))
    }

    fn layout(&self) -> Option<Layout> {
        dispatch!(self, e => Energy::layout(e))
    }
}

macro_rules! impl_from {
    ($($variant:ident($ty:ty)),*) => {
        $(impl From<$ty> for EnergyFunction {
            fn from(e: $ty) -> Self {
                EnergyFunction::$variant(e)
            }
        })*
    };
}

impl_from!(
    Zero(ZeroEnergy),
    Measurement(MeasurementEnergy),
    Quadratic(QuadraticEnergy),
    MeanField(MeanFieldEnergy),
    Prototype(PrototypeEnergy),
    Poisson(PoissonEnergy)
);

/// Outcome of [`check_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest `|fd - g| / max(1, |fd|, |g|)` over the checked coordinates.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares `grad_mu` against central finite differences, one coordinate at
/// a time. Coordinates within `2 * step` of a known kink are skipped.
pub fn check_gradient(energy: &dyn Energy, mu: &MarginalVector, step: f64) -> GradientCheck {
    let mut report = GradientCheck {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
    };
    let grad = match energy.grad_mu(mu) {
        Ok(g) => g,
        Err(_) => {
            report.max_rel_error = f64::INFINITY;
            return report;
        }
    };
    let mut probe = mu.clone();
    for idx in 0..mu.layout().dim() {
        if !energy.smooth_near(mu, idx, 2.0 * step) {
            report.skipped += 1;
            continue;
        }
        let base = mu.as_slice()[idx];
        probe.as_mut_slice()[idx] = base + step;
        let up = energy.value(&probe);
        probe.as_mut_slice()[idx] = base - step;
        let down = energy.value(&probe);
        probe.as_mut_slice()[idx] = base;
        let err = match (up, down) {
            (Ok(u), Ok(d)) => {
                let fd = (u - d) / (2.0 * step);
                (fd - grad[idx]).abs() / 1f64.max(fd.abs()).max(grad[idx].abs())
            }
            _ => f64::INFINITY,
        };
        report.checked += 1;
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = Some(idx);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{sufficient_statistics, Labeling};

    #[test]
    fn zero_energy_checks_exactly() {
        let mu = MarginalVector::uniform(3, 2).unwrap();
        let r = check_gradient(&ZeroEnergy, &mu, 1e-5);
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.checked, mu.layout().dim());
    }

    #[test]
    fn psi_round_trip_through_enum() {
        let l = Layout::new(2, 2).unwrap();
        let term = MeasurementTerm {
            measurement: LinearMeasurement::new(vec![(0, 1.0)], 0.0).unwrap(),
            loss: ScalarLoss::SmoothedHinge,
        };
        let e: EnergyFunction = MeasurementEnergy::new(l, vec![term], vec![1.0]).unwrap().into();
        let e2 = e.with_psi(&[3.0]).unwrap();
        assert_eq!(e2.psi(), vec![3.0]);
        assert!(e.with_psi(&[1.0, 2.0]).is_err());
        assert!(e.with_psi(&[f64::NAN]).is_err());
        assert_eq!(e2.family(), "measurement");
    }

    #[test]
    fn default_psi_grad_is_negated_jacobian_product() {
        let l = Layout::new(2, 2).unwrap();
        let target = sufficient_statistics(l, &Labeling::new(vec![1, 1])).unwrap();
        let e = QuadraticEnergy::new(target.as_slice().to_vec(), 2.0);
        let mu = MarginalVector::uniform(2, 2).unwrap();
        let s = sufficient_statistics(l, &Labeling::new(vec![0, 1])).unwrap();
        let diff: Vec<f64> = s.as_slice().iter().zip(mu.as_slice()).map(|(a, b)| a - b).collect();
        let jd = e.psi_jacobian_dot(&mu, &diff).unwrap();
        assert_eq!(e.psi_grad(&mu, &s).unwrap(), vec![-jd[0]]);
    }
}
