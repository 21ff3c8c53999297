//! TOML description of an energy, independent of the chain it is applied to.
//!
//! ```toml
//! schema = "bethe.energy/v1"
//! family = "measurement"
//! psi = [1.0]
//!
//! [[terms]]
//! loss = "smoothed_hinge"
//! offset = 1.0
//! label_weights = [1.0, -1.0, 0.0, 0.0]
//! entries = [[0, 2, 0.5]]   # (block, index within block, weight)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Clique, CountObservation, EnergyFunction, LinearMeasurement, MeanFieldEnergy,
    MeasurementEnergy, MeasurementTerm, PoissonEnergy, PrototypeEnergy, PrototypeMode,
    QuadraticEnergy, ScalarLoss, ZeroEnergy,
};
use crate::chain::Layout;
use crate::error::{ensure_len, Error, Result};

pub const ENERGY_SCHEMA: &str = "bethe.energy/v1";

/// One measurement: a count template over labels, sparse block entries, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    #[serde(default)]
    pub loss: ScalarLoss,
    #[serde(default)]
    pub offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<(usize, usize, f64)>,
}

impl MeasurementSpec {
    pub fn instantiate(&self, layout: Layout) -> Result<MeasurementTerm> {
        let mut entries = match &self.label_weights {
            Some(w) => LinearMeasurement::label_counts(layout, w, 0.0)?.entries,
            None => Vec::new(),
        };
        for &(block, index, weight) in &self.entries {
            if block >= layout.num_blocks() {
                return Err(Error::Config {
                    key: "terms.entries".into(),
                    message: format!("block {block} does not exist in a chain with {} blocks", layout.num_blocks()),
                });
            }
            let range = layout.block_range(block);
            if index >= range.len() {
                return Err(Error::Config {
                    key: "terms.entries".into(),
                    message: format!("index {index} is outside block {block} of size {}", range.len()),
                });
            }
            entries.push((range.start + index, weight));
        }
        Ok(MeasurementTerm {
            measurement: LinearMeasurement::new(entries, self.offset)?,
            loss: self.loss,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EnergySpec {
    Zero,
    Measurement {
        terms: Vec<MeasurementSpec>,
        /// Defaults to one per term.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        psi: Option<Vec<f64>>,
    },
    Quadratic {
        weight: f64,
        target: Vec<f64>,
    },
    MeanField {
        cliques: Vec<Clique>,
        #[serde(default = "one")]
        weight: f64,
    },
    Prototype {
        mode: PrototypeMode,
        prototypes: Vec<Vec<f64>>,
        #[serde(default = "one")]
        psi: f64,
    },
    Poisson {
        scale: f64,
        #[serde(default = "one")]
        weight: f64,
        observations: Vec<CountObservation>,
    },
}

fn one() -> f64 {
    1.0
}

impl EnergySpec {
    pub fn num_psi(&self) -> usize {
        match self {
            EnergySpec::Zero | EnergySpec::Poisson { .. } => 0,
            EnergySpec::Measurement { terms, .. } => terms.len(),
            _ => 1,
        }
    }

    /// Whether negative weights would turn the penalty into a reward.
    pub fn requires_nonnegative_psi(&self) -> bool {
        matches!(
            self,
            EnergySpec::Measurement { .. } | EnergySpec::Quadratic { .. } | EnergySpec::Prototype { .. }
        )
    }

    pub fn initial_psi(&self) -> Vec<f64> {
        match self {
            EnergySpec::Zero | EnergySpec::Poisson { .. } => Vec::new(),
            EnergySpec::Measurement { terms, psi } => {
                psi.clone().unwrap_or_else(|| vec![1.0; terms.len()])
            }
            EnergySpec::Quadratic { weight, .. } | EnergySpec::MeanField { weight, .. } => {
                vec![*weight]
            }
            EnergySpec::Prototype { psi, .. } => vec![*psi],
        }
    }

    /// Builds the energy for a chain of the given shape. Prototype energies
    /// do not depend on the shape beyond the admissibility check at use time.
    pub fn instantiate(&self, layout: Layout) -> Result<EnergyFunction> {
        Ok(match self {
            EnergySpec::Zero => ZeroEnergy.into(),
            EnergySpec::Measurement { terms, .. } => {
                let built = terms
                    .iter()
                    .map(|t| t.instantiate(layout))
                    .collect::<Result<Vec<_>>>()?;
                let psi = self.initial_psi();
                ensure_len("measurement psi", built.len(), psi.len())?;
                MeasurementEnergy::new(layout, built, psi)?.into()
            }
            EnergySpec::Quadratic { weight, target } => {
                ensure_len("quadratic target", layout.dim(), target.len())?;
                QuadraticEnergy::new(target.clone(), *weight).into()
            }
            EnergySpec::MeanField { cliques, weight } => {
                MeanFieldEnergy::new(layout, cliques.clone(), *weight)?.into()
            }
            EnergySpec::Prototype {
                mode,
                prototypes,
                psi,
            } => PrototypeEnergy::new(*mode, prototypes.clone(), *psi)?.into(),
            EnergySpec::Poisson {
                scale,
                weight,
                observations,
            } => PoissonEnergy::new(layout, observations.clone(), *scale, *weight)?.into(),
        })
    }
}

/// On-disk form: the schema line plus a flattened [`EnergySpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyFile {
    pub schema: String,
    #[serde(flatten)]
    pub spec: EnergySpec,
}

impl EnergyFile {
    pub fn new(spec: EnergySpec) -> Self {
        EnergyFile {
            schema: ENERGY_SCHEMA.to_string(),
            spec,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: EnergyFile = toml::from_str(text)?;
        if file.schema != ENERGY_SCHEMA {
            return Err(Error::Schema {
                expected: ENERGY_SCHEMA.into(),
                found: file.schema,
            });
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}
