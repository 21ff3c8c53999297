//! Learning `θ` and the energy weights `ψ` by maximizing the surrogate
//! likelihood `Σ_i log Q(y_i; μ_i)`.

mod dataset;
mod eval;
mod features;
mod params;
mod surrogate;
mod train;

pub use dataset::{Dataset, Example, Features, DATASET_SCHEMA};
pub(crate) use dataset::hex_digest;
pub use eval::{count_violations, evaluate, predict, score_predictions, Metrics, Prediction};
pub use features::MeanMapFeatures;
pub use params::{GlobalSource, Link, PsiParametrization, ThetaParametrization};
pub use surrogate::{modified_parameters, surrogate_log_likelihood, surrogate_terms, SurrogateTerms};
pub use train::{
    train, train_double_loop, train_doubly_stochastic, train_observed, Decay, HistoryRecord,
    LearnerAlgorithm, LearnerConfig, PassObserver, StepSize, StopReason, TrainedModel,
    TrainingHistory,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::EnergySpec;
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "bethe.checkpoint/v1";

/// Trained parameters together with the energy they were trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub model: TrainedModel,
    pub energy: EnergySpec,
}

impl Checkpoint {
    pub fn new(model: TrainedModel, energy: EnergySpec) -> Self {
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.into(),
            model,
            energy,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ck.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Schema {
                expected: CHECKPOINT_SCHEMA.into(),
                found: ck.schema,
            });
        }
        Ok(ck)
    }
}
