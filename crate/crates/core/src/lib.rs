//! Marginal inference in chain CRFs augmented with non-local energies of
//! the marginal vector.

pub mod bench;
pub mod chain;
pub mod energy;
pub mod error;
pub mod exact;
pub mod inference;
pub mod learning;
pub mod oracle;

pub use chain::{
    dot, sufficient_statistics, validate_marginals, ChainModel, Labeling, Layout, MarginalCheck,
    MarginalVector, SufficientStatistics,
};
pub use energy::{Energy, EnergyFunction};
pub use error::{Error, Result};
pub use oracle::{bethe_entropy, bethe_entropy_gradient, log_partition, map_decode, marginals, OracleResult};
