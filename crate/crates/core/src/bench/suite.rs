//! Small random instances shared by the tests and the acceptance runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{ChainModel, Layout};
use crate::energy::{LinearMeasurement, MeasurementEnergy, MeasurementTerm, ScalarLoss};
use crate::error::Result;

/// Random chain with `n ≤ max_n`, `k ≤ max_k` and potentials in `[-scale, scale]`.
pub fn random_chain<R: Rng>(rng: &mut R, max_n: usize, max_k: usize, scale: f64) -> Result<ChainModel> {
    let n = rng.random_range(1..=max_n);
    let k = rng.random_range(2..=max_k);
    let layout = Layout::new(n, k)?;
    ChainModel::from_flat(
        layout,
        (0..layout.dim()).map(|_| rng.random_range(-scale..scale)).collect(),
    )
}

/// Convex test problem: a random chain plus `terms` smoothed-hinge
/// measurements with dense weights and positive `ψ`.
pub fn convex_instance(seed: u64, max_n: usize, max_k: usize, terms: usize) -> Result<(ChainModel, MeasurementEnergy)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_n);
    let k = rng.random_range(2..=max_k);
    let layout = Layout::new(n, k)?;
    let theta = ChainModel::from_flat(
        layout,
        (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let mut built = Vec::with_capacity(terms);
    for _ in 0..terms {
        let entries = (0..layout.dim()).map(|i| (i, rng.random_range(-1.0..1.0))).collect();
        built.push(MeasurementTerm {
            measurement: LinearMeasurement::new(entries, rng.random_range(-0.5..0.5))?,
            loss: ScalarLoss::SmoothedHinge,
        });
    }
    let psi = (0..terms).map(|_| rng.random_range(0.5..2.0)).collect();
    Ok((theta, MeasurementEnergy::new(layout, built, psi)?))
}
