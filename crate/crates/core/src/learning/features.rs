use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// Random Fourier features for the RBF kernel `exp(-‖x - x'‖² / (2σ²))`,
/// averaged over the positions of a sequence to estimate its kernel mean map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMapFeatures {
    input_dim: usize,
    bandwidth: f64,
    /// `num_features × input_dim`, row-major, entries `N(0, 1/σ²)`.
    projection: Vec<f64>,
    phases: Vec<f64>,
}

impl MeanMapFeatures {
    pub fn new(input_dim: usize, num_features: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if num_features == 0 || input_dim == 0 {
            return Err(Error::InvalidParameter("mean map needs at least one feature".into()));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidParameter("bandwidth must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let projection = (0..num_features * input_dim)
            .map(|_| normal.sample(&mut rng) / bandwidth)
            .collect();
        let uniform = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
        let phases = (0..num_features).map(|_| uniform.sample(&mut rng)).collect();
        Ok(MeanMapFeatures {
            input_dim,
            bandwidth,
            projection,
            phases,
        })
    }

    pub fn num_features(&self) -> usize {
        self.phases.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `sqrt(2/D) cos(Ω x + b)` for a single input.
    pub fn feature_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len("mean map input", self.input_dim, x.len())?;
        let scale = (2.0 / self.num_features() as f64).sqrt();
        Ok(self
            .phases
            .iter()
            .enumerate()
            .map(|(r, phase)| {
                let row = &self.projection[r * self.input_dim..(r + 1) * self.input_dim];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
                scale * (z + phase).cos()
            })
            .collect())
    }

    /// Average of the feature map over all positions.
    pub fn mean_map(&self, nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("mean map of an empty sequence".into()));
        }
        let mut acc = vec![0.0; self.num_features()];
        for x in nodes {
            for (a, v) in acc.iter_mut().zip(self.feature_map(x)?) {
                *a += v;
            }
        }
        let inv = 1.0 / nodes.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }
}
