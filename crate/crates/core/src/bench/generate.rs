//! Seeded generators for the three synthetic tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::chain::{sufficient_statistics, ChainModel, Labeling, Layout, MarginalVector};
use crate::energy::{
    CountObservation, EnergyFile, EnergySpec, MeasurementSpec, MeasurementTerm, PrototypeMode,
};
use crate::error::{Error, Result};
use crate::learning::{hex_digest, Dataset, Example, Features};
use crate::oracle::{marginals, sample_labeling};

/// Split sizes of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Splits {
    fn total(&self) -> usize {
        self.train + self.dev + self.test
    }

    fn validate(&self) -> Result<()> {
        if self.train == 0 || self.test == 0 {
            return Err(Error::Config {
                key: "task.splits".into(),
                message: "train and test splits must be nonempty".into(),
            });
        }
        Ok(())
    }
}

fn positive(key: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Config {
            key: key.into(),
            message: format!("must be positive and finite, got {value}"),
        })
    }
}

fn nonnegative(key: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Config {
            key: key.into(),
            message: format!("must be nonnegative and finite, got {value}"),
        })
    }
}

/// Noisy label indicators plus a constant bias feature.
fn noisy_indicators<R: Rng>(y: &Labeling, k: usize, signal: f64, noise: &Normal<f64>, rng: &mut R) -> Features {
    let nodes = y
        .as_slice()
        .iter()
        .map(|&label| {
            let mut x: Vec<f64> = (0..k)
                .map(|a| if a == label { signal } else { 0.0 } + noise.sample(rng))
                .collect();
            x.push(1.0);
            x
        })
        .collect();
    Features { nodes, global: None }
}

fn split(k: usize, feature_dim: usize, mut examples: Vec<Example>, s: Splits) -> Result<(Dataset, Dataset, Dataset)> {
    let test = examples.split_off(s.train + s.dev);
    let dev = examples.split_off(s.train);
    Ok((
        Dataset::new(k, feature_dim, examples)?,
        Dataset::new(k, feature_dim, dev)?,
        Dataset::new(k, feature_dim, test)?,
    ))
}

fn task_hash(parts: &[&Dataset], energies: &[&EnergySpec]) -> Result<String> {
    let mut text = String::new();
    for d in parts {
        text.push_str(&d.to_jsonl()?);
    }
    for e in energies {
        text.push_str(&EnergyFile::new((*e).clone()).to_toml()?);
    }
    Ok(hex_digest(text.as_bytes()))
}

// ---------------------------------------------------------------------------
// Soft constraints

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftconSpec {
    pub length: usize,
    pub num_states: usize,
    pub splits: Splits,
    /// Potentials of the ground-truth chain are drawn from `[-s, s]`.
    pub theta_scale: f64,
    /// Height of the true label's indicator.
    pub signal: f64,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    /// Constraints every emitted labeling satisfies, as measurements that
    /// hold when `a^T S(y) + b >= 1`.
    pub constraints: Vec<MeasurementSpec>,
    /// Initial weight of each constraint in the emitted energy.
    pub initial_psi: f64,
    pub seed: u64,
}

impl Default for SoftconSpec {
    fn default() -> Self {
        SoftconSpec {
            length: 10,
            num_states: 4,
            splits: Splits { train: 300, dev: 100, test: 100 },
            theta_scale: 1.0,
            signal: 1.0,
            noise: 1.5,
            constraints: default_constraints(),
            initial_psi: 0.0,
            seed: 7,
        }
    }
}

/// `#0 >= #1`, `#3 <= 1`, and no sequence starts with label 2.
pub fn default_constraints() -> Vec<MeasurementSpec> {
    vec![
        MeasurementSpec {
            offset: 1.0,
            label_weights: Some(vec![1.0, -1.0, 0.0, 0.0]),
            ..Default::default()
        },
        MeasurementSpec {
            offset: 2.0,
            label_weights: Some(vec![0.0, 0.0, 0.0, -1.0]),
            ..Default::default()
        },
        MeasurementSpec {
            offset: 1.0,
            entries: vec![(0, 2, -1.0)],
            ..Default::default()
        },
    ]
}

impl SoftconSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length < 1 || self.num_states < 2 {
            return Err(Error::Config {
                key: "task.length".into(),
                message: "need at least one position and two states".into(),
            });
        }
        self.splits.validate()?;
        positive("task.theta_scale", self.theta_scale)?;
        nonnegative("task.signal", self.signal)?;
        nonnegative("task.noise", self.noise)?;
        nonnegative("task.initial_psi", self.initial_psi)?;
        let layout = Layout::new(self.length, self.num_states)?;
        for c in &self.constraints {
            c.instantiate(layout)?;
        }
        Ok(())
    }

    pub fn energy(&self) -> EnergySpec {
        EnergySpec::Measurement {
            terms: self.constraints.clone(),
            psi: Some(vec![self.initial_psi; self.constraints.len()]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SoftconTask {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub energy: EnergySpec,
    /// Chain the labelings were sampled from before filtering.
    pub truth: ChainModel,
    pub attempts: usize,
}

impl SoftconTask {
    pub fn hash(&self) -> Result<String> {
        task_hash(&[&self.train, &self.dev, &self.test], &[&self.energy])
    }
}

/// Draws from `truth` until `wanted` labelings satisfy every term. Fails once
/// at least 1000 draws have been made and more than 99% were rejected.
fn filtered_labelings<R: Rng>(
    truth: &ChainModel,
    terms: &[MeasurementTerm],
    wanted: usize,
    rng: &mut R,
) -> Result<(Vec<Labeling>, usize)> {
    let layout = truth.layout();
    let mut kept = Vec::with_capacity(wanted);
    let mut attempts = 0usize;
    while kept.len() < wanted {
        attempts += 1;
        let y = sample_labeling(truth, rng)?;
        let stats = sufficient_statistics(layout, &y)?;
        if terms.iter().all(|t| t.measurement.apply(stats.as_slice()) >= 1.0) {
            kept.push(y);
        }
        let rejected = attempts - kept.len();
        if attempts >= 1000 && rejected * 100 > attempts * 99 {
            return Err(Error::Infeasible { rejected, attempts });
        }
    }
    Ok((kept, attempts))
}

/// Samples labelings from a random homogeneous chain, keeps those that
/// satisfy every constraint and attaches noisy indicator features.
pub fn generate_softcon(spec: &SoftconSpec) -> Result<SoftconTask> {
    spec.validate()?;
    let (n, k) = (spec.length, spec.num_states);
    let layout = Layout::new(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.theta_scale;
    let node: Vec<f64> = (0..k).map(|_| rng.random_range(-s..=s)).collect();
    let edge: Vec<f64> = (0..k * k).map(|_| rng.random_range(-s..=s)).collect();
    let truth = ChainModel::homogeneous(n, &node, &edge)?;
    let terms = spec
        .constraints
        .iter()
        .map(|c| c.instantiate(layout))
        .collect::<Result<Vec<_>>>()?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let (labelings, attempts) = filtered_labelings(&truth, &terms, spec.splits.total(), &mut rng)?;
    let examples = labelings
        .into_iter()
        .map(|y| Example {
            features: noisy_indicators(&y, k, spec.signal, &noise, &mut rng),
            labels: y,
        })
        .collect();
    let (train, dev, test) = split(k, k + 1, examples, spec.splits)?;
    Ok(SoftconTask {
        train,
        dev,
        test,
        energy: spec.energy(),
        truth,
        attempts,
    })
}

// ---------------------------------------------------------------------------
// Prototypes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeSpec {
    pub vocabulary: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub num_states: usize,
    pub splits: Splits,
    pub signal: f64,
    pub noise: f64,
    /// Initial weight of the emitted prototype energies.
    pub initial_psi: f64,
    pub seed: u64,
}

impl Default for PrototypeSpec {
    fn default() -> Self {
        PrototypeSpec {
            vocabulary: 20,
            min_length: 3,
            max_length: 6,
            num_states: 8,
            splits: Splits { train: 200, dev: 100, test: 200 },
            signal: 1.0,
            noise: 1.0,
            initial_psi: 0.5,
            seed: 3,
        }
    }
}

impl PrototypeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocabulary < 1 || self.num_states < 2 {
            return Err(Error::Config {
                key: "task.vocabulary".into(),
                message: "need at least one word and two letters".into(),
            });
        }
        if self.min_length < 1 || self.max_length < self.min_length {
            return Err(Error::Config {
                key: "task.min_length".into(),
                message: format!("invalid length range {}..={}", self.min_length, self.max_length),
            });
        }
        let distinct: f64 = (self.min_length..=self.max_length)
            .map(|len| (self.num_states as f64).powi(len as i32))
            .sum();
        if distinct < self.vocabulary as f64 {
            return Err(Error::Config {
                key: "task.vocabulary".into(),
                message: format!("only {distinct} distinct words exist"),
            });
        }
        self.splits.validate()?;
        nonnegative("task.signal", self.signal)?;
        nonnegative("task.noise", self.noise)?;
        nonnegative("task.initial_psi", self.initial_psi)
    }
}

#[derive(Debug, Clone)]
pub struct PrototypeTask {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub vocabulary: Vec<Labeling>,
    /// Letter counts of every distinct training word.
    pub unigram: EnergySpec,
    /// One-hot encodings of every distinct training word.
    pub full: EnergySpec,
}

impl PrototypeTask {
    pub fn hash(&self) -> Result<String> {
        task_hash(&[&self.train, &self.dev, &self.test], &[&self.unigram, &self.full])
    }
}

pub fn unigram_prototype(word: &Labeling, k: usize) -> Vec<f64> {
    word.counts(k).into_iter().map(|c| c as f64).collect()
}

pub fn full_prototype(word: &Labeling, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; word.len() * k];
    for (i, &a) in word.as_slice().iter().enumerate() {
        out[i * k + a] = 1.0;
    }
    out
}

/// Draws a vocabulary of distinct random words, then examples as uniformly
/// chosen words with noisy per-letter features. Prototypes come from the
/// distinct words of the training split, in sorted order.
pub fn generate_prototype(spec: &PrototypeSpec) -> Result<PrototypeTask> {
    spec.validate()?;
    let k = spec.num_states;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vocabulary: Vec<Labeling> = Vec::with_capacity(spec.vocabulary);
    while vocabulary.len() < spec.vocabulary {
        let len = rng.random_range(spec.min_length..=spec.max_length);
        let word = Labeling::new((0..len).map(|_| rng.random_range(0..k)).collect());
        if !vocabulary.contains(&word) {
            vocabulary.push(word);
        }
    }
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let examples: Vec<Example> = (0..spec.splits.total())
        .map(|_| {
            let y = vocabulary[rng.random_range(0..vocabulary.len())].clone();
            let features = noisy_indicators(&y, k, spec.signal, &noise, &mut rng);
            Example { features, labels: y }
        })
        .collect();
    let (train, dev, test) = split(k, k + 1, examples, spec.splits)?;

    let mut seen: Vec<&Labeling> = train.examples().iter().map(|e| &e.labels).collect();
    seen.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.as_slice().cmp(b.as_slice())));
    seen.dedup();
    let unigram = EnergySpec::Prototype {
        mode: PrototypeMode::Unigram,
        prototypes: seen.iter().map(|w| unigram_prototype(w, k)).collect(),
        psi: spec.initial_psi,
    };
    let full = EnergySpec::Prototype {
        mode: PrototypeMode::Full,
        prototypes: seen.iter().map(|w| full_prototype(w, k)).collect(),
        psi: spec.initial_psi,
    };
    Ok(PrototypeTask {
        train,
        dev,
        test,
        vocabulary,
        unigram,
        full,
    })
}

// ---------------------------------------------------------------------------
// Collective counts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgmSpec {
    /// Side of the square grid; the chain has `grid²` states.
    pub grid: usize,
    /// Number of time steps.
    pub length: usize,
    pub population: f64,
    /// Fraction of the population observed.
    pub detection: f64,
    /// Log-weight of the start distribution lost per step away from the
    /// first corner.
    pub start_slope: f64,
    /// Log-weight lost per unit of squared move distance.
    pub move_penalty: f64,
    /// Log-weight gained per unit of move toward the far corner.
    pub drift: f64,
    pub seed: u64,
}

impl Default for CgmSpec {
    fn default() -> Self {
        CgmSpec {
            grid: 5,
            length: 20,
            population: 1000.0,
            detection: 1.0,
            start_slope: 0.2,
            move_penalty: 0.05,
            drift: 0.2,
            seed: 11,
        }
    }
}

impl CgmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 || self.length < 2 {
            return Err(Error::Config {
                key: "task.grid".into(),
                message: "need a grid side and a length of at least 2".into(),
            });
        }
        positive("task.population", self.population)?;
        positive("task.detection", self.detection)?;
        nonnegative("task.start_slope", self.start_slope)?;
        nonnegative("task.move_penalty", self.move_penalty)?;
        if !self.drift.is_finite() {
            return Err(Error::Config {
                key: "task.drift".into(),
                message: "must be finite".into(),
            });
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.grid * self.grid
    }

    /// Expected observed count per unit of marginal.
    pub fn scale(&self) -> f64 {
        self.population * self.detection
    }
}

#[derive(Debug, Clone)]
pub struct CgmInstance {
    /// Markov chain over grid cells: a start distribution on node 0 and log
    /// transition probabilities on every edge.
    pub theta: ChainModel,
    pub truth: MarginalVector,
    /// `counts[t][cell]`.
    pub counts: Vec<Vec<u64>>,
    /// Poisson energy with weight `1 / population`.
    pub energy: EnergySpec,
}

impl CgmInstance {
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(&(self.theta.as_slice(), &self.counts))?;
        Ok(hex_digest(text.as_bytes()))
    }
}

fn log_normalize(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

pub fn generate_cgm(spec: &CgmSpec) -> Result<CgmInstance> {
    spec.validate()?;
    let g = spec.grid;
    let k = spec.num_states();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cell = |c: usize| ((c / g) as f64, (c % g) as f64);

    let mut start: Vec<f64> = (0..k)
        .map(|c| {
            let (r, q) = cell(c);
            -spec.start_slope * (r + q) + rng.random_range(-0.1..0.1)
        })
        .collect();
    log_normalize(&mut start);
    let mut transition = Vec::with_capacity(k * k);
    for from in 0..k {
        let (r0, q0) = cell(from);
        let mut row: Vec<f64> = (0..k)
            .map(|to| {
                let (r1, q1) = cell(to);
                let (dr, dq) = (r1 - r0, q1 - q0);
                -spec.move_penalty * (dr * dr + dq * dq) + spec.drift * (dr + dq) + rng.random_range(-0.1..0.1)
            })
            .collect();
        log_normalize(&mut row);
        transition.extend(row);
    }
    let mut node = vec![vec![0.0; k]; spec.length];
    node[0] = start;
    let edge = vec![transition; spec.length - 1];
    let theta = ChainModel::from_tables(&node, &edge)?;
    let truth = marginals(&theta)?.marginals;

    let scale = spec.scale();
    let mut counts = Vec::with_capacity(spec.length);
    for t in 0..spec.length {
        let row = truth
            .node(t)
            .iter()
            .map(|&p| {
                let rate = scale * p;
                if rate > 0.0 {
                    Poisson::new(rate)
                        .map(|d| d.sample(&mut rng) as u64)
                        .map_err(|e| Error::InvalidParameter(e.to_string()))
                } else {
                    Ok(0)
                }
            })
            .collect::<Result<Vec<u64>>>()?;
        counts.push(row);
    }
    let observations = counts
        .iter()
        .enumerate()
        .flat_map(|(node, row)| {
            row.iter()
                .enumerate()
                .map(move |(state, &count)| CountObservation { node, state, count })
        })
        .collect();
    let energy = EnergySpec::Poisson {
        scale,
        weight: 1.0 / spec.population,
        observations,
    };
    Ok(CgmInstance {
        theta,
        truth,
        counts,
        energy,
    })
}
