use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Example, Features};
use super::params::{PsiParametrization, ThetaParametrization};
use super::surrogate::{surrogate_terms, SurrogateTerms};
use crate::chain::{sufficient_statistics, ChainModel};
use crate::energy::{EnergyFunction, EnergySpec};
use crate::error::{ensure_len, Error, Result};
use crate::inference::{solve, Algorithm, AugmentedProblem, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerAlgorithm {
    DoubleLoop,
    #[default]
    DoublyStochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Decay {
    #[default]
    Constant,
    /// `η / sqrt(t)`.
    InvSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSize {
    pub eta: f64,
    #[serde(default)]
    pub decay: Decay,
}

impl StepSize {
    pub fn constant(eta: f64) -> Self {
        StepSize {
            eta,
            decay: Decay::Constant,
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        match self.decay {
            Decay::Constant => self.eta,
            Decay::InvSqrt => self.eta / (t.max(1) as f64).sqrt(),
        }
    }
}

fn inner_default() -> SolverConfig {
    SolverConfig {
        algorithm: Algorithm::Rda,
        max_iters: 30,
        ..SolverConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub algorithm: LearnerAlgorithm,
    /// Step on `θ`. The double-loop learner applies it to the dataset mean.
    pub theta_step: StepSize,
    pub psi_step: StepSize,
    /// Outer iterations for the double loop; passes over the data for the
    /// stochastic learner.
    pub epochs: usize,
    /// Overrides `epochs × |data|` as the number of stochastic updates.
    pub max_updates: Option<usize>,
    pub inner: SolverConfig,
    /// Ridge penalty on the `θ` weights.
    pub l2: f64,
    pub learn_theta: bool,
    pub learn_psi: bool,
    /// Keep penalty weights nonnegative. When off, negative weights are
    /// treated as zero whenever the energy is built.
    pub project_psi: bool,
    /// Relative change of the surrogate likelihood below which the double
    /// loop stops.
    pub plateau_tol: f64,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            algorithm: LearnerAlgorithm::DoublyStochastic,
            theta_step: StepSize::constant(0.1),
            psi_step: StepSize::constant(0.01),
            epochs: 10,
            max_updates: None,
            inner: inner_default(),
            l2: 0.0,
            learn_theta: true,
            learn_psi: true,
            project_psi: true,
            plateau_tol: 1e-7,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, step) in [("theta_step", &self.theta_step), ("psi_step", &self.psi_step)] {
            if !(step.eta >= 0.0) || !step.eta.is_finite() {
                return Err(Error::Config {
                    key: format!("learner.{name}"),
                    message: "step size must be a nonnegative number".into(),
                });
            }
        }
        if self.epochs == 0 && self.max_updates.is_none() {
            return Err(Error::Config {
                key: "learner.epochs".into(),
                message: "must be at least 1".into(),
            });
        }
        self.inner.validate()
    }
}

/// Learned `(θ, ψ)` parametrizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub theta: ThetaParametrization,
    pub psi: PsiParametrization,
}

impl TrainedModel {
    pub fn new(theta: ThetaParametrization, psi: PsiParametrization) -> Self {
        TrainedModel { theta, psi }
    }

    pub fn chain_for(&self, x: &Features) -> Result<ChainModel> {
        self.theta.theta_of(x)
    }

    /// The energy for input `x`; negative penalty weights count as zero.
    pub fn energy_for(&self, spec: &EnergySpec, x: &Features) -> Result<EnergyFunction> {
        let psi = self.psi.realize(x, spec.requires_nonnegative_psi())?;
        spec.instantiate(crate::chain::Layout::new(x.len(), self.theta.num_states)?)?
            .with_psi(&psi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub update: usize,
    /// Sampled example, or `None` for a full-batch step.
    pub example: Option<usize>,
    /// Surrogate log-likelihood (summed over the batch) before the update.
    pub surrogate: f64,
    pub mean_psi: f64,
    /// Parameter version the marginals were computed with.
    pub solved_at: u64,
    /// Parameter version the update was applied to.
    pub applied_at: u64,
    pub inner_iterations: usize,
    /// Inner-solver iterates that failed `validate_marginals`.
    pub infeasible_iterates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<HistoryRecord>,
    pub stop: StopReason,
}

impl TrainingHistory {
    /// Updates that used marginals from older parameters. Always zero.
    pub fn stale_updates(&self) -> usize {
        self.records.iter().filter(|r| r.solved_at != r.applied_at).count()
    }

    pub fn inner_iterations(&self) -> usize {
        self.records.iter().map(|r| r.inner_iterations).sum()
    }

    pub fn infeasible_iterates(&self) -> usize {
        self.records.iter().map(|r| r.infeasible_iterates).sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "update,example,surrogate,mean_psi,inner_iterations")?;
        for r in &self.records {
            let ex = r.example.map_or(String::new(), |e| e.to_string());
            writeln!(out, "{},{},{:e},{:e},{}", r.update, ex, r.surrogate, r.mean_psi, r.inner_iterations)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

struct ExampleGradient {
    terms: SurrogateTerms,
    psi: Vec<f64>,
    iterations: usize,
    infeasible: usize,
}

/// How `ψ` is kept nonnegative: `clip` treats negative weights as zero when
/// the energy is built, `project` also clips the stored parameters.
#[derive(Clone, Copy)]
struct Sign {
    clip: bool,
    project: bool,
}

impl Sign {
    fn new(spec: &EnergySpec, cfg: &LearnerConfig) -> Self {
        let clip = spec.requires_nonnegative_psi();
        Sign {
            clip,
            project: clip && cfg.project_psi,
        }
    }
}

fn example_gradient(
    model: &TrainedModel,
    spec: &EnergySpec,
    ex: &Example,
    cfg: &LearnerConfig,
    sign: Sign,
) -> Result<ExampleGradient> {
    let theta = model.chain_for(&ex.features)?;
    let psi = model.psi.realize(&ex.features, sign.clip)?;
    let energy = spec.instantiate(theta.layout())?.with_psi(&psi)?;
    let problem = AugmentedProblem::new(&theta, &energy)?;
    let out = solve(&problem, &cfg.inner)?;
    let s = sufficient_statistics(theta.layout(), &ex.labels)?;
    let terms = surrogate_terms(&theta, &energy, &out.marginals, &s)?;
    Ok(ExampleGradient {
        terms,
        psi,
        iterations: out.trace.iterations(),
        infeasible: out.trace.infeasible_count(),
    })
}

fn check_inputs(data: &Dataset, spec: &EnergySpec, init: &TrainedModel, cfg: &LearnerConfig) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    ensure_len("theta feature width", data.feature_dim(), init.theta.feature_dim)?;
    ensure_len("theta states", data.num_states(), init.theta.num_states)?;
    ensure_len("psi components", spec.num_psi(), init.psi.num_psi())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// One ascent step on the summed gradients of `batch`, each weighted by `scale`.
fn apply_step(
    model: &mut TrainedModel,
    data: &Dataset,
    batch: &[(usize, &ExampleGradient)],
    scale: f64,
    t: usize,
    cfg: &LearnerConfig,
    sign: Sign,
) -> Result<()> {
    if cfg.learn_theta {
        let mut g = model.theta.zeros_like();
        for &(i, eg) in batch {
            g.accumulate(&data.examples()[i].features, &eg.terms.theta_direction, scale)?;
        }
        if cfg.l2 > 0.0 {
            g.axpy(-cfg.l2, &model.theta);
        }
        model.theta.axpy(cfg.theta_step.at(t), &g);
    }
    if cfg.learn_psi && model.psi.num_psi() > 0 {
        let mut g = model.psi.zeros_like();
        for &(i, eg) in batch {
            model.psi.accumulate(
                &mut g,
                &data.examples()[i].features,
                &eg.terms.psi_gradient,
                scale,
                sign.clip,
            )?;
        }
        model.psi.axpy(cfg.psi_step.at(t), &g);
        if sign.project {
            model.psi.project_nonnegative();
        }
    }
    Ok(())
}

fn guard_divergence(initial: f64, current: f64) -> Result<()> {
    if !current.is_finite() || current < initial - 10.0 * initial.abs() {
        return Err(Error::Diverged { initial, current });
    }
    Ok(())
}

/// Variational EM: every outer iteration solves all examples with the
/// current parameters, then takes one gradient step on the summed
/// surrogate likelihood.
pub fn train_double_loop(
    data: &Dataset,
    spec: &EnergySpec,
    init: TrainedModel,
    cfg: &LearnerConfig,
) -> Result<(TrainedModel, TrainingHistory)> {
    double_loop(data, spec, init, cfg, &mut |_, _| Ok(()))
}

fn double_loop(
    data: &Dataset,
    spec: &EnergySpec,
    init: TrainedModel,
    cfg: &LearnerConfig,
    observer: &mut PassObserver<'_>,
) -> Result<(TrainedModel, TrainingHistory)> {
    check_inputs(data, spec, &init, cfg)?;
    let sign = Sign::new(spec, cfg);
    let mut model = init;
    let mut version = 0u64;
    let mut records = Vec::new();
    let mut stop = StopReason::MaxIterations;
    let mut initial = None;
    let mut previous: Option<f64> = None;
    for t in 1..=cfg.epochs.max(1) {
        let grads = data
            .examples()
            .par_iter()
            .enumerate()
            .map(|(i, ex)| example_gradient(&model, spec, ex, cfg, sign).map_err(|e| e.at_example(i)))
            .collect::<Result<Vec<_>>>()?;
        let solved_at = version;
        let surrogate: f64 = grads.iter().map(|g| g.terms.log_q).sum();
        let initial_value = *initial.get_or_insert(surrogate);
        guard_divergence(initial_value, surrogate)?;
        let plateau = previous
            .is_some_and(|p| (surrogate - p).abs() <= cfg.plateau_tol * p.abs().max(1.0));
        let psi_values: Vec<f64> = grads.iter().flat_map(|g| g.psi.iter().copied()).collect();
        let inner_iterations = grads.iter().map(|g| g.iterations).sum();
        let infeasible_iterates = grads.iter().map(|g| g.infeasible).sum();
        if plateau {
            stop = StopReason::Plateau;
            break;
        }
        let batch: Vec<(usize, &ExampleGradient)> = grads.iter().enumerate().collect();
        apply_step(&mut model, data, &batch, 1.0 / data.len() as f64, t, cfg, sign)?;
        records.push(HistoryRecord {
            update: t,
            example: None,
            surrogate,
            mean_psi: mean(&psi_values),
            solved_at,
            applied_at: version,
            inner_iterations,
            infeasible_iterates,
        });
        version += 1;
        previous = Some(surrogate);
        observer(t, &model)?;
    }
    Ok((model, TrainingHistory { records, stop }))
}

/// One sampled example, one inexact inner solve, one gradient step.
pub fn train_doubly_stochastic(
    data: &Dataset,
    spec: &EnergySpec,
    init: TrainedModel,
    cfg: &LearnerConfig,
) -> Result<(TrainedModel, TrainingHistory)> {
    doubly_stochastic(data, spec, init, cfg, &mut |_, _| Ok(()))
}

fn doubly_stochastic(
    data: &Dataset,
    spec: &EnergySpec,
    init: TrainedModel,
    cfg: &LearnerConfig,
    observer: &mut PassObserver<'_>,
) -> Result<(TrainedModel, TrainingHistory)> {
    check_inputs(data, spec, &init, cfg)?;
    let sign = Sign::new(spec, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init;
    let total = cfg.max_updates.unwrap_or(cfg.epochs * data.len());
    let mut records = Vec::with_capacity(total);
    let mut version = 0u64;
    let mut epoch_sum = 0.0;
    let mut first_epoch: Option<f64> = None;
    for t in 1..=total {
        let i = rng.random_range(0..data.len());
        let eg = example_gradient(&model, spec, &data.examples()[i], cfg, sign)
            .map_err(|e| e.at_example(i))?;
        let solved_at = version;
        epoch_sum += eg.terms.log_q;
        if t % data.len() == 0 {
            let initial = *first_epoch.get_or_insert(epoch_sum);
            guard_divergence(initial, epoch_sum)?;
            epoch_sum = 0.0;
        }
        apply_step(&mut model, data, &[(i, &eg)], 1.0, t, cfg, sign)?;
        records.push(HistoryRecord {
            update: t,
            example: Some(i),
            surrogate: eg.terms.log_q,
            mean_psi: mean(&eg.psi),
            solved_at,
            applied_at: version,
            inner_iterations: eg.iterations,
            infeasible_iterates: eg.infeasible,
        });
        version += 1;
        if t % data.len() == 0 {
            observer(t / data.len(), &model)?;
        }
    }
    Ok((
        model,
        TrainingHistory {
            records,
            stop: StopReason::MaxIterations,
        },
    ))
}

pub fn train(
    data: &Dataset,
    spec: &EnergySpec,
    init: TrainedModel,
    cfg: &LearnerConfig,
) -> Result<(TrainedModel, TrainingHistory)> {
    train_observed(data, spec, init, cfg, &mut |_, _| Ok(()))
}

/// Called with the pass number and the current model after every outer
/// iteration of the double loop and every `|data|` stochastic updates.
pub type PassObserver<'a> = dyn FnMut(usize, &TrainedModel) -> Result<()> + 'a;

/// [`train`], reporting each completed pass to `observer`.
pub fn train_observed(
    data: &Dataset,
    spec: &EnergySpec,
    init: TrainedModel,
    cfg: &LearnerConfig,
    observer: &mut PassObserver<'_>,
) -> Result<(TrainedModel, TrainingHistory)> {
    match cfg.algorithm {
        LearnerAlgorithm::DoubleLoop => double_loop(data, spec, init, cfg, observer),
        LearnerAlgorithm::DoublyStochastic => doubly_stochastic(data, spec, init, cfg, observer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{Labeling, Layout};
    use crate::energy::MeasurementSpec;
    use crate::oracle::{marginals, sample_labeling};

    fn one_hot_features(n: usize, d: usize) -> Features {
        Features {
            nodes: (0..n).map(|i| (0..d).map(|f| (f == i % d) as usize as f64).collect()).collect(),
            global: None,
        }
    }

    #[test]
    fn moment_matching_on_a_single_example() {
        let x = one_hot_features(4, 4);
        let y = Labeling::new(vec![0, 2, 1, 2]);
        let data = Dataset::new(3, 4, vec![Example { features: x.clone(), labels: y.clone() }]).unwrap();
        let cfg = LearnerConfig {
            max_updates: Some(10),
            theta_step: StepSize::constant(0.2),
            ..Default::default()
        };
        let init = TrainedModel::new(ThetaParametrization::zeros(4, 3), PsiParametrization::constant(vec![]));
        let s = sufficient_statistics(Layout::new(4, 3).unwrap(), &y).unwrap();
        let mut model = init;
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let step = LearnerConfig { max_updates: Some(1), ..cfg.clone() };
            model = train_doubly_stochastic(&data, &EnergySpec::Zero, model, &step).unwrap().0;
            let mu = marginals(&model.chain_for(&x).unwrap()).unwrap().marginals;
            let d = mu.l1_distance(s.as_marginals());
            assert!(d < last, "{d} >= {last}");
            last = d;
        }
    }

    #[test]
    fn frozen_psi_stays_put() {
        let x = one_hot_features(3, 2);
        let data = Dataset::new(2, 2, vec![Example { features: x, labels: Labeling::new(vec![1, 1, 0]) }]).unwrap();
        let spec = EnergySpec::Measurement {
            terms: vec![MeasurementSpec {
                offset: 0.0,
                label_weights: Some(vec![1.0, -1.0]),
                ..Default::default()
            }],
            psi: Some(vec![0.5]),
        };
        let cfg = LearnerConfig {
            psi_step: StepSize::constant(0.0),
            max_updates: Some(5),
            ..Default::default()
        };
        let init = TrainedModel::new(ThetaParametrization::zeros(2, 2), PsiParametrization::constant(vec![0.5]));
        let (model, history) = train_doubly_stochastic(&data, &spec, init, &cfg).unwrap();
        assert_eq!(model.psi, PsiParametrization::constant(vec![0.5]));
        assert_eq!(history.stale_updates(), 0);
        assert_eq!(history.records.len(), 5);
    }

    #[test]
    fn violated_measurement_raises_its_weight() {
        // Measurement "#0 - #1 >= 1": gold satisfies it, the flat model does not.
        let x = one_hot_features(3, 1);
        let data = Dataset::new(2, 1, vec![Example { features: x, labels: Labeling::new(vec![0, 0, 0]) }]).unwrap();
        let spec = EnergySpec::Measurement {
            terms: vec![MeasurementSpec {
                offset: 0.0,
                label_weights: Some(vec![1.0, -1.0]),
                ..Default::default()
            }],
            psi: Some(vec![0.1]),
        };
        let cfg = LearnerConfig {
            algorithm: LearnerAlgorithm::DoubleLoop,
            learn_theta: false,
            epochs: 1,
            ..Default::default()
        };
        let init = TrainedModel::new(ThetaParametrization::zeros(1, 2), PsiParametrization::constant(vec![0.1]));
        let (model, _) = train_double_loop(&data, &spec, init, &cfg).unwrap();
        let PsiParametrization::Constant { values } = &model.psi else { unreachable!() };
        assert!(values[0] > 0.1);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = ChainModel::from_flat(Layout::new(4, 3).unwrap(), (0..4 * 3 + 3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let examples = (0..20)
            .map(|_| Example {
                features: one_hot_features(4, 4),
                labels: sample_labeling(&truth, &mut rng).unwrap(),
            })
            .collect();
        let data = Dataset::new(3, 4, examples).unwrap();
        let spec = EnergySpec::Measurement {
            terms: vec![MeasurementSpec {
                offset: 1.0,
                label_weights: Some(vec![1.0, -1.0, 0.0]),
                ..Default::default()
            }],
            psi: None,
        };
        let cfg = LearnerConfig { epochs: 2, seed: 9, ..Default::default() };
        let init = TrainedModel::new(ThetaParametrization::zeros(4, 3), PsiParametrization::constant(vec![1.0]));
        let a = train_doubly_stochastic(&data, &spec, init.clone(), &cfg).unwrap();
        let b = train_doubly_stochastic(&data, &spec, init, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
