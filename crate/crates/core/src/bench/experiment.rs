//! Config-driven experiments: generate a task, train, evaluate, report.
//!
//! ```toml
//! schema = "bethe.experiment/v1"
//! name = "softcon"
//!
//! [task]
//! kind = "softcon"
//! seed = 7
//!
//! [solver]
//! methods = ["rda"]
//! anytime_iters = 10
//! [solver.bethe]
//! max_iters = 200
//!
//! [learner]
//! algorithm = "doubly-stochastic"
//! epochs = 5
//!
//! [energy]
//! psi = "constant"
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::euclidean::{euclidean_baseline_solve, EuclideanConfig};
use super::generate::{
    generate_cgm, generate_prototype, generate_softcon, CgmSpec, PrototypeSpec, SoftconSpec,
};
use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::inference::{solve, Algorithm, AugmentedProblem, SolverConfig, SolverTrace};
use crate::learning::{
    evaluate, train_observed, Dataset, GlobalSource, LearnerConfig, Link, MeanMapFeatures, Metrics,
    PsiParametrization, StopReason, ThetaParametrization, TrainedModel, TrainingHistory,
};

pub const EXPERIMENT_SCHEMA: &str = "bethe.experiment/v1";
pub const REPORT_SCHEMA: &str = "bethe.report/v1";

/// Objective gap used for the time-to-target column.
const TARGET_GAP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    Softcon(SoftconSpec),
    Prototype(PrototypeSpec),
    Cgm(CgmSpec),
}

impl TaskConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskConfig::Softcon(_) => "softcon",
            TaskConfig::Prototype(_) => "prototype",
            TaskConfig::Cgm(_) => "cgm",
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            TaskConfig::Softcon(s) => s.seed = seed,
            TaskConfig::Prototype(s) => s.seed = seed,
            TaskConfig::Cgm(s) => s.seed = seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rda,
    Md,
    AccRda,
    Euclidean,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rda => "rda",
            Method::Md => "md",
            Method::AccRda => "acc-rda",
            Method::Euclidean => "euclidean",
        }
    }

    fn algorithm(self) -> Option<Algorithm> {
        match self {
            Method::Rda => Some(Algorithm::Rda),
            Method::Md => Some(Algorithm::Md),
            Method::AccRda => Some(Algorithm::AcceleratedRda),
            Method::Euclidean => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rda" => Ok(Method::Rda),
            "md" => Ok(Method::Md),
            "acc-rda" => Ok(Method::AccRda),
            "euclidean" => Ok(Method::Euclidean),
            other => Err(Error::InvalidParameter(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Solvers to run. Learning tasks use the first one for evaluation.
    pub methods: Vec<Method>,
    pub bethe: SolverConfig,
    pub euclidean: EuclideanConfig,
    /// Iteration cap of the extra anytime evaluation; 0 skips it.
    pub anytime_iters: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            methods: vec![Method::Rda],
            bethe: SolverConfig::default(),
            euclidean: EuclideanConfig::default(),
            anytime_iters: 10,
        }
    }
}

impl SolverSection {
    fn bethe_for(&self, method: Method) -> Result<SolverConfig> {
        let algorithm = method.algorithm().ok_or_else(|| Error::Config {
            key: "solver.methods".into(),
            message: "the euclidean baseline only runs on cgm tasks".into(),
        })?;
        Ok(SolverConfig {
            algorithm,
            ..self.bethe.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMode {
    Constant,
    MeanMap,
    /// Runs every energy once with each mode.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub psi: PsiMode,
    /// Random Fourier features of the mean node feature vector.
    pub mean_map_dim: usize,
    pub bandwidth: f64,
    pub link: Link,
    pub feature_seed: u64,
}

impl Default for EnergySection {
    fn default() -> Self {
        EnergySection {
            psi: PsiMode::Constant,
            mean_map_dim: 16,
            bandwidth: 1.0,
            link: Link::Softplus,
            feature_seed: 0,
        }
    }
}

impl EnergySection {
    fn modes(&self) -> Vec<PsiMode> {
        match self.psi {
            PsiMode::Both => vec![PsiMode::Constant, PsiMode::MeanMap],
            mode => vec![mode],
        }
    }

    fn psi_for(&self, mode: PsiMode, values: &[f64], input_dim: usize) -> Result<PsiParametrization> {
        Ok(match mode {
            PsiMode::MeanMap => {
                let map = MeanMapFeatures::new(input_dim, self.mean_map_dim, self.bandwidth, self.feature_seed)?;
                PsiParametrization::featurized_from(values, self.mean_map_dim, self.link, GlobalSource::MeanMap(map))
            }
            _ => PsiParametrization::constant(values.to_vec()),
        })
    }
}

/// Which parameters of a training run get evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// The parameters after the final update.
    #[default]
    Last,
    /// The starting or end-of-pass parameters with the best dev-set token
    /// accuracy.
    DevAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub selection: Selection,
    pub task: TaskConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub energy: EnergySection,
}

/// Command-line style overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub solver: Option<Method>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        if cfg.schema != EXPERIMENT_SCHEMA {
            return Err(Error::Schema {
                expected: EXPERIMENT_SCHEMA.into(),
                found: cfg.schema,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or(self.task.kind())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.task.set_seed(seed);
        }
        if let Some(m) = o.max_iters {
            self.solver.bethe.max_iters = m;
            self.solver.euclidean.max_iters = m;
        }
        if let Some(method) = o.solver {
            self.solver.methods = vec![method];
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let config = |key: &str, message: &str| Error::Config {
            key: key.into(),
            message: message.into(),
        };
        match &self.task {
            TaskConfig::Softcon(s) => s.validate()?,
            TaskConfig::Prototype(s) => s.validate()?,
            TaskConfig::Cgm(s) => s.validate()?,
        }
        if self.solver.methods.is_empty() {
            return Err(config("solver.methods", "at least one solver is required"));
        }
        if !matches!(self.task, TaskConfig::Cgm(_)) {
            self.solver.bethe_for(self.solver.methods[0])?;
            self.learner.validate()?;
        }
        self.solver.bethe.validate().map_err(|e| config("solver.bethe", &e.to_string()))?;
        if self.energy.mean_map_dim == 0 {
            return Err(config("energy.mean_map_dim", "must be at least 1"));
        }
        if !(self.energy.bandwidth > 0.0) {
            return Err(config("energy.bandwidth", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub updates: usize,
    pub inner_iterations: usize,
    pub stale_updates: usize,
    pub infeasible_iterates: usize,
    pub stop: StopReason,
    /// Pass whose parameters were kept under dev-set selection; 0 is the
    /// starting point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_pass: Option<usize>,
    /// Mean surrogate log-likelihood over the last pass of updates.
    pub final_surrogate: f64,
    pub wall_time: f64,
}

impl TrainingSummary {
    fn new(history: &TrainingHistory, per_pass: usize, wall_time: f64) -> Self {
        let records = &history.records;
        let tail = &records[records.len().saturating_sub(per_pass.max(1))..];
        TrainingSummary {
            updates: records.len(),
            inner_iterations: history.inner_iterations(),
            stale_updates: history.stale_updates(),
            infeasible_iterates: history.infeasible_iterates(),
            stop: history.stop,
            selected_pass: None,
            final_surrogate: tail.iter().map(|r| r.surrogate).sum::<f64>() / tail.len().max(1) as f64,
            wall_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub id: String,
    /// Test-set metrics of a learning run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    /// Learned energy weights averaged over the test set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    /// Final objective of a single inference run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    /// Solver iterations across training, selection and evaluation.
    pub solver_iterations: usize,
    /// Those of them whose iterate failed `validate_marginals`.
    pub infeasible_iterates: usize,
    pub wall_time: f64,
}

/// One row of the solver timing table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub id: String,
    pub method: Method,
    pub n: usize,
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub wall_time: f64,
    /// Seconds until the objective first came within `1e-4` of the best
    /// final objective in the table.
    pub time_to_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub name: String,
    pub config: ExperimentConfig,
    pub task_hash: String,
    pub runs: Vec<RunReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timing: Vec<TimingRow>,
    /// Euclidean over Bethe-RDA wall time, when both ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

impl Report {
    pub fn run(&self, id: &str) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.id == id)
    }

    pub fn solver_iterations(&self) -> usize {
        self.runs.iter().map(|r| r.solver_iterations).sum()
    }

    pub fn infeasible_iterates(&self) -> usize {
        self.runs.iter().map(|r| r.infeasible_iterates).sum()
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}\n\ntask hash `{}`\n", self.name, self.task_hash);
        let learned: Vec<_> = self.runs.iter().filter(|r| r.metrics.is_some()).collect();
        if !learned.is_empty() {
            s.push_str("| run | accuracy | segment F1 | violations | satisfied | iters/example | infeasible | seconds |\n");
            s.push_str("|---|---|---|---|---|---|---|---|\n");
            for r in learned {
                let m = r.metrics.as_ref().expect("filtered");
                let _ = writeln!(
                    s,
                    "| {} | {:.4} | {:.4} | {} | {:.4} | {:.1} | {} | {:.2} |",
                    r.id,
                    m.token_accuracy,
                    m.segment_f1,
                    m.constraint_violations,
                    m.satisfaction_rate,
                    m.mean_iterations,
                    r.infeasible_iterates,
                    r.wall_time
                );
            }
        }
        if !self.timing.is_empty() {
            s.push_str("\n| run | n | k | iterations | converged | objective | seconds | seconds to 1e-4 |\n");
            s.push_str("|---|---|---|---|---|---|---|---|\n");
            for t in &self.timing {
                let target = t.time_to_target.map_or("-".to_string(), |v| format!("{v:.3}"));
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {:.10} | {:.3} | {} |",
                    t.id, t.n, t.k, t.iterations, t.converged, t.objective, t.wall_time, target
                );
            }
        }
        if let Some(x) = self.speedup {
            let _ = writeln!(s, "\nspeedup (euclidean / rda wall time): {x:.2}");
        }
        s
    }
}

/// A report plus the per-run traces behind it.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: Report,
    pub histories: Vec<(String, TrainingHistory)>,
    pub traces: Vec<(String, SolverTrace)>,
}

impl ExperimentOutput {
    /// Writes `report.json`, `report.md` and one CSV per trace into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report)?)?;
        std::fs::write(dir.join("report.md"), self.report.to_markdown())?;
        for (id, h) in &self.histories {
            h.save_csv(dir.join(format!("{}.history.csv", file_stem(id))))?;
        }
        for (id, t) in &self.traces {
            t.save_csv(dir.join(format!("{}.trace.csv", file_stem(id))))?;
        }
        Ok(())
    }
}

fn file_stem(id: &str) -> String {
    id.replace(['/', '@'], "_")
}

fn in_run<T>(id: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Run {
        run: id.to_string(),
        source: Box::new(e),
    })
}

struct Runner<'c> {
    cfg: &'c ExperimentConfig,
    name: String,
    runs: Vec<RunReport>,
    histories: Vec<(String, TrainingHistory)>,
    traces: Vec<(String, SolverTrace)>,
}

impl<'c> Runner<'c> {
    fn id(&self, run: &str) -> String {
        format!("{}/{}", self.name, run)
    }

    fn eval_solver(&self) -> SolverConfig {
        self.cfg.solver.bethe_for(self.cfg.solver.methods[0]).expect("validated")
    }

    /// Trains from `init`, evaluates on `test` and records the run.
    fn learn(&mut self, run: &str, task: Splits<'_>, energy: &EnergySpec, init: TrainedModel, learner: &LearnerConfig) -> Result<TrainedModel> {
        let id = self.id(run);
        let start = Instant::now();
        let solver = self.eval_solver();
        let mut best: Option<(f64, usize, TrainedModel)> = None;
        let mut dev_iterations = 0;
        let mut dev_infeasible = 0;
        let mut observer = |pass: usize, model: &TrainedModel| -> Result<()> {
            if self.cfg.selection == Selection::DevAccuracy {
                let (m, _) = evaluate(task.dev, model, energy, &solver)?;
                dev_iterations += total_iterations(&m);
                dev_infeasible += m.infeasible_iterates;
                if best.as_ref().is_none_or(|b| m.token_accuracy > b.0) {
                    best = Some((m.token_accuracy, pass, model.clone()));
                }
            }
            Ok(())
        };
        in_run(&id, observer(0, &init))?;
        let (last, history) = in_run(&id, train_observed(task.train, energy, init, learner, &mut observer))?;
        let mut summary = TrainingSummary::new(&history, task.train.len(), start.elapsed().as_secs_f64());
        let model = match best {
            Some((_, pass, model)) => {
                summary.selected_pass = Some(pass);
                model
            }
            None => last,
        };
        let (metrics, _) = in_run(&id, evaluate(task.test, &model, energy, &solver))?;
        let psi = mean_psi(&model, task.test, energy)?;
        let iterations = summary.inner_iterations + dev_iterations + total_iterations(&metrics);
        let infeasible = summary.infeasible_iterates + dev_infeasible + metrics.infeasible_iterates;
        self.runs.push(RunReport {
            id: id.clone(),
            metrics: Some(metrics),
            psi,
            training: Some(summary),
            objective: None,
            solver_iterations: iterations,
            infeasible_iterates: infeasible,
            wall_time: start.elapsed().as_secs_f64(),
        });
        self.histories.push((id, history));
        Ok(model)
    }

    /// Re-evaluates a trained model under the anytime iteration cap.
    fn anytime(&mut self, run: &str, test: &Dataset, energy: &EnergySpec, model: &TrainedModel) -> Result<()> {
        let cap = self.cfg.solver.anytime_iters;
        if cap == 0 {
            return Ok(());
        }
        let id = format!("{}@{cap}", self.id(run));
        let start = Instant::now();
        let solver = SolverConfig {
            max_iters: cap,
            ..self.eval_solver()
        };
        let (metrics, _) = in_run(&id, evaluate(test, model, energy, &solver))?;
        self.runs.push(RunReport {
            id,
            psi: mean_psi(model, test, energy)?,
            training: None,
            objective: None,
            solver_iterations: total_iterations(&metrics),
            infeasible_iterates: metrics.infeasible_iterates,
            metrics: Some(metrics),
            wall_time: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn finish(self, task_hash: String, timing: Vec<TimingRow>, speedup: Option<f64>) -> ExperimentOutput {
        ExperimentOutput {
            report: Report {
                schema: REPORT_SCHEMA.into(),
                name: self.name,
                config: self.cfg.clone(),
                task_hash,
                runs: self.runs,
                timing,
                speedup,
            },
            histories: self.histories,
            traces: self.traces,
        }
    }
}

fn total_iterations(m: &Metrics) -> usize {
    (m.mean_iterations * m.examples as f64).round() as usize
}

/// Train, dev and test sets of a learning task.
#[derive(Clone, Copy)]
struct Splits<'a> {
    train: &'a Dataset,
    dev: &'a Dataset,
    test: &'a Dataset,
}

/// Mean realized `ψ(x)` over `data`; `None` for energies without weights.
fn mean_psi(model: &TrainedModel, data: &Dataset, energy: &EnergySpec) -> Result<Option<Vec<f64>>> {
    let m = model.psi.num_psi();
    if m == 0 {
        return Ok(None);
    }
    let nonnegative = energy.requires_nonnegative_psi();
    let mut sum = vec![0.0; m];
    for ex in data.examples() {
        let psi = model.psi.realize(&ex.features, nonnegative)?;
        sum.iter_mut().zip(&psi).for_each(|(s, p)| *s += p);
    }
    let n = data.len().max(1) as f64;
    Ok(Some(sum.into_iter().map(|s| s / n).collect()))
}

fn frozen_psi(learner: &LearnerConfig) -> LearnerConfig {
    LearnerConfig {
        learn_psi: false,
        ..learner.clone()
    }
}

fn with_psi(energy: &EnergySpec, value: f64) -> EnergySpec {
    match energy {
        EnergySpec::Measurement { terms, .. } => EnergySpec::Measurement {
            terms: terms.clone(),
            psi: Some(vec![value; terms.len()]),
        },
        EnergySpec::Prototype { mode, prototypes, .. } => EnergySpec::Prototype {
            mode: *mode,
            prototypes: prototypes.clone(),
            psi: value,
        },
        other => other.clone(),
    }
}

fn psi_suffix(mode: PsiMode) -> &'static str {
    match mode {
        PsiMode::MeanMap => "mean-map",
        _ => "constant",
    }
}

/// Baseline chain with every weight frozen at zero, then, when the learner
/// learns `ψ`, joint training warm-started from the baseline `θ`.
fn run_softcon(runner: &mut Runner<'_>, spec: &SoftconSpec) -> Result<String> {
    let task = generate_softcon(spec)?;
    let cfg = runner.cfg;
    let d = task.train.feature_dim();
    let k = task.train.num_states();
    let m = task.energy.num_psi();
    let baseline_energy = with_psi(&task.energy, 0.0);
    let init = TrainedModel::new(ThetaParametrization::zeros(d, k), PsiParametrization::constant(vec![0.0; m]));
    let splits = Splits { train: &task.train, dev: &task.dev, test: &task.test };
    let base = runner.learn("baseline", splits, &baseline_energy, init, &frozen_psi(&cfg.learner))?;
    if cfg.learner.learn_psi {
        for (run, model) in augmented_runs(runner, "augmented", splits, &task.energy, &base)? {
            runner.anytime(&run, &task.test, &task.energy, &model)?;
        }
    }
    task.hash()
}

/// One run per configured `ψ` mode, starting from `base`. With both modes,
/// the featurized run extends the trained constant model.
fn augmented_runs(
    runner: &mut Runner<'_>,
    prefix: &str,
    splits: Splits<'_>,
    energy: &EnergySpec,
    base: &TrainedModel,
) -> Result<Vec<(String, TrainedModel)>> {
    let cfg = runner.cfg;
    let mut out: Vec<(String, TrainedModel)> = Vec::new();
    for mode in cfg.energy.modes() {
        let run = format!("{prefix}-{}", psi_suffix(mode));
        let start = match out.first() {
            Some((_, m)) => m,
            None => base,
        };
        let values = match &start.psi {
            PsiParametrization::Constant { values } if !values.is_empty() => values.clone(),
            _ => energy.initial_psi(),
        };
        let psi = cfg.energy.psi_for(mode, &values, splits.train.feature_dim())?;
        let init = TrainedModel::new(start.theta.clone(), psi);
        let model = runner.learn(&run, splits, energy, init, &cfg.learner)?;
        out.push((run, model));
    }
    Ok(out)
}

/// Base chain, then the unigram and full prototype energies on top of it.
fn run_prototype(runner: &mut Runner<'_>, spec: &PrototypeSpec) -> Result<String> {
    let task = generate_prototype(spec)?;
    let cfg = runner.cfg;
    let d = task.train.feature_dim();
    let k = task.train.num_states();
    let init = TrainedModel::new(ThetaParametrization::zeros(d, k), PsiParametrization::constant(Vec::new()));
    let splits = Splits { train: &task.train, dev: &task.dev, test: &task.test };
    let base = runner.learn("base", splits, &EnergySpec::Zero, init, &frozen_psi(&cfg.learner))?;
    if cfg.learner.learn_psi {
        for (name, energy) in [("unigram", &task.unigram), ("full", &task.full)] {
            augmented_runs(runner, name, splits, energy, &base)?;
        }
    }
    task.hash()
}

/// Every configured solver on the one generated instance.
fn run_cgm(runner: &mut Runner<'_>, spec: &CgmSpec) -> Result<(String, Vec<TimingRow>, Option<f64>)> {
    let inst = generate_cgm(spec)?;
    let cfg = runner.cfg;
    let layout = inst.theta.layout();
    let energy = inst.energy.instantiate(layout)?;
    let problem = AugmentedProblem::new(&inst.theta, &energy)?;
    let mut timing = Vec::new();
    let mut traces = Vec::new();
    for &method in &cfg.solver.methods {
        let id = runner.id(method.name());
        let start = Instant::now();
        let out = in_run(
            &id,
            match method {
                Method::Euclidean => euclidean_baseline_solve(&problem, &cfg.solver.euclidean),
                m => solve(&problem, &cfg.solver.bethe_for(m)?),
            },
        )?;
        let wall_time = start.elapsed().as_secs_f64();
        let objective = in_run(&id, problem.objective(&out.marginals))?;
        runner.runs.push(RunReport {
            id: id.clone(),
            metrics: None,
            psi: None,
            training: None,
            objective: Some(objective),
            solver_iterations: out.trace.iterations(),
            infeasible_iterates: out.trace.infeasible_count(),
            wall_time,
        });
        timing.push(TimingRow {
            id: id.clone(),
            method,
            n: layout.n,
            k: layout.k,
            iterations: out.trace.iterations(),
            converged: out.trace.converged,
            objective,
            wall_time,
            time_to_target: None,
        });
        traces.push((id, out.trace));
    }
    let best = timing.iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
    for (row, (_, trace)) in timing.iter_mut().zip(&traces) {
        row.time_to_target = trace
            .steps
            .iter()
            .find(|s| s.objective <= best + TARGET_GAP)
            .map(|s| s.wall_time);
    }
    let time_of = |m: Method| timing.iter().find(|t| t.method == m).map(|t| t.wall_time);
    let speedup = match (time_of(Method::Euclidean), time_of(Method::Rda)) {
        (Some(e), Some(r)) if r > 0.0 => Some(e / r),
        _ => None,
    };
    runner.traces.extend(traces);
    Ok((inst.hash()?, timing, speedup))
}

pub fn run_experiment_config(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut runner = Runner {
        cfg,
        name: cfg.name().to_string(),
        runs: Vec::new(),
        histories: Vec::new(),
        traces: Vec::new(),
    };
    match &cfg.task {
        TaskConfig::Softcon(spec) => {
            let hash = run_softcon(&mut runner, spec)?;
            Ok(runner.finish(hash, Vec::new(), None))
        }
        TaskConfig::Prototype(spec) => {
            let hash = run_prototype(&mut runner, spec)?;
            Ok(runner.finish(hash, Vec::new(), None))
        }
        TaskConfig::Cgm(spec) => {
            let (hash, timing, speedup) = run_cgm(&mut runner, spec)?;
            Ok(runner.finish(hash, timing, speedup))
        }
    }
}

/// Loads the config at `path`, runs it and writes report and trace files
/// into `out`.
pub fn run_experiment(path: impl AsRef<Path>, out: impl AsRef<Path>, overrides: &Overrides) -> Result<Report> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(overrides)?;
    let output = run_experiment_config(&cfg)?;
    output.save(out)?;
    Ok(output.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::generate::Splits;

    fn tiny_softcon(learn_psi: bool) -> ExperimentConfig {
        let text = format!(
            r#"
schema = "bethe.experiment/v1"
[task]
kind = "softcon"
length = 5
splits = {{ train = 20, dev = 5, test = 10 }}
[solver.bethe]
max_iters = 30
[learner]
epochs = 1
learn_psi = {learn_psi}
"#
        );
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn parses_sections_and_defaults() {
        let cfg = tiny_softcon(true);
        let TaskConfig::Softcon(spec) = &cfg.task else { panic!() };
        assert_eq!(spec.splits, Splits { train: 20, dev: 5, test: 10 });
        assert_eq!(spec.num_states, 4);
        assert_eq!(cfg.solver.methods, vec![Method::Rda]);
        assert_eq!(cfg.name(), "softcon");
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml(
            "schema = \"bethe.experiment/v1\"\n[task]\nkind = \"cgm\"\ngird = 4\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("gird"), "{err}");
        let err = ExperimentConfig::from_toml(
            "schema = \"bethe.experiment/v1\"\n[task]\nkind = \"softcon\"\n[solver]\nmethods = [\"euclidean\"]\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("solver.methods"), "{err}");
        let err = ExperimentConfig::from_toml("schema = \"v0\"\n[task]\nkind = \"cgm\"\n").unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn psi_learning_off_reports_baseline_only() {
        let out = run_experiment_config(&tiny_softcon(false)).unwrap();
        let ids: Vec<_> = out.report.runs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["softcon/baseline"]);
    }

    #[test]
    fn psi_learning_on_adds_augmented_and_anytime_runs() {
        let out = run_experiment_config(&tiny_softcon(true)).unwrap();
        let ids: Vec<_> = out.report.runs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["softcon/baseline", "softcon/augmented-constant", "softcon/augmented-constant@10"]);
        assert_eq!(out.report.infeasible_iterates(), 0);
    }

    #[test]
    fn reports_are_reproducible_and_saved() {
        let cfg = tiny_softcon(true);
        let a = run_experiment_config(&cfg).unwrap();
        let b = run_experiment_config(&cfg).unwrap();
        let metrics = |o: &ExperimentOutput| o.report.runs.iter().map(|r| r.metrics).collect::<Vec<_>>();
        let strip = |ms: Vec<Option<Metrics>>| ms.into_iter().flatten().map(|m| (m.token_accuracy, m.constraint_violations)).collect::<Vec<_>>();
        assert_eq!(strip(metrics(&a)), strip(metrics(&b)));
        assert_eq!(a.report.task_hash, b.report.task_hash);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let back: Report = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back.runs.len(), 3);
        assert!(dir.path().join("softcon_baseline.history.csv").exists());
        assert!(std::fs::read_to_string(dir.path().join("report.md")).unwrap().contains("softcon/augmented-constant@10"));
    }

    #[test]
    fn cgm_pairs_solvers_on_one_instance() {
        let cfg = ExperimentConfig::from_toml(
            r#"
schema = "bethe.experiment/v1"
[task]
kind = "cgm"
grid = 2
length = 4
population = 200
[solver]
methods = ["rda", "euclidean"]
[solver.bethe]
beta = 1.0
tolerance = 1e-9
max_iters = 2000
[solver.euclidean]
tolerance = 1e-9
"#,
        )
        .unwrap();
        let out = run_experiment_config(&cfg).unwrap();
        let t = &out.report.timing;
        assert_eq!(t.len(), 2);
        assert!((t[0].objective - t[1].objective).abs() < 1e-4, "{t:?}");
        assert!(out.report.speedup.is_some());
        assert!(t.iter().all(|r| r.time_to_target.is_some() && r.k == 4 && r.n == 4));
    }
}
