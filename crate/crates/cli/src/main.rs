use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bethe_core::bench::{
    generate_cgm, generate_prototype, generate_softcon, run_experiment_config, ExperimentConfig,
    Method, Overrides, PsiMode, SolverSection, TaskConfig,
};
use bethe_core::energy::{EnergyFile, EnergySpec};
use bethe_core::inference::{Algorithm, SolverConfig};
use bethe_core::learning::{
    evaluate, predict, train, Checkpoint, Dataset, GlobalSource, LearnerConfig, MeanMapFeatures,
    PsiParametrization, ThetaParametrization, TrainedModel,
};

#[derive(Parser)]
#[command(name = "bethe", version, about = "Inference and learning for chain CRFs with non-local energies")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML with [task], [solver], [learner], [energy]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the task seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the solver iteration cap.
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    /// Overrides the solver: rda, md, acc-rda or euclidean.
    #[arg(long, global = true)]
    solver: Option<Method>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the datasets and energies of the configured task.
    Generate,
    /// Trains θ and ψ on a dataset and writes a checkpoint.
    Train {
        /// Training set (JSONL dataset file).
        #[arg(long)]
        data: PathBuf,
        /// Energy file; defaults to no energy.
        #[arg(long)]
        energy: Option<PathBuf>,
    },
    /// Writes MAP predictions of a checkpoint, one labeling per line.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset to decode; its labels are not used.
        #[arg(long)]
        data: PathBuf,
    },
    /// Scores a checkpoint on a labelled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Runs the configured experiment and writes its report.
    Bench,
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            max_iters: self.max_iters,
            solver: self.solver,
        }
    }

    fn experiment(&self) -> Result<ExperimentConfig> {
        let path = self.config.as_ref().context("--config is required for this command")?;
        let mut cfg = ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply(&self.overrides())?;
        Ok(cfg)
    }

    /// Solver and learner sections from `--config` if given, else defaults.
    fn sections(&self) -> Result<(SolverSection, LearnerConfig, Option<ExperimentConfig>)> {
        let cfg = match &self.config {
            Some(_) => Some(self.experiment()?),
            None => None,
        };
        let (mut solver, learner) = match &cfg {
            Some(c) => (c.solver.clone(), c.learner.clone()),
            None => (SolverSection::default(), LearnerConfig::default()),
        };
        if let Some(m) = self.max_iters {
            solver.bethe.max_iters = m;
        }
        if let Some(s) = self.solver {
            solver.methods = vec![s];
        }
        Ok((solver, learner, cfg))
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn bethe_solver(section: &SolverSection) -> Result<SolverConfig> {
    let algorithm = match section.methods.first() {
        Some(Method::Rda) | None => Algorithm::Rda,
        Some(Method::Md) => Algorithm::Md,
        Some(Method::AccRda) => Algorithm::AcceleratedRda,
        Some(Method::Euclidean) => bail!("the euclidean baseline only runs inside `bench` on cgm tasks"),
    };
    Ok(SolverConfig {
        algorithm,
        ..section.bethe.clone()
    })
}

fn save_datasets(out: &Path, sets: [(&str, &Dataset); 3]) -> Result<()> {
    for (name, d) in sets {
        d.save(out.join(format!("{name}.jsonl")))?;
    }
    Ok(())
}

fn save_energy(out: &Path, name: &str, spec: &EnergySpec) -> Result<()> {
    EnergyFile::new(spec.clone()).save(out.join(format!("{name}.toml")))?;
    Ok(())
}

fn generate(g: &Global) -> Result<()> {
    let cfg = g.experiment()?;
    let out = g.out_dir()?;
    let hash = match &cfg.task {
        TaskConfig::Softcon(spec) => {
            let task = generate_softcon(spec)?;
            save_datasets(out, [("train", &task.train), ("dev", &task.dev), ("test", &task.test)])?;
            save_energy(out, "energy", &task.energy)?;
            task.truth.save(out.join("truth.json"))?;
            task.hash()?
        }
        TaskConfig::Prototype(spec) => {
            let task = generate_prototype(spec)?;
            save_datasets(out, [("train", &task.train), ("dev", &task.dev), ("test", &task.test)])?;
            save_energy(out, "unigram", &task.unigram)?;
            save_energy(out, "full", &task.full)?;
            task.hash()?
        }
        TaskConfig::Cgm(spec) => {
            let inst = generate_cgm(spec)?;
            inst.theta.save(out.join("theta.json"))?;
            save_energy(out, "energy", &inst.energy)?;
            fs::write(out.join("truth.json"), serde_json::to_string(&inst.truth.as_slice())?)?;
            inst.hash()?
        }
    };
    println!("{} task written to {} (hash {hash})", cfg.task.kind(), out.display());
    Ok(())
}

fn load_energy(path: Option<&PathBuf>) -> Result<EnergySpec> {
    match path {
        Some(p) => Ok(EnergyFile::load(p).with_context(|| format!("reading {}", p.display()))?.spec),
        None => Ok(EnergySpec::Zero),
    }
}

fn train_cmd(g: &Global, data: &Path, energy: Option<&PathBuf>) -> Result<()> {
    let (_, mut learner, cfg) = g.sections()?;
    learner.inner.max_iters = g.max_iters.unwrap_or(learner.inner.max_iters);
    let data = Dataset::load(data).with_context(|| format!("reading {}", data.display()))?;
    let spec = load_energy(energy)?;
    let psi_values = spec.initial_psi();
    let psi = match cfg.as_ref().map(|c| &c.energy) {
        Some(e) if e.psi == PsiMode::MeanMap => {
            let map = MeanMapFeatures::new(data.feature_dim(), e.mean_map_dim, e.bandwidth, e.feature_seed)?;
            PsiParametrization::featurized_from(&psi_values, e.mean_map_dim, e.link, GlobalSource::MeanMap(map))
        }
        _ => PsiParametrization::constant(psi_values),
    };
    let init = TrainedModel::new(ThetaParametrization::zeros(data.feature_dim(), data.num_states()), psi);
    let (model, history) = train(&data, &spec, init, &learner)?;
    let out = g.out_dir()?;
    Checkpoint::new(model, spec).save(out.join("checkpoint.json"))?;
    history.save_csv(out.join("history.csv"))?;
    println!(
        "trained {} updates ({} inner iterations, {} infeasible iterates); checkpoint in {}",
        history.records.len(),
        history.inner_iterations(),
        history.infeasible_iterates(),
        out.display()
    );
    Ok(())
}

fn infer_cmd(g: &Global, checkpoint: &Path, data: &Path) -> Result<()> {
    let (solver, _, _) = g.sections()?;
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let data = Dataset::load(data).with_context(|| format!("reading {}", data.display()))?;
    let preds = predict(&data, &ck.model, &ck.energy, &bethe_solver(&solver)?)?;
    let out = g.out_dir()?;
    let mut file = std::io::BufWriter::new(fs::File::create(out.join("predictions.jsonl"))?);
    for p in &preds {
        writeln!(file, "{}", serde_json::to_string(p.labels.as_slice())?)?;
    }
    println!("{} predictions written to {}", preds.len(), out.join("predictions.jsonl").display());
    Ok(())
}

fn eval_cmd(g: &Global, checkpoint: &Path, data: &Path) -> Result<()> {
    let (solver, _, _) = g.sections()?;
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let data = Dataset::load(data).with_context(|| format!("reading {}", data.display()))?;
    let (metrics, _) = evaluate(&data, &ck.model, &ck.energy, &bethe_solver(&solver)?)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    fs::write(g.out_dir()?.join("metrics.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn bench(g: &Global) -> Result<()> {
    let cfg = g.experiment()?;
    let output = run_experiment_config(&cfg)?;
    let out = g.out_dir()?;
    output.save(out)?;
    print!("{}", output.report.to_markdown());
    println!("\nreport written to {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let g = &cli.global;
    match &cli.command {
        Command::Generate => generate(g),
        Command::Train { data, energy } => train_cmd(g, data, energy.as_ref()),
        Command::Infer { checkpoint, data } => infer_cmd(g, checkpoint, data),
        Command::Eval { checkpoint, data } => eval_cmd(g, checkpoint, data),
        Command::Bench => bench(g),
    }
}
