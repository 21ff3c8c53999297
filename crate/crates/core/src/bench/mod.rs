//! Synthetic benchmarks, the Euclidean baseline solver and the experiment runner.

mod euclidean;
mod experiment;
mod generate;
pub mod suite;

pub use generate::{
    default_constraints, full_prototype, generate_cgm, generate_prototype, generate_softcon,
    unigram_prototype, CgmInstance, CgmSpec, PrototypeSpec, PrototypeTask, SoftconSpec, SoftconTask,
    Splits,
};
pub use euclidean::{euclidean_baseline_solve, EuclideanConfig, PolytopeProjector};
pub use experiment::{
    run_experiment, run_experiment_config, EnergySection, ExperimentConfig, ExperimentOutput, Method,
    Overrides, PsiMode, Report, Selection, RunReport, SolverSection, TaskConfig, TimingRow, TrainingSummary,
    EXPERIMENT_SCHEMA, REPORT_SCHEMA,
};
