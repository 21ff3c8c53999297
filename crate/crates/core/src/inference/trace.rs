use std::io::Write;
use std::path::Path;
use std::time::Instant;

use super::AugmentedProblem;
use crate::chain::{validate_marginals, ChainModel, MarginalVector};
use crate::error::Result;

/// Per-iteration record of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub iteration: usize,
    /// Objective at the iterate `μ_t`.
    pub objective: f64,
    /// Objective at the running average of the iterates, when tracked.
    pub averaged_objective: Option<f64>,
    /// `‖μ_t - μ_{t-1}‖₁ / (2n - 1)`.
    pub step_norm: f64,
    /// Seconds since the solver started.
    pub wall_time: f64,
    /// Largest polytope violation of `μ_t` as reported by `validate_marginals`.
    pub violation: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub theta: ChainModel,
    pub mu: MarginalVector,
    pub avg_grad: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SolverTrace {
    pub steps: Vec<TraceStep>,
    pub iterates: Vec<IterateRecord>,
    pub converged: bool,
    /// Objective at the starting point `μ_0`.
    pub initial_objective: f64,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn infeasible_count(&self) -> usize {
        self.steps.iter().filter(|s| !s.feasible).count()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.steps.last().map(|s| s.objective)
    }

    pub fn wall_time(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.wall_time)
    }

    /// Delimited text with columns `iteration,objective,step_norm,wall_time`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,objective,step_norm,wall_time")?;
        for s in &self.steps {
            writeln!(out, "{},{:e},{:e},{:e}", s.iteration, s.objective, s.step_norm, s.wall_time)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Shared bookkeeping for the three solvers.
pub(crate) struct Recorder<'p, 'a> {
    problem: &'p AugmentedProblem<'a>,
    start: Instant,
    record_iterates: bool,
    average: Option<(MarginalVector, usize)>,
    pub trace: SolverTrace,
}

impl<'p, 'a> Recorder<'p, 'a> {
    pub fn new(
        problem: &'p AugmentedProblem<'a>,
        mu0: &MarginalVector,
        track_average: bool,
        record_iterates: bool,
    ) -> Result<Self> {
        let trace = SolverTrace {
            initial_objective: problem.objective(mu0)?,
            ..Default::default()
        };
        Ok(Recorder {
            problem,
            start: Instant::now(),
            record_iterates,
            average: track_average.then(|| (mu0.clone(), 0)),
            trace,
        })
    }

    /// Logs iterate `t` and returns its step norm.
    pub fn push(
        &mut self,
        t: usize,
        mu: &MarginalVector,
        prev: &MarginalVector,
        theta: impl FnOnce() -> ChainModel,
        avg_grad: &[f64],
    ) -> Result<f64> {
        let step_norm = mu.block_step(prev);
        let check = validate_marginals(mu);
        let averaged_objective = match &mut self.average {
            Some((avg, count)) => {
                *count += 1;
                let w = 1.0 / *count as f64;
                *avg = avg.lerp(mu, w)?;
                Some(self.problem.objective(avg)?)
            }
            None => None,
        };
        self.trace.steps.push(TraceStep {
            iteration: t,
            objective: self.problem.objective(mu)?,
            averaged_objective,
            step_norm,
            wall_time: self.start.elapsed().as_secs_f64(),
            violation: check.max_simplex_violation.max(check.max_consistency_violation),
            feasible: check.passed(),
        });
        if self.record_iterates {
            self.trace.iterates.push(IterateRecord {
                theta: theta(),
                mu: mu.clone(),
                avg_grad: avg_grad.to_vec(),
            });
        }
        Ok(step_norm)
    }

    pub fn average(&self) -> Option<&MarginalVector> {
        self.average.as_ref().map(|(m, _)| m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let trace = SolverTrace {
            steps: vec![TraceStep {
                iteration: 1,
                objective: -1.5,
                averaged_objective: None,
                step_norm: 0.25,
                wall_time: 0.001,
                violation: 0.0,
                feasible: true,
            }],
            ..Default::default()
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "iteration,objective,step_norm,wall_time");
        assert_eq!(lines[1], "1,-1.5e0,2.5e-1,1e-3");
    }
}
