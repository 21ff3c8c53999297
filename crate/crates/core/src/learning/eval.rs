use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::train::TrainedModel;
use crate::chain::{sufficient_statistics, Labeling, Layout};
use crate::energy::EnergySpec;
use crate::error::{ensure_len, Result};
use crate::inference::{solve, AugmentedProblem, SolverConfig};
use crate::oracle::map_decode;

/// Margin below which a measurement counts as violated: the smoothed hinge
/// is flat exactly when `a^T S(y) + b >= 1`.
const SATISFIED_AT: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub examples: usize,
    pub tokens: usize,
    pub token_accuracy: f64,
    /// F1 over maximal same-label runs, matched on start, end and label.
    pub segment_f1: f64,
    /// Violated `(example, measurement)` pairs.
    pub constraint_violations: usize,
    pub mean_violations: f64,
    /// Fraction of examples whose prediction satisfies every measurement.
    pub satisfaction_rate: f64,
    /// Mean solver iterations per example.
    pub mean_iterations: f64,
    /// Solver iterates that failed `validate_marginals`.
    pub infeasible_iterates: usize,
}

fn segments(y: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=y.len() {
        if i == y.len() || y[i] != y[start] {
            out.push((start, i, y[start]));
            start = i;
        }
    }
    out
}

/// Number of measurements of `spec` violated by `y`, and the number checked.
pub fn count_violations(spec: &EnergySpec, k: usize, y: &Labeling) -> Result<(usize, usize)> {
    let EnergySpec::Measurement { terms, .. } = spec else {
        return Ok((0, 0));
    };
    let layout = Layout::new(y.len(), k)?;
    let s = sufficient_statistics(layout, y)?;
    let mut violated = 0;
    for t in terms {
        let term = t.instantiate(layout)?;
        if term.measurement.apply(s.as_slice()) < SATISFIED_AT {
            violated += 1;
        }
    }
    Ok((violated, terms.len()))
}

/// Scores `predictions` against the gold labels of `data`.
pub fn score_predictions(data: &Dataset, predictions: &[Labeling], constraints: &EnergySpec) -> Result<Metrics> {
    ensure_len("predictions", data.len(), predictions.len())?;
    let (mut correct, mut tokens) = (0usize, 0usize);
    let (mut matched, mut predicted, mut gold) = (0usize, 0usize, 0usize);
    let (mut violations, mut satisfied) = (0usize, 0usize);
    for (ex, pred) in data.examples().iter().zip(predictions) {
        ensure_len("prediction length", ex.labels.len(), pred.len())?;
        tokens += pred.len();
        correct += ex
            .labels
            .as_slice()
            .iter()
            .zip(pred.as_slice())
            .filter(|(a, b)| a == b)
            .count();
        let gs = segments(ex.labels.as_slice());
        let ps = segments(pred.as_slice());
        matched += ps.iter().filter(|s| gs.contains(s)).count();
        predicted += ps.len();
        gold += gs.len();
        let (v, _) = count_violations(constraints, data.num_states(), pred)?;
        violations += v;
        satisfied += (v == 0) as usize;
    }
    let precision = matched as f64 / predicted.max(1) as f64;
    let recall = matched as f64 / gold.max(1) as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let n = data.len().max(1) as f64;
    Ok(Metrics {
        examples: data.len(),
        tokens,
        token_accuracy: correct as f64 / tokens.max(1) as f64,
        segment_f1: f1,
        constraint_violations: violations,
        mean_violations: violations as f64 / n,
        satisfaction_rate: satisfied as f64 / n,
        mean_iterations: 0.0,
        infeasible_iterates: 0,
    })
}

/// One MAP prediction with its solver statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Labeling,
    pub iterations: usize,
    pub infeasible_iterates: usize,
}

/// MAP predictions through the modified parameters of each example's
/// augmented problem.
pub fn predict(
    data: &Dataset,
    model: &TrainedModel,
    energy: &EnergySpec,
    solver: &SolverConfig,
) -> Result<Vec<Prediction>> {
    data.examples()
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let run = || -> Result<Prediction> {
                let theta = model.chain_for(&ex.features)?;
                let e = model.energy_for(energy, &ex.features)?;
                let problem = AugmentedProblem::new(&theta, &e)?;
                let out = solve(&problem, solver)?;
                Ok(Prediction {
                    labels: map_decode(&out.modified_params)?,
                    iterations: out.trace.iterations(),
                    infeasible_iterates: out.trace.infeasible_count(),
                })
            };
            run().map_err(|e| e.at_example(i))
        })
        .collect()
}

/// Predicts every example and scores the result; constraints come from the
/// measurement terms of `energy`, whatever their learned weights.
pub fn evaluate(
    data: &Dataset,
    model: &TrainedModel,
    energy: &EnergySpec,
    solver: &SolverConfig,
) -> Result<(Metrics, Vec<Labeling>)> {
    let out = predict(data, model, energy, solver)?;
    let iterations: usize = out.iter().map(|p| p.iterations).sum();
    let infeasible = out.iter().map(|p| p.infeasible_iterates).sum();
    let predictions: Vec<Labeling> = out.into_iter().map(|p| p.labels).collect();
    let mut metrics = score_predictions(data, &predictions, energy)?;
    metrics.mean_iterations = iterations as f64 / data.len().max(1) as f64;
    metrics.infeasible_iterates = infeasible;
    Ok((metrics, predictions))
}
