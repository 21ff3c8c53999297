//! Projected gradient in Euclidean geometry over the local polytope, used as
//! the generic-solver reference point for timing.
//!
//! Steps follow the spectral projected gradient method: Barzilai-Borwein
//! step lengths with a nonmonotone Armijo search along the projected
//! direction. Projections solve the dual of
//! `min ½‖x - v‖² s.t. Cx = d, x ≥ 0` by semismooth Newton; `C D Cᵀ` is
//! banded for a chain, so each Newton step costs `O(m w²)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::chain::{Layout, MarginalVector};
use crate::error::{Error, Result};
use crate::inference::trace::Recorder;
use crate::inference::{AugmentedProblem, SolverOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EuclideanConfig {
    pub max_iters: usize,
    /// Threshold on `‖μ_t - μ_{t-1}‖₁ / (2n - 1)`, as for the Bethe solvers.
    pub tolerance: f64,
    /// A short step only ends the run if the projected gradient
    /// `‖P(μ - ∇F) - μ‖₁ / (2n - 1)` is also below this.
    pub gradient_tolerance: f64,
    /// Window of the nonmonotone line search.
    pub memory: usize,
    /// Largest constraint residual accepted from a projection.
    pub projection_tolerance: f64,
    pub max_newton_steps: usize,
    /// Entries are floored here before taking logarithms.
    pub floor: f64,
}

impl Default for EuclideanConfig {
    fn default() -> Self {
        EuclideanConfig {
            max_iters: 5000,
            tolerance: 1e-6,
            gradient_tolerance: 1e-6,
            memory: 10,
            projection_tolerance: 1e-10,
            max_newton_steps: 100,
            floor: 1e-300,
        }
    }
}

/// Local-consistency constraints `Cx = d`, one redundant column constraint
/// per edge dropped so that `C` has full row rank.
#[derive(Debug, Clone)]
pub struct PolytopeProjector {
    layout: Layout,
    rows: usize,
    half_band: usize,
    rhs: Vec<f64>,
    /// Position each row belongs to, for error reports.
    row_position: Vec<usize>,
    /// CSR by variable: the rows each variable appears in, with coefficients.
    col_start: Vec<usize>,
    col_entries: Vec<(usize, f64)>,
    /// Factor of `C Cᵀ`, for projecting onto the affine hull.
    affine: Vec<f64>,
    /// Warm start for the next projection.
    dual: Vec<f64>,
    max_newton_steps: usize,
    tolerance: f64,
}

impl PolytopeProjector {
    pub fn new(layout: Layout, tolerance: f64, max_newton_steps: usize) -> Self {
        let (n, k) = (layout.n, layout.k);
        // Rows of position i: its node sum, the column sums of edge i-1
        // (all but the last), then the row sums of edge i.
        let mut base = Vec::with_capacity(n);
        let mut rows = 0;
        for i in 0..n {
            base.push(rows);
            rows += 1 + if i >= 1 { k - 1 } else { 0 } + if i + 1 < n { k } else { 0 };
        }
        let col_row = |i: usize, b: usize| base[i] + 1 + b;
        let row_row = |i: usize, a: usize| base[i] + 1 + if i >= 1 { k - 1 } else { 0 } + a;

        let mut rhs = vec![0.0; rows];
        let mut row_position = vec![0; rows];
        for i in 0..n {
            rhs[base[i]] = 1.0;
            let end = if i + 1 < n { base[i + 1] } else { rows };
            row_position[base[i]..end].iter_mut().for_each(|p| *p = i);
        }
        let mut col_start = Vec::with_capacity(layout.dim() + 1);
        let mut col_entries = Vec::with_capacity(3 * layout.dim());
        for i in 0..n {
            for a in 0..k {
                col_start.push(col_entries.len());
                col_entries.push((base[i], 1.0));
                if i >= 1 && a + 1 < k {
                    col_entries.push((col_row(i, a), -1.0));
                }
                if i + 1 < n {
                    col_entries.push((row_row(i, a), -1.0));
                }
            }
        }
        for e in 0..layout.num_edges() {
            for a in 0..k {
                for b in 0..k {
                    col_start.push(col_entries.len());
                    col_entries.push((row_row(e, a), 1.0));
                    if b + 1 < k {
                        col_entries.push((col_row(e + 1, b), 1.0));
                    }
                }
            }
        }
        col_start.push(col_entries.len());
        let half_band = (0..layout.dim())
            .map(|v| {
                let entries = &col_entries[col_start[v]..col_start[v + 1]];
                let lo = entries.iter().map(|e| e.0).min().unwrap_or(0);
                let hi = entries.iter().map(|e| e.0).max().unwrap_or(0);
                hi - lo
            })
            .max()
            .unwrap_or(0);
        let mut projector = PolytopeProjector {
            layout,
            rows,
            half_band,
            rhs,
            row_position,
            col_start,
            col_entries,
            affine: Vec::new(),
            dual: vec![0.0; rows],
            max_newton_steps,
            tolerance,
        };
        projector.affine = projector.factor(&vec![1.0; layout.dim()], 0.0);
        projector
    }

    /// `v - Cᵀ(CCᵀ)⁻¹(Cv - d)`.
    fn onto_affine_hull(&self, v: &[f64]) -> Vec<f64> {
        let r = self.residual(v);
        let mult = self.solve_factored(&self.affine, &r);
        self.shifted(v, &mult)
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    fn column(&self, v: usize) -> &[(usize, f64)] {
        &self.col_entries[self.col_start[v]..self.col_start[v + 1]]
    }

    /// `v - Cᵀλ`.
    fn shifted(&self, v: &[f64], dual: &[f64]) -> Vec<f64> {
        (0..v.len())
            .map(|j| v[j] - self.column(j).iter().map(|&(r, c)| c * dual[r]).sum::<f64>())
            .collect()
    }

    /// `Cx - d`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.rhs.iter().map(|d| -d).collect();
        for (j, &xj) in x.iter().enumerate() {
            for &(row, c) in self.column(j) {
                r[row] += c * xj;
            }
        }
        r
    }

    /// Dual objective `½‖x - v‖² + λᵀ(Cx - d)` at `x = (v - Cᵀλ)₊`.
    fn dual_value(&self, v: &[f64], dual: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let z = self.shifted(v, dual);
        let x: Vec<f64> = z.iter().map(|&zj| zj.max(0.0)).collect();
        let r = self.residual(&x);
        let q = 0.5 * x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            + dual.iter().zip(&r).map(|(l, ri)| l * ri).sum::<f64>();
        (q, z, r)
    }

    /// Banded lower factor of `C D Cᵀ + εI`, `D` the indicator of `z > 0`.
    fn factor(&self, z: &[f64], ridge: f64) -> Vec<f64> {
        let w = self.half_band;
        let width = w + 1;
        let mut band = vec![0.0; self.rows * width];
        for (j, &zj) in z.iter().enumerate() {
            if zj <= 0.0 {
                continue;
            }
            let col = self.column(j);
            for &(r1, c1) in col {
                for &(r2, c2) in col {
                    if r2 <= r1 {
                        band[r1 * width + (r1 - r2)] += c1 * c2;
                    }
                }
            }
        }
        for i in 0..self.rows {
            band[i * width] += ridge;
        }
        // In-place banded Cholesky; row i holds L[i][i - o] at offset o.
        for i in 0..self.rows {
            for j in i.saturating_sub(w)..=i {
                let lo = i.saturating_sub(w).max(j.saturating_sub(w));
                let mut s = band[i * width + (i - j)];
                for p in lo..j {
                    s -= band[i * width + (i - p)] * band[j * width + (j - p)];
                }
                band[i * width + (i - j)] = if i == j {
                    s.max(1e-300).sqrt()
                } else {
                    s / band[j * width]
                };
            }
        }
        band
    }

    fn solve_factored(&self, band: &[f64], rhs: &[f64]) -> Vec<f64> {
        let w = self.half_band;
        let width = w + 1;
        let m = self.rows;
        let mut y = rhs.to_vec();
        for i in 0..m {
            for p in i.saturating_sub(w)..i {
                y[i] -= band[i * width + (i - p)] * y[p];
            }
            y[i] /= band[i * width];
        }
        for i in (0..m).rev() {
            for q in i + 1..(i + w + 1).min(m) {
                y[i] -= band[q * width + (q - i)] * y[q];
            }
            y[i] /= band[i * width];
        }
        y
    }

    /// Euclidean projection of `v` onto the local polytope.
    pub fn project(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        // The polytope lies in the affine hull, so projecting there first
        // changes nothing but keeps the Newton iteration well scaled.
        let v = &self.onto_affine_hull(v)[..];
        let mut dual = std::mem::take(&mut self.dual);
        let (_, mut z, mut r) = self.dual_value(v, &dual);
        for _ in 0..self.max_newton_steps {
            let worst = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if worst <= self.tolerance {
                self.dual = dual;
                return Ok(self.polish(z.into_iter().map(|zj| zj.max(0.0)).collect()));
            }
            let band = self.factor(&z, (0.1 * worst).clamp(1e-12, 1.0));
            let step = self.solve_factored(&band, &r);
            // Exact line search: the dual is concave and piecewise quadratic,
            // so its slope along `step` is monotone in the step length.
            let slope_at = |len: f64| {
                let trial: Vec<f64> = dual.iter().zip(&step).map(|(l, d)| l + len * d).collect();
                let (_, tz, tr) = self.dual_value(v, &trial);
                (step.iter().zip(&tr).map(|(a, b)| a * b).sum::<f64>(), trial, tz, tr)
            };
            // Bracket the root of the slope by doubling, then bisect.
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut expansions = 0;
            while slope_at(hi).0 > 0.0 && expansions < 60 {
                lo = hi;
                hi *= 2.0;
                expansions += 1;
            }
            for _ in 0..60 {
                if hi - lo <= 1e-15 * hi {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if slope_at(mid).0 >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if lo == 0.0 {
                break;
            }
            let (_, trial, tz, tr) = slope_at(lo);
            dual = trial;
            (z, r) = (tz, tr);
        }
        let x = self.polish(z.iter().map(|&zj| zj.max(0.0)).collect());
        let r = self.residual(&x);
        let (row, residual) = r
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (i, &ri)| if ri.abs() > best.1 { (i, ri.abs()) } else { best });
        if residual <= self.tolerance {
            self.dual = dual;
            return Ok(x);
        }
        self.dual = vec![0.0; self.rows];
        Err(Error::Projection {
            position: self.row_position[row],
            residual,
        })
    }

    /// Removes the remaining residual by least-norm corrections on the
    /// support of `x`. Needed because the sum of an edge block is only
    /// implied by its `k` row constraints and collects all their errors.
    fn polish(&self, mut x: Vec<f64>) -> Vec<f64> {
        let worst = |x: &[f64]| self.residual(x).iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let mut before = worst(&x);
        for _ in 0..2 {
            let r = self.residual(&x);
            let band = self.factor(&x, 1e-14);
            let mult = self.solve_factored(&band, &r);
            let polished: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(j, &xj)| {
                    if xj > 0.0 {
                        let shift: f64 = self.column(j).iter().map(|&(row, c)| c * mult[row]).sum();
                        (xj - shift).max(0.0)
                    } else {
                        xj
                    }
                })
                .collect();
            let after = worst(&polished);
            if !(after < before) {
                break;
            }
            (x, before) = (polished, after);
        }
        x
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }
}

fn objective_gradient(problem: &AugmentedProblem<'_>, mu: &MarginalVector, floor: f64, iteration: usize) -> Result<Vec<f64>> {
    let l = mu.layout();
    let mut g = problem.energy_gradient(mu, iteration)?;
    let theta = problem.base.as_slice();
    let m = mu.as_slice();
    for i in 0..l.n {
        let coeff = l.degree(i) as f64 - 1.0;
        for idx in l.node_range(i) {
            g[idx] += -coeff * (m[idx].max(floor).ln() + 1.0) - theta[idx];
        }
    }
    for idx in l.node_len()..l.dim() {
        g[idx] += m[idx].max(floor).ln() + 1.0 - theta[idx];
    }
    Ok(g)
}

/// Step lengths are kept in this range; longer steps put the projected
/// point far outside the polytope and cost projection accuracy.
const MIN_STEP: f64 = 1e-10;
const MAX_STEP: f64 = 1e3;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `P(μ - g) - μ` as (block-normalized 1-norm, max-norm).
fn projected_gradient(projector: &mut PolytopeProjector, mu: &MarginalVector, g: &[f64], t: usize) -> Result<(f64, f64)> {
    let probe: Vec<f64> = mu.as_slice().iter().zip(g).map(|(m, gi)| m - gi).collect();
    let p = projector.project(&probe).map_err(|e| Error::Solver {
        iteration: t,
        message: e.to_string(),
    })?;
    let diffs = p.iter().zip(mu.as_slice()).map(|(a, b)| (a - b).abs());
    let (sum, max) = diffs.fold((0.0, 0.0f64), |(s, m), d| (s + d, m.max(d)));
    Ok((sum / mu.layout().num_blocks() as f64, max))
}

/// Minimizes `-H_B(μ) - ⟨θ, μ⟩ + L(μ)` by spectral projected gradient,
/// starting from the marginals of `θ`.
pub fn euclidean_baseline_solve(problem: &AugmentedProblem<'_>, cfg: &EuclideanConfig) -> Result<SolverOutput> {
    if cfg.max_iters < 1 || !(cfg.tolerance > 0.0) || cfg.memory < 1 {
        return Err(Error::InvalidParameter(
            "euclidean solver needs max_iters >= 1, memory >= 1 and a positive tolerance".into(),
        ));
    }
    let layout = problem.base.layout();
    let mut projector = PolytopeProjector::new(layout, cfg.projection_tolerance, cfg.max_newton_steps);
    let mut mu = crate::inference::call_oracle(problem.base, 0)?;
    let mut rec = Recorder::new(problem, &mu, false, false)?;
    let mut f = problem.objective(&mu)?;
    let mut g = objective_gradient(problem, &mu, cfg.floor, 0)?;
    let mut recent: VecDeque<f64> = VecDeque::from([f]);

    let (_, pg_max) = projected_gradient(&mut projector, &mu, &g, 0)?;
    let mut alpha = (1.0 / pg_max.max(1e-12)).clamp(MIN_STEP, MAX_STEP);

    for t in 1..=cfg.max_iters {
        let trial: Vec<f64> = mu.as_slice().iter().zip(&g).map(|(m, gi)| m - alpha * gi).collect();
        let target = projector.project(&trial).map_err(|e| Error::Solver {
            iteration: t,
            message: e.to_string(),
        })?;
        let dir: Vec<f64> = target.iter().zip(mu.as_slice()).map(|(p, m)| p - m).collect();
        let slope = dot(&g, &dir);
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = 1.0;
        let (next, f_next) = loop {
            let cand: Vec<f64> = mu.as_slice().iter().zip(&dir).map(|(m, d)| m + lambda * d).collect();
            let cand = MarginalVector::from_flat(layout, cand)?;
            let fc = problem.objective(&cand)?;
            if fc <= reference + 1e-4 * lambda * slope || lambda < 1e-14 {
                break (cand, fc);
            }
            let quad = -0.5 * lambda * lambda * slope / (fc - f - lambda * slope);
            lambda = if quad >= 0.1 * lambda && quad <= 0.9 * lambda {
                quad
            } else {
                0.5 * lambda
            };
        };
        let g_next = objective_gradient(problem, &next, cfg.floor, t)?;
        let s: Vec<f64> = next.as_slice().iter().zip(mu.as_slice()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        alpha = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(MIN_STEP, MAX_STEP)
        } else {
            MAX_STEP
        };
        let step = rec.push(t, &next, &mu, || problem.base.clone(), &[])?;
        mu = next;
        f = f_next;
        g = g_next;
        recent.push_back(f);
        if recent.len() > cfg.memory {
            recent.pop_front();
        }
        if step < cfg.tolerance && projected_gradient(&mut projector, &mu, &g, t)?.0 < cfg.gradient_tolerance {
            rec.trace.converged = true;
            break;
        }
    }
    let modified_params = problem.modified_parameters(&mu)?;
    Ok(SolverOutput {
        marginals: mu,
        modified_params,
        trace: rec.trace,
    })
}
