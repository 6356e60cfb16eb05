//! Entropic optimal transport between two languages' output-probability rows.
//!
//! Both sides carry uniform weights over their rows and the ground cost is the squared
//! Euclidean distance between probability vectors. The solver works on dual potentials
//! in the log domain so that small regularization weights do not underflow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ensure_distinct, LanguageId, Matrix, ProbabilitySet};
use crate::error::{Error, Result};
use crate::gap::PairwiseMatrix;

/// Largest side accepted by [`exact_ot`].
pub const EXACT_OT_MAX: usize = 8;

/// Marginal violation is sampled into [`TransportPlan::violation_trace`] at this stride.
pub const TRACE_STRIDE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropic regularization weight.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the largest row-marginal violation is at most this.
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iters: 10_000,
            tolerance: 1e-9,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Matrix,
    /// `⟨plan, C⟩`, the transport cost of the regularized plan without the entropy term.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest row- or column-marginal violation of `plan`.
    pub marginal_violation: f64,
    /// `(iteration, violation)` recorded every [`TRACE_STRIDE`] iterations.
    pub violation_trace: Vec<(usize, f64)>,
}

/// Squared Euclidean distances between the rows of `p` and the rows of `q`.
pub fn cost_matrix(p: &ProbabilitySet, q: &ProbabilitySet) -> Result<Matrix> {
    if p.k() != q.k() {
        return Err(Error::Invalid(format!(
            "class-count mismatch: {} has {} classes, {} has {}",
            p.language(),
            p.k(),
            q.language(),
            q.k()
        )));
    }
    let (n, m) = (p.n(), q.n());
    let mut data = Vec::with_capacity(n * m);
    for a in p.rows().iter_rows() {
        for b in q.rows().iter_rows() {
            data.push(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
        }
    }
    Matrix::new(n, m, data)
}

/// Runs log-domain Sinkhorn iterations on `cost_matrix(p, q)` with uniform marginals.
///
/// Non-convergence is reported through [`TransportPlan::converged`], not as an error.
pub fn sinkhorn(
    p: &ProbabilitySet,
    q: &ProbabilitySet,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    let cost = cost_matrix(p, q)?;
    Ok(sinkhorn_cost(&cost, cfg))
}

/// Outcome of one language pair in [`pairwise_sinkhorn`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair: [LanguageId; 2],
    pub distance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_violation: f64,
}

/// Sinkhorn distances for every unordered pair, in row-major upper-triangle order.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseSinkhorn {
    /// Symmetric distance matrix with a zero diagonal.
    pub matrix: PairwiseMatrix,
    pub pairs: Vec<PairOutcome>,
}

impl PairwiseSinkhorn {
    pub fn unconverged(&self) -> impl Iterator<Item = &PairOutcome> {
        self.pairs.iter().filter(|p| !p.converged)
    }
}

/// Runs [`sinkhorn`] on every unordered pair of sets on the current rayon pool. Results
/// are assembled in input order and do not depend on the number of threads.
pub fn pairwise_sinkhorn(
    sets: &[ProbabilitySet],
    cfg: &SinkhornConfig,
) -> Result<PairwiseSinkhorn> {
    cfg.validate()?;
    if sets.len() < 2 {
        return Err(Error::Invalid(format!(
            "pairwise Sinkhorn needs at least 2 languages, got {}",
            sets.len()
        )));
    }
    ensure_distinct(sets.iter().map(|s| s.language()))?;
    let pairs: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|i| (i + 1..sets.len()).map(move |j| (i, j)))
        .collect();
    let outcomes = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&sets[i], &sets[j]);
            let plan =
                sinkhorn(a, b, cfg).map_err(|e| Error::pair(a.language(), b.language(), e))?;
            Ok(PairOutcome {
                pair: [a.language().clone(), b.language().clone()],
                distance: plan.cost,
                iterations: plan.iterations,
                converged: plan.converged,
                marginal_violation: plan.marginal_violation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let upper: Vec<f64> = outcomes.iter().map(|o| o.distance).collect();
    let langs = sets.iter().map(|s| s.language().clone()).collect();
    Ok(PairwiseSinkhorn {
        matrix: PairwiseMatrix::from_upper(langs, 0.0, &upper)?,
        pairs: outcomes,
    })
}

/// Sinkhorn on an explicit cost matrix with uniform marginals. `cfg` must be valid.
///
/// When `epsilon` is small next to the largest cost, the potentials are first warmed up
/// on a geometric schedule of larger weights (`ε_k = max(C) / 2^k`), each stage stopping
/// at [`STAGE_TOLERANCE`] or [`STAGE_MAX_ITERS`]. The final stage runs at `epsilon`
/// until `tolerance` or `max_iters` (counted over all stages) is reached, so the fixed
/// point is that of plain Sinkhorn at `epsilon`.
pub fn sinkhorn_cost(cost: &Matrix, cfg: &SinkhornConfig) -> TransportPlan {
    let (n, m) = (cost.rows(), cost.cols());
    let mut state = Potentials {
        f: vec![0.0; n],
        g: vec![0.0; m],
        iterations: 0,
    };

    let scale = cost.as_slice().iter().copied().fold(0.0, f64::max);
    let mut stage_eps = scale;
    while stage_eps > 2.0 * cfg.epsilon && state.iterations < cfg.max_iters {
        let budget = (state.iterations + STAGE_MAX_ITERS).min(cfg.max_iters);
        let _ = run_stage(
            cost,
            stage_eps,
            STAGE_TOLERANCE.max(cfg.tolerance),
            budget,
            &mut state,
            None,
            false,
        );
        stage_eps *= 0.5;
    }
    let mut trace = Vec::new();
    let newton = n + m <= NEWTON_MAX_DIM;
    let outcome = run_stage(
        cost,
        cfg.epsilon,
        cfg.tolerance,
        cfg.max_iters,
        &mut state,
        Some(&mut trace),
        newton,
    );
    if outcome == StageOutcome::Stalled {
        newton_polish(cost, cfg, &mut state);
    }

    let plan = plan_from_potentials(cost, cfg.epsilon, &state.f, &state.g);
    let total = plan
        .as_slice()
        .iter()
        .zip(cost.as_slice())
        .map(|(p, c)| p * c)
        .sum();
    let marginal_violation = marginal_violation(&plan);
    let converged = outcome == StageOutcome::Converged || marginal_violation <= cfg.tolerance;
    TransportPlan {
        plan,
        cost: total,
        iterations: state.iterations,
        converged,
        marginal_violation,
        violation_trace: trace,
    }
}

/// Row-marginal tolerance that ends a warm-up stage.
pub const STAGE_TOLERANCE: f64 = 1e-6;
/// Iteration cap of a single warm-up stage.
pub const STAGE_MAX_ITERS: usize = 500;

/// Slow-progress threshold: when Newton polishing is available, a final stage whose
/// violation stays above this fraction of its value one trace stride earlier hands over.
pub const STALL_RATIO: f64 = 0.5;
/// Largest `n + m` for which a stalled run is finished with dense Newton steps.
pub const NEWTON_MAX_DIM: usize = 1024;
const NEWTON_MAX_STEPS: usize = 50;

struct Potentials {
    f: Vec<f64>,
    g: Vec<f64>,
    iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StageOutcome {
    Converged,
    /// Violation shrank by less than a factor [`STALL_RATIO`] over one trace stride.
    Stalled,
    Exhausted,
}

/// Alternating log-domain updates at a fixed `eps`. Column marginals are exact after
/// every `g` update, so convergence is judged on the rows. Progress is compared every
/// [`TRACE_STRIDE`] iterations; with `stall_exit` set a slowly converging stage stops
/// early as stalled.
fn run_stage(
    cost: &Matrix,
    eps: f64,
    tolerance: f64,
    max_iters: usize,
    state: &mut Potentials,
    mut trace: Option<&mut Vec<(usize, f64)>>,
    stall_exit: bool,
) -> StageOutcome {
    let (n, m) = (cost.rows(), cost.cols());
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let a = 1.0 / n as f64;
    let mut row_lse = vec![0.0; n];
    let mut row_buf = vec![0.0; m];
    let mut col_buf = vec![0.0; n];
    let mut fresh = true;

    loop {
        // row log-sums for the current g give both the row marginals and the next f
        for i in 0..n {
            let c = cost.row(i);
            for j in 0..m {
                row_buf[j] = (state.g[j] - c[j]) / eps;
            }
            row_lse[i] = log_sum_exp(&row_buf);
        }
        if state.iterations > 0 && !fresh {
            let violation = (0..n)
                .map(|i| ((state.f[i] / eps + row_lse[i]).exp() - a).abs())
                .fold(0.0, f64::max);
            if violation <= tolerance {
                return StageOutcome::Converged;
            }
            if let Some(trace) = trace.as_deref_mut() {
                if state.iterations % TRACE_STRIDE == 0 {
                    let stalled = trace
                        .last()
                        .is_some_and(|&(_, prev)| violation > STALL_RATIO * prev);
                    trace.push((state.iterations, violation));
                    if stalled && stall_exit {
                        return StageOutcome::Stalled;
                    }
                }
            }
        }
        if state.iterations >= max_iters {
            return StageOutcome::Exhausted;
        }

        for i in 0..n {
            state.f[i] = eps * log_a - eps * row_lse[i];
        }
        for j in 0..m {
            for i in 0..n {
                col_buf[i] = (state.f[i] - cost[(i, j)]) / eps;
            }
            state.g[j] = eps * log_b - eps * log_sum_exp(&col_buf);
        }
        state.iterations += 1;
        fresh = false;
    }
}

fn plan_from_potentials(cost: &Matrix, eps: f64, f: &[f64], g: &[f64]) -> Matrix {
    let (n, m) = (cost.rows(), cost.cols());
    let mut plan = Matrix::zeros(n, m);
    let data = plan.as_mut_slice();
    for i in 0..n {
        for j in 0..m {
            data[i * m + j] = ((f[i] + g[j] - cost[(i, j)]) / eps).exp();
        }
    }
    plan
}

/// Damped Newton ascent on the dual at fixed `ε`, with steps halved until the marginal
/// violation decreases.
///
/// Sinkhorn slows to a crawl when the plan is close to block-diagonal: the blocks are
/// linked only by tiny entries, and balancing mass between them takes a number of
/// scaling steps inversely proportional to those entries. The Newton system
/// `[[diag(r), P], [Pᵀ, diag(c)]] δ = ε (marginals − sums)` resolves that coupling
/// directly. The gauge is fixed by holding the last `g` entry. Each step counts as one
/// iteration against `max_iters`.
fn newton_polish(cost: &Matrix, cfg: &SinkhornConfig, state: &mut Potentials) {
    let (n, m) = (cost.rows(), cost.cols());
    let eps = cfg.epsilon;
    let dim = n + m - 1;
    for _ in 0..NEWTON_MAX_STEPS {
        if state.iterations >= cfg.max_iters {
            return;
        }
        let plan = plan_from_potentials(cost, eps, &state.f, &state.g);
        if marginal_violation(&plan) <= cfg.tolerance {
            return;
        }
        let rows: Vec<f64> = plan.iter_rows().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..m).map(|j| (0..n).map(|i| plan[(i, j)]).sum()).collect();

        let mut hess = vec![0.0; dim * dim];
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            hess[i * dim + i] = rows[i];
            rhs[i] = eps * (1.0 / n as f64 - rows[i]);
            for j in 0..m - 1 {
                hess[i * dim + n + j] = plan[(i, j)];
                hess[(n + j) * dim + i] = plan[(i, j)];
            }
        }
        for j in 0..m - 1 {
            hess[(n + j) * dim + n + j] = cols[j];
            rhs[n + j] = eps * (1.0 / m as f64 - cols[j]);
        }
        let Some(step) = solve_regularized(&hess, &rhs, dim) else {
            return;
        };

        let base = marginal_violation(&plan);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-6 {
            let f: Vec<f64> = (0..n).map(|i| state.f[i] + t * step[i]).collect();
            let g: Vec<f64> = (0..m)
                .map(|j| state.g[j] + if j < m - 1 { t * step[n + j] } else { 0.0 })
                .collect();
            if marginal_violation(&plan_from_potentials(cost, eps, &f, &g)) < base {
                state.f = f;
                state.g = g;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        state.iterations += 1;
        if !accepted {
            return;
        }
    }
}

/// Cholesky solve, retried with a growing diagonal shift when rounding makes the
/// nearly singular system lose positive definiteness.
fn solve_regularized(a: &[f64], b: &[f64], dim: usize) -> Option<Vec<f64>> {
    let scale = (0..dim).map(|i| a[i * dim + i]).fold(0.0, f64::max);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut work = a.to_vec();
        for i in 0..dim {
            work[i * dim + i] += shift;
        }
        let mut rhs = b.to_vec();
        if let Some(x) = cholesky_solve(&mut work, &mut rhs, dim) {
            return Some(x);
        }
        shift = if shift == 0.0 {
            scale * 1e-15
        } else {
            shift * 10.0
        };
    }
    None
}

/// Solves `A x = b` for symmetric positive-definite `A` (row-major, overwritten).
fn cholesky_solve(a: &mut [f64], b: &mut [f64], dim: usize) -> Option<Vec<f64>> {
    for j in 0..dim {
        let mut d = a[j * dim + j];
        for k in 0..j {
            d -= a[j * dim + k] * a[j * dim + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * dim + j] = d;
        for i in j + 1..dim {
            let mut v = a[i * dim + j];
            for k in 0..j {
                v -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = v / d;
        }
    }
    for i in 0..dim {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * dim + k] * b[k];
        }
        b[i] = v / a[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut v = b[i];
        for k in i + 1..dim {
            v -= a[k * dim + i] * b[k];
        }
        b[i] = v / a[i * dim + i];
    }
    Some(b.to_vec())
}

/// Largest deviation of the plan's row and column sums from uniform marginals.
pub fn marginal_violation(plan: &Matrix) -> f64 {
    let (n, m) = (plan.rows(), plan.cols());
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    let rows = plan
        .iter_rows()
        .map(|r| (r.iter().sum::<f64>() - a).abs())
        .fold(0.0, f64::max);
    let cols = (0..m)
        .map(|j| ((0..n).map(|i| plan[(i, j)]).sum::<f64>() - b).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Exact optimal transport for equal-size uniform sets by exhaustive assignment search.
///
/// With uniform weights on both sides an optimal plan is a permutation, so the optimum
/// is the smallest mean cost over all `n!` assignments.
pub fn exact_ot(p: &ProbabilitySet, q: &ProbabilitySet) -> Result<f64> {
    if p.n() != q.n() {
        return Err(Error::UnsupportedSize(format!(
            "exact OT needs equal sizes, got {} and {}",
            p.n(),
            q.n()
        )));
    }
    if p.n() > EXACT_OT_MAX {
        return Err(Error::UnsupportedSize(format!(
            "exact OT supports at most {EXACT_OT_MAX} rows, got {}",
            p.n()
        )));
    }
    let cost = cost_matrix(p, q)?;
    Ok(min_assignment(&cost) / p.n() as f64)
}

/// Minimum total assignment cost over all permutations (Heap's algorithm).
fn min_assignment(cost: &Matrix) -> f64 {
    let n = cost.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |perm: &[usize]| {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| cost[(i, j)])
            .sum::<f64>()
    };
    let mut best = total(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}
