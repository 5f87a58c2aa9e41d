//! Damped Newton iteration with a sparse direct linear solver.
//!
//! Each step factors the exact Jacobian with an unsymmetric sparse LU
//! (partial pivoting, fill-reducing ordering; the symbolic analysis is
//! computed once per problem and reused across iterations) and globalizes
//! with Armijo backtracking on the residual norm. A masked variant solves
//! single-field subproblems and provides the decoupled warm start: one heat
//! solve at frozen concentration, then one flow solve driven by that
//! temperature field. For parameter regimes outside the Newton basin,
//! `continuation_solve` walks a ramp of model parameters and warm-starts
//! every stage from the previous solution.
//!
//! Local uniqueness of the discrete solution only holds near small data;
//! non-convergence at extreme parameters is reported, never panicked on.

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use thiserror::Error;

use crate::assembly::{FieldState, Layout, Problem, SparseSystem};
use crate::model::ModelParams;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("singular linear system in {block} block: {detail}")]
    Singular { block: String, detail: String },
    #[error("linear solve exceeded the backward-error contract: {0:.3e}")]
    BackwardError(f64),
    #[error("non-finite {what} in {block} block")]
    NonFinite { what: String, block: String },
    #[error("factorization failed: {0}")]
    Factorization(String),
}

/// Newton iteration controls.
#[derive(Clone, Debug)]
pub struct NewtonConfig {
    /// Absolute residual norm threshold.
    pub abs_tol: f64,
    /// Relative reduction threshold against the initial residual.
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Multiplicative backtracking factor in (0, 1).
    pub backtrack: f64,
    /// Smallest admissible line-search step.
    pub min_step: f64,
    /// Run the decoupled heat/flow pass before coupled Newton.
    pub warm_start: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_iters: 30,
            backtrack: 0.5,
            min_step: 2.0f64.powi(-10),
            warm_start: true,
        }
    }
}

/// Outcome of one Newton run.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub iterations: usize,
    /// Residual norms including the initial one.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Range of the discrete concentration at the final state; values
    /// escaping [0, 1] signal that the coefficient fits are extrapolating.
    pub phi_range: (f64, f64),
    /// Backward error of each accepted linear solve.
    pub backward_errors: Vec<f64>,
    /// Accepted line-search step lengths.
    pub step_lengths: Vec<f64>,
    pub message: Option<String>,
}

impl SolveReport {
    fn new() -> SolveReport {
        SolveReport {
            iterations: 0,
            residual_history: Vec::new(),
            converged: false,
            phi_range: (f64::NAN, f64::NAN),
            backward_errors: Vec::new(),
            step_lengths: Vec::new(),
            message: None,
        }
    }
}

/// Which field blocks a masked solve updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMask {
    pub phi: bool,
    pub temp: bool,
    pub vel: bool,
    pub pressure: bool,
}

impl BlockMask {
    pub const ALL: BlockMask = BlockMask {
        phi: true,
        temp: true,
        vel: true,
        pressure: true,
    };
    pub const HEAT: BlockMask = BlockMask {
        phi: false,
        temp: true,
        vel: false,
        pressure: false,
    };
    pub const FLOW: BlockMask = BlockMask {
        phi: false,
        temp: false,
        vel: true,
        pressure: true,
    };

    fn active(&self, layout: &Layout, dof: usize) -> bool {
        if dof < layout.temp_offset() {
            self.phi
        } else if dof < layout.vel_offset() {
            self.temp
        } else if dof < layout.pressure_offset() {
            self.vel
        } else if dof <= layout.lambda_p() {
            // continuity rows and the mean-pressure multiplier
            self.pressure
        } else {
            // mean-concentration multiplier
            self.phi
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Caches the symbolic factorization; the sparsity pattern of a problem is
/// fixed, so ordering and analysis run once and every Newton iteration
/// only refactors numerically.
pub struct Factorizer {
    symbolic: Option<SymbolicLu<u32>>,
}

impl Factorizer {
    pub fn new() -> Factorizer {
        Factorizer { symbolic: None }
    }

    /// Solves `A x = b` with `b = sys.rhs`, enforcing the backward-error
    /// contract |A x - b| <= 1e-10 (|A| |x| + |b|) in infinity norms.
    pub fn solve(&mut self, sys: &SparseSystem) -> Result<(Vec<f64>, f64), SolveError> {
        check_finite(sys)?;
        let n = sys.n;
        let sym_mat = SymbolicSparseColMatRef::new_checked(
            n,
            n,
            sys.col_ptr.as_slice(),
            None,
            sys.row_idx.as_slice(),
        );
        if self.symbolic.is_none() {
            self.symbolic = Some(
                SymbolicLu::try_new(sym_mat)
                    .map_err(|e| diagnose_singular(sys, format!("symbolic: {e:?}")))?,
            );
        }
        let mat = SparseColMatRef::new(sym_mat, sys.values.as_slice());
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone().unwrap(), mat)
            .map_err(|e| diagnose_singular(sys, format!("numeric: {e:?}")))?;

        let mut x = faer::Mat::<f64>::from_fn(n, 1, |i, _| sys.rhs[i]);
        lu.solve_in_place(x.as_mut());
        let x: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(diagnose_singular(sys, "non-finite solution".into()));
        }

        let resid = sys.matvec(&x);
        let err = resid
            .iter()
            .zip(&sys.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let scale = sys.norm_inf() * x.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
            + sys.rhs.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let be = if scale > 0.0 { err / scale } else { err };
        if be > 1e-10 {
            return Err(SolveError::BackwardError(be));
        }
        Ok((x, be))
    }
}

impl Default for Factorizer {
    fn default() -> Self {
        Factorizer::new()
    }
}

fn check_finite(sys: &SparseSystem) -> Result<(), SolveError> {
    if let Some(k) = sys.values.iter().position(|v| !v.is_finite()) {
        let row = sys.row_idx[k] as usize;
        return Err(SolveError::NonFinite {
            what: "matrix entry".into(),
            block: sys.layout.block_name(row).into(),
        });
    }
    if let Some(i) = sys.rhs.iter().position(|v| !v.is_finite()) {
        return Err(SolveError::NonFinite {
            what: "residual entry".into(),
            block: sys.layout.block_name(i).into(),
        });
    }
    Ok(())
}

/// Finds an empty or all-zero row to name the offending block.
fn diagnose_singular(sys: &SparseSystem, detail: String) -> SolveError {
    let mut row_sum = vec![0.0f64; sys.n];
    for k in 0..sys.values.len() {
        row_sum[sys.row_idx[k] as usize] += sys.values[k].abs();
    }
    let block = match row_sum.iter().position(|&s| s == 0.0) {
        Some(row) => sys.layout.block_name(row).to_string(),
        None => {
            // fall back to the weakest column
            let mut worst = (f64::INFINITY, 0usize);
            for c in 0..sys.n {
                let s: f64 = (sys.col_ptr[c] as usize..sys.col_ptr[c + 1] as usize)
                    .map(|k| sys.values[k].abs())
                    .sum();
                if s < worst.0 {
                    worst = (s, c);
                }
            }
            sys.layout.block_name(worst.1).to_string()
        }
    };
    SolveError::Singular { block, detail }
}

/// One-shot sparse direct solve of an assembled system.
pub fn linear_solve(sys: &SparseSystem) -> Result<Vec<f64>, SolveError> {
    Factorizer::new().solve(sys).map(|(x, _)| x)
}

/// Residual with rows of inactive blocks zeroed.
fn masked_residual(problem: &Problem, state: &FieldState, mask: BlockMask) -> Vec<f64> {
    let mut r = problem.assemble_residual(state);
    if mask != BlockMask::ALL {
        for (dof, v) in r.iter_mut().enumerate() {
            if !mask.active(&problem.layout, dof) {
                *v = 0.0;
            }
        }
    }
    r
}

/// Turns rows of inactive blocks into identity rows with zero residual.
fn mask_system(problem: &Problem, sys: &mut SparseSystem, mask: BlockMask) {
    if mask == BlockMask::ALL {
        return;
    }
    let layout = problem.layout;
    for k in 0..sys.values.len() {
        if !mask.active(&layout, sys.row_idx[k] as usize) {
            sys.values[k] = 0.0;
        }
    }
    for dof in 0..sys.n {
        if !mask.active(&layout, dof) {
            sys.rhs[dof] = 0.0;
            let lo = sys.col_ptr[dof] as usize;
            let hi = sys.col_ptr[dof + 1] as usize;
            if let Ok(k) = sys.row_idx[lo..hi].binary_search(&(dof as u32)) {
                sys.values[lo + k] = 1.0;
            }
        }
    }
}

/// Damped Newton on the blocks selected by `mask`, starting from `state`.
///
/// Exhausting `max_iters` yields a non-converged report, not an error;
/// errors are reserved for singular or non-finite linear systems.
pub fn newton_solve_masked(
    problem: &Problem,
    mut state: FieldState,
    mask: BlockMask,
    config: &NewtonConfig,
) -> Result<(FieldState, SolveReport), SolveError> {
    let mut report = SolveReport::new();
    let mut factor = Factorizer::new();

    let mut residual = masked_residual(problem, &state, mask);
    let mut rnorm = l2(&residual);
    report.residual_history.push(rnorm);
    let r0 = rnorm.max(f64::MIN_POSITIVE);

    for _ in 0..config.max_iters {
        if !rnorm.is_finite() {
            return Err(SolveError::NonFinite {
                what: "residual norm".into(),
                block: "all".into(),
            });
        }
        if rnorm <= config.abs_tol.max(config.rel_tol * r0) {
            report.converged = true;
            break;
        }

        let mut sys = problem.assemble_jacobian(&state);
        mask_system(problem, &mut sys, mask);
        // Newton step solves J delta = -F
        for v in sys.rhs.iter_mut() {
            *v = -*v;
        }
        let (delta, be) = factor.solve(&sys)?;
        report.backward_errors.push(be);

        // Armijo backtracking on the residual norm.
        let mut step = 1.0;
        let mut accepted = false;
        let mut trial = state.clone();
        let mut trial_resid = residual.clone();
        let mut trial_norm = rnorm;
        while step >= config.min_step {
            trial = state.clone();
            for (t, d) in trial.as_mut_slice().iter_mut().zip(&delta) {
                *t += step * d;
            }
            trial_resid = masked_residual(problem, &trial, mask);
            trial_norm = l2(&trial_resid);
            if trial_norm.is_finite() && trial_norm <= (1.0 - 1e-4 * step) * rnorm {
                accepted = true;
                break;
            }
            step *= config.backtrack;
        }
        if !accepted && !(trial_norm.is_finite() && trial_norm < rnorm) {
            report.message = Some(format!(
                "line search stalled at residual {rnorm:.3e} (iteration {})",
                report.iterations
            ));
            break;
        }

        state = trial;
        residual = trial_resid;
        rnorm = trial_norm;
        report.iterations += 1;
        report.step_lengths.push(step.max(config.min_step));
        report.residual_history.push(rnorm);
    }

    if !report.converged {
        report.converged = rnorm <= config.abs_tol.max(config.rel_tol * r0);
    }
    report.phi_range = state.phi_range();
    Ok((state, report))
}

/// Decoupled warm start: solve the heat equation at the initial (mean)
/// concentration and zero flow, then the flow problem driven by that
/// temperature. Stages that fail to converge are rolled back.
pub fn warm_start(
    problem: &Problem,
    config: &NewtonConfig,
) -> Result<(FieldState, usize), SolveError> {
    let sub = NewtonConfig {
        max_iters: 15,
        warm_start: false,
        ..config.clone()
    };
    let state0 = problem.initial_state();
    let (state1, rep1) = newton_solve_masked(problem, state0.clone(), BlockMask::HEAT, &sub)?;
    let state1 = if rep1.converged { state1 } else { state0 };
    let mut iters = rep1.iterations;
    let (state2, rep2) = newton_solve_masked(problem, state1.clone(), BlockMask::FLOW, &sub)?;
    iters += rep2.iterations;
    Ok((if rep2.converged { state2 } else { state1 }, iters))
}

/// Coupled Newton iteration from an explicit initial state.
pub fn newton_solve(
    problem: &Problem,
    initial: FieldState,
    config: &NewtonConfig,
) -> Result<(FieldState, SolveReport), SolveError> {
    newton_solve_masked(problem, initial, BlockMask::ALL, config)
}

/// Full pipeline: warm start (unless disabled) followed by coupled Newton.
pub fn solve(
    problem: &Problem,
    config: &NewtonConfig,
) -> Result<(FieldState, SolveReport), SolveError> {
    let initial = if config.warm_start {
        warm_start(problem, config)?.0
    } else {
        problem.initial_state()
    };
    newton_solve(problem, initial, config)
}

/// Result of a continuation run; `completed` counts converged stages.
pub struct ContinuationOutcome {
    /// Problem of the last converged stage, if any.
    pub problem: Option<Problem>,
    pub state: FieldState,
    pub reports: Vec<SolveReport>,
    pub completed: usize,
}

/// Solves a sequence of parameter stages, warm-starting each stage from the
/// previous solution. An empty schedule returns the initial state of the
/// base problem unchanged. A non-converged stage stops the ramp and the
/// last converged stage is reported.
pub fn continuation_solve(
    base: &Problem,
    stages: &[ModelParams],
    config: &NewtonConfig,
) -> Result<ContinuationOutcome, SolveError> {
    let mut outcome = ContinuationOutcome {
        problem: None,
        state: base.initial_state(),
        reports: Vec::new(),
        completed: 0,
    };
    let mut carried: Option<FieldState> = None;
    for (i, &params) in stages.iter().enumerate() {
        let mut problem = Problem::new(base.mesh.clone(), params, base.laws, base.case.clone())
            .map_err(|e| SolveError::Factorization(format!("stage {i}: {e}")))?;
        problem.sequential = base.sequential;

        let initial = match carried.take() {
            Some(mut prev) => {
                problem.impose_dirichlet(&mut prev);
                prev
            }
            None if config.warm_start => warm_start(&problem, config)?.0,
            None => problem.initial_state(),
        };
        let (state, report) = newton_solve(&problem, initial, config)?;
        let converged = report.converged;
        outcome.reports.push(report);
        if !converged {
            if let Some(last) = outcome.reports.last_mut() {
                last.message = Some(format!(
                    "continuation stopped at stage {i} (Re = {})",
                    params.re
                ));
            }
            return Ok(outcome);
        }
        carried = Some(state.clone());
        outcome.state = state;
        outcome.problem = Some(problem);
        outcome.completed = i + 1;
    }
    Ok(outcome)
}

/// Geometric Reynolds-number ramp ending exactly at `target.re`.
pub fn ramp_re(target: ModelParams, start_re: f64, steps: usize) -> Vec<ModelParams> {
    assert!(steps >= 1);
    let mut out = Vec::with_capacity(steps);
    if steps == 1 || (target.re - start_re).abs() < 1e-12 {
        out.push(target);
        return out;
    }
    for k in 1..=steps {
        let f = k as f64 / steps as f64;
        let mut p = target;
        p.re = if k == steps {
            target.re
        } else {
            start_re * (target.re / start_re).powf(f)
        };
        out.push(p);
    }
    out
}
