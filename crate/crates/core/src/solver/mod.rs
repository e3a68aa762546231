//! Periodic divergence-form solvers: FFT Poisson, preconditioned Krylov
//! methods for variable coefficients and damped Newton for the monotone
//! problem.

pub(crate) mod krylov;
mod newton;
mod poisson;

use serde::{Deserialize, Serialize};

pub use krylov::{apply_div_form, solve_linear, LinearProblem};
pub use newton::{discrete_energy, nonlinear_residual, solve_nonlinear, NonlinearProblem};
pub use poisson::{solve_poisson, PoissonSolver};

/// One accepted Newton step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonStep {
    /// Relative residual before the step.
    pub residual: f64,
    pub step_length: f64,
    pub krylov_iterations: usize,
    /// Discrete energy after the step, when a potential exists.
    pub energy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub method: String,
    pub iterations: usize,
    /// Relative residual recomputed from scratch after the last iterate.
    pub final_residual: f64,
    pub krylov_iterations: usize,
    pub history: Vec<NewtonStep>,
    pub wall_time_s: f64,
}

/// Tolerances shared by the solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_newton: usize,
    pub max_krylov: usize,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_newton: 50, max_krylov: 2000, warm_start: true }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(crate::error::invalid(format!("tolerance must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_newton == 0 || self.max_krylov == 0 {
            return Err(crate::error::invalid("iteration limits must be positive"));
        }
        Ok(())
    }
}

/// Precomputed periodic neighbour tables.
#[derive(Clone, Debug)]
pub(crate) struct Stencil {
    pub fwd: Vec<Vec<usize>>,
    pub bwd: Vec<Vec<usize>>,
    pub inv_h: f64,
}

impl Stencil {
    pub fn new(grid: &crate::grid::Grid) -> Self {
        let d = grid.dim();
        let fwd = (0..d).map(|a| (0..grid.len()).map(|k| grid.neighbor(k, a, true)).collect()).collect();
        let bwd = (0..d).map(|a| (0..grid.len()).map(|k| grid.neighbor(k, a, false)).collect()).collect();
        Self { fwd, bwd, inv_h: 1.0 / grid.spacing() }
    }
}

#[inline]
pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn project_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}
