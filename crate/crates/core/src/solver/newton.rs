use std::time::Instant;

use crate::error::{invalid, Error, Result};
use crate::grid::{add3, divergence, gradient, MatrixField, ScalarField, Vec3, VectorField, ZERO3};
use crate::operator::OperatorSpec;

use super::krylov::krylov;
use super::{norm2, project_mean, NewtonStep, SolveStats, SolverConfig};

/// `div(a(x, xi + grad phi) + f) = 0` for zero-mean periodic `phi`.
///
/// Corrector mode sets `f = None`; boundary-value mode sets `xi = 0`.
#[derive(Clone, Debug)]
pub struct NonlinearProblem<'a> {
    pub op: &'a OperatorSpec,
    pub xi: Vec3,
    pub rhs_flux: Option<&'a VectorField>,
    pub config: SolverConfig,
    pub initial: Option<&'a ScalarField>,
}

impl<'a> NonlinearProblem<'a> {
    pub fn corrector(op: &'a OperatorSpec, xi: Vec3, config: SolverConfig) -> Self {
        Self { op, xi, rhs_flux: None, config, initial: None }
    }

    pub fn boundary_value(op: &'a OperatorSpec, f: &'a VectorField, config: SolverConfig) -> Self {
        Self { op, xi: ZERO3, rhs_flux: Some(f), config, initial: None }
    }

    pub fn with_initial(mut self, phi: &'a ScalarField) -> Self {
        self.initial = Some(phi);
        self
    }
}

/// Total flux `a(x, xi + grad phi) + f` and the residual `div` of it.
pub fn nonlinear_residual(
    op: &OperatorSpec,
    xi: &Vec3,
    f: Option<&VectorField>,
    phi: &ScalarField,
) -> (ScalarField, VectorField) {
    let grid = *op.grid();
    let grad = gradient(phi);
    let mut flux = VectorField::zeros(grid);
    for k in 0..grid.len() {
        let mut q = op.a_at(k, &add3(xi, &grad.get(k)));
        if let Some(f) = f {
            q = add3(&q, &f.get(k));
        }
        flux.set(k, &q);
    }
    (divergence(&flux), flux)
}

/// `sum_x [W(x, xi + grad phi) + f . grad phi] h^d` for scalar coefficients.
pub fn discrete_energy(
    op: &OperatorSpec,
    xi: &Vec3,
    f: Option<&VectorField>,
    phi: &ScalarField,
) -> Result<f64> {
    let grid = *op.grid();
    let grad = gradient(phi);
    let mut e = 0.0;
    for k in 0..grid.len() {
        let g = grad.get(k);
        e += op.w_at(k, &add3(xi, &g))?;
        if let Some(f) = f {
            e += crate::grid::dot3(&f.get(k), &g);
        }
    }
    Ok(e * grid.cell_volume())
}

fn tangent_field(op: &OperatorSpec, xi: &Vec3, phi: &ScalarField) -> MatrixField {
    let grid = *op.grid();
    let grad = gradient(phi);
    let mut m = MatrixField::zeros(grid);
    for k in 0..grid.len() {
        m.set(k, &op.da_at(k, &add3(xi, &grad.get(k))));
    }
    m
}

const STEP_FLOOR: f64 = 1e-4;
const ENERGY_SLACK: f64 = 1e-12;

/// Damped Newton iteration with exact Jacobians and a backtracking line
/// search on the residual (and on the energy for scalar coefficients).
pub fn solve_nonlinear(problem: &NonlinearProblem) -> Result<(ScalarField, SolveStats)> {
    let start = Instant::now();
    let op = problem.op;
    let cfg = problem.config;
    cfg.validate()?;
    let grid = *op.grid();
    let xi = problem.xi;
    let f = problem.rhs_flux;
    if let Some(f) = f {
        grid.check_same(f.grid())?;
    }
    let zero = ScalarField::zeros(grid);
    let (r_zero, _) = nonlinear_residual(op, &xi, f, &zero);
    let r0 = norm2(r_zero.values());
    let scale = if r0 > 0.0 { r0 } else { 1.0 };

    let mut phi = match problem.initial {
        Some(init) => {
            grid.check_same(init.grid())?;
            let mut p = init.clone();
            p.subtract_mean();
            p
        }
        None => zero,
    };
    let (mut r, _) = if problem.initial.is_some() {
        nonlinear_residual(op, &xi, f, &phi)
    } else {
        (r_zero, VectorField::zeros(grid))
    };
    let mut r_norm = norm2(r.values());
    let track_energy = op.is_scalar();
    let mut energy = if track_energy { Some(discrete_energy(op, &xi, f, &phi)?) } else { None };
    let mut stats = SolveStats { method: "newton".into(), ..SolveStats::default() };

    loop {
        let rel = r_norm / scale;
        stats.final_residual = rel;
        if rel <= cfg.tol {
            break;
        }
        if stats.iterations >= cfg.max_newton {
            stats.wall_time_s = start.elapsed().as_secs_f64();
            return Err(Error::NotConverged { solver: "newton", stats: Box::new(stats) });
        }
        let coef = tangent_field(op, &xi, &phi);
        // linear residual well below what the outer tolerance still needs
        let lin_tol = (0.1 * cfg.tol * scale / r_norm).clamp(1e-12, 1e-6);
        // -div(Da grad delta) = div(a + f)
        let mut rhs = r.values().to_vec();
        project_mean(&mut rhs);
        let lin = krylov(&coef, &rhs, lin_tol, cfg.max_krylov);
        stats.krylov_iterations += lin.stats.iterations;
        if !lin.converged && lin.stats.final_residual > 0.5 {
            stats.wall_time_s = start.elapsed().as_secs_f64();
            return Err(Error::NotConverged { solver: "newton/krylov", stats: Box::new(stats) });
        }
        let delta = ScalarField::from_vec(grid, lin.x)?;

        let mut t = 1.0;
        let accepted = loop {
            let mut trial = phi.clone();
            trial.axpy(t, &delta);
            let (r_trial, _) = nonlinear_residual(op, &xi, f, &trial);
            let n_trial = norm2(r_trial.values());
            let e_trial = if track_energy { Some(discrete_energy(op, &xi, f, &trial)?) } else { None };
            let energy_ok = match (energy, e_trial) {
                (Some(e0), Some(e1)) => e1 <= e0 + ENERGY_SLACK * e0.abs().max(1e-300),
                _ => true,
            };
            if n_trial < r_norm && energy_ok {
                break Some((trial, r_trial, n_trial, e_trial));
            }
            t *= 0.5;
            if t < STEP_FLOOR {
                break None;
            }
        };
        let Some((trial, r_trial, n_trial, e_trial)) = accepted else {
            stats.wall_time_s = start.elapsed().as_secs_f64();
            return Err(Error::LineSearchStagnation { stats: Box::new(stats) });
        };
        stats.history.push(NewtonStep {
            residual: rel,
            step_length: t,
            krylov_iterations: lin.stats.iterations,
            energy: e_trial,
        });
        stats.iterations += 1;
        phi = trial;
        r = r_trial;
        r_norm = n_trial;
        energy = e_trial;
    }
    phi.subtract_mean();
    stats.final_residual = norm2(nonlinear_residual(op, &xi, f, &phi).0.values()) / scale;
    stats.wall_time_s = start.elapsed().as_secs_f64();
    if !(stats.final_residual <= cfg.tol) {
        return Err(invalid(format!("recomputed residual {:e} above tolerance", stats.final_residual)));
    }
    Ok((phi, stats))
}
