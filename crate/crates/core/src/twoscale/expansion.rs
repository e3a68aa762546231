//! Heterogeneous solve, corrector library, the two-scale expansion, its
//! error and the remainder of the error equation.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{solve_corrector, solve_flux_corrector};
use crate::error::{invalid, Error, Result};
use crate::grid::{add3, divergence, gradient, matvec, norm3, sub3, Grid, MatrixField, ScalarField, Vec3, VectorField, ZERO3};
use crate::operator::OperatorSpec;
use crate::solver::{solve_nonlinear, NonlinearProblem, PoissonSolver, SolveStats, SolverConfig};

use super::homogenized::HomogenizedMap;
use super::partition::PartitionOfUnity;

/// `u_eps` with `-div a(x, grad u_eps) = div f` on the torus.
pub fn solve_heterogeneous(op: &OperatorSpec, f: &VectorField, cfg: &SolverConfig) -> Result<(ScalarField, SolveStats)> {
    solve_nonlinear(&NonlinearProblem::boundary_value(op, f, *cfg))
}

/// Top-left block of `m^d` points of a field that repeats with period `m`.
pub fn restrict_periodic_block(coef: &MatrixField, m: usize) -> Result<MatrixField> {
    let g = *coef.grid();
    let n = g.points_per_dim();
    if m == 0 || n % m != 0 {
        return Err(invalid(format!("block size {m} does not divide {n}")));
    }
    let cell = Grid::new(g.dim(), m as f64 * g.spacing(), m)?;
    let mut out = MatrixField::zeros(cell);
    for k in 0..g.len() {
        let c = g.coords(k);
        let cc: Vec<usize> = (0..g.dim()).map(|i| c[i] % m).collect();
        let j = cell.flat(&cc);
        let v = coef.get(k);
        if c[..g.dim()].iter().all(|&ci| ci < m) {
            out.set(j, &v);
        } else if out.get(j) != v {
            return Err(invalid(format!("coefficient is not {m}-periodic at lattice point {k}")));
        }
    }
    Ok(out)
}

/// Corrector data at physical scale on the cell (or full) grid.
#[derive(Clone, Debug)]
pub struct LibraryEntry {
    pub xi: Vec3,
    pub phi: ScalarField,
    pub grad_phi: VectorField,
    pub sigma: MatrixField,
}

/// Correctors keyed by (optionally quantized) slope, tiled onto a fine grid.
#[derive(Clone, Debug)]
pub struct CorrectorLibrary {
    op: OperatorSpec,
    fine: Grid,
    cell_of: Vec<usize>,
    quantum: f64,
    entries: HashMap<[i64; 3], LibraryEntry>,
}

impl CorrectorLibrary {
    /// `op` lives on a cell of `m^d` points with the spacing of `fine`;
    /// `quantum = 0` keys slopes bit-exactly.
    pub fn new(op: OperatorSpec, fine: Grid, quantum: f64) -> Result<Self> {
        let cell = *op.grid();
        let m = cell.points_per_dim();
        if cell.dim() != fine.dim()
            || fine.points_per_dim() % m != 0
            || (cell.spacing() - fine.spacing()).abs() > 1e-12 * fine.spacing()
        {
            return Err(invalid("cell grid must tile the fine grid with equal spacing"));
        }
        if !(quantum >= 0.0) {
            return Err(invalid("quantum must be nonnegative"));
        }
        let cell_of = (0..fine.len())
            .map(|k| {
                let c = fine.coords(k);
                let cc: Vec<usize> = (0..fine.dim()).map(|i| c[i] % m).collect();
                cell.flat(&cc)
            })
            .collect();
        Ok(Self { op, fine, cell_of, quantum, entries: HashMap::new() })
    }

    fn key(&self, xi: &Vec3) -> [i64; 3] {
        if self.quantum > 0.0 {
            xi.map(|v| (v / self.quantum).round() as i64)
        } else {
            xi.map(|v| v.to_bits() as i64)
        }
    }

    /// The slope actually solved for in place of `xi`.
    pub fn representative(&self, xi: &Vec3) -> Vec3 {
        if self.quantum > 0.0 {
            self.key(xi).map(|k| k as f64 * self.quantum)
        } else {
            *xi
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Solve nonlinear and flux correctors for every missing slope.
    pub fn populate(&mut self, xis: &[Vec3], cfg: &SolverConfig) -> Result<()> {
        let mut todo: Vec<([i64; 3], Vec3)> = Vec::new();
        for xi in xis {
            let k = self.key(xi);
            if !self.entries.contains_key(&k) && !todo.iter().any(|(t, _)| *t == k) {
                todo.push((k, self.representative(xi)));
            }
        }
        let op = &self.op;
        let solved: Vec<([i64; 3], LibraryEntry)> = todo
            .par_iter()
            .map(|(k, xi)| {
                let b = solve_flux_corrector(solve_corrector(op, xi, cfg)?)?;
                let sigma = b.sigma.expect("populated above");
                Ok((*k, LibraryEntry { xi: *xi, phi: b.phi, grad_phi: b.grad_phi, sigma }))
            })
            .collect::<Result<_>>()?;
        self.entries.extend(solved);
        Ok(())
    }

    pub fn get(&self, xi: &Vec3) -> Result<&LibraryEntry> {
        self.entries
            .get(&self.key(xi))
            .ok_or_else(|| invalid(format!("no corrector in the library for slope {xi:?}")))
    }

    /// Cell index of a fine lattice point.
    #[inline]
    pub fn cell_index(&self, fine: usize) -> usize {
        self.cell_of[fine]
    }

    pub fn fine_grid(&self) -> &Grid {
        &self.fine
    }

    pub fn max_quantization_error(&self, xis: &[Vec3]) -> f64 {
        xis.iter().map(|x| norm3(&sub3(x, &self.representative(x)))).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct TwoScaleField {
    pub eps: f64,
    pub delta: f64,
    pub ubar: ScalarField,
    /// Local averages of `grad u_bar`, one per center.
    pub xi_k: Vec<Vec3>,
    pub u2s: ScalarField,
    /// `grad u_bar + sum_k (eta_k grad phi_k + phi_k grad eta_k)`
    pub grad_assembled: VectorField,
    pub quantization_error: f64,
}

/// `u2s = u_bar + sum_k eta_k phi_{xi_k}` with correctors already at the
/// physical scale `eps`.
pub fn two_scale_expand(
    ubar: &ScalarField,
    partition: &PartitionOfUnity,
    library: &CorrectorLibrary,
    eps: f64,
) -> Result<TwoScaleField> {
    let g = *ubar.grid();
    g.check_same(partition.grid())?;
    g.check_same(library.fine_grid())?;
    let gu = gradient(ubar);
    let xi_k = partition.local_averages(&gu)?;
    let entries: Vec<&LibraryEntry> = xi_k.iter().map(|x| library.get(x)).collect::<Result<_>>()?;
    let mut u2s = ubar.clone();
    let mut grad = gu;
    for x in 0..g.len() {
        let c = library.cell_index(x);
        let mut du = 0.0;
        let mut dg = ZERO3;
        partition.for_each_at(x, |k, eta, grad_eta| {
            let e = entries[k];
            let phi = e.phi.values()[c];
            let gp = e.grad_phi.get(c);
            du += eta * phi;
            for i in 0..3 {
                dg[i] += eta * gp[i] + phi * grad_eta[i];
            }
        });
        u2s.values_mut()[x] += du;
        grad.set(x, &add3(&grad.get(x), &dg));
    }
    Ok(TwoScaleField {
        eps,
        delta: partition.delta(),
        ubar: ubar.clone(),
        quantization_error: library.max_quantization_error(&xi_k),
        xi_k,
        u2s,
        grad_assembled: grad,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ErrorNorms {
    /// `||grad u_eps - grad u2s||_{L^2}` over the torus.
    pub l2: f64,
    pub lp: f64,
    pub p: f64,
}

fn lebesgue_norm(v: &VectorField, q: f64) -> f64 {
    let g = v.grid();
    let w = g.cell_volume();
    let s: f64 = (0..g.len()).map(|k| norm3(&v.get(k)).powf(q)).sum::<f64>() * w;
    s.powf(1.0 / q)
}

pub fn expansion_error(u_eps: &ScalarField, ts: &TwoScaleField, p: f64) -> Result<ErrorNorms> {
    u_eps.grid().check_same(ts.u2s.grid())?;
    let mut e = gradient(u_eps);
    e.axpy(-1.0, &gradient(&ts.u2s));
    Ok(ErrorNorms { l2: lebesgue_norm(&e, 2.0), lp: lebesgue_norm(&e, p), p })
}

pub const REMAINDER_TERMS: [&str; 5] = [
    "homogenized_flux_mismatch",
    "flux_corrector",
    "slope_mismatch",
    "convexity_defect",
    "corrector_gradient_of_cutoff",
];

#[derive(Clone, Debug)]
pub struct RemainderReport {
    pub terms: Vec<VectorField>,
    pub norms: [f64; 5],
    pub total: VectorField,
    pub total_norm: f64,
}

/// The five-term remainder `R` with `-div(a(grad u2s) - a(grad u_eps)) = div R`
/// up to lattice product rules.
pub fn remainder_assembly(
    op: &OperatorSpec,
    map: &HomogenizedMap,
    ubar: &ScalarField,
    partition: &PartitionOfUnity,
    library: &CorrectorLibrary,
) -> Result<RemainderReport> {
    let g = *op.grid();
    g.check_same(ubar.grid())?;
    g.check_same(partition.grid())?;
    let gu = gradient(ubar);
    let xi_k = partition.local_averages(&gu)?;
    let entries: Vec<&LibraryEntry> = xi_k.iter().map(|x| library.get(x)).collect::<Result<_>>()?;
    let abar_k: Vec<Vec3> = xi_k.iter().map(|x| map.value(x)).collect::<Result<_>>()?;
    let mut terms: Vec<VectorField> = (0..5).map(|_| VectorField::zeros(g)).collect();
    for x in 0..g.len() {
        let c = library.cell_index(x);
        let grad_u = gu.get(x);
        let abar_u = map.value(&grad_u)?;
        let mut t = [ZERO3; 5];
        let mut eta_grad_phi = ZERO3;
        let mut phi_grad_eta = ZERO3;
        let mut eta_a = ZERO3;
        let mut err = Ok(());
        partition.for_each_at(x, |k, eta, grad_eta| {
            let e = entries[k];
            let gp = e.grad_phi.get(c);
            let phi = e.phi.values()[c];
            let sigma = e.sigma.get(c);
            let s_grad_eta = matvec(&sigma, &grad_eta);
            let a_u = op.a_at(x, &add3(&grad_u, &gp));
            let a_k = op.a_at(x, &add3(&xi_k[k], &gp));
            for i in 0..3 {
                t[0][i] += eta * (abar_k[k][i] - abar_u[i]);
                t[1][i] -= s_grad_eta[i];
                t[2][i] += eta * (a_u[i] - a_k[i]);
                eta_a[i] += eta * a_u[i];
                eta_grad_phi[i] += eta * gp[i];
                phi_grad_eta[i] += phi * grad_eta[i];
            }
            if !phi.is_finite() {
                err = Err(invalid("non-finite corrector"));
            }
        });
        err?;
        let inner = op.a_at(x, &add3(&grad_u, &eta_grad_phi));
        let full = op.a_at(x, &add3(&add3(&grad_u, &eta_grad_phi), &phi_grad_eta));
        t[3] = sub3(&inner, &eta_a);
        t[4] = sub3(&full, &inner);
        for (field, v) in terms.iter_mut().zip(&t) {
            field.set(x, v);
        }
    }
    let mut total = VectorField::zeros(g);
    for t in &terms {
        total.axpy(1.0, t);
    }
    let norms = [0, 1, 2, 3, 4].map(|i| lebesgue_norm(&terms[i], 2.0));
    Ok(RemainderReport { total_norm: lebesgue_norm(&total, 2.0), terms, norms, total })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EnergyCheck {
    /// `||e||_2^2 + ||e||_p^p` with `e = grad(u_eps - u2s)`.
    pub lhs: f64,
    /// `C ||P R||_2^2` with `P` the projection onto lattice gradients.
    pub rhs: f64,
    pub constant: f64,
    pub pass: bool,
}

/// Monotonicity estimate for the expansion error against the exact lattice
/// remainder `a(x, grad u2s) - a_bar(grad u_bar)`.
pub fn energy_check(op: &OperatorSpec, map: &HomogenizedMap, u_eps: &ScalarField, ts: &TwoScaleField) -> Result<EnergyCheck> {
    if !op.is_scalar() {
        return Err(invalid("energy check needs a scalar coefficient"));
    }
    let g = *op.grid();
    g.check_same(u_eps.grid())?;
    let p = op.p();
    let lambda = op.lambda();
    let g2s = gradient(&ts.u2s);
    let gbar = gradient(&ts.ubar);
    let mut r = VectorField::zeros(g);
    for k in 0..g.len() {
        r.set(k, &sub3(&op.a_at(k, &g2s.get(k)), &map.value(&gbar.get(k))?));
    }
    // P R = grad w with div grad w = div R
    let mut div = divergence(&r);
    div.scale(-1.0);
    let w = ScalarField::from_vec(g, PoissonSolver::new(g).apply(div.values(), 1.0))?;
    let pr = gradient(&w);
    let mut e = gradient(u_eps);
    e.axpy(-1.0, &g2s);
    let lhs = lebesgue_norm(&e, 2.0).powi(2) + lebesgue_norm(&e, p).powf(p);
    let constant = (1.0 + 2f64.powf(p - 2.0)) / (lambda * lambda);
    let rhs = constant * lebesgue_norm(&pr, 2.0).powi(2);
    Ok(EnergyCheck { lhs, rhs, constant, pass: lhs <= rhs * (1.0 + 1e-6) + 1e-20 })
}

/// Wraps library misses as a typed error for callers that retry.
pub fn is_missing_corrector(e: &Error) -> bool {
    matches!(e, Error::InvalidArgument(m) if m.starts_with("no corrector"))
}
