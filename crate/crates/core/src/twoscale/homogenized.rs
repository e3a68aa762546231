//! The homogenized map `a_bar` as a tabulated radial profile, and the
//! Newton solver for `-div a_bar(grad u) = div f`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{solve_corrector, solve_linearized};
use crate::error::{invalid, Error, Result};
use crate::grid::{add3, divergence, gradient, unit, Mat3, MatrixField, ScalarField, Vec3, VectorField, ZERO33};
use crate::operator::{eval_a_law, eval_da_law, Law, OperatorSpec};
use crate::solver::krylov::krylov;
use crate::solver::{norm2, project_mean, NewtonStep, SolveStats, SolverConfig};

/// `psi(t) = a_bar(t e_1).e_1` on a grid of `t >= 0` with derivatives,
/// interpolated by cubic Hermite polynomials.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialProfile {
    pub ts: Vec<f64>,
    pub psi: Vec<f64>,
    pub dpsi: Vec<f64>,
}

impl RadialProfile {
    pub fn new(ts: Vec<f64>, psi: Vec<f64>, dpsi: Vec<f64>) -> Result<Self> {
        if ts.len() < 2 || psi.len() != ts.len() || dpsi.len() != ts.len() {
            return Err(invalid("profile needs matching tables of at least two points"));
        }
        if ts[0] != 0.0 || ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("profile abscissae must start at 0 and increase"));
        }
        Ok(Self { ts, psi, dpsi })
    }

    /// Closed-form profile `b (offset t + t^{p-1})` of a constant scalar coefficient.
    pub fn scalar_law(b: f64, p: f64, law: Law, t_max: f64, points: usize) -> Result<Self> {
        let ts = uniform(t_max, points)?;
        let psi = ts.iter().map(|&t| eval_a_law(&scalar(b), &[t, 0.0, 0.0], p, law)[0]).collect();
        let dpsi = ts.iter().map(|&t| eval_da_law(&scalar(b), &[t, 0.0, 0.0], p, law)[0][0]).collect();
        Self::new(ts, psi, dpsi)
    }

    pub fn t_max(&self) -> f64 {
        *self.ts.last().expect("non-empty")
    }

    /// `(psi(t), psi'(t))`
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        let limit = self.t_max();
        if !(t >= 0.0 && t <= limit) {
            return Err(Error::OutOfTable { value: t, limit });
        }
        let i = self.ts.partition_point(|&s| s <= t).clamp(1, self.ts.len() - 1) - 1;
        let (t0, t1) = (self.ts[i], self.ts[i + 1]);
        let w = t1 - t0;
        let s = (t - t0) / w;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let v = h00 * self.psi[i] + h10 * w * self.dpsi[i] + h01 * self.psi[i + 1] + h11 * w * self.dpsi[i + 1];
        let d00 = (6.0 * s2 - 6.0 * s) / w;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / w;
        let d11 = 3.0 * s2 - 2.0 * s;
        let dv = d00 * self.psi[i] + d10 * self.dpsi[i] + d01 * self.psi[i + 1] + d11 * self.dpsi[i + 1];
        Ok((v, dv))
    }
}

fn scalar(b: f64) -> Mat3 {
    let mut m = ZERO33;
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = b;
    }
    m
}

fn uniform(t_max: f64, points: usize) -> Result<Vec<f64>> {
    if !(t_max > 0.0) || points < 2 {
        return Err(invalid("profile needs t_max > 0 and at least two points"));
    }
    Ok((0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect())
}

/// Tabulate `psi` from correctors (values) and linearized correctors
/// (derivatives), averaging over `ops`.
pub fn tabulate_profile(ops: &[OperatorSpec], t_max: f64, points: usize, cfg: &SolverConfig) -> Result<RadialProfile> {
    if ops.is_empty() {
        return Err(invalid("need at least one operator"));
    }
    let ts = uniform(t_max, points)?;
    let e = unit(0);
    let rows: Vec<(f64, f64)> = ts
        .par_iter()
        .map(|&t| {
            let mut acc = (0.0, 0.0);
            for op in ops {
                let bundle = solve_corrector(op, &[t, 0.0, 0.0], cfg)?;
                let lin = solve_linearized(op, &bundle, &e, cfg)?;
                acc.0 += bundle.abar_sample[0];
                acc.1 += lin.tangent_row[0];
            }
            Ok((acc.0 / ops.len() as f64, acc.1 / ops.len() as f64))
        })
        .collect::<Result<_>>()?;
    RadialProfile::new(ts, rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect())
}

/// A homogenized flux law `xi -> a_bar(xi)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HomogenizedMap {
    /// `a_bar(xi) = psi(|xi|) xi / |xi|`
    Radial { profile: RadialProfile },
    /// `a_bar = a` for a constant coefficient matrix.
    Exact { coef: Mat3, p: f64, law: Law },
}

impl HomogenizedMap {
    pub fn value(&self, xi: &Vec3) -> Result<Vec3> {
        match self {
            Self::Exact { coef, p, law } => Ok(eval_a_law(coef, xi, *p, *law)),
            Self::Radial { profile } => {
                let t = crate::grid::norm3(xi);
                if t == 0.0 {
                    return Ok([0.0; 3]);
                }
                let (v, _) = profile.eval(t)?;
                Ok(xi.map(|c| v * c / t))
            }
        }
    }

    pub fn tangent(&self, xi: &Vec3, d: usize) -> Result<Mat3> {
        match self {
            Self::Exact { coef, p, law } => Ok(eval_da_law(coef, xi, *p, *law)),
            Self::Radial { profile } => {
                let t = crate::grid::norm3(xi);
                let mut m = ZERO33;
                if t < 1e-12 {
                    let (_, dv) = profile.eval(t)?;
                    for (i, row) in m.iter_mut().enumerate().take(d) {
                        row[i] = dv;
                    }
                    return Ok(m);
                }
                let (v, dv) = profile.eval(t)?;
                let n = xi.map(|c| c / t);
                for i in 0..d {
                    for j in 0..d {
                        let id = if i == j { 1.0 } else { 0.0 };
                        m[i][j] = dv * n[i] * n[j] + v / t * (id - n[i] * n[j]);
                    }
                }
                Ok(m)
            }
        }
    }
}

fn homogenized_residual(map: &HomogenizedMap, f: &VectorField, u: &ScalarField) -> Result<ScalarField> {
    let g = *u.grid();
    let grad = gradient(u);
    let mut flux = VectorField::zeros(g);
    for k in 0..g.len() {
        flux.set(k, &add3(&map.value(&grad.get(k))?, &f.get(k)));
    }
    Ok(divergence(&flux))
}

/// Damped Newton for `div(a_bar(grad u) + f) = 0` with zero-mean `u`.
/// Fails with [`Error::OutOfTable`] when the iterate leaves the table.
pub fn solve_homogenized(map: &HomogenizedMap, f: &VectorField, cfg: &SolverConfig) -> Result<(ScalarField, SolveStats)> {
    cfg.validate()?;
    let start = Instant::now();
    let g = *f.grid();
    let d = g.dim();
    let mut u = ScalarField::zeros(g);
    let mut r = homogenized_residual(map, f, &u)?;
    let r0 = norm2(r.values());
    let scale = if r0 > 0.0 { r0 } else { 1.0 };
    let mut r_norm = r0;
    let mut stats = SolveStats { method: "newton".into(), ..SolveStats::default() };
    let mut last_miss = None;
    while r_norm / scale > cfg.tol {
        if stats.iterations >= cfg.max_newton {
            stats.final_residual = r_norm / scale;
            return Err(Error::NotConverged { solver: "homogenized newton", stats: Box::new(stats) });
        }
        let grad = gradient(&u);
        let mut coef = MatrixField::zeros(g);
        for k in 0..g.len() {
            coef.set(k, &map.tangent(&grad.get(k), d)?);
        }
        let lin_tol = (0.1 * cfg.tol * scale / r_norm).clamp(1e-12, 1e-6);
        let mut rhs = r.values().to_vec();
        project_mean(&mut rhs);
        let lin = krylov(&coef, &rhs, lin_tol, cfg.max_krylov);
        stats.krylov_iterations += lin.stats.iterations;
        if !lin.converged && lin.stats.final_residual > 0.5 {
            return Err(Error::NotConverged { solver: "homogenized newton/krylov", stats: Box::new(stats) });
        }
        let delta = ScalarField::from_vec(g, lin.x)?;
        let mut t = 1.0;
        let accepted = loop {
            let mut trial = u.clone();
            trial.axpy(t, &delta);
            match homogenized_residual(map, f, &trial) {
                Ok(rt) => {
                    let nt = norm2(rt.values());
                    if nt < r_norm {
                        break Some((trial, rt, nt));
                    }
                }
                Err(e @ Error::OutOfTable { .. }) => last_miss = Some(e),
                Err(e) => return Err(e),
            }
            t *= 0.5;
            if t < 1e-4 {
                break None;
            }
        };
        let Some((trial, rt, nt)) = accepted else {
            return Err(last_miss.unwrap_or(Error::LineSearchStagnation { stats: Box::new(stats) }));
        };
        stats.history.push(NewtonStep {
            residual: r_norm / scale,
            step_length: t,
            krylov_iterations: lin.stats.iterations,
            energy: None,
        });
        stats.iterations += 1;
        u = trial;
        r = rt;
        r_norm = nt;
    }
    u.subtract_mean();
    stats.final_residual = norm2(homogenized_residual(map, f, &u)?.values()) / scale;
    stats.wall_time_s = start.elapsed().as_secs_f64();
    Ok((u, stats))
}

/// Bound on `max |grad u|` for forcing that depends on `x_1` only:
/// the root of `lambda (t + t^{p-1}) = 2 max |f_1|`, padded by 5%.
pub fn gradient_bound(lambda: f64, p: f64, f_max: f64) -> f64 {
    let target = 2.0 * f_max / lambda;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi + hi.powf(p - 1.0) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid + mid.powf(p - 1.0) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    1.05 * hi.max(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{identity, Grid};
    use crate::solver::{solve_nonlinear, NonlinearProblem};

    #[test]
    fn hermite_reproduces_cubics() {
        let ts: Vec<f64> = (0..6).map(|i| i as f64 * 0.4).collect();
        let f = |t: f64| 1.0 + t - 2.0 * t * t + 0.5 * t * t * t;
        let df = |t: f64| 1.0 - 4.0 * t + 1.5 * t * t;
        let prof = RadialProfile::new(ts.clone(), ts.iter().map(|&t| f(t)).collect(), ts.iter().map(|&t| df(t)).collect()).unwrap();
        for i in 0..=40 {
            let t = 2.0 * i as f64 / 40.0;
            let (v, dv) = prof.eval(t).unwrap();
            assert!((v - f(t)).abs() < 1e-12 && (dv - df(t)).abs() < 1e-11);
        }
        assert!(matches!(prof.eval(2.5), Err(Error::OutOfTable { .. })));
    }

    #[test]
    fn radial_tangent_matches_finite_differences() {
        let prof = RadialProfile::scalar_law(0.7, 3.0, Law::Standard, 3.0, 200).unwrap();
        let map = HomogenizedMap::Radial { profile: prof };
        let xi = [0.8, -0.5, 0.0];
        let m = map.tangent(&xi, 2).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut a = xi;
            let mut b = xi;
            a[j] += h;
            b[j] -= h;
            let (fa, fb) = (map.value(&a).unwrap(), map.value(&b).unwrap());
            for i in 0..2 {
                assert!(((fa[i] - fb[i]) / (2.0 * h) - m[i][j]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn tabulated_constant_coefficient_matches_law() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        let op = OperatorSpec::constant(g, 3.0, 0.5, &scalar(0.6)).unwrap();
        let prof = tabulate_profile(&[op], 2.0, 9, &SolverConfig::default()).unwrap();
        let exact = RadialProfile::scalar_law(0.6, 3.0, Law::Standard, 2.0, 9).unwrap();
        for i in 0..9 {
            assert!((prof.psi[i] - exact.psi[i]).abs() < 1e-12);
            assert!((prof.dpsi[i] - exact.dpsi[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_map_matches_heterogeneous_solver_for_constant_coefficient() {
        let g = Grid::new(2, 1.0, 32).unwrap();
        let m = identity(2);
        let op = OperatorSpec::constant(g, 3.0, 0.5, &m).unwrap();
        let f = VectorField::from_fn(g, |x| [0.5 * (2.0 * std::f64::consts::PI * x[0]).sin(), 0.2 * (2.0 * std::f64::consts::PI * x[1]).cos(), 0.0]);
        let cfg = SolverConfig::default();
        let (u, _) = solve_nonlinear(&NonlinearProblem::boundary_value(&op, &f, cfg)).unwrap();
        let (ubar, stats) = solve_homogenized(&HomogenizedMap::Exact { coef: m, p: 3.0, law: Law::Standard }, &f, &cfg).unwrap();
        assert!(stats.final_residual <= 1e-10);
        let mut diff = u.clone();
        diff.axpy(-1.0, &ubar);
        assert!(diff.max_abs() < 1e-9 * u.max_abs().max(1.0));
    }

    #[test]
    fn out_of_table_is_reported() {
        let g = Grid::new(1, 1.0, 64).unwrap();
        let f = VectorField::from_fn(g, |x| [2.0 * (2.0 * std::f64::consts::PI * x[0]).sin(), 0.0, 0.0]);
        let prof = RadialProfile::scalar_law(1.0, 3.0, Law::Standard, 0.1, 5).unwrap();
        let err = solve_homogenized(&HomogenizedMap::Radial { profile: prof }, &f, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::OutOfTable { .. }), "{err}");
    }

    #[test]
    fn gradient_bound_covers_one_dimensional_solution() {
        let g = Grid::new(1, 1.0, 128).unwrap();
        let f = VectorField::from_fn(g, |x| [0.8 * (2.0 * std::f64::consts::PI * x[0]).sin(), 0.0, 0.0]);
        let lambda = 0.4;
        let op = OperatorSpec::constant(g, 3.0, lambda, &scalar(lambda)).unwrap();
        let (u, _) = solve_nonlinear(&NonlinearProblem::boundary_value(&op, &f, SolverConfig::default())).unwrap();
        let gmax = gradient(&u).max_abs();
        let bound = gradient_bound(lambda, 3.0, 0.8);
        assert!(gmax <= bound && bound < 2.0 * gmax, "{gmax} {bound}");
    }
}
