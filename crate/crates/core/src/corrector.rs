//! Extended correctors `(phi, sigma)`, linearized correctors and the
//! homogenized map `a_bar` with its tangent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::CoefficientRecipe;
use crate::grid::{
    add3, gradient, matvec, norm3, Grid, Mat3, MatrixField, ScalarField, Vec3, VectorField, ZERO3, ZERO33,
};
use crate::operator::OperatorSpec;
use crate::rng::SampleSeed;
use crate::solver::{solve_linear, solve_nonlinear, LinearProblem, NonlinearProblem, PoissonSolver, SolveStats, SolverConfig};
use crate::stats::mean_stderr;

#[derive(Clone, Debug)]
pub struct CorrectorBundle {
    pub xi: Vec3,
    pub p: f64,
    pub phi: ScalarField,
    pub grad_phi: VectorField,
    /// `q = a(x, xi + grad phi)`
    pub flux: VectorField,
    /// Spatial mean of `q`.
    pub abar_sample: Vec3,
    /// `1 + |xi + grad phi|^{p-2}`
    pub mu: ScalarField,
    pub sigma: Option<MatrixField>,
    /// `||div sigma - (q - mean q)|| / ||q||` once `sigma` is populated.
    pub flux_identity_residual: Option<f64>,
    pub tol: f64,
    pub stats: SolveStats,
}

impl CorrectorBundle {
    /// Spatial mean of `|grad phi|^2 + |grad phi|^p`.
    pub fn energy(&self) -> f64 {
        let g = self.grad_phi.grid();
        (0..g.len())
            .map(|k| {
                let t = norm3(&self.grad_phi.get(k));
                t * t + t.powf(self.p)
            })
            .sum::<f64>()
            / g.len() as f64
    }
}

fn assemble_bundle(op: &OperatorSpec, xi: Vec3, phi: ScalarField, tol: f64, stats: SolveStats) -> CorrectorBundle {
    let grid = *op.grid();
    let p = op.p();
    let grad_phi = gradient(&phi);
    let mut flux = VectorField::zeros(grid);
    let mut mu = ScalarField::zeros(grid);
    for k in 0..grid.len() {
        let total = add3(&xi, &grad_phi.get(k));
        flux.set(k, &op.a_at(k, &total));
        let t = norm3(&total);
        mu.values_mut()[k] = 1.0 + if t == 0.0 { if p == 2.0 { 1.0 } else { 0.0 } } else { t.powf(p - 2.0) };
    }
    let abar_sample = flux.mean();
    CorrectorBundle { xi, p, phi, grad_phi, flux, abar_sample, mu, sigma: None, flux_identity_residual: None, tol, stats }
}

/// Nonlinear corrector for slope `xi`.
pub fn solve_corrector(op: &OperatorSpec, xi: &Vec3, cfg: &SolverConfig) -> Result<CorrectorBundle> {
    solve_corrector_from(op, xi, cfg, None)
}

/// Nonlinear corrector started from `initial` (warm start for sweeps).
pub fn solve_corrector_from(
    op: &OperatorSpec,
    xi: &Vec3,
    cfg: &SolverConfig,
    initial: Option<&ScalarField>,
) -> Result<CorrectorBundle> {
    let mut problem = NonlinearProblem::corrector(op, *xi, *cfg);
    problem.initial = initial;
    let (phi, stats) = solve_nonlinear(&problem)?;
    Ok(assemble_bundle(op, *xi, phi, cfg.tol, stats))
}

/// Skew matrix `sigma` with `-Delta sigma_ij = D+_i q_j - D+_j q_i`, `i < j`.
pub fn flux_corrector(flux: &VectorField, poisson: &PoissonSolver) -> Result<MatrixField> {
    let grid = *flux.grid();
    let d = grid.dim();
    let dq = (0..d).map(|j| gradient(&flux.component_field(j))).collect::<Vec<_>>();
    let mut upper = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            // dq[j].component(i) is D+_i q_j
            let rhs: Vec<f64> = dq[j].component(i).iter().zip(dq[i].component(j)).map(|(a, b)| a - b).collect();
            let mut rhs = ScalarField::from_vec(grid, rhs)?;
            // the mean vanishes up to rounding by telescoping
            rhs.subtract_mean();
            upper.push(poisson.solve(&rhs)?);
        }
    }
    MatrixField::skew_from_upper(grid, upper)
}

/// `||div sigma - (q - mean q)||_2 / ||q||_2`.
pub fn flux_identity_residual(sigma: &MatrixField, flux: &VectorField) -> f64 {
    let mut diff = sigma.divergence();
    diff.axpy(-1.0, flux);
    let mean = flux.mean();
    let g = *flux.grid();
    for k in 0..g.len() {
        let v = add3(&diff.get(k), &mean);
        diff.set(k, &v);
    }
    let qn = flux.norm_l2();
    if qn == 0.0 {
        diff.norm_l2()
    } else {
        diff.norm_l2() / qn
    }
}

/// Populate `sigma`; fails when the flux identity misses `100 tol`.
pub fn solve_flux_corrector(mut bundle: CorrectorBundle) -> Result<CorrectorBundle> {
    let poisson = PoissonSolver::new(*bundle.flux.grid());
    let sigma = flux_corrector(&bundle.flux, &poisson)?;
    let res = flux_identity_residual(&sigma, &bundle.flux);
    if res > 100.0 * bundle.tol {
        return Err(Error::Invariant(format!("flux identity residual {res:e} exceeds 100 tol")));
    }
    bundle.sigma = Some(sigma);
    bundle.flux_identity_residual = Some(res);
    Ok(bundle)
}

#[derive(Clone, Debug)]
pub struct LinearizedBundle {
    pub e: Vec3,
    /// `Da(x, xi + grad phi)`
    pub a_xi: MatrixField,
    pub phi: ScalarField,
    pub grad_phi: VectorField,
    /// `a_xi (e + grad phi_tilde)`
    pub flux: VectorField,
    pub tangent_row: Vec3,
    pub sigma: MatrixField,
    pub flux_identity_residual: f64,
    /// Spatial mean of `|grad phi_tilde|^2 mu`.
    pub weighted_energy: f64,
    pub stats: SolveStats,
}

/// Linearized corrector in the unit direction `e` around `bundle`.
pub fn solve_linearized(
    op: &OperatorSpec,
    bundle: &CorrectorBundle,
    e: &Vec3,
    cfg: &SolverConfig,
) -> Result<LinearizedBundle> {
    if (norm3(e) - 1.0).abs() > 1e-12 {
        return Err(invalid("direction must be a unit vector"));
    }
    let grid = *op.grid();
    let mut a_xi = MatrixField::zeros(grid);
    let mut rhs = VectorField::zeros(grid);
    for k in 0..grid.len() {
        let m = op.da_at(k, &add3(&bundle.xi, &bundle.grad_phi.get(k)));
        a_xi.set(k, &m);
        rhs.set(k, &matvec(&m, e));
    }
    let problem = LinearProblem { coef: a_xi, rhs_flux: rhs, tol: cfg.tol, max_iter: cfg.max_krylov };
    let (phi, stats) = solve_linear(&problem)?;
    let a_xi = problem.coef;
    let grad_phi = gradient(&phi);
    let mut flux = VectorField::zeros(grid);
    let mut weighted = 0.0;
    for k in 0..grid.len() {
        let g = grad_phi.get(k);
        flux.set(k, &matvec(&a_xi.get(k), &add3(e, &g)));
        weighted += (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]) * bundle.mu.values()[k];
    }
    let poisson = PoissonSolver::new(grid);
    let sigma = flux_corrector(&flux, &poisson)?;
    let res = flux_identity_residual(&sigma, &flux);
    Ok(LinearizedBundle {
        e: *e,
        tangent_row: flux.mean(),
        a_xi,
        phi,
        grad_phi,
        flux,
        sigma,
        flux_identity_residual: res,
        weighted_energy: weighted / grid.len() as f64,
        stats,
    })
}

/// A source of coefficient samples: a random recipe or one fixed field.
#[derive(Clone, Debug)]
pub enum Ensemble {
    Random { grid: Grid, recipe: CoefficientRecipe, p: f64, root: u64 },
    Fixed(OperatorSpec),
}

impl Ensemble {
    pub fn random(grid: Grid, recipe: CoefficientRecipe, p: f64, root: u64) -> Result<Self> {
        recipe.validate(grid.dim())?;
        if !(p >= 2.0) {
            return Err(invalid(format!("growth exponent must satisfy p >= 2, got {p}")));
        }
        Ok(Self::Random { grid, recipe, p, root })
    }

    pub fn grid(&self) -> Grid {
        match self {
            Self::Random { grid, .. } => *grid,
            Self::Fixed(op) => *op.grid(),
        }
    }

    pub fn p(&self) -> f64 {
        match self {
            Self::Random { p, .. } => *p,
            Self::Fixed(op) => op.p(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Self::Random { recipe, .. } => recipe.is_deterministic(),
            Self::Fixed(_) => true,
        }
    }

    /// Operator for sample `index`.
    pub fn operator(&self, index: u64) -> Result<OperatorSpec> {
        match self {
            Self::Random { grid, recipe, p, root } => {
                let (_, a) = recipe.sample(grid, SampleSeed::new(*root, index))?;
                OperatorSpec::new(*p, recipe.lambda, a)
            }
            Self::Fixed(op) => Ok(op.clone()),
        }
    }
}

/// Run `f` on samples `0..count` in parallel, collecting in index order.
pub fn per_sample<T: Send>(count: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let out: Vec<Result<T>> = (0..count as u64).into_par_iter().map(|i| f(i)).collect();
    out.into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Sample { index: i as u64, source: Box::new(e) }))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapEstimate {
    pub xi: Vec3,
    pub mean: Vec3,
    pub stderr: Vec3,
    pub samples: Vec<Vec3>,
}

fn summarize(xi: Vec3, samples: Vec<Vec3>, d: usize) -> MapEstimate {
    let mut mean = ZERO3;
    let mut stderr = ZERO3;
    for i in 0..d {
        let col: Vec<f64> = samples.iter().map(|v| v[i]).collect();
        let (m, s) = mean_stderr(&col);
        mean[i] = m;
        stderr[i] = s;
    }
    MapEstimate { xi, mean, stderr, samples }
}

/// Monte-Carlo estimate of `a_bar(xi)` from spatial flux averages.
pub fn homogenized_map(ens: &Ensemble, xi: &Vec3, sample_count: usize, cfg: &SolverConfig) -> Result<MapEstimate> {
    if sample_count == 0 {
        return Err(invalid("sample_count must be at least 1"));
    }
    let count = if ens.is_deterministic() { 1 } else { sample_count };
    let samples = per_sample(count, |i| {
        let op = ens.operator(i)?;
        Ok(solve_corrector(&op, xi, cfg)?.abar_sample)
    })?;
    Ok(summarize(*xi, samples, ens.grid().dim()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TangentEstimate {
    pub xi: Vec3,
    /// Column `j` is the mean tangent row for `e_j`.
    pub mean: Mat3,
    pub stderr: Mat3,
    pub samples: Vec<Mat3>,
}

/// Per-sample tangent matrix with columns `a_bar_xi e_j`.
pub fn sample_tangent(op: &OperatorSpec, bundle: &CorrectorBundle, cfg: &SolverConfig) -> Result<Mat3> {
    let d = op.grid().dim();
    let mut m = ZERO33;
    for j in 0..d {
        let lin = solve_linearized(op, bundle, &crate::grid::unit(j), cfg)?;
        for (i, row) in m.iter_mut().enumerate().take(d) {
            row[j] = lin.tangent_row[i];
        }
    }
    Ok(m)
}

/// Monte-Carlo estimate of `D a_bar(xi)` from linearized correctors.
pub fn homogenized_tangent(
    ens: &Ensemble,
    xi: &Vec3,
    sample_count: usize,
    cfg: &SolverConfig,
) -> Result<TangentEstimate> {
    if sample_count == 0 {
        return Err(invalid("sample_count must be at least 1"));
    }
    let d = ens.grid().dim();
    let count = if ens.is_deterministic() { 1 } else { sample_count };
    let samples = per_sample(count, |i| {
        let op = ens.operator(i)?;
        let bundle = solve_corrector(&op, xi, cfg)?;
        sample_tangent(&op, &bundle, cfg)
    })?;
    let mut mean = ZERO33;
    let mut stderr = ZERO33;
    for i in 0..d {
        for j in 0..d {
            let col: Vec<f64> = samples.iter().map(|m| m[i][j]).collect();
            let (m, s) = mean_stderr(&col);
            mean[i][j] = m;
            stderr[i][j] = s;
        }
    }
    Ok(TangentEstimate { xi: *xi, mean, stderr, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CoefficientProfile, CovarianceSpec};
    use crate::grid::identity;
    use crate::operator::{eval_a, eval_da};

    fn laminate_1d(n: usize, p: f64) -> OperatorSpec {
        let g = Grid::new(1, 1.0, n).unwrap();
        let coef = MatrixField::from_fn(g, |x| {
            let mut m = ZERO33;
            m[0][0] = (2.0 + (2.0 * std::f64::consts::PI * x[0]).cos()) / 3.0;
            m
        });
        OperatorSpec::new(p, 1.0 / 3.0, coef).unwrap()
    }

    #[test]
    fn constant_coefficient_bundle() {
        let g = Grid::new(2, 4.0, 16).unwrap();
        let m = [[0.9, 0.1, 0.0], [0.0, 0.7, 0.0], [0.0; 3]];
        let op = OperatorSpec::constant(g, 4.0, 0.5, &m).unwrap();
        let xi = [1.0, 0.5, 0.0];
        let b = solve_flux_corrector(solve_corrector(&op, &xi, &SolverConfig::default()).unwrap()).unwrap();
        assert_eq!(b.grad_phi.max_abs(), 0.0);
        let expect = eval_a(&m, &xi, 4.0);
        assert!(norm3(&crate::grid::sub3(&b.abar_sample, &expect)) < 1e-14);
        assert_eq!(b.sigma.as_ref().unwrap().max_abs(), 0.0);
        let lin = solve_linearized(&op, &b, &[1.0, 0.0, 0.0], &SolverConfig::default()).unwrap();
        let da = eval_da(&m, &xi, 4.0);
        for i in 0..2 {
            assert!((lin.tangent_row[i] - da[i][0]).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_slope_gives_zero_corrector() {
        let op = laminate_1d(64, 3.0);
        let b = solve_corrector(&op, &ZERO3, &SolverConfig::default()).unwrap();
        assert_eq!(b.phi.max_abs(), 0.0);
        assert_eq!(b.flux.max_abs(), 0.0);
    }

    #[test]
    fn harmonic_mean_in_one_dimension() {
        let n = 1024;
        let op = laminate_1d(n, 2.0);
        let b = solve_corrector(&op, &[1.0, 0.0, 0.0], &SolverConfig::default()).unwrap();
        // oracle: lattice harmonic mean of 2A (the discrete 1-D flux is constant)
        let g = op.grid();
        let inv: f64 = (0..n).map(|k| 1.0 / (2.0 * op.coefficient().entry(0, 0)[k])).sum::<f64>() / n as f64;
        assert!((b.abar_sample[0] - 1.0 / inv).abs() <= 1e-8 / inv);
        assert_eq!(g.dim(), 1);
        let s = solve_flux_corrector(b).unwrap();
        assert_eq!(s.sigma.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn flux_identity_on_random_sample() {
        let g = Grid::new(2, 16.0, 32).unwrap();
        let ens = Ensemble::random(g, CoefficientRecipe::isotropic_tanh(0.25, 1.0), 3.0, 11).unwrap();
        let op = ens.operator(0).unwrap();
        let cfg = SolverConfig::default();
        let b = solve_flux_corrector(solve_corrector(&op, &[1.0, 0.0, 0.0], &cfg).unwrap()).unwrap();
        assert!(b.flux_identity_residual.unwrap() <= 10.0 * cfg.tol);
        assert_eq!(b.sigma.as_ref().unwrap().skew_defect(), 0.0);
        assert!(b.grad_phi.mean().iter().all(|v| v.abs() < 1e-13));
        let lin = solve_linearized(&op, &b, &[0.0, 1.0, 0.0], &cfg).unwrap();
        assert!(lin.flux_identity_residual <= 10.0 * cfg.tol);
        assert!(lin.grad_phi.mean().iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn constant_ensemble_is_exact() {
        let g = Grid::new(2, 8.0, 16).unwrap();
        let recipe = CoefficientRecipe {
            lambda: 0.5,
            covariance: CovarianceSpec::gaussian(1.0),
            profile: CoefficientProfile::Constant { value: 0.75 },
            kernel_radius_cells: 2.0,
            isotropic: true,
        };
        let ens = Ensemble::random(g, recipe, 3.0, 0).unwrap();
        let xi = [2.0, 0.0, 0.0];
        let est = homogenized_map(&ens, &xi, 5, &SolverConfig::default()).unwrap();
        assert!((est.mean[0] - 0.75 * 3.0 * 2.0).abs() < 1e-13);
        assert_eq!(est.stderr, ZERO3);
        let tan = homogenized_tangent(&ens, &xi, 5, &SolverConfig::default()).unwrap();
        let mut m = identity(2);
        m[0][0] = 0.75;
        m[1][1] = 0.75;
        let da = eval_da(&m, &xi, 3.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((tan.mean[i][j] - da[i][j]).abs() < 1e-13);
            }
        }
    }
}
