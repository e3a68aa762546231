//! The invariant suite: every module property, once, on small grids.

use std::fs;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corrector::{
    per_sample, solve_corrector, solve_corrector_from, solve_flux_corrector, solve_linearized, Ensemble,
};
use crate::diagnostics::radius::lipschitz_excess;
use crate::diagnostics::{
    average_control_constant, caccioppoli_constant, clt_scaling, corrector_bounds, holefilling_fit, meyers_radius,
    calibrate_c1, rescaling_invariance, sandwich_check, Quantity, ELL,
};
use crate::error::Result;
use crate::fft::signed_lag;
use crate::field::{periodized_covariance, sample_gaussian, CoefficientRecipe, CovarianceSpec};
use crate::grid::{
    add3, divergence, dot3, gradient, matvec, norm3, scale3, sub3, unit, Grid, Mat3, ScalarField, Vec3, VectorField, ZERO3,
};
use crate::operator::{check_class_m, da_ellipticity_bounds, eval_a, eval_da, eval_w, ClassTest};
use crate::rng::SampleSeed;
use crate::solver::{discrete_energy, nonlinear_residual, solve_nonlinear, NonlinearProblem, SolverConfig};
use crate::stats::mean_stderr;
use crate::twoscale::{build_partition, run_rate_study, CoefficientMode, RateStudy};

use super::config::ExperimentConfig;
use super::report::Check;
use super::runner::{self, Threads};

/// Every invariant the suite reports, in report order.
pub const INVARIANTS: [&str; 38] = [
    "grid.adjointness",
    "grid.periodicity",
    "grid.annihilates_constants",
    "grid.mean_preservation",
    "field.stationarity",
    "field.periodization_consistency",
    "field.admissibility",
    "field.determinism",
    "operator.da_ellipticity",
    "operator.a_zero",
    "operator.da_consistency",
    "operator.potential_consistency",
    "operator.class_m",
    "solver.energy_monotonicity",
    "solver.residual_certificate",
    "solver.uniqueness",
    "solver.homogeneity_scaling",
    "corrector.zero_mean_gradients",
    "corrector.energy_bound",
    "corrector.flux_identity",
    "corrector.skew_symmetry",
    "corrector.weighted_linearized_energy",
    "corrector.tangent_symmetry",
    "corrector.lipschitz_differences",
    "corrector.fd_tangent",
    "diagnostics.caccioppoli",
    "diagnostics.holefilling",
    "diagnostics.meyers_sandwich",
    "diagnostics.radius_lipschitz",
    "diagnostics.average_control",
    "diagnostics.clt_slope",
    "diagnostics.rescaling_invariance",
    "twoscale.energy_estimate",
    "twoscale.partition_invariants",
    "twoscale.delta_equals_eps",
    "twoscale.periodic_rate",
    "cli.reproducibility",
    "cli.report_completeness",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Fewer Monte-Carlo samples.
    pub fast: bool,
    pub tol: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { fast: false, tol: 1e-10, seed: 20240601 }
    }
}

/// Lattice size used for dimension `d`.
pub fn grid_size(d: usize) -> usize {
    if d == 3 {
        16
    } else {
        64
    }
}

/// Runs the suite for one dimension. Checks are in [`INVARIANTS`] order.
pub fn checks_for(d: usize, opts: VerifyOptions) -> Result<Vec<Check>> {
    let s = Setup::new(d, opts)?;
    let mut out = Vec::new();
    out.extend(grid_checks(&s));
    out.extend(field_checks(&s)?);
    out.extend(operator_checks(&s)?);
    out.extend(solver_checks(&s)?);
    out.extend(corrector_checks(&s)?);
    out.extend(diagnostics_checks(&s)?);
    out.extend(twoscale_checks(&s)?);
    out.push(reproducibility(&s)?);
    out.push(completeness(&out));
    Ok(out)
}

/// `id` of every entry of [`INVARIANTS`] exactly once, and nothing else.
pub fn completeness(checks: &[Check]) -> Check {
    let expected = &INVARIANTS[..INVARIANTS.len() - 1];
    let mut missing = Vec::new();
    let mut repeated = Vec::new();
    for id in expected {
        match checks.iter().filter(|c| c.id == *id).count() {
            0 => missing.push(*id),
            1 => {}
            _ => repeated.push(*id),
        }
    }
    let extra: Vec<&str> = checks.iter().map(|c| c.id.as_str()).filter(|id| !expected.contains(id)).collect();
    let pass = missing.is_empty() && repeated.is_empty() && extra.is_empty();
    let detail = if pass {
        format!("{} invariants, each once", expected.len())
    } else {
        format!("missing {missing:?}, repeated {repeated:?}, unexpected {extra:?}")
    };
    Check::flag("cli.report_completeness", pass, detail)
}

struct Setup {
    d: usize,
    grid: Grid,
    p: f64,
    lambda: f64,
    recipe: CoefficientRecipe,
    ens: Ensemble,
    sc: SolverConfig,
    opts: VerifyOptions,
    xi: Vec3,
}

impl Setup {
    fn new(d: usize, opts: VerifyOptions) -> Result<Self> {
        let n = grid_size(d);
        let grid = Grid::new(d, 0.5 * n as f64, n)?;
        let lambda = 0.25;
        let p = 3.0;
        let recipe = CoefficientRecipe::isotropic_tanh(lambda, grid.length() / 8.0);
        let ens = Ensemble::random(grid, recipe.clone(), p, opts.seed)?;
        let mut xi = ZERO3;
        xi[0] = 1.0;
        if d > 1 {
            xi[1] = 0.5;
        }
        Ok(Self { d, grid, p, lambda, recipe, ens, sc: SolverConfig::with_tol(opts.tol), opts, xi })
    }

    fn rng(&self, purpose: u64) -> ChaCha8Rng {
        SampleSeed::new(self.opts.seed, 1_000_000 + purpose).rng(purpose)
    }

    fn samples(&self, full: usize, fast: usize) -> usize {
        if self.opts.fast {
            fast
        } else {
            full
        }
    }

    fn random_vec(&self, rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
        let mut v = ZERO3;
        for x in v.iter_mut().take(self.d) {
            *x = rng.gen_range(-scale..scale);
        }
        v
    }
}

fn random_scalar(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let data = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScalarField::from_vec(grid, data).expect("finite")
}

fn random_vector(grid: Grid, rng: &mut ChaCha8Rng) -> VectorField {
    let comps = (0..grid.dim()).map(|_| random_scalar(grid, rng).into_values()).collect();
    VectorField::from_components(grid, comps).expect("finite")
}

/// Shift by `m` cells along `axis`, walking neighbour links.
fn shift(u: &ScalarField, axis: usize, m: usize) -> ScalarField {
    let g = *u.grid();
    let data = (0..g.len())
        .map(|k| {
            let mut j = k;
            for _ in 0..m {
                j = g.neighbor(j, axis, true);
            }
            u.values()[j]
        })
        .collect();
    ScalarField::from_vec(g, data).expect("finite")
}

fn grid_checks(s: &Setup) -> Vec<Check> {
    let g = s.grid;
    let mut rng = s.rng(1);
    let u = random_scalar(g, &mut rng);
    let v = random_vector(g, &mut rng);
    let gu = gradient(&u);
    let lhs = gu.dot(&v);
    let rhs = -u.dot(&divergence(&v));
    let adj = (lhs - rhs).abs() / (gu.norm_l2() * v.norm_l2());

    let n = g.points_per_dim();
    let mut periodic = true;
    for axis in 0..s.d {
        let full = shift(&u, axis, n);
        let one = shift(&u, axis, 1);
        periodic &= full.values() == u.values();
        let shifted_grad = gradient(&one);
        let reference = gradient(&u);
        for c in 0..s.d {
            periodic &= shift(&reference.component_field(c), axis, 1).values() == shifted_grad.component(c);
        }
    }

    let constant = gradient(&ScalarField::constant(g, 3.7)).max_abs() == 0.0
        && divergence(&VectorField::constant(g, &[1.5, -2.0, 0.25])).max_abs() == 0.0;

    let mean = divergence(&v).mean().abs() * g.spacing() / v.max_abs();

    vec![
        Check::at_most("grid.adjointness", adj, 1e-12, "|<grad u, v> + <u, div v>| / (|grad u| |v|)"),
        Check::flag("grid.periodicity", periodic, "full-period shifts are the identity; gradients commute with shifts"),
        Check::flag("grid.annihilates_constants", constant, "gradient and divergence of constants vanish exactly"),
        Check::at_most("grid.mean_preservation", mean, 1e-13, "|mean div F| h / max|F|"),
    ]
}

fn field_checks(s: &Setup) -> Result<Vec<Check>> {
    let g = s.grid;
    let d = s.d;
    let spec = s.recipe.covariance.clone();
    let cl = periodized_covariance(&spec, &g)?;
    let count = s.samples(64, 32);
    let n = g.points_per_dim();
    let lags = [1usize, 2, 4];
    // per sample: value at the origin, then lag products over two halves
    let per = per_sample(count, |i| {
        let gs = sample_gaussian(&cl, SampleSeed::new(s.opts.seed, i))?;
        let mut row = vec![gs.values()[0]];
        for &lag in &lags {
            let mut halves = [0.0; 2];
            let mut counts = [0.0; 2];
            for k in 0..g.len() {
                let c = g.coords(k);
                let h = usize::from(c[0] >= n / 2);
                let mut j = k;
                for _ in 0..lag {
                    j = g.neighbor(j, 0, true);
                }
                halves[h] += gs.values()[k] * gs.values()[j];
                counts[h] += 1.0;
            }
            row.push(halves[0] / counts[0]);
            row.push(halves[1] / counts[1]);
        }
        Ok(row)
    })?;
    let col = |c: usize| per.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let (m0, se0) = mean_stderr(&col(0));
    let mut stationary = m0.abs() <= 4.0 * se0;
    let mut worst: f64 = m0.abs() / se0.max(f64::MIN_POSITIVE);
    for (li, _) in lags.iter().enumerate() {
        let a = col(1 + 2 * li);
        let b = col(2 + 2 * li);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (md, sd) = mean_stderr(&diff);
        stationary &= md.abs() <= 4.0 * sd;
        worst = worst.max(md.abs() / sd.max(f64::MIN_POSITIVE));
    }

    // exponential covariance, unit length, window |x| <= 2
    let exp = CovarianceSpec::Exponential { ell_c: 1.0 };
    let mut errs = Vec::new();
    for l in [8usize, 16, 32] {
        let gl = Grid::new(d, l as f64, l)?;
        let c = periodized_covariance(&exp, &gl)?;
        let mut e: f64 = 0.0;
        for k in 0..gl.len() {
            let at = gl.coords(k);
            let r = (0..d).map(|i| (signed_lag(at[i], l) as f64).powi(2)).sum::<f64>().sqrt();
            if r <= 2.0 {
                e = e.max((c.values()[k] - exp.eval(r)).abs());
            }
        }
        errs.push(e);
    }
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);

    let mut rng = s.rng(2);
    let tests: Vec<Vec3> = (0..100).map(|_| s.random_vec(&mut rng, 1.0)).collect();
    let lam = s.lambda;
    let adm = per_sample(s.samples(4, 2), |i| {
        let (_, a) = s.recipe.sample(&g, SampleSeed::new(s.opts.seed, i))?;
        let mut worst: f64 = 0.0;
        for k in 0..g.len() {
            let m = a.get(k);
            for t in &tests {
                let q = dot3(t, &matvec(&m, t));
                let tt = dot3(t, t);
                worst = worst.max(lam * tt - q).max(q - tt);
            }
        }
        Ok(worst)
    })?;
    let adm_worst = adm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let sample = |threads| {
        runner::in_pool(threads, || s.recipe.sample(&g, SampleSeed::new(s.opts.seed, 3)))
    };
    let (g1, a1) = sample(1)??;
    let (g4, a4) = sample(4)??;
    let deterministic = g1 == g4 && a1 == a4;

    Ok(vec![
        Check::flag(
            "field.stationarity",
            stationary,
            format!("mean and lag-{lags:?} covariances agree within 4 standard errors (worst {worst:.2})"),
        ),
        Check::flag("field.periodization_consistency", decreasing, format!("|c_L - c| for L = 8, 16, 32: {errs:?}")),
        Check::at_most("field.admissibility", adm_worst, 1e-10, "largest violation of lambda|t|^2 <= t.At <= |t|^2"),
        Check::flag("field.determinism", deterministic, "samples agree bitwise across 1 and 4 threads"),
    ])
}

fn operator_checks(s: &Setup) -> Result<Vec<Check>> {
    let d = s.d;
    let (_, a) = s.recipe.sample(&s.grid, SampleSeed::new(s.opts.seed, 0))?;
    let mut rng = s.rng(3);
    let mats: Vec<Mat3> = (0..100).map(|_| a.get(rng.gen_range(0..s.grid.len()))).collect();
    let ps = [2.0, 2.5, 3.0, 4.0];

    let mut ell_worst: f64 = 0.0;
    let mut zero = true;
    let mut da_worst: f64 = 0.0;
    let mut w_worst: f64 = 0.0;
    for &p in &ps {
        let (c_lo, c_hi) = da_ellipticity_bounds(s.lambda, p);
        for m in &mats {
            zero &= eval_a(m, &ZERO3, p) == ZERO3;
            let xi = s.random_vec(&mut rng, 3.0);
            let h = s.random_vec(&mut rng, 1.0);
            let hh = dot3(&h, &h);
            let weight = 1.0 + norm3(&xi).powf(p - 2.0);
            let q = dot3(&h, &matvec(&eval_da(m, &xi, p), &h)) / (hh * weight);
            ell_worst = ell_worst.max(c_lo - q).max(q - c_hi);

            let da = eval_da(m, &xi, p);
            let step = 1e-5 * (1.0 + norm3(&xi));
            let scale = (0..d).flat_map(|i| (0..d).map(move |j| da[i][j].abs())).fold(0.0, f64::max);
            for j in 0..d {
                let e = scale3(step, &unit(j));
                let fp = eval_a(m, &add3(&xi, &e), p);
                let fm = eval_a(m, &sub3(&xi, &e), p);
                for i in 0..d {
                    let fd = (fp[i] - fm[i]) / (2.0 * step);
                    da_worst = da_worst.max((fd - da[i][j]).abs() / scale);
                }
            }

            let b = m[0][0];
            let mut bm = [[0.0; 3]; 3];
            for (i, row) in bm.iter_mut().enumerate().take(d) {
                row[i] = b;
            }
            let av = eval_a(&bm, &xi, p);
            let an = norm3(&av).max(1e-300);
            for j in 0..d {
                let e = scale3(step, &unit(j));
                let fd = (eval_w(b, &add3(&xi, &e), p) - eval_w(b, &sub3(&xi, &e), p)) / (2.0 * step);
                w_worst = w_worst.max((fd - av[j]).abs() / an);
            }
        }
    }

    let m0 = mats[0];
    let class = check_class_m(|x| eval_a(&m0, x, s.p), &ClassTest::new(d, s.p, 1.0, 2.0))?;

    Ok(vec![
        Check::at_most(
            "operator.da_ellipticity",
            ell_worst,
            1e-12,
            "excess of h.Da h / (|h|^2 (1+|xi|^(p-2))) outside [c, C]",
        ),
        Check::flag("operator.a_zero", zero, "a(x, 0) = 0 on every probe"),
        Check::at_most("operator.da_consistency", da_worst, 1e-6, "central differences of a against Da, relative"),
        Check::at_most("operator.potential_consistency", w_worst, 1e-6, "central differences of W against a, relative"),
        Check::flag(
            "operator.class_m",
            class.pass,
            format!("c_mono {:.3e}, c_upper {:.3e} on {} pairs", class.c_mono, class.c_upper, class.pairs_tested),
        ),
    ])
}

fn solver_checks(s: &Setup) -> Result<Vec<Check>> {
    let op = s.ens.operator(0)?;
    let problem = NonlinearProblem::corrector(&op, s.xi, s.sc);
    let (phi, stats) = solve_nonlinear(&problem)?;

    let energies: Vec<f64> = stats.history.iter().filter_map(|h| h.energy).collect();
    let e0 = discrete_energy(&op, &s.xi, None, &ScalarField::zeros(s.grid))?;
    let mut seq = vec![e0];
    seq.extend(&energies);
    let rise = seq.windows(2).map(|w| (w[1] - w[0]) / w[0].abs().max(1e-300)).fold(f64::NEG_INFINITY, f64::max);

    let (res, _) = nonlinear_residual(&op, &s.xi, None, &phi);
    let (res0, _) = nonlinear_residual(&op, &s.xi, None, &ScalarField::zeros(s.grid));
    let fresh = res.norm_l2() / res0.norm_l2();
    let cert = (fresh - stats.final_residual).abs() <= 1e-12 * fresh.max(1e-300) + 1e-300 && fresh <= s.sc.tol;

    let mut rng = s.rng(4);
    let mut start = random_scalar(s.grid, &mut rng);
    start.subtract_mean();
    let (phi2, _) = solve_nonlinear(&NonlinearProblem::corrector(&op, s.xi, s.sc).with_initial(&start))?;
    let mut diff = gradient(&phi2);
    diff.axpy(-1.0, &gradient(&phi));
    let total = {
        let mut t = gradient(&phi);
        for k in 0..s.grid.len() {
            t.set(k, &add3(&t.get(k), &s.xi));
        }
        t.norm_l2()
    };
    let unique = diff.norm_l2() / total;

    let pure = op.clone().pure_power();
    let b1 = solve_corrector(&pure, &s.xi, &s.sc)?;
    let b2 = solve_corrector(&pure, &scale3(2.0, &s.xi), &s.sc)?;
    let mut hd = b2.grad_phi.clone();
    hd.axpy(-2.0, &b1.grad_phi);
    let homog = hd.norm_l2() / (2.0 * b1.grad_phi.norm_l2()).max(1e-300);

    Ok(vec![
        Check::at_most("solver.energy_monotonicity", rise, 1e-12, "largest relative energy increase over accepted steps"),
        Check::flag(
            "solver.residual_certificate",
            cert,
            format!("fresh residual {fresh:.3e}, reported {:.3e}", stats.final_residual),
        ),
        Check::at_most("solver.uniqueness", unique, 10.0 * s.sc.tol, "zero and random starts, relative gradient gap"),
        Check::at_most("solver.homogeneity_scaling", homog, 10.0 * s.sc.tol, "|grad phi_2xi - 2 grad phi_xi| / |2 grad phi_xi|"),
    ])
}

fn corrector_checks(s: &Setup) -> Result<Vec<Check>> {
    let d = s.d;
    let count = s.samples(4, 2);
    let sc = s.sc;
    let xi = s.xi;
    let h = 1e-3;
    // per sample: grad means, flux residuals, skew, weighted energy, asymmetry, fd error
    let per = per_sample(count, |i| {
        let op = s.ens.operator(i)?;
        let b = solve_flux_corrector(solve_corrector(&op, &xi, &sc)?)?;
        let scale = 1.0 + norm3(&xi);
        let mut mean_grad = norm3(&b.grad_phi.mean()) / scale;
        let mut flux = b.flux_identity_residual.unwrap_or(f64::NAN);
        let mut skew = b.sigma.as_ref().map_or(0.0, |m| m.skew_defect());
        let mut lin_energy: f64 = 0.0;
        let mut t = [[0.0; 3]; 3];
        let mut fd = [[0.0; 3]; 3];
        for j in 0..d {
            let e = unit(j);
            let lin = solve_linearized(&op, &b, &e, &sc)?;
            mean_grad = mean_grad.max(norm3(&lin.grad_phi.mean()));
            flux = flux.max(lin.flux_identity_residual);
            skew = skew.max(lin.sigma.skew_defect());
            lin_energy = lin_energy.max(lin.weighted_energy / (1.0 + norm3(&xi).powf(s.p - 2.0)));
            let plus = solve_corrector_from(&op, &add3(&xi, &scale3(h, &e)), &sc, Some(&b.phi))?;
            let minus = solve_corrector_from(&op, &add3(&xi, &scale3(-h, &e)), &sc, Some(&b.phi))?;
            for a in 0..d {
                t[a][j] = lin.tangent_row[a];
                fd[a][j] = (plus.abar_sample[a] - minus.abar_sample[a]) / (2.0 * h);
            }
        }
        let tmax = (0..d).flat_map(|i| (0..d).map(move |j| t[i][j].abs())).fold(0.0, f64::max);
        let mut asym: f64 = 0.0;
        let mut fd_err: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                asym = asym.max((t[i][j] - t[j][i]).abs() / tmax);
                fd_err = fd_err.max((t[i][j] - fd[i][j]).abs() / t[i][j].abs().max(1e-6 * tmax));
            }
        }
        Ok([mean_grad, flux, skew, lin_energy, asym, fd_err])
    })?;
    let worst = |c: usize| per.iter().map(|r| r[c]).fold(0.0, f64::max);

    let mut xis = Vec::new();
    for a in [0.5, 1.0, 2.0] {
        let mut v = ZERO3;
        v[0] = a;
        xis.push(v);
        if d > 1 {
            let mut w = ZERO3;
            w[0] = 0.5 * a;
            w[1] = -a;
            xis.push(w);
        }
    }
    let bounds = corrector_bounds(&s.ens, &xis, count, &sc)?;

    Ok(vec![
        Check::at_most("corrector.zero_mean_gradients", worst(0), 1e-12, "|mean grad phi| and |mean grad phi_tilde|"),
        Check::flag(
            "corrector.energy_bound",
            bounds.finite && bounds.energy_constant.is_finite(),
            format!("C = {:.4e}", bounds.energy_constant),
        ),
        Check::at_most("corrector.flux_identity", worst(1), 10.0 * sc.tol, "flux identity for sigma and sigma_tilde"),
        Check::at_most("corrector.skew_symmetry", worst(2), 0.0, "largest |sigma_ij + sigma_ji|"),
        Check::flag(
            "corrector.weighted_linearized_energy",
            worst(3).is_finite(),
            format!("C = {:.4e}", worst(3)),
        ),
        Check::record("corrector.tangent_symmetry", worst(4), "largest |T_ij - T_ji| / max|T|"),
        Check::flag(
            "corrector.lipschitz_differences",
            bounds.finite && bounds.lipschitz_constant.is_finite(),
            format!("C = {:.4e}", bounds.lipschitz_constant),
        ),
        Check::at_most("corrector.fd_tangent", worst(5), 1e-3, "componentwise relative error, h = 1e-3"),
    ])
}

fn diagnostics_checks(s: &Setup) -> Result<Vec<Check>> {
    let d = s.d;
    let g = s.grid;
    let op = s.ens.operator(0)?;
    let b = solve_corrector(&op, &s.xi, &s.sc)?;
    let quarter = 0.25 * g.length();
    let r0 = g.spacing().max(quarter / 16.0);
    let radii: Vec<f64> = (0..5).map(|i| r0 * (quarter / r0).powf(i as f64 / 4.0)).collect();
    let cacc = caccioppoli_constant(&b, &radii[..radii.len() - 1])?;
    let hole = holefilling_fit(&b, &radii)?;

    let c1 = calibrate_c1(&[&b])?;
    let sw = sandwich_check(&b, c1)?;
    let r = meyers_radius(&b, c1)?;
    let in_range = r.values.values().iter().all(|v| *v >= 1.0 && *v <= g.length());
    let lip = lipschitz_excess(&r.values, ELL);
    let avg = average_control_constant(&b, &r.values, hole.delta.clamp(0.0, d as f64), &radii)?;

    let clt = clt_check(s)?;
    let resc = rescaling_invariance(&op, &s.xi, 0.3, &s.sc)?;
    let resc_err = resc.phi_difference.max(resc.abar_relative_error);

    Ok(vec![
        Check::flag(
            "diagnostics.caccioppoli",
            cacc.constant.is_finite() && cacc.constant > 0.0,
            format!("C = {:.4e}", cacc.constant),
        ),
        Check::flag(
            "diagnostics.holefilling",
            hole.exponent.is_finite() && hole.exponent <= d as f64 + 0.1,
            format!("decay exponent {:.4}", hole.exponent),
        ),
        Check::at_most(
            "diagnostics.meyers_sandwich",
            (sw.lower_violations + sw.upper_violations) as f64,
            0.0,
            format!("c1 = {c1:.4e}"),
        ),
        Check::at_most(
            "diagnostics.radius_lipschitz",
            if in_range { lip } else { f64::INFINITY },
            2.0 * g.spacing(),
            "values in [1, L]; largest |r(x) - r(y)| - ell |x - y|",
        ),
        Check::flag("diagnostics.average_control", avg.is_finite(), format!("C = {avg:.4e}")),
        clt,
        Check::at_most("diagnostics.rescaling_invariance", resc_err, 10.0 * s.sc.tol, "s = 0.3"),
    ])
}

/// CLT slope of ball averages of `grad phi` on a dedicated short-range ensemble.
fn clt_check(s: &Setup) -> Result<Check> {
    let d = s.d;
    if d == 3 {
        return Ok(Check::record("diagnostics.clt_slope", f64::NAN, "asserted for d in {1, 2} only"));
    }
    let n = 64;
    let grid = Grid::new(d, n as f64, n)?;
    let recipe = CoefficientRecipe::isotropic_tanh(s.lambda, 1.0);
    let ens = Ensemble::random(grid, recipe, s.p, s.opts.seed ^ 0x5eed)?;
    let count = s.samples(200, 96);
    let rep = clt_scaling(&ens, &unit(0), Quantity::GradPhi, &[2.0, 4.0, 8.0, 16.0], count, &s.sc)?;
    Ok(match rep.fit {
        Some(fit) => Check::at_most(
            "diagnostics.clt_slope",
            (fit.slope + d as f64).abs(),
            0.5,
            format!("slope {:.3}, 95% CI ({:.3}, {:.3}), {count} samples", fit.slope, fit.ci95.0, fit.ci95.1),
        ),
        None => Check::flag("diagnostics.clt_slope", false, "variances vanish"),
    })
}

fn twoscale_checks(s: &Setup) -> Result<Vec<Check>> {
    let d = s.d;
    let (n, eps) = (64, vec![0.25, 0.125]);
    let part = build_partition(Grid::new(d, 1.0, n)?, eps[1])?;
    let c = &part.constants;
    let part_ok = c.sum_error < 1e-12
        && c.min_value >= 0.0
        && c.max_value <= 1.0 + 1e-15
        && c.inner_error < 1e-12
        && c.support_leak == 0.0
        && c.c_grad.is_finite();

    let study = RateStudy { d, mode: CoefficientMode::Periodic, ..RateStudy::periodic(n, eps) };
    let rep = run_rate_study(&study)?;
    Ok(vec![
        Check::flag(
            "twoscale.energy_estimate",
            rep.energy_checks_pass,
            format!("largest lhs/rhs {:.3}", rep.rows.iter().map(|r| r.energy_lhs / r.energy_rhs).fold(0.0, f64::max)),
        ),
        Check::flag("twoscale.partition_invariants", part_ok, format!("{c:?}")),
        Check::flag("twoscale.delta_equals_eps", rep.rows.iter().all(|r| r.delta == r.epsilon), "delta = eps on every run"),
        Check::at_least("twoscale.periodic_rate", rep.error_fit.slope, 0.8, format!("errors {:?}", rep.mean_errors)),
    ])
}

/// The same corrector run on 1 and 4 threads must give identical tables.
fn reproducibility(s: &Setup) -> Result<Check> {
    let text = format!(
        r#"{{"study": "corrector", "grid": {{"d": {d}, "L": {l}, "N": {n}}}, "operator": {{"p": {p}, "lambda": {lam}}},
            "recipe": {{"ell_c": {ell}}}, "params": {{"sample_count": 4}}, "seed": {seed}}}"#,
        d = s.d,
        l = s.grid.length(),
        n = s.grid.points_per_dim(),
        p = s.p,
        lam = s.lambda,
        ell = s.recipe.covariance.ell_c(),
        seed = s.opts.seed,
    );
    let cfg = ExperimentConfig::from_json(&text)?;
    let base = std::env::temp_dir().join(format!("monohom-verify-{}-{}", std::process::id(), s.d));
    let mut tables = Vec::new();
    for threads in [1, 4] {
        let dir = base.join(format!("t{threads}"));
        runner::run(&cfg, &dir, Threads { count: threads, source: "verify" });
        tables.push(fs::read(dir.join("tables/corrector.csv")));
    }
    let _ = fs::remove_dir_all(&base);
    let same = match (&tables[0], &tables[1]) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    Ok(Check::flag("cli.reproducibility", same, "tables/corrector.csv identical for 1 and 4 threads"))
}

/// Runs the suite for each dimension, prefixing ids with `d<k>/`.
pub fn verify_dimensions(dims: &[usize], opts: VerifyOptions) -> Result<(Vec<Check>, Vec<(usize, f64)>)> {
    let mut all = Vec::new();
    let mut times = Vec::new();
    for &d in dims {
        let t = Instant::now();
        let checks = checks_for(d, opts)?;
        times.push((d, t.elapsed().as_secs_f64()));
        all.extend(checks.into_iter().map(|mut c| {
            c.id = format!("d{d}/{}", c.id);
            c
        }));
    }
    Ok((all, times))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completeness_detects_gaps_and_repeats() {
        let all: Vec<Check> = INVARIANTS[..INVARIANTS.len() - 1].iter().map(|id| Check::flag(id, true, "")).collect();
        assert!(completeness(&all).pass);
        assert!(!completeness(&all[1..]).pass);
        let mut twice = all.clone();
        twice.push(all[0].clone());
        assert!(!completeness(&twice).pass);
    }

    #[test]
    #[ignore]
    fn suite_timing() {
        for d in [1, 2, 3] {
            let t = Instant::now();
            let checks = checks_for(d, VerifyOptions::default()).unwrap();
            for c in &checks {
                println!("d{d} {:<40} {} {:e} {}", c.id, if c.fails() { "FAIL" } else { "ok" }, c.value, c.detail);
            }
            println!("d{d} took {:.1}s", t.elapsed().as_secs_f64());
        }
    }
}
