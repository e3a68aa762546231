//! Strong monotonicity of `a_bar` and the radial energy ODE in the
//! isotropic case.

use serde::{Deserialize, Serialize};

use crate::corrector::{per_sample, solve_corrector, CorrectorBundle, Ensemble};
use crate::error::{invalid, Result};
use crate::grid::{add3, dot3, norm3, sub3, unit, Vec3};
use crate::operator::OperatorSpec;
use crate::solver::{nonlinear_residual, SolverConfig};
use crate::stats::{mean_stderr, t_quantile};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairRatio {
    pub xi1: Vec3,
    pub xi2: Vec3,
    pub ratio: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub p: f64,
    pub isotropic: bool,
    pub sample_count: usize,
    pub xis: Vec<Vec3>,
    pub abar: Vec<Vec3>,
    pub pairs: Vec<PairRatio>,
    /// Smallest mean ratio over pairs.
    pub c_estimate: f64,
    pub c_stderr: f64,
    /// Smallest lower CI bound over pairs.
    pub c_lower: f64,
    pub witness: (Vec3, Vec3),
    /// Largest `|a_bar(xi1) - a_bar(xi2)| / ((1+|xi1|^{p-2}+|xi2|^{p-2}) |xi1 - xi2|)`.
    pub lipschitz: f64,
}

fn weight(x1: &Vec3, x2: &Vec3, p: f64) -> f64 {
    1.0 + norm3(x1).powf(p - 2.0) + norm3(x2).powf(p - 2.0)
}

/// Lower monotonicity ratio of a map at a pair of slopes.
pub fn monotonicity_ratio(a1: &Vec3, a2: &Vec3, x1: &Vec3, x2: &Vec3, p: f64) -> f64 {
    let dx = sub3(x1, x2);
    dot3(&sub3(a1, a2), &dx) / (weight(x1, x2, p) * dot3(&dx, &dx))
}

fn ci(mean: f64, se: f64, n: usize) -> (f64, f64) {
    if n < 2 {
        return (mean, mean);
    }
    let q = t_quantile(0.975, (n - 1) as f64);
    (mean - q * se, mean + q * se)
}

/// Estimate `a_bar` on `xis` with common random numbers and evaluate the
/// monotonicity ratio on every pair.
pub fn verify_strong_monotonicity(
    ens: &Ensemble,
    xis: &[Vec3],
    sample_count: usize,
    cfg: &SolverConfig,
) -> Result<MonotonicityReport> {
    if xis.len() < 2 {
        return Err(invalid("need at least two slopes"));
    }
    for (i, a) in xis.iter().enumerate() {
        if xis[..i].iter().any(|b| norm3(&sub3(a, b)) == 0.0) {
            return Err(invalid(format!("repeated slope {a:?}")));
        }
    }
    let p = ens.p();
    let count = if ens.is_deterministic() { 1 } else { sample_count.max(1) };
    let per: Vec<Vec<Vec3>> = per_sample(count, |i| {
        let op = ens.operator(i)?;
        xis.iter().map(|xi| Ok(solve_corrector(&op, xi, cfg)?.abar_sample)).collect()
    })?;
    let d = ens.grid().dim();
    let abar: Vec<Vec3> = (0..xis.len())
        .map(|j| {
            let mut m = [0.0; 3];
            for (c, v) in m.iter_mut().enumerate().take(d) {
                *v = per.iter().map(|s| s[j][c]).sum::<f64>() / count as f64;
            }
            m
        })
        .collect();
    let mut pairs = Vec::new();
    let mut lipschitz = 0.0f64;
    for j in 0..xis.len() {
        for k in (j + 1)..xis.len() {
            let rs: Vec<f64> = per.iter().map(|s| monotonicity_ratio(&s[j], &s[k], &xis[j], &xis[k], p)).collect();
            let (ratio, stderr) = mean_stderr(&rs);
            pairs.push(PairRatio { xi1: xis[j], xi2: xis[k], ratio, stderr, ci95: ci(ratio, stderr, count) });
            let w = weight(&xis[j], &xis[k], p) * norm3(&sub3(&xis[j], &xis[k]));
            lipschitz = lipschitz.max(norm3(&sub3(&abar[j], &abar[k])) / w);
        }
    }
    let worst = pairs
        .iter()
        .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .expect("at least one pair");
    let c_lower = pairs.iter().map(|r| r.ci95.0).fold(f64::INFINITY, f64::min);
    let isotropic = match ens {
        Ensemble::Random { recipe, .. } => recipe.isotropic,
        Ensemble::Fixed(op) => op.is_scalar(),
    };
    Ok(MonotonicityReport {
        p,
        isotropic,
        sample_count: count,
        xis: xis.to_vec(),
        c_estimate: worst.ratio,
        c_stderr: worst.stderr,
        witness: (worst.xi1, worst.xi2),
        c_lower,
        abar,
        pairs,
        lipschitz,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialPoint {
    pub t: f64,
    pub zeta: f64,
    pub zeta_prime: f64,
    pub h: f64,
    /// Mean of `t zeta' - p zeta - h` over samples.
    pub residual: f64,
    pub stderr: f64,
    /// Discretization floor from the final Newton residual.
    pub floor: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialReport {
    pub p: f64,
    pub sample_count: usize,
    pub points: Vec<RadialPoint>,
    /// `(t, zeta'')` by finite differences of `zeta'` at interior points.
    pub zeta_second: Vec<(f64, f64)>,
    /// Smallest `zeta'' / (1 + t^p)^{(p-2)/p}`.
    pub convexity_constant: f64,
    pub pass: bool,
}

struct RadialSample {
    zeta: f64,
    zeta_prime: f64,
    h: f64,
    floor: f64,
}

fn radial_sample(op: &OperatorSpec, bundle: &CorrectorBundle, e: &Vec3) -> Result<RadialSample> {
    let grid = *op.grid();
    let n = grid.len() as f64;
    let p = op.p();
    let b = op.coefficient().entry(0, 0);
    let mut zeta = 0.0;
    let mut h = 0.0;
    for k in 0..grid.len() {
        let total = add3(&bundle.xi, &bundle.grad_phi.get(k));
        zeta += op.w_at(k, &total)?;
        h += b[k] * dot3(&total, &total);
    }
    let (div, _) = nonlinear_residual(op, &bundle.xi, None, &bundle.phi);
    Ok(RadialSample {
        zeta: zeta / n,
        zeta_prime: dot3(&bundle.abar_sample, e),
        h: (1.0 - 0.5 * p) * op.law().offset() * h / n,
        floor: bundle.phi.norm_l2() * div.norm_l2() / n,
    })
}

/// Check `t zeta'(t) - p zeta(t) = h(t)` along the ray `t e_1`, with
/// `zeta(t)` the homogenized energy, and estimate `zeta''`.
pub fn radial_profile_check(ens: &Ensemble, ts: &[f64], sample_count: usize, cfg: &SolverConfig) -> Result<RadialReport> {
    match ens {
        Ensemble::Random { recipe, .. } if !recipe.isotropic || !recipe.profile.is_scalar() => {
            return Err(invalid("radial profile check requires an isotropic recipe"))
        }
        Ensemble::Fixed(op) if !op.is_scalar() => {
            return Err(invalid("radial profile check requires a scalar coefficient"))
        }
        _ => {}
    }
    if ts.len() < 5 {
        return Err(invalid("need at least five values of t"));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) || !(ts[0] > 0.0) {
        return Err(invalid("t grid must be positive and increasing"));
    }
    let p = ens.p();
    let e = unit(0);
    let count = if ens.is_deterministic() { 1 } else { sample_count.max(1) };
    let per: Vec<Vec<RadialSample>> = per_sample(count, |i| {
        let op = ens.operator(i)?;
        ts.iter()
            .map(|&t| {
                let xi = [t, 0.0, 0.0];
                let bundle = solve_corrector(&op, &xi, cfg)?;
                radial_sample(&op, &bundle, &e)
            })
            .collect()
    })?;
    let points: Vec<RadialPoint> = ts
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let col = |f: &dyn Fn(&RadialSample) -> f64| per.iter().map(|s| f(&s[j])).collect::<Vec<f64>>();
            let res = col(&|s| t * s.zeta_prime - p * s.zeta - s.h);
            let (residual, stderr) = mean_stderr(&res);
            // Newton residual bound plus rounding of the three terms
            let floor = col(&|s| s.floor + 1e-12 * (t * s.zeta_prime.abs() + p * s.zeta.abs() + s.h.abs()))
                .into_iter()
                .fold(0.0, f64::max);
            let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            RadialPoint {
                t,
                zeta: mean(col(&|s| s.zeta)),
                zeta_prime: mean(col(&|s| s.zeta_prime)),
                h: mean(col(&|s| s.h)),
                residual,
                stderr,
                floor,
                pass: residual.abs() <= 3.0 * stderr + floor,
            }
        })
        .collect();
    let zeta_second: Vec<(f64, f64)> = (1..ts.len() - 1)
        .map(|j| {
            let dz = points[j + 1].zeta_prime - points[j - 1].zeta_prime;
            (ts[j], dz / (ts[j + 1] - ts[j - 1]))
        })
        .collect();
    let convexity_constant = zeta_second
        .iter()
        .map(|&(t, z2)| z2 / (1.0 + t.powf(p)).powf((p - 2.0) / p))
        .fold(f64::INFINITY, f64::min);
    Ok(RadialReport {
        p,
        sample_count: count,
        pass: points.iter().all(|q| q.pass),
        points,
        zeta_second,
        convexity_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::CoefficientRecipe;
    use crate::grid::{identity, Grid};

    fn constant_ensemble(d: usize, p: f64, b: f64) -> Ensemble {
        let g = Grid::new(d, 8.0, 16).unwrap();
        let mut m = identity(d);
        for (i, row) in m.iter_mut().enumerate().take(d) {
            row[i] *= b;
        }
        Ensemble::Fixed(OperatorSpec::constant(g, p, 0.5, &m).unwrap())
    }

    fn xi_grid() -> Vec<Vec3> {
        vec![[0.5, 0.0, 0.0], [1.0, 1.0, 0.0], [-2.0, 0.5, 0.0], [0.0, 3.0, 0.0], [2.5, -2.5, 0.0]]
    }

    #[test]
    fn constant_isotropic_ratios_are_exact() {
        let b = 0.7;
        let p = 4.0;
        let ens = constant_ensemble(2, p, b);
        let rep = verify_strong_monotonicity(&ens, &xi_grid(), 3, &SolverConfig::default()).unwrap();
        assert_eq!(rep.sample_count, 1);
        let law = |x: &Vec3| {
            let s = b * (1.0 + dot3(x, x));
            [s * x[0], s * x[1], 0.0]
        };
        for pr in &rep.pairs {
            let exact = monotonicity_ratio(&law(&pr.xi1), &law(&pr.xi2), &pr.xi1, &pr.xi2, p);
            assert!((pr.ratio - exact).abs() < 1e-9);
            // |xi|^{p-2} xi is monotone with constant 1/2 against this weight
            assert!(pr.ratio >= 0.5 * b - 1e-12);
        }
        assert!(rep.c_estimate > 0.0 && rep.lipschitz.is_finite());
    }

    #[test]
    fn quadratic_case_is_elliptic() {
        let g = Grid::new(2, 16.0, 32).unwrap();
        let lambda = 0.3;
        let ens = Ensemble::random(g, CoefficientRecipe::isotropic_tanh(lambda, 1.0), 2.0, 11).unwrap();
        let rep = verify_strong_monotonicity(&ens, &xi_grid()[..3], 4, &SolverConfig::default()).unwrap();
        for pr in &rep.pairs {
            assert!(pr.ratio >= 2.0 * lambda / 3.0 - 3.0 * pr.stderr, "{pr:?}");
        }
    }

    #[test]
    fn radial_identity_for_constant_coefficient() {
        let ens = constant_ensemble(2, 3.0, 0.6);
        let ts = [0.5, 1.0, 1.5, 2.0, 4.0];
        let rep = radial_profile_check(&ens, &ts, 5, &SolverConfig::default()).unwrap();
        assert!(rep.pass);
        for q in &rep.points {
            assert!(q.residual.abs() <= 1e-6);
        }
        assert!(rep.convexity_constant > 0.0);
    }

    #[test]
    fn quadratic_energy_along_ray() {
        let g = Grid::new(2, 16.0, 32).unwrap();
        let ens = Ensemble::random(g, CoefficientRecipe::isotropic_tanh(0.25, 1.0), 2.0, 3).unwrap();
        let ts = [0.5, 1.0, 2.0, 3.0, 4.0];
        let rep = radial_profile_check(&ens, &ts, 2, &SolverConfig::default()).unwrap();
        let c = rep.points[0].zeta / (0.25);
        for q in &rep.points {
            assert!((q.zeta / (q.t * q.t) - c).abs() < 1e-8 * c);
        }
        // zeta'' is the constant 2c, so the convexity ratio equals it
        assert!((rep.convexity_constant - 2.0 * c).abs() < 1e-6 * c);
        assert!(rep.pass);
    }

    #[test]
    fn rejects_anisotropic_recipe() {
        let g = Grid::new(2, 16.0, 16).unwrap();
        let mut r = CoefficientRecipe::isotropic_tanh(0.25, 1.0);
        r.isotropic = false;
        let ens = Ensemble::random(g, r, 3.0, 1).unwrap();
        assert!(radial_profile_check(&ens, &[1.0, 2.0, 3.0, 4.0, 5.0], 2, &SolverConfig::default()).is_err());
    }
}
