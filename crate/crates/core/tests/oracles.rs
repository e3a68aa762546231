use std::f64::consts::PI;

use monohom::corrector::{flux_identity_residual, solve_corrector, solve_flux_corrector};
use monohom::grid::{identity, unit, Grid, Mat3, MatrixField, Vec3, ZERO33};
use monohom::operator::OperatorSpec;
use monohom::solver::SolverConfig;

fn cfg() -> SolverConfig {
    SolverConfig::with_tol(1e-10)
}

fn law(t: f64, p: f64) -> f64 {
    (1.0 + t.abs().powf(p - 2.0)) * t
}

/// Root of an increasing function on `[lo, hi]`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One-dimensional effective flux: `q` constant, `mean eta = xi`,
/// `a_k (1 + |eta_k|^{p-2}) eta_k = q` at each lattice point.
fn flux_1d(a: &[f64], xi: f64, p: f64) -> f64 {
    let eta = |q: f64, ak: f64| bisect(|t| ak * law(t, p) - q, -1e3, 1e3);
    let mean = |q: f64| a.iter().map(|&ak| eta(q, ak)).sum::<f64>() / a.len() as f64;
    bisect(|q| mean(q) - xi, -1e4, 1e4)
}

fn laminate(g: Grid, f: impl Fn(f64) -> f64) -> MatrixField {
    let d = g.dim();
    MatrixField::from_fn(g, |x| {
        let mut m = ZERO33;
        for (i, row) in m.iter_mut().enumerate().take(d) {
            row[i] = f(x[0]);
        }
        m
    })
}

fn cosine(l: f64) -> impl Fn(f64) -> f64 {
    move |x| (2.0 + (2.0 * PI * x / l).cos()) / 3.0
}

#[test]
fn one_dimensional_flux_matches_scalar_inversion() {
    let l = 1.0;
    let g = Grid::new(1, l, 1024).unwrap();
    let coef = laminate(g, cosine(l));
    let a: Vec<f64> = coef.entry(0, 0).to_vec();
    for p in [2.0, 3.0] {
        let op = OperatorSpec::new(p, 0.25, coef.clone()).unwrap();
        for xi in [0.5, 1.0, -2.0] {
            let b = solve_corrector(&op, &[xi, 0.0, 0.0], &cfg()).unwrap();
            let want = flux_1d(&a, xi, p);
            let err = (b.abar_sample[0] - want).abs() / want.abs();
            assert!(err < 1e-6, "p = {p}, xi = {xi}: {} vs {want}", b.abar_sample[0]);
        }
    }
}

#[test]
fn linear_one_dimensional_flux_is_the_harmonic_mean() {
    // mean of 3 / (2 + cos) is sqrt 3
    let harmonic = 1.0 / 3f64.sqrt();
    let g = Grid::new(1, 1.0, 1024).unwrap();
    let op = OperatorSpec::new(2.0, 0.25, laminate(g, cosine(1.0))).unwrap();
    let b = solve_corrector(&op, &unit(0), &cfg()).unwrap();
    assert!((b.abar_sample[0] - 2.0 * harmonic).abs() < 1e-8 * 2.0 * harmonic, "{}", b.abar_sample[0]);
}

#[test]
fn laminate_is_harmonic_across_and_arithmetic_along_layers() {
    let l = 8.0;
    let g = Grid::new(2, l, 32).unwrap();
    let coef = laminate(g, cosine(l));
    let layer: Vec<f64> = (0..32).map(|i| coef.entry(0, 0)[g.flat(&[i, 0])]).collect();
    let p = 3.0;
    let op = OperatorSpec::new(p, 0.25, coef).unwrap();

    let across = solve_corrector(&op, &unit(0), &cfg()).unwrap();
    let want = flux_1d(&layer, 1.0, p);
    assert!((across.abar_sample[0] - want).abs() < 1e-9 * want);
    assert!(across.abar_sample[1].abs() < 1e-12);

    let along = solve_corrector(&op, &unit(1), &cfg()).unwrap();
    assert!(along.grad_phi.max_abs() < 1e-10);
    let arithmetic = layer.iter().sum::<f64>() / 32.0;
    assert!((along.abar_sample[1] - 2.0 * arithmetic).abs() < 1e-10);
}

#[test]
fn constant_coefficients_have_trivial_correctors() {
    for d in 1..=3 {
        let n = if d == 3 { 8 } else { 16 };
        let g = Grid::new(d, 4.0, n).unwrap();
        let mut m: Mat3 = identity(d);
        m[0][0] = 0.6;
        for p in [2.0, 3.0, 4.0] {
            let op = OperatorSpec::constant(g, p, 0.25, &m).unwrap();
            for s in [1.0, 2.0] {
                let xi: Vec3 = [s, 0.0, 0.0];
                let b = solve_corrector(&op, &xi, &cfg()).unwrap();
                assert!(b.grad_phi.max_abs() < 1e-10);
                let want = 0.6 * law(s, p);
                assert!((b.abar_sample[0] - want).abs() < 1e-10 * want, "d = {d}, p = {p}");
            }
        }
    }
}

#[test]
fn flux_corrector_of_a_laminate() {
    let g = Grid::new(2, 8.0, 32).unwrap();
    let op = OperatorSpec::new(3.0, 0.25, laminate(g, cosine(8.0))).unwrap();
    let b = solve_flux_corrector(solve_corrector(&op, &unit(1), &cfg()).unwrap()).unwrap();
    let sigma = b.sigma.as_ref().unwrap();
    assert!(sigma.is_skew());
    assert!(flux_identity_residual(sigma, &b.flux) < 1e-10);
}

#[test]
fn lattice_shift_leaves_the_flux_unchanged() {
    let g = Grid::new(2, 8.0, 16).unwrap();
    let f = |x: f64, y: f64| 0.6 + 0.3 * (2.0 * PI * x / 8.0).sin() * (2.0 * PI * y / 8.0).cos();
    let field = |shift: f64| {
        MatrixField::from_fn(g, move |x| {
            let mut m = identity(2);
            m[0][0] = f(x[0] + shift, x[1]);
            m[1][1] = f(x[0] + shift, x[1]);
            m
        })
    };
    let xi = [1.0, 0.5, 0.0];
    let a = solve_corrector(&OperatorSpec::new(3.0, 0.25, field(0.0)).unwrap(), &xi, &cfg()).unwrap();
    let b = solve_corrector(&OperatorSpec::new(3.0, 0.25, field(3.0 * g.spacing())).unwrap(), &xi, &cfg()).unwrap();
    for i in 0..2 {
        assert!((a.abar_sample[i] - b.abar_sample[i]).abs() < 1e-10);
    }
}
