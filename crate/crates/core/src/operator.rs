//! Point-wise monotone maps `a(x, xi) = A(x) (1 + |xi|^{p-2}) xi`, their
//! derivatives and potentials, and sampled membership tests for the
//! classes `M(p, alpha, beta, C)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::check_admissible_matrix;
use crate::grid::{dot3, matvec, norm3, sub3, Grid, Mat3, MatrixField, Vec3, ZERO3, ZERO33};

/// `t^e` with `0^0 = 1` and `0^e = 0` for `e > 0`.
#[inline]
fn pow_nonneg(t: f64, e: f64) -> f64 {
    if t == 0.0 {
        if e == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        t.powf(e)
    }
}

/// Which scalar law multiplies `A xi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    /// `1 + |xi|^{p-2}`
    Standard,
    /// `|xi|^{p-2}` alone, the degenerate p-Laplacian. Diagnostic only.
    PurePower,
}

impl Law {
    #[inline]
    pub fn offset(self) -> f64 {
        match self {
            Law::Standard => 1.0,
            Law::PurePower => 0.0,
        }
    }
}

/// `s(|xi|) xi` with `s = offset + |xi|^{p-2}`; the flux for `A = Id`.
#[inline]
pub fn scalar_law(xi: &Vec3, p: f64, law: Law) -> Vec3 {
    let s = law.offset() + pow_nonneg(norm3(xi), p - 2.0);
    [s * xi[0], s * xi[1], s * xi[2]]
}

/// `a = A (1 + |xi|^{p-2}) xi`.
pub fn eval_a(a_x: &Mat3, xi: &Vec3, p: f64) -> Vec3 {
    eval_a_law(a_x, xi, p, Law::Standard)
}

pub fn eval_a_law(a_x: &Mat3, xi: &Vec3, p: f64, law: Law) -> Vec3 {
    matvec(a_x, &scalar_law(xi, p, law))
}

/// `Da = A [(1 + |xi|^{p-2}) Id + (p-2) |xi|^{p-2} xi_hat (x) xi_hat]`.
pub fn eval_da(a_x: &Mat3, xi: &Vec3, p: f64) -> Mat3 {
    eval_da_law(a_x, xi, p, Law::Standard)
}

pub fn eval_da_law(a_x: &Mat3, xi: &Vec3, p: f64, law: Law) -> Mat3 {
    let t = norm3(xi);
    let tp = pow_nonneg(t, p - 2.0);
    let diag = law.offset() + tp;
    // (p-2)|xi|^{p-4} xi (x) xi, vanishing at xi = 0 and for p = 2
    let rank_one = if t == 0.0 || p == 2.0 { 0.0 } else { (p - 2.0) * tp / (t * t) };
    let mut inner = ZERO33;
    for i in 0..3 {
        for j in 0..3 {
            inner[i][j] = rank_one * xi[i] * xi[j];
        }
        inner[i][i] += diag;
    }
    let mut out = ZERO33;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a_x[i][k] * inner[k][j]).sum();
        }
    }
    out
}

/// Potential `b (|xi|^2 / 2 + |xi|^p / p)` of the scalar-coefficient map.
pub fn eval_w(b_x: f64, xi: &Vec3, p: f64) -> f64 {
    eval_w_law(b_x, xi, p, Law::Standard)
}

pub fn eval_w_law(b_x: f64, xi: &Vec3, p: f64, law: Law) -> f64 {
    let t = norm3(xi);
    b_x * (law.offset() * 0.5 * t * t + pow_nonneg(t, p) / p)
}

/// Bounds `c, C` with `c |h|^2 (1 + |xi|^{p-2}) <= h.Da h <= C |h|^2 (1 + |xi|^{p-2})`
/// for scalar coefficients with values in `[lambda, 1]`.
pub fn da_ellipticity_bounds(lambda: f64, p: f64) -> (f64, f64) {
    (lambda, p - 1.0)
}

/// Exponent and coefficient field of the operator.
#[derive(Clone, Debug)]
pub struct OperatorSpec {
    p: f64,
    lambda: f64,
    coef: MatrixField,
    law: Law,
    scalar: bool,
    symmetric: bool,
}

impl OperatorSpec {
    /// Validates `p >= 2`, `lambda` in `(0, 1]` and the ellipticity of
    /// every point-wise matrix.
    pub fn new(p: f64, lambda: f64, coef: MatrixField) -> Result<Self> {
        if !(p.is_finite() && p >= 2.0) {
            return Err(invalid(format!("growth exponent must satisfy p >= 2, got {p}")));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Inadmissible(format!("lambda must lie in (0, 1], got {lambda}")));
        }
        let d = coef.grid().dim();
        for k in 0..coef.grid().len() {
            check_admissible_matrix(&coef.get(k), d, lambda, 1e-10)
                .map_err(|e| Error::Inadmissible(format!("lattice point {k}: {e}")))?;
        }
        let scalar = coef.is_scalar();
        let symmetric = coef.is_symmetric(0.0);
        Ok(Self { p, lambda, coef, law: Law::Standard, scalar, symmetric })
    }

    /// `A = M` everywhere.
    pub fn constant(grid: Grid, p: f64, lambda: f64, m: &Mat3) -> Result<Self> {
        Self::new(p, lambda, MatrixField::constant(grid, m))
    }

    /// The same coefficient with the degenerate law `A |xi|^{p-2} xi`.
    pub fn pure_power(mut self) -> Self {
        self.law = Law::PurePower;
        self
    }

    /// The operator with `A` replaced by `s A`, `0 < s <= 1`.
    pub fn rescaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(invalid(format!("rescaling factor must lie in (0, 1], got {s}")));
        }
        let mut coef = self.coef.clone();
        coef.scale(s);
        let mut out = Self::new(self.p, self.lambda * s, coef)?;
        out.law = self.law;
        Ok(out)
    }

    #[inline]
    pub fn p(&self) -> f64 {
        self.p
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn law(&self) -> Law {
        self.law
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        self.coef.grid()
    }

    #[inline]
    pub fn coefficient(&self) -> &MatrixField {
        &self.coef
    }

    /// True when `A = b Id` point-wise, so a potential exists.
    #[inline]
    pub fn is_scalar(&self) -> bool {
        self.scalar
    }

    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    #[inline]
    pub fn a_at(&self, k: usize, xi: &Vec3) -> Vec3 {
        eval_a_law(&self.coef.get(k), xi, self.p, self.law)
    }

    #[inline]
    pub fn da_at(&self, k: usize, xi: &Vec3) -> Mat3 {
        eval_da_law(&self.coef.get(k), xi, self.p, self.law)
    }

    /// Potential at lattice point `k`; only defined for scalar `A`.
    pub fn w_at(&self, k: usize, xi: &Vec3) -> Result<f64> {
        if !self.scalar {
            return Err(invalid("potential requires a scalar coefficient"));
        }
        Ok(eval_w_law(self.coef.entry(0, 0)[k], xi, self.p, self.law))
    }
}

/// Measured constants of a sampled class test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassReport {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub c_upper: f64,
    pub c_mono: f64,
    pub pass: bool,
    pub pairs_tested: usize,
    pub witness_upper: (Vec3, Vec3),
    pub witness_mono: (Vec3, Vec3),
}

/// Parameters of [`check_class_m`].
#[derive(Clone, Copy, Debug)]
pub struct ClassTest {
    pub d: usize,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sample_count: usize,
    pub radius: f64,
    /// `c_mono` at or below this value counts as degenerate.
    pub mono_floor: f64,
}

impl ClassTest {
    pub fn new(d: usize, p: f64, alpha: f64, beta: f64) -> Self {
        Self { d, p, alpha, beta, sample_count: 4096, radius: 10.0, mono_floor: 1e-6 }
    }
}

const PRIMES: [u64; 6] = [2, 3, 5, 7, 11, 13];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Halton pairs in the ball of `radius`, then near-zero and collinear pairs.
fn class_pairs(t: &ClassTest) -> Vec<(Vec3, Vec3)> {
    let d = t.d;
    let mut pairs = Vec::with_capacity(t.sample_count + 64);
    let mut i = 1u64;
    let in_ball = |v: &Vec3| norm3(v) <= t.radius;
    while pairs.len() < t.sample_count {
        let mut x = ZERO3;
        let mut y = ZERO3;
        for a in 0..d {
            x[a] = (2.0 * radical_inverse(i, PRIMES[a]) - 1.0) * t.radius;
            y[a] = (2.0 * radical_inverse(i, PRIMES[d + a]) - 1.0) * t.radius;
        }
        i += 1;
        if in_ball(&x) && in_ball(&y) {
            pairs.push((x, y));
        }
    }
    let mut dir = ZERO3;
    dir[0] = 1.0;
    if d > 1 {
        dir[1] = 0.5;
    }
    for e in [-6, -5, -4, -3, -2, -1] {
        let s = 10f64.powi(e);
        let small = [s * dir[0], s * dir[1], 0.0];
        pairs.push((small, ZERO3));
        pairs.push((small, [-small[0], -small[1], 0.0]));
        pairs.push((small, [0.5 * small[0], 0.5 * small[1], 0.0]));
        for scale in [1.0, 3.0, t.radius / norm3(&dir)] {
            let x = [scale * dir[0], scale * dir[1], 0.0];
            pairs.push((x, [(1.0 + s) * x[0], (1.0 + s) * x[1], 0.0]));
        }
    }
    pairs
}

/// Sampled estimate of the continuity and monotonicity constants of `map`.
pub fn check_class_m(map: impl Fn(&Vec3) -> Vec3, test: &ClassTest) -> Result<ClassReport> {
    if test.sample_count < 1000 {
        return Err(invalid("class test needs at least 1000 sampled pairs"));
    }
    if !(1..=3).contains(&test.d) {
        return Err(invalid("dimension outside {1, 2, 3}"));
    }
    let p = test.p;
    let mut c_upper: f64 = 0.0;
    let mut c_mono = f64::INFINITY;
    let mut witness_upper = (ZERO3, ZERO3);
    let mut witness_mono = (ZERO3, ZERO3);
    let mut tested = 0;
    for (x, y) in class_pairs(test) {
        let diff = sub3(&x, &y);
        let dist = norm3(&diff);
        if dist == 0.0 {
            continue;
        }
        tested += 1;
        let da = sub3(&map(&x), &map(&y));
        let base = 1.0 + norm3(&x) + norm3(&y);
        let up = norm3(&da) / (base.powf(p - 1.0 - test.alpha) * dist.powf(test.alpha));
        if up > c_upper {
            c_upper = up;
            witness_upper = (x, y);
        }
        let mono = dot3(&da, &diff) / (base.powf(p - test.beta) * dist.powf(test.beta));
        if mono < c_mono {
            c_mono = mono;
            witness_mono = (x, y);
        }
    }
    Ok(ClassReport {
        alpha: test.alpha,
        beta: test.beta,
        p,
        c_upper,
        c_mono,
        pass: c_mono > test.mono_floor && c_upper.is_finite(),
        pairs_tested: tested,
        witness_upper,
        witness_mono,
    })
}
