//! Stationary Gaussian coefficient fields on the torus.
//!
//! A covariance on `R^d` is periodized by lattice summation, a Gaussian
//! field with that covariance is synthesized spectrally from counter-based
//! white noise, and the field is mapped point-wise to a matrix and smoothed
//! by a compactly supported kernel: `A = chi * B(G)`.

use log::warn;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::{lag_field, FftContext};
use crate::grid::{Grid, Mat3, MatrixField, ScalarField, MAX_DIM, ZERO33};
use crate::rng::{lattice_key, purpose, SampleSeed};

/// Radial covariance `c(|x|)` with correlation length `ell_c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    /// `exp(-|x|^2 / (2 ell_c^2))`
    Gaussian { ell_c: f64 },
    /// `exp(-|x| / ell_c)`
    Exponential { ell_c: f64 },
    /// Degenerate zero covariance.
    Zero,
}

impl CovarianceSpec {
    pub fn gaussian(ell_c: f64) -> Self {
        Self::Gaussian { ell_c }
    }

    pub fn ell_c(&self) -> f64 {
        match *self {
            Self::Gaussian { ell_c } | Self::Exponential { ell_c } => ell_c,
            Self::Zero => 0.0,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Self::Gaussian { ell_c } => (-r * r / (2.0 * ell_c * ell_c)).exp(),
            Self::Exponential { ell_c } => (-r / ell_c).exp(),
            Self::Zero => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { ell_c } | Self::Exponential { ell_c } if !(ell_c > 0.0) => {
                Err(invalid(format!("correlation length must be positive, got {ell_c}")))
            }
            _ => Ok(()),
        }
    }
}

/// Shells of periods summed before giving up on truncation.
const MAX_PERIOD_SHELLS: usize = 5;
const TRUNCATION: f64 = 1e-14;

/// Lattice-summed covariance `c_L(x) = sum_k c(x + L k)`, indexed by lag
/// (flat index 0 is lag 0).
pub fn periodized_covariance(spec: &CovarianceSpec, grid: &Grid) -> Result<ScalarField> {
    spec.validate()?;
    let c0 = spec.eval(0.0);
    if c0 == 0.0 {
        return Ok(ScalarField::zeros(*grid));
    }
    if grid.length() < 4.0 * spec.ell_c() {
        return Err(invalid(format!(
            "torus length {} is below 4 correlation lengths ({})",
            grid.length(),
            spec.ell_c()
        )));
    }
    let d = grid.dim();
    let l = grid.length();
    let mut total = ScalarField::zeros(*grid);
    for shell in 0..=MAX_PERIOD_SHELLS {
        let offsets = shell_offsets(d, shell as isize);
        let mut shell_max: f64 = 0.0;
        for k in &offsets {
            let contrib = lag_field(*grid, |x| {
                let r2: f64 = (0..d).map(|i| (x[i] + l * k[i] as f64).powi(2)).sum();
                spec.eval(r2.sqrt())
            });
            shell_max = shell_max.max(contrib.max_abs());
            total.axpy(1.0, &contrib);
        }
        if shell > 0 && shell_max < TRUNCATION * c0 {
            return Ok(total);
        }
    }
    Err(invalid(format!(
        "covariance lattice sum not truncated within {MAX_PERIOD_SHELLS} periods"
    )))
}

/// Integer offsets `k` with `max_i |k_i| == shell`.
fn shell_offsets(d: usize, shell: isize) -> Vec<[isize; MAX_DIM]> {
    let mut out = Vec::new();
    let range = -shell..=shell;
    let mut k = [0isize; MAX_DIM];
    fn rec(
        axis: usize,
        d: usize,
        shell: isize,
        range: &std::ops::RangeInclusive<isize>,
        k: &mut [isize; MAX_DIM],
        out: &mut Vec<[isize; MAX_DIM]>,
    ) {
        if axis == d {
            if k[..d].iter().map(|v| v.abs()).max().unwrap_or(0) == shell {
                out.push(*k);
            }
            return;
        }
        for v in range.clone() {
            k[axis] = v;
            rec(axis + 1, d, shell, range, k, out);
        }
        k[axis] = 0;
    }
    rec(0, d, shell, &range, &mut k, &mut out);
    out
}

/// Spectral synthesis of a centred stationary Gaussian field with the
/// periodic covariance `c_l` (indexed by lag).
///
/// White noise is keyed by the signed lattice coordinate relative to the
/// origin, so grids that share a spacing share the noise on their overlap.
pub fn sample_gaussian(c_l: &ScalarField, seed: SampleSeed) -> Result<ScalarField> {
    let grid = *c_l.grid();
    let ctx = FftContext::new(grid);
    let spectrum = ctx.forward_real(c_l.values());
    let total: f64 = spectrum.iter().map(|z| z.re.abs()).sum();
    if total == 0.0 {
        return Ok(ScalarField::zeros(grid));
    }
    let clipped: f64 = spectrum.iter().filter(|z| z.re < 0.0).map(|z| -z.re).sum();
    if clipped > 1e-8 * total {
        warn!("clipped negative spectral mass {:.3e} of {:.3e}", clipped, total);
    }
    let noise = white_noise(&grid, seed);
    let mut hat = ctx.forward_real(&noise);
    for (h, s) in hat.iter_mut().zip(&spectrum) {
        *h *= s.re.max(0.0).sqrt();
    }
    ScalarField::from_vec(grid, ctx.inverse_real(hat))
}

fn white_noise(grid: &Grid, seed: SampleSeed) -> Vec<f64> {
    let mut stream = seed.counter_stream(purpose::WHITE_NOISE);
    let half = (grid.points_per_dim() / 2) as isize;
    (0..grid.len())
        .map(|k| {
            let c = grid.coords(k);
            let signed: Vec<isize> = (0..grid.dim()).map(|i| c[i] as isize - half).collect();
            stream.normal_at(lattice_key(&signed))
        })
        .collect()
}

/// Point-wise map `t -> B(t)` from Gaussian values to coefficient matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientProfile {
    /// `B(t) = ((1 + lambda) / 2 + (1 - lambda) / 2 * tanh(t)) Id`.
    Tanh,
    /// `B(t) = value * Id`.
    Constant { value: f64 },
    /// `B(t) = matrix`, independent of `t`.
    ConstantMatrix { matrix: Vec<Vec<f64>> },
    /// Piecewise-linear scalar profile, clamped outside the table.
    Tabulated { t: Vec<f64>, b: Vec<f64> },
}

impl CoefficientProfile {
    pub fn is_scalar(&self) -> bool {
        !matches!(self, Self::ConstantMatrix { .. })
    }

    /// True when `B` does not depend on its argument.
    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. } | Self::ConstantMatrix { .. })
    }

    fn scalar(&self, lambda: f64, t: f64) -> f64 {
        match self {
            Self::Tanh => 0.5 * (1.0 + lambda) + 0.5 * (1.0 - lambda) * t.tanh(),
            Self::Constant { value } => *value,
            Self::Tabulated { t: ts, b } => {
                if t <= ts[0] {
                    return b[0];
                }
                let last = ts.len() - 1;
                if t >= ts[last] {
                    return b[last];
                }
                let i = ts.partition_point(|&s| s <= t) - 1;
                let w = (t - ts[i]) / (ts[i + 1] - ts[i]);
                (1.0 - w) * b[i] + w * b[i + 1]
            }
            Self::ConstantMatrix { .. } => unreachable!("matrix profile has no scalar form"),
        }
    }

    pub fn eval(&self, d: usize, lambda: f64, t: f64) -> Mat3 {
        let mut m = ZERO33;
        match self {
            Self::ConstantMatrix { matrix } => {
                for i in 0..d {
                    for j in 0..d {
                        m[i][j] = matrix[i][j];
                    }
                }
            }
            _ => {
                let b = self.scalar(lambda, t);
                for (i, row) in m.iter_mut().enumerate().take(d) {
                    row[i] = b;
                }
            }
        }
        m
    }

    fn validate(&self, d: usize, lambda: f64) -> Result<()> {
        match self {
            Self::Tabulated { t, b } => {
                if t.len() < 2 || t.len() != b.len() {
                    return Err(invalid("tabulated profile needs >= 2 matching (t, b) pairs"));
                }
                if t.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("tabulated profile abscissae must increase"));
                }
                if let Some(v) = b.iter().find(|&&v| v < lambda || v > 1.0) {
                    return Err(Error::Inadmissible(format!("tabulated value {v} outside [{lambda}, 1]")));
                }
            }
            Self::Constant { value } if *value < lambda || *value > 1.0 => {
                return Err(Error::Inadmissible(format!("constant {value} outside [{lambda}, 1]")));
            }
            Self::ConstantMatrix { matrix } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(invalid(format!("constant matrix must be {d}x{d}")));
                }
                let m = self.eval(d, lambda, 0.0);
                check_admissible_matrix(&m, d, lambda, 1e-10)?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// Generative recipe for `A = chi * B(G)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientRecipe {
    pub lambda: f64,
    pub covariance: CovarianceSpec,
    pub profile: CoefficientProfile,
    /// Radius of the smoothing kernel in grid cells.
    #[serde(default = "default_kernel_cells")]
    pub kernel_radius_cells: f64,
    #[serde(default)]
    pub isotropic: bool,
}

fn default_kernel_cells() -> f64 {
    2.0
}

impl CoefficientRecipe {
    /// Isotropic recipe with the `tanh` profile and a Gaussian covariance.
    pub fn isotropic_tanh(lambda: f64, ell_c: f64) -> Self {
        Self {
            lambda,
            covariance: CovarianceSpec::gaussian(ell_c),
            profile: CoefficientProfile::Tanh,
            kernel_radius_cells: default_kernel_cells(),
            isotropic: true,
        }
    }

    /// Deterministic recipe `A = value * Id`.
    pub fn constant(lambda: f64, value: f64) -> Self {
        Self {
            lambda,
            covariance: CovarianceSpec::Zero,
            profile: CoefficientProfile::Constant { value },
            kernel_radius_cells: default_kernel_cells(),
            isotropic: true,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.profile.is_constant() || matches!(self.covariance, CovarianceSpec::Zero)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Inadmissible(format!("lambda must lie in (0, 1], got {}", self.lambda)));
        }
        if self.isotropic && !self.profile.is_scalar() {
            return Err(invalid("isotropic recipes need a scalar profile"));
        }
        if !(self.kernel_radius_cells >= 2.0) {
            return Err(invalid("kernel radius must cover at least 2 cells"));
        }
        self.covariance.validate()?;
        self.profile.validate(d, self.lambda)
    }

    /// Sample the Gaussian field and the coefficient for one seed.
    pub fn sample(&self, grid: &Grid, seed: SampleSeed) -> Result<(ScalarField, MatrixField)> {
        self.validate(grid.dim())?;
        let g = if self.profile.is_constant() {
            ScalarField::zeros(*grid)
        } else {
            let c_l = periodized_covariance(&self.covariance, grid)?;
            sample_gaussian(&c_l, seed)?
        };
        let a = make_coefficient(&g, self)?;
        Ok((g, a))
    }
}

/// Smoothing kernel `(1 - (|x|/rho)^2)^2` normalized to unit lattice sum,
/// indexed by lag.
pub fn smoothing_kernel(grid: &Grid, radius_cells: f64) -> ScalarField {
    let rho = radius_cells * grid.spacing();
    let mut k = lag_field(*grid, |x| {
        let r2 = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (rho * rho);
        if r2 < 1.0 {
            (1.0 - r2).powi(2)
        } else {
            0.0
        }
    });
    let s: f64 = k.values().iter().sum();
    k.scale(1.0 / s);
    k
}

/// `A(x) = (chi * B(G))(x)`, convolved component-wise by FFT.
pub fn make_coefficient(g: &ScalarField, recipe: &CoefficientRecipe) -> Result<MatrixField> {
    let grid = *g.grid();
    let d = grid.dim();
    recipe.validate(d)?;
    if recipe.profile.is_constant() {
        let m = recipe.profile.eval(d, recipe.lambda, 0.0);
        return Ok(MatrixField::constant(grid, &m));
    }
    let ctx = FftContext::new(grid);
    let kernel = smoothing_kernel(&grid, recipe.kernel_radius_cells);
    let kernel_hat: Vec<Complex64> = ctx.forward_real(kernel.values());
    let pointwise: Vec<Mat3> =
        g.values().iter().map(|&t| recipe.profile.eval(d, recipe.lambda, t)).collect();
    let mut a = MatrixField::zeros(grid);
    // scalar profiles only need one convolution
    let smoothed: Vec<Vec<f64>> = if recipe.profile.is_scalar() {
        let b: Vec<f64> = pointwise.iter().map(|m| m[0][0]).collect();
        vec![ctx.convolve(&b, &kernel_hat)]
    } else {
        (0..d * d)
            .map(|ij| {
                let comp: Vec<f64> = pointwise.iter().map(|m| m[ij / d][ij % d]).collect();
                ctx.convolve(&comp, &kernel_hat)
            })
            .collect()
    };
    for k in 0..grid.len() {
        let mut m = ZERO33;
        if smoothed.len() == 1 {
            for (i, row) in m.iter_mut().enumerate().take(d) {
                row[i] = smoothed[0][k];
            }
        } else {
            for i in 0..d {
                for j in 0..d {
                    m[i][j] = smoothed[i * d + j][k];
                }
            }
        }
        check_admissible_matrix(&m, d, recipe.lambda, 1e-10)
            .map_err(|e| Error::Inadmissible(format!("lattice point {k}: {e}")))?;
        a.set(k, &m);
    }
    Ok(a)
}

/// Extreme eigenvalues of the symmetric part of `m`.
pub fn symmetric_eigen_range(m: &Mat3, d: usize) -> (f64, f64) {
    let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (m[i][j] + m[j][i]));
    let eig = sym.symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Ellipticity sandwich `lambda |xi|^2 <= xi.M xi` and `|M xi| <= |xi|`.
pub fn check_admissible_matrix(m: &Mat3, d: usize, lambda: f64, tol: f64) -> Result<()> {
    let (lo, _) = symmetric_eigen_range(m, d);
    let op = nalgebra::DMatrix::from_fn(d, d, |i, j| m[i][j]);
    let norm = op.singular_values().max();
    if lo < lambda - tol || norm > 1.0 + tol {
        return Err(Error::Inadmissible(format!(
            "symmetric-part eigenvalue {lo:.6} / operator norm {norm:.6} outside [{lambda}, 1]"
        )));
    }
    Ok(())
}

/// Two Gaussian fields on nested tori driven by the same white noise.
pub fn coupled_pair(
    spec: &CovarianceSpec,
    small: &Grid,
    large: &Grid,
    seed: SampleSeed,
) -> Result<(ScalarField, ScalarField)> {
    if small.dim() != large.dim() {
        return Err(invalid("coupled grids must share the dimension"));
    }
    if (small.spacing() - large.spacing()).abs() > 1e-12 * small.spacing() {
        return Err(invalid(format!(
            "coupled grids must share the spacing ({} vs {})",
            small.spacing(),
            large.spacing()
        )));
    }
    if large.length() < small.length() {
        return Err(invalid("second grid must be at least as large as the first"));
    }
    let g1 = sample_gaussian(&periodized_covariance(spec, small)?, seed)?;
    let g2 = sample_gaussian(&periodized_covariance(spec, large)?, seed)?;
    Ok((g1, g2))
}

/// Largest `|G1 - G2|` over the central window `[-L1/4, L1/4)^d` of the
/// smaller torus, matching points by physical position.
pub fn window_discrepancy(g1: &ScalarField, g2: &ScalarField) -> f64 {
    let (s, l) = (g1.grid(), g2.grid());
    let n1 = s.points_per_dim();
    let offset = (l.points_per_dim() - n1) / 2;
    let quarter = n1 / 4;
    let mut worst: f64 = 0.0;
    for k in 0..s.len() {
        let c = s.coords(k);
        if (0..s.dim()).any(|i| c[i] < quarter || c[i] >= n1 - quarter) {
            continue;
        }
        let mut c2 = [0usize; MAX_DIM];
        for i in 0..s.dim() {
            c2[i] = c[i] + offset;
        }
        worst = worst.max((g1.values()[k] - g2.values()[l.flat(&c2)]).abs());
    }
    worst
}
