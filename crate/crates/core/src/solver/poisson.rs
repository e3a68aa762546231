use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::FftContext;
use crate::grid::{Grid, ScalarField};

/// FFT inverse of `-Delta_h` on zero-mean fields.
#[derive(Clone, Debug)]
pub struct PoissonSolver {
    ctx: FftContext,
    inv_symbol: Vec<f64>,
}

impl PoissonSolver {
    pub fn new(grid: Grid) -> Self {
        let ctx = FftContext::new(grid);
        let inv_symbol = ctx
            .neg_laplacian_symbol()
            .into_iter()
            .enumerate()
            .map(|(k, s)| if k == 0 { 0.0 } else { 1.0 / s })
            .collect();
        Self { ctx, inv_symbol }
    }

    pub fn grid(&self) -> &Grid {
        self.ctx.grid()
    }

    /// `u` with `-Delta_h u = rhs - mean(rhs)` and zero mean, scaled by `1/m`.
    pub fn apply(&self, rhs: &[f64], m: f64) -> Vec<f64> {
        let mut hat: Vec<Complex64> = self.ctx.forward_real(rhs);
        let s = 1.0 / m;
        hat.iter_mut().zip(&self.inv_symbol).for_each(|(z, w)| *z *= w * s);
        self.ctx.inverse_real(hat)
    }

    pub fn solve(&self, rhs: &ScalarField) -> Result<ScalarField> {
        self.grid().check_same(rhs.grid())?;
        let mean = rhs.mean();
        if mean.abs() > 1e-12 * rhs.max_abs().max(1.0) {
            return Err(Error::NonzeroMean { mean });
        }
        ScalarField::from_vec(*rhs.grid(), self.apply(rhs.values(), 1.0))
    }
}

/// Zero-mean `u` with `-Delta_h u = rhs`.
pub fn solve_poisson(rhs: &ScalarField) -> Result<ScalarField> {
    PoissonSolver::new(*rhs.grid()).solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::laplacian;

    #[test]
    fn zero_rhs() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        assert_eq!(solve_poisson(&ScalarField::zeros(g)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn inverts_discrete_laplacian() {
        for d in 1..=3 {
            let g = Grid::new(d, 3.0, 16).unwrap();
            let mut v = ScalarField::from_fn(g, |x| (x[0] * 1.7).sin() * (1.0 + x[1] * x[1]) + (x[2] - x[0]).cos());
            v.subtract_mean();
            let mut rhs = laplacian(&v);
            rhs.scale(-1.0);
            let u = solve_poisson(&rhs).unwrap();
            let mut diff = u.clone();
            diff.axpy(-1.0, &v);
            assert!(diff.max_abs() < 1e-11, "d={d}: {}", diff.max_abs());
            assert!(u.mean().abs() < 1e-14);
        }
    }

    #[test]
    fn eigenfunction() {
        let g = Grid::new(1, 2.0, 32).unwrap();
        let sigma2 = 4.0 * (std::f64::consts::PI / 32.0).sin().powi(2) / g.spacing().powi(2);
        let rhs = ScalarField::from_fn(g, |x| sigma2 * (std::f64::consts::PI * x[0]).sin());
        let u = solve_poisson(&rhs).unwrap();
        for k in 0..g.len() {
            let x = g.position(k)[0];
            assert!((u.values()[k] - (std::f64::consts::PI * x).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn nonzero_mean_is_rejected() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        assert!(matches!(solve_poisson(&ScalarField::constant(g, 1.0)), Err(Error::NonzeroMean { .. })));
    }
}
