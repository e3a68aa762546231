//! Multi-dimensional FFTs over a [`Grid`], used by the Poisson solver, the
//! Krylov preconditioner, spectral sampling and periodic convolutions.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{Grid, ScalarField};

/// Forward and inverse plans for one grid size.
#[derive(Clone)]
pub struct FftContext {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftContext").field("grid", &self.grid).finish()
    }
}

impl FftContext {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.points_per_dim();
        Self { grid, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let g = &self.grid;
        let n = g.points_per_dim();
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        let mut line = vec![Complex64::default(); n];
        for axis in 0..g.dim() {
            let stride = g.stride(axis);
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (m, z) in line.iter_mut().enumerate() {
                        *z = data[start + m * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (m, z) in line.iter().enumerate() {
                        data[start + m * stride] = *z;
                    }
                }
            }
        }
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform in place, normalized so `inverse(forward(x)) == x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }

    pub fn forward_real(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    /// Periodic convolution `sum_y f(y) k(x - y)` of two lattice functions
    /// (kernel indexed by lag, lag 0 at flat index 0).
    pub fn convolve(&self, f: &[f64], kernel_hat: &[Complex64]) -> Vec<f64> {
        let mut fh = self.forward_real(f);
        fh.iter_mut().zip(kernel_hat).for_each(|(a, b)| *a *= b);
        self.inverse_real(fh)
    }

    /// Eigenvalues of `-Delta_h` for each wave vector, in FFT order.
    pub fn neg_laplacian_symbol(&self) -> Vec<f64> {
        let g = &self.grid;
        let n = g.points_per_dim();
        let h = g.spacing();
        let per_axis: Vec<f64> = (0..n)
            .map(|m| {
                let s = (std::f64::consts::PI * m as f64 / n as f64).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        (0..g.len())
            .map(|k| {
                let c = g.coords(k);
                (0..g.dim()).map(|i| per_axis[c[i]]).sum()
            })
            .collect()
    }
}

/// Signed lattice lag of index `m` on an `n`-periodic axis, in `[-n/2, n/2)`.
#[inline]
pub fn signed_lag(m: usize, n: usize) -> isize {
    if m >= n / 2 {
        m as isize - n as isize
    } else {
        m as isize
    }
}

/// Lattice function indexed by lag: `values[k] = f(lag(k) * h)`.
pub fn lag_field(grid: Grid, f: impl Fn(&[f64; 3]) -> f64) -> ScalarField {
    let n = grid.points_per_dim();
    let h = grid.spacing();
    let data = (0..grid.len())
        .map(|k| {
            let c = grid.coords(k);
            let mut x = [0.0; 3];
            for i in 0..grid.dim() {
                x[i] = signed_lag(c[i], n) as f64 * h;
            }
            f(&x)
        })
        .collect();
    ScalarField::from_vec(grid, data).expect("finite lag field")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        for d in 1..=3 {
            let g = Grid::new(d, 1.0, 8).unwrap();
            let ctx = FftContext::new(g);
            let u: Vec<f64> = (0..g.len()).map(|k| ((k * 7919) % 13) as f64 - 6.0).collect();
            let back = ctx.inverse_real(ctx.forward_real(&u));
            for (a, b) in u.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symbol_matches_laplacian_on_modes() {
        let g = Grid::new(2, 2.0, 16).unwrap();
        let ctx = FftContext::new(g);
        let sym = ctx.neg_laplacian_symbol();
        // a single Fourier mode exp(2 pi i (k.x)/N) with k = (3, 5)
        let k = g.flat(&[3, 5]);
        let mut hat = vec![Complex64::default(); g.len()];
        hat[k] = Complex64::new(1.0, 0.0);
        let mut field = hat.clone();
        ctx.inverse(&mut field);
        let re = ScalarField::from_vec(g, field.iter().map(|z| z.re).collect()).unwrap();
        let lap = crate::grid::laplacian(&re);
        for (a, b) in lap.values().iter().zip(re.values()) {
            assert!((a + sym[k] * b).abs() < 1e-10);
        }
    }
}
