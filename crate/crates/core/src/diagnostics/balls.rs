//! Sharp lattice ball averages at every point, for radii up to and beyond
//! the torus length.

use rustfft::num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fft::{signed_lag, FftContext};
use crate::grid::{Grid, ScalarField};

/// Relative slack so that lattice points exactly at distance `r` count.
const TIE: f64 = 1e-12;

/// Squared radius in cell units with the tie slack applied.
#[inline]
pub(crate) fn cell_radius2(grid: &Grid, r: f64) -> f64 {
    let rc = r / grid.spacing();
    rc * rc * (1.0 + TIE)
}

/// Number of periodic images of each lag inside `B_r`, indexed by lag.
pub fn multiplicity_mask(grid: &Grid, r: f64) -> Vec<f64> {
    let d = grid.dim();
    let n = grid.points_per_dim() as i64;
    let r2 = cell_radius2(grid, r);
    let wraps = (r / grid.length()).ceil() as i64 + 1;
    (0..grid.len())
        .map(|k| {
            let c = grid.coords(k);
            let m: Vec<i64> = (0..d).map(|i| signed_lag(c[i], n as usize) as i64).collect();
            let mut count = 0u64;
            let mut j = vec![-wraps; d];
            loop {
                let dist2: i64 = (0..d).map(|i| (m[i] + n * j[i]).pow(2)).sum();
                if (dist2 as f64) <= r2 {
                    count += 1;
                }
                // odometer over image offsets
                let mut axis = 0;
                while axis < d {
                    j[axis] += 1;
                    if j[axis] <= wraps {
                        break;
                    }
                    j[axis] = -wraps;
                    axis += 1;
                }
                if axis == d {
                    break;
                }
            }
            count as f64
        })
        .collect()
}

/// Computes `x -> mean of f over lattice points of B_r(x)` for many `f`, `r`.
#[derive(Clone, Debug)]
pub struct BallAverager {
    ctx: FftContext,
}

impl BallAverager {
    pub fn new(grid: Grid) -> Self {
        Self { ctx: FftContext::new(grid) }
    }

    pub fn grid(&self) -> &Grid {
        self.ctx.grid()
    }

    /// Precomputed transform of a mask, reusable across fields.
    pub fn kernel(&self, r: f64) -> Result<BallKernel> {
        if !(r > 0.0) {
            return Err(invalid(format!("ball radius must be positive, got {r}")));
        }
        let mask = multiplicity_mask(self.grid(), r);
        let mut count: f64 = mask.iter().sum();
        let mut mask = mask;
        if count == 0.0 {
            // the nearest point only
            mask[0] = 1.0;
            count = 1.0;
        }
        Ok(BallKernel { r, count, hat: self.ctx.forward_real(&mask) })
    }

    pub fn average(&self, f: &ScalarField, kernel: &BallKernel) -> ScalarField {
        let mut out = self.ctx.convolve(f.values(), &kernel.hat);
        let s = 1.0 / kernel.count;
        out.iter_mut().for_each(|v| *v *= s);
        ScalarField::from_vec(*f.grid(), out).expect("finite averages")
    }

    pub fn average_radius(&self, f: &ScalarField, r: f64) -> Result<ScalarField> {
        Ok(self.average(f, &self.kernel(r)?))
    }
}

#[derive(Clone, Debug)]
pub struct BallKernel {
    pub r: f64,
    /// Lattice points in the ball (with multiplicity).
    pub count: f64,
    hat: Vec<Complex64>,
}

/// Direct mean over integer offsets `m` with `|m h| <= r`, wrapping `f`.
pub fn ball_average_direct(f: &ScalarField, center: usize, r: f64) -> f64 {
    let g = f.grid();
    let d = g.dim();
    let r2 = cell_radius2(g, r);
    let reach = (r / g.spacing()).floor() as isize + 1;
    let c = g.coords(center);
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut m = vec![-reach; d];
    loop {
        let dist2: isize = m.iter().map(|v| v * v).sum();
        if (dist2 as f64) <= r2 {
            let idx: Vec<isize> = (0..d).map(|i| c[i] as isize + m[i]).collect();
            sum += f.at(&idx);
            count += 1;
        }
        let mut axis = 0;
        while axis < d {
            m[axis] += 1;
            if m[axis] <= reach {
                break;
            }
            m[axis] = -reach;
            axis += 1;
        }
        if axis == d {
            break;
        }
    }
    if count == 0 {
        return f.values()[center];
    }
    sum / count as f64
}
