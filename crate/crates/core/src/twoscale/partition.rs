//! Smooth partition of unity subordinate to cubes of side `2 delta`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fft::signed_lag;
use crate::grid::{Grid, ScalarField, Vec3, VectorField, ZERO3};

/// Constants measured on the lattice after construction.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PartitionConstants {
    /// `max |sum_k eta_k - 1|`
    pub sum_error: f64,
    pub min_value: f64,
    pub max_value: f64,
    /// `min eta_k` over its cube `Q_{delta/2}(k)`.
    pub c_low: f64,
    /// `max |grad eta_k| delta`
    pub c_grad: f64,
    /// `eta_k = 1` on `Q_{delta/(2 max(d, 2))}(k)`.
    pub inner_error: f64,
    /// Largest `eta_k` found outside `Q_delta(k)`.
    pub support_leak: f64,
}

#[derive(Clone, Copy, Debug)]
struct AxisWeight {
    center: usize,
    value: f64,
    /// Derivative in the rescaled variable `t = (x - k) / delta`.
    slope: f64,
}

#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    grid: Grid,
    delta: f64,
    cells: usize,
    per_dim: usize,
    axis: Vec<[AxisWeight; 2]>,
    pub constants: PartitionConstants,
}

fn smoothstep(t: f64) -> (f64, f64) {
    let t2 = t * t;
    (t2 * t * (10.0 - 15.0 * t + 6.0 * t2), 30.0 * t2 * (1.0 - t) * (1.0 - t))
}

/// One-dimensional profile: `1` on `|t| <= a`, `0` on `|t| >= 1 - a`,
/// quintic in between; `s(t) + s(1 - t) = 1`.
fn profile(t: f64, a: f64) -> (f64, f64) {
    let s = t.abs();
    if s <= a {
        return (1.0, 0.0);
    }
    if s >= 1.0 - a {
        return (0.0, 0.0);
    }
    let w = 1.0 - 2.0 * a;
    let (v, dv) = smoothstep((s - a) / w);
    (1.0 - v, -t.signum() * dv / w)
}

/// Half-width of the plateau in units of `delta`.
fn plateau(d: usize) -> f64 {
    0.5 / d.max(2) as f64
}

pub fn build_partition(grid: Grid, delta: f64) -> Result<PartitionOfUnity> {
    let h = grid.spacing();
    let n = grid.points_per_dim();
    let ratio = delta / h;
    let cells = ratio.round() as usize;
    if !(delta > 0.0) || (ratio - cells as f64).abs() > 1e-9 * ratio.max(1.0) {
        return Err(invalid(format!("delta = {delta} is not a multiple of h = {h}")));
    }
    if cells < 8 {
        return Err(invalid(format!("delta = {delta} spans {cells} cells, need at least 8")));
    }
    if delta > 0.25 * grid.length() * (1.0 + 1e-12) || n % cells != 0 {
        return Err(invalid(format!("delta = {delta} must divide L and satisfy delta <= L/4")));
    }
    let per_dim = n / cells;
    let a = plateau(grid.dim());
    let axis = (0..n)
        .map(|c| {
            let lo = c / cells;
            [lo, (lo + 1) % per_dim].map(|m| {
                let t = signed_lag((c + n - m * cells) % n, n) as f64 / cells as f64;
                let (value, slope) = profile(t, a);
                AxisWeight { center: m, value, slope }
            })
        })
        .collect();
    let mut pu = PartitionOfUnity { grid, delta, cells, per_dim, axis, constants: PartitionConstants::default() };
    pu.constants = pu.measure();
    Ok(pu)
}

impl PartitionOfUnity {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn center_count(&self) -> usize {
        self.per_dim.pow(self.grid.dim() as u32)
    }

    /// Lattice point at center `k`.
    pub fn center_index(&self, k: usize) -> usize {
        let d = self.grid.dim();
        let mut c = [0usize; 3];
        let mut rest = k;
        for axis in (0..d).rev() {
            c[axis] = (rest % self.per_dim) * self.cells;
            rest /= self.per_dim;
        }
        self.grid.flat(&c)
    }

    pub fn center_position(&self, k: usize) -> Vec3 {
        self.grid.position(self.center_index(k))
    }

    /// Calls `f(k, eta_k(x), grad eta_k(x))` for every center with
    /// `eta_k(x) != 0` or `grad eta_k(x) != 0`.
    pub fn for_each_at(&self, x: usize, mut f: impl FnMut(usize, f64, Vec3)) {
        let d = self.grid.dim();
        let c = self.grid.coords(x);
        let w: Vec<&[AxisWeight; 2]> = (0..d).map(|i| &self.axis[c[i]]).collect();
        let inv = 1.0 / self.delta;
        for mask in 0..(1usize << d) {
            let pick: Vec<AxisWeight> = (0..d).map(|i| w[i][(mask >> i) & 1]).collect();
            if pick.iter().all(|p| p.value == 0.0 && p.slope == 0.0) {
                continue;
            }
            let value: f64 = pick.iter().map(|p| p.value).product();
            let mut grad = ZERO3;
            for i in 0..d {
                grad[i] = pick[i].slope * inv * (0..d).filter(|&j| j != i).map(|j| pick[j].value).product::<f64>();
            }
            if value == 0.0 && grad.iter().all(|g| *g == 0.0) {
                continue;
            }
            let k = pick.iter().fold(0, |acc, p| acc * self.per_dim + p.center);
            f(k, value, grad);
        }
    }

    pub fn eta(&self, k: usize) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        for x in 0..self.grid.len() {
            self.for_each_at(x, |j, v, _| {
                if j == k {
                    out.values_mut()[x] = v;
                }
            });
        }
        out
    }

    pub fn grad_eta(&self, k: usize) -> VectorField {
        let mut out = VectorField::zeros(self.grid);
        for x in 0..self.grid.len() {
            self.for_each_at(x, |j, _, g| {
                if j == k {
                    out.set(x, &g);
                }
            });
        }
        out
    }

    /// `xi_k = sum eta_k g / sum eta_k` for every center.
    pub fn local_averages(&self, g: &VectorField) -> Result<Vec<Vec3>> {
        self.grid.check_same(g.grid())?;
        let m = self.center_count();
        let mut num = vec![ZERO3; m];
        let mut den = vec![0.0; m];
        for x in 0..self.grid.len() {
            let v = g.get(x);
            self.for_each_at(x, |k, eta, _| {
                for i in 0..3 {
                    num[k][i] += eta * v[i];
                }
                den[k] += eta;
            });
        }
        Ok(num.iter().zip(&den).map(|(n, d)| n.map(|v| v / d)).collect())
    }

    fn measure(&self) -> PartitionConstants {
        let g = self.grid;
        let d = g.dim();
        let n = g.points_per_dim();
        let mut c = PartitionConstants { min_value: f64::INFINITY, c_low: f64::INFINITY, ..Default::default() };
        for x in 0..g.len() {
            let coords = g.coords(x);
            let mut sum = 0.0;
            let mut seen = Vec::new();
            self.for_each_at(x, |k, v, grad| {
                sum += v;
                seen.push(k);
                c.min_value = c.min_value.min(v);
                c.max_value = c.max_value.max(v);
                let gn = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
                c.c_grad = c.c_grad.max(gn * self.delta);
                let center = g.coords(self.center_index(k));
                let t: Vec<f64> = (0..d)
                    .map(|i| signed_lag((coords[i] + n - center[i]) % n, n).abs() as f64 / self.cells as f64)
                    .collect();
                let tmax = t.iter().cloned().fold(0.0, f64::max);
                if tmax <= 0.5 {
                    c.c_low = c.c_low.min(v);
                }
                if tmax <= plateau(d) {
                    c.inner_error = c.inner_error.max((v - 1.0).abs());
                }
                if tmax >= 1.0 {
                    c.support_leak = c.support_leak.max(v.abs());
                }
            });
            c.sum_error = c.sum_error.max((sum - 1.0).abs());
            // centers with no contribution at x are zero there
            if seen.len() < self.center_count() {
                c.min_value = c.min_value.min(0.0);
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_is_a_one_dimensional_partition() {
        for d in 1..=3 {
            let a = plateau(d);
            for i in 0..=100 {
                let t = i as f64 / 100.0;
                let (s0, ds0) = profile(t, a);
                let (s1, ds1) = profile(t - 1.0, a);
                assert!((s0 + s1 - 1.0).abs() < 1e-14);
                assert!((ds0 + ds1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invariants_hold() {
        for d in 1..=3 {
            let n = if d == 3 { 32 } else { 64 };
            let g = Grid::new(d, 1.0, n).unwrap();
            let pu = build_partition(g, 0.25).unwrap();
            let c = &pu.constants;
            assert!(c.sum_error < 1e-12, "d={d} {c:?}");
            assert!(c.min_value >= 0.0 && c.max_value <= 1.0 + 1e-15);
            assert!(c.inner_error < 1e-15 && c.support_leak == 0.0);
            assert!(c.c_grad <= 4.0 * d as f64, "{c:?}");
            assert!(c.c_low > 0.0);
        }
    }

    #[test]
    fn value_at_center() {
        let g = Grid::new(2, 1.0, 64).unwrap();
        let pu = build_partition(g, 0.125).unwrap();
        for k in [0, 5, 63] {
            let x = pu.center_index(k);
            pu.for_each_at(x, |j, v, _| assert_eq!(v, if j == k { 1.0 } else { 0.0 }));
            assert_eq!(pu.eta(k).values()[x], 1.0);
        }
    }

    #[test]
    fn rejects_bad_scales() {
        let g = Grid::new(2, 1.0, 64).unwrap();
        assert!(build_partition(g, 0.1).is_err());
        assert!(build_partition(g, 0.125).is_ok());
        assert!(build_partition(g, 1.0 / 16.0).is_err());
        assert!(build_partition(g, 0.5).is_err());
    }

    #[test]
    fn local_averages_of_constant_field() {
        let g = Grid::new(2, 1.0, 64).unwrap();
        let pu = build_partition(g, 0.25).unwrap();
        let v = VectorField::constant(g, &[0.3, -1.2, 0.0]);
        for xi in pu.local_averages(&v).unwrap() {
            assert!((xi[0] - 0.3).abs() < 1e-14 && (xi[1] + 1.2).abs() < 1e-14);
        }
    }
}
