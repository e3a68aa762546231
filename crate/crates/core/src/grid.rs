//! Periodic lattice on the torus `[-L/2, L/2)^d` and the discrete vector
//! calculus used by every solver.
//!
//! Gradients are forward differences and divergences are backward
//! differences, so `divergence` is exactly the negative adjoint of
//! `gradient` and `divergence(gradient(u))` is the standard `(2d+1)`-point
//! Laplacian.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

/// Point-wise vector, zero-padded beyond the grid dimension.
pub type Vec3 = [f64; MAX_DIM];
/// Point-wise matrix, zero-padded beyond the grid dimension.
pub type Mat3 = [[f64; MAX_DIM]; MAX_DIM];

pub const ZERO3: Vec3 = [0.0; MAX_DIM];
pub const ZERO33: Mat3 = [[0.0; MAX_DIM]; MAX_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    d: usize,
    l: f64,
    n: usize,
}

impl Grid {
    pub fn new(d: usize, l: f64, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(invalid(format!("dimension {d} outside {{1, 2, 3}}")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(invalid(format!("points per dimension must be even and >= 4, got {n}")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(invalid(format!("torus length must be positive, got {l}")));
        }
        n.checked_pow(d as u32)
            .ok_or_else(|| invalid("lattice size overflows usize"))?;
        Ok(Self { d, l, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.l
    }

    #[inline]
    pub fn points_per_dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.l / self.n as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of one lattice cell, `h^d`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Flat-index stride of `axis` in row-major order (last axis fastest).
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    #[inline]
    pub fn coords(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for axis in (0..self.d).rev() {
            c[axis] = flat % self.n;
            flat /= self.n;
        }
        c
    }

    #[inline]
    pub fn flat(&self, c: &[usize]) -> usize {
        c[..self.d].iter().fold(0, |acc, &ci| acc * self.n + ci)
    }

    /// Physical position of a lattice point.
    pub fn position(&self, flat: usize) -> Vec3 {
        let c = self.coords(flat);
        let h = self.spacing();
        let mut x = ZERO3;
        for axis in 0..self.d {
            x[axis] = -0.5 * self.l + c[axis] as f64 * h;
        }
        x
    }

    /// Neighbour one step forward (`+1`) or backward (`-1`) along `axis`.
    #[inline]
    pub fn neighbor(&self, flat: usize, axis: usize, forward: bool) -> usize {
        let stride = self.stride(axis);
        let ci = (flat / stride) % self.n;
        if forward {
            if ci + 1 == self.n {
                flat + stride - self.n * stride
            } else {
                flat + stride
            }
        } else if ci == 0 {
            flat + (self.n - 1) * stride
        } else {
            flat - stride
        }
    }

    /// Wrap a coordinate difference into `[-L/2, L/2)`.
    #[inline]
    pub fn wrap(&self, dx: f64) -> f64 {
        let l = self.l;
        dx - l * ((dx + 0.5 * l) / l).floor()
    }

    /// Periodic Euclidean distance between two points.
    pub fn periodic_distance(&self, a: &Vec3, b: &Vec3) -> f64 {
        (0..self.d)
            .map(|i| self.wrap(a[i] - b[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// `make_grid` in the operation vocabulary; same as [`Grid::new`].
pub fn make_grid(d: usize, l: f64, n: usize) -> Result<Grid> {
    Grid::new(d, l, n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, data: vec![value; grid.len()] }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(invalid(format!("expected {} values, got {}", grid.len(), data.len())));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at lattice index {bad}")));
        }
        Ok(Self { grid, data })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&Vec3) -> f64) -> Self {
        let data = (0..grid.len()).map(|k| f(&grid.position(k))).collect();
        Self { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    /// Value at integer lattice coordinates, wrapping periodically.
    pub fn at(&self, c: &[isize]) -> f64 {
        let n = self.grid.n as isize;
        let idx: Vec<usize> = c[..self.grid.d].iter().map(|&ci| ci.rem_euclid(n) as usize).collect();
        self.data[self.grid.flat(&idx)]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn subtract_mean(&mut self) {
        let m = self.mean();
        self.data.iter_mut().for_each(|v| *v -= m);
    }

    /// `sum u v h^d`.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }

    /// Discrete `L^2(Q_L)` norm.
    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn axpy(&mut self, alpha: f64, x: &ScalarField) {
        self.data.iter_mut().zip(&x.data).for_each(|(y, xv)| *y += alpha * xv);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

/// Vector field with `d` components stored component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, comps: vec![vec![0.0; grid.len()]; grid.d] }
    }

    pub fn constant(grid: Grid, v: &Vec3) -> Self {
        Self { grid, comps: (0..grid.d).map(|i| vec![v[i]; grid.len()]).collect() }
    }

    pub fn from_components(grid: Grid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != grid.d || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(invalid("vector field components do not match the grid"));
        }
        if comps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite value in vector field"));
        }
        Ok(Self { grid, comps })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&Vec3) -> Vec3) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.len() {
            out.set(k, &f(&grid.position(k)));
        }
        out
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn component(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }

    #[inline]
    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.comps[i]
    }

    pub fn component_field(&self, i: usize) -> ScalarField {
        ScalarField { grid: self.grid, data: self.comps[i].clone() }
    }

    #[inline]
    pub fn get(&self, k: usize) -> Vec3 {
        let mut v = ZERO3;
        for (i, c) in self.comps.iter().enumerate() {
            v[i] = c[k];
        }
        v
    }

    #[inline]
    pub fn set(&mut self, k: usize, v: &Vec3) {
        for (i, c) in self.comps.iter_mut().enumerate() {
            c[k] = v[i];
        }
    }

    pub fn mean(&self) -> Vec3 {
        let mut m = ZERO3;
        let n = self.grid.len() as f64;
        for (i, c) in self.comps.iter().enumerate() {
            m[i] = c.iter().sum::<f64>() / n;
        }
        m
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Discrete `L^q` norm of the point-wise Euclidean length.
    pub fn norm_lq(&self, q: f64) -> f64 {
        let s: f64 = (0..self.grid.len()).map(|k| norm3(&self.get(k)).powf(q)).sum();
        (s * self.grid.cell_volume()).powf(1.0 / q)
    }

    /// Point-wise Euclidean length.
    pub fn magnitude(&self) -> ScalarField {
        let data = (0..self.grid.len()).map(|k| norm3(&self.get(k))).collect();
        ScalarField { grid: self.grid, data }
    }

    pub fn axpy(&mut self, alpha: f64, x: &VectorField) {
        for (c, xc) in self.comps.iter_mut().zip(&x.comps) {
            c.iter_mut().zip(xc).for_each(|(y, xv)| *y += alpha * xv);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.comps.iter_mut().flatten().for_each(|v| *v *= alpha);
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.comps
    }
}

/// Matrix field with `d*d` components; component `(i, j)` at index `i*d + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
    skew: bool,
}

impl MatrixField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, comps: vec![vec![0.0; grid.len()]; grid.d * grid.d], skew: false }
    }

    pub fn constant(grid: Grid, m: &Mat3) -> Self {
        let d = grid.d;
        let comps = (0..d * d).map(|ij| vec![m[ij / d][ij % d]; grid.len()]).collect();
        Self { grid, comps, skew: false }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&Vec3) -> Mat3) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.len() {
            out.set(k, &f(&grid.position(k)));
        }
        out
    }

    /// Skew-symmetric field assembled from its strictly upper entries
    /// `upper[(i, j)]`, `i < j`, in lexicographic order.
    pub fn skew_from_upper(grid: Grid, upper: Vec<ScalarField>) -> Result<Self> {
        let d = grid.d;
        if upper.len() != d * (d - 1) / 2 {
            return Err(invalid("wrong number of skew components"));
        }
        let mut out = Self::zeros(grid);
        let mut it = upper.into_iter();
        for i in 0..d {
            for j in (i + 1)..d {
                let s = it.next().expect("counted above");
                grid.check_same(s.grid())?;
                out.comps[j * d + i] = s.values().iter().map(|v| -v).collect();
                out.comps[i * d + j] = s.into_values();
            }
        }
        out.skew = true;
        Ok(out)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn is_skew(&self) -> bool {
        self.skew
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        &self.comps[i * self.grid.d + j]
    }

    #[inline]
    pub fn get(&self, k: usize) -> Mat3 {
        let d = self.grid.d;
        let mut m = ZERO33;
        for i in 0..d {
            for j in 0..d {
                m[i][j] = self.comps[i * d + j][k];
            }
        }
        m
    }

    #[inline]
    pub fn set(&mut self, k: usize, m: &Mat3) {
        let d = self.grid.d;
        for i in 0..d {
            for j in 0..d {
                self.comps[i * d + j][k] = m[i][j];
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.comps.iter_mut().flatten().for_each(|v| *v *= alpha);
    }

    /// True when every point-wise matrix is symmetric to `tol` (absolute).
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let d = self.grid.d;
        (0..d).all(|i| {
            ((i + 1)..d).all(|j| {
                self.entry(i, j).iter().zip(self.entry(j, i)).all(|(a, b)| (a - b).abs() <= tol)
            })
        })
    }

    /// True when every point-wise matrix is a multiple of the identity.
    pub fn is_scalar(&self) -> bool {
        let d = self.grid.d;
        (0..d).all(|i| {
            (0..d).all(|j| {
                if i == j {
                    self.entry(i, i) == self.entry(0, 0)
                } else {
                    self.entry(i, j).iter().all(|&v| v == 0.0)
                }
            })
        })
    }

    /// Mean over the torus of `trace / d`.
    pub fn mean_trace(&self) -> f64 {
        let d = self.grid.d;
        let n = self.grid.len() as f64;
        (0..d).map(|i| self.entry(i, i).iter().sum::<f64>()).sum::<f64>() / (n * d as f64)
    }

    /// Row-wise divergence `(div M)_i = sum_j D^-_j M_ij`.
    pub fn divergence(&self) -> VectorField {
        let d = self.grid.d;
        let mut out = VectorField::zeros(self.grid);
        for i in 0..d {
            let row = VectorField {
                grid: self.grid,
                comps: (0..d).map(|j| self.comps[i * d + j].clone()).collect(),
            };
            out.comps[i] = divergence(&row).data;
        }
        out
    }

    /// Largest `|M_ij + M_ji|` over all points and pairs.
    pub fn skew_defect(&self) -> f64 {
        let d = self.grid.d;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                for (a, b) in self.entry(i, j).iter().zip(self.entry(j, i)) {
                    worst = worst.max((a + b).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Forward-difference gradient `(u(x + h e_i) - u(x)) / h`.
pub fn gradient(u: &ScalarField) -> VectorField {
    let g = u.grid;
    let inv_h = 1.0 / g.spacing();
    let comps = (0..g.d)
        .map(|axis| {
            (0..g.len())
                .map(|k| (u.data[g.neighbor(k, axis, true)] - u.data[k]) * inv_h)
                .collect()
        })
        .collect();
    VectorField { grid: g, comps }
}

/// Backward-difference divergence; the negative adjoint of [`gradient`].
pub fn divergence(f: &VectorField) -> ScalarField {
    let g = f.grid;
    let inv_h = 1.0 / g.spacing();
    let mut data = vec![0.0; g.len()];
    for (axis, c) in f.comps.iter().enumerate() {
        for (k, out) in data.iter_mut().enumerate() {
            *out += (c[k] - c[g.neighbor(k, axis, false)]) * inv_h;
        }
    }
    ScalarField { grid: g, data }
}

/// Standard `(2d+1)`-point Laplacian, `divergence(gradient(u))`.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    divergence(&gradient(u))
}

/// Mean of `f` over lattice points within periodic distance `r` of `center`
/// (ties included). Falls back to the nearest point for tiny radii.
pub fn ball_average(f: &ScalarField, center: &Vec3, r: f64) -> Result<f64> {
    let g = f.grid;
    if !(r > 0.0) {
        return Err(invalid(format!("ball radius must be positive, got {r}")));
    }
    if r > 0.5 * g.l {
        return Err(invalid(format!("ball radius {r} exceeds half the torus length {}", 0.5 * g.l)));
    }
    let r2 = r * r * (1.0 + 1e-12);
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut nearest = (f64::INFINITY, 0usize);
    for k in 0..g.len() {
        let x = g.position(k);
        let dist2: f64 = (0..g.d).map(|i| g.wrap(x[i] - center[i]).powi(2)).sum();
        if dist2 <= r2 {
            sum += f.data[k];
            count += 1;
        }
        if dist2 < nearest.0 {
            nearest = (dist2, k);
        }
    }
    if count == 0 {
        return Ok(f.data[nearest.1]);
    }
    Ok(sum / count as f64)
}

#[inline]
pub fn norm3(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3(s: f64, a: &Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn matvec(m: &Mat3, v: &Vec3) -> Vec3 {
    [dot3(&m[0], v), dot3(&m[1], v), dot3(&m[2], v)]
}

#[inline]
pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = ZERO33;
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            c[i][j] = (0..MAX_DIM).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn identity(d: usize) -> Mat3 {
    let mut m = ZERO33;
    for (i, row) in m.iter_mut().enumerate().take(d) {
        row[i] = 1.0;
    }
    m
}

/// Canonical unit vector `e_i`.
pub fn unit(i: usize) -> Vec3 {
    let mut v = ZERO3;
    v[i] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random(grid: Grid, seed: u64) -> ScalarField {
        // Weyl sequence; enough for adjointness checks.
        let base = seed as f64 * 0.618_033_988_75;
        let data = (0..grid.len()).map(|k| ((base + k as f64 * 0.754_877_666_2) % 1.0) - 0.5).collect();
        ScalarField::from_vec(grid, data).unwrap()
    }

    #[test]
    fn make_grid_spacing_and_guards() {
        assert_eq!(make_grid(1, 1.0, 8).unwrap().spacing(), 0.125);
        assert_eq!(make_grid(2, 4.0, 64).unwrap().spacing(), 0.0625);
        assert!(make_grid(4, 1.0, 8).is_err());
        assert!(make_grid(2, 1.0, 7).is_err());
        assert!(make_grid(2, 1.0, 2).is_err());
        assert!(make_grid(2, -1.0, 8).is_err());
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = Grid::new(3, 2.0, 8).unwrap();
        let u = ScalarField::constant(g, 3.0);
        assert_eq!(gradient(&u).max_abs(), 0.0);
        let f = VectorField::constant(g, &[1.0, -2.0, 0.5]);
        assert_eq!(divergence(&f).max_abs(), 0.0);
    }

    #[test]
    fn gradient_of_sine_is_forward_difference() {
        let g = Grid::new(1, 1.0, 16).unwrap();
        let h = g.spacing();
        let u = ScalarField::from_fn(g, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        let du = gradient(&u);
        for k in 0..g.len() {
            let x = g.position(k)[0];
            let expect = ((2.0 * std::f64::consts::PI * (x + h)).sin()
                - (2.0 * std::f64::consts::PI * x).sin())
                / h;
            assert!((du.component(0)[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_direct_loop() {
        let g = Grid::new(2, 3.0, 12).unwrap();
        let u = ScalarField::from_fn(g, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp());
        let du = gradient(&u);
        let n = g.points_per_dim() as isize;
        for i in 0..n {
            for j in 0..n {
                let k = g.flat(&[i as usize, j as usize]);
                let dx = (u.at(&[i + 1, j]) - u.at(&[i, j])) / g.spacing();
                let dy = (u.at(&[i, j + 1]) - u.at(&[i, j])) / g.spacing();
                assert_eq!(du.component(0)[k], dx);
                assert_eq!(du.component(1)[k], dy);
            }
        }
    }

    #[test]
    fn divergence_of_gradient_is_five_point_laplacian() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        let u = pseudo_random(g, 3);
        let lap = laplacian(&u);
        let h2 = g.spacing().powi(2);
        for i in 0..8isize {
            for j in 0..8isize {
                let k = g.flat(&[i as usize, j as usize]);
                let expect = (u.at(&[i + 1, j]) + u.at(&[i - 1, j]) + u.at(&[i, j + 1])
                    + u.at(&[i, j - 1])
                    - 4.0 * u.at(&[i, j]))
                    / h2;
                assert!((lap.values()[k] - expect).abs() < 1e-10 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn adjointness_and_zero_mean_divergence() {
        for d in 1..=3 {
            let g = Grid::new(d, 2.0, 8).unwrap();
            let u = pseudo_random(g, 1);
            let v = VectorField::from_components(
                g,
                (0..d).map(|i| pseudo_random(g, 10 + i as u64).into_values()).collect(),
            )
            .unwrap();
            let lhs = gradient(&u).dot(&v);
            let rhs = u.dot(&divergence(&v));
            assert!((lhs + rhs).abs() <= 1e-12 * u.norm_l2() * v.norm_l2() * 1e2);
            assert!(divergence(&v).mean().abs() < 1e-13);
        }
    }

    #[test]
    fn ball_average_cases() {
        let g = Grid::new(2, 4.0, 16).unwrap();
        let f = ScalarField::constant(g, 5.0);
        assert!((ball_average(&f, &[0.3, -1.0, 0.0], 1.0).unwrap() - 5.0).abs() < 1e-14);
        assert!(ball_average(&f, &ZERO3, 2.1).is_err());
        // tiny radius falls back to the nearest lattice point
        let u = ScalarField::from_fn(g, |x| x[0]);
        let v = ball_average(&u, &[0.26, 0.0, 0.0], 1e-3).unwrap();
        assert_eq!(v, 0.25);
        // half-torus indicator centred on the interface
        let fine = Grid::new(2, 4.0, 256).unwrap();
        let ind = ScalarField::from_fn(fine, |x| if x[0] >= 0.0 { 1.0 } else { 0.0 });
        let avg = ball_average(&ind, &ZERO3, 0.5).unwrap();
        assert!((avg - 0.5).abs() < 0.05);
    }

    #[test]
    fn periodic_indexing_wraps() {
        let g = Grid::new(2, 1.0, 4).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] + 10.0 * x[1]);
        assert_eq!(u.at(&[5, -1]), u.at(&[1, 3]));
        assert_eq!(g.neighbor(g.flat(&[3, 0]), 0, true), g.flat(&[0, 0]));
        assert_eq!(g.neighbor(g.flat(&[0, 0]), 1, false), g.flat(&[0, 3]));
    }

    #[test]
    fn skew_assembly() {
        let g = Grid::new(3, 1.0, 4).unwrap();
        let ups = (0..3).map(|s| pseudo_random(g, s)).collect();
        let m = MatrixField::skew_from_upper(g, ups).unwrap();
        assert!(m.is_skew());
        assert_eq!(m.skew_defect(), 0.0);
    }
}
