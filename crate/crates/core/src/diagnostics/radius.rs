//! Meyers minimal radius and the linear minimal scale on the lattice.

use serde::{Deserialize, Serialize};

use crate::corrector::{CorrectorBundle, LinearizedBundle};
use crate::error::{invalid, Result};
use crate::grid::{norm3, Grid, ScalarField};

use super::balls::BallAverager;

/// Slope of the inf-convolution.
pub const ELL: f64 = 1.0 / 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusKind {
    MeyersNonlinear,
    LinearMinimal,
}

#[derive(Clone, Debug)]
pub struct RadiusField {
    pub kind: RadiusKind,
    pub values: ScalarField,
    /// `c_1` for the nonlinear radius, `C` for the linear one.
    pub constant: f64,
    pub ell: f64,
}

/// `1, 2, 4, ...` capped at `cap` (the cap itself is the last level).
pub fn dyadic_levels(cap: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = 1.0;
    while r < cap {
        out.push(r);
        r *= 2.0;
    }
    out.push(cap.max(1.0));
    out
}

/// Smallest level `r` such that `ok[R]` holds at every level `R >= r`;
/// the last level when the condition fails there too.
fn smallest_good_level(levels: &[f64], ok: impl Fn(usize) -> bool) -> f64 {
    let mut best = *levels.last().expect("non-empty levels");
    for i in (0..levels.len()).rev() {
        if !ok(i) {
            break;
        }
        best = levels[i];
    }
    best
}

/// `|grad phi|^p` as a field.
fn gradient_power(bundle: &CorrectorBundle) -> ScalarField {
    let g = *bundle.grad_phi.grid();
    let data = (0..g.len()).map(|k| norm3(&bundle.grad_phi.get(k)).powf(bundle.p)).collect();
    ScalarField::from_vec(g, data).expect("finite powers")
}

/// Ball averages of `|grad phi|^p` at every level, normalized by `1 + |xi|^p`.
pub fn normalized_meyers_averages(bundle: &CorrectorBundle) -> Result<(Vec<f64>, Vec<ScalarField>)> {
    let g = *bundle.grad_phi.grid();
    let levels = dyadic_levels(g.length());
    let avg = BallAverager::new(g);
    let f = gradient_power(bundle);
    let norm = 1.0 + norm3(&bundle.xi).powf(bundle.p);
    let mut out = Vec::with_capacity(levels.len());
    for &r in &levels {
        let mut a = avg.average_radius(&f, r)?;
        a.scale(1.0 / norm);
        out.push(a);
    }
    Ok((levels, out))
}

/// `underline r(x, c)` at every lattice point.
pub fn lower_meyers_radius(bundle: &CorrectorBundle, c: f64) -> Result<ScalarField> {
    let (levels, avgs) = normalized_meyers_averages(bundle)?;
    Ok(lower_radius_from_averages(&levels, &avgs, c))
}

fn lower_radius_from_averages(levels: &[f64], avgs: &[ScalarField], c: f64) -> ScalarField {
    let g = *avgs[0].grid();
    let data = (0..g.len())
        .map(|k| smallest_good_level(levels, |i| avgs[i].values()[k] <= c))
        .collect();
    ScalarField::from_vec(g, data).expect("finite radii")
}

/// Meyers minimal radius: the lower radius inf-convolved with slope `ELL`.
pub fn meyers_radius(bundle: &CorrectorBundle, c1: f64) -> Result<RadiusField> {
    if !(c1 > 0.0) {
        return Err(invalid(format!("c1 must be positive, got {c1}")));
    }
    let lower = lower_meyers_radius(bundle, c1)?;
    Ok(RadiusField { kind: RadiusKind::MeyersNonlinear, values: inf_convolution(&lower, ELL), constant: c1, ell: ELL })
}

/// `c_1` as four times the largest normalized average over references.
pub fn calibrate_c1(references: &[&CorrectorBundle]) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for b in references {
        let (_, avgs) = normalized_meyers_averages(b)?;
        for a in &avgs {
            sup = sup.max(a.max_abs());
        }
    }
    if sup == 0.0 {
        return Err(invalid("calibration references have vanishing gradients; add a heterogeneous sample"));
    }
    Ok(4.0 * sup)
}

/// Linear minimal scale with constant `C`, levels capped at `L/2`.
pub fn linear_minimal_radius(bundle: &CorrectorBundle, lin: &LinearizedBundle, c: f64) -> Result<RadiusField> {
    if !(c > 0.0) {
        return Err(invalid(format!("C must be positive, got {c}")));
    }
    let g = *bundle.grad_phi.grid();
    let levels = dyadic_levels(0.5 * g.length());
    let avg = BallAverager::new(g);
    let energy = weighted_linear_energy(bundle, lin);
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for &r in &levels {
        lhs.push(avg.average_radius(&energy, r)?);
        rhs.push(avg.average_radius(&bundle.mu, 2.0 * r)?);
    }
    let data = (0..g.len())
        .map(|k| smallest_good_level(&levels, |i| lhs[i].values()[k] <= c * rhs[i].values()[k]))
        .collect();
    Ok(RadiusField {
        kind: RadiusKind::LinearMinimal,
        values: ScalarField::from_vec(g, data)?,
        constant: c,
        ell: 0.0,
    })
}

/// `|grad phi_tilde|^2 mu`.
pub fn weighted_linear_energy(bundle: &CorrectorBundle, lin: &LinearizedBundle) -> ScalarField {
    let g = *bundle.grad_phi.grid();
    let data = (0..g.len())
        .map(|k| {
            let v = lin.grad_phi.get(k);
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) * bundle.mu.values()[k]
        })
        .collect();
    ScalarField::from_vec(g, data).expect("finite energy")
}

/// Exact lattice evaluation of `min_y (u(y) + ell |x - y|)` with periodic
/// distance: one squared distance transform per distinct value of `u`.
pub fn inf_convolution(u: &ScalarField, ell: f64) -> ScalarField {
    let g = *u.grid();
    let mut levels: Vec<f64> = u.values().to_vec();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let h = g.spacing();
    let mut out = vec![f64::INFINITY; g.len()];
    for &v in &levels {
        let seeds: Vec<bool> = u.values().iter().map(|&x| x <= v).collect();
        let d2 = squared_distance_transform(&g, &seeds);
        for (o, &s) in out.iter_mut().zip(&d2) {
            let cand = v + ell * (s as f64).sqrt() * h;
            if cand < *o {
                *o = cand;
            }
        }
    }
    ScalarField::from_vec(g, out).expect("finite radii")
}

const FAR: i64 = i64::MAX / 4;

/// Periodic squared Euclidean distance (in cells) to the nearest seed.
pub fn squared_distance_transform(grid: &Grid, seeds: &[bool]) -> Vec<i64> {
    let n = grid.points_per_dim();
    let mut f: Vec<i64> = seeds.iter().map(|&s| if s { 0 } else { FAR }).collect();
    let mut line = vec![0i64; n];
    let mut out = vec![0i64; n];
    for axis in 0..grid.dim() {
        let stride = grid.stride(axis);
        for start in 0..grid.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (m, v) in line.iter_mut().enumerate() {
                *v = f[start + m * stride];
            }
            lower_envelope_periodic(&line, &mut out);
            for (m, v) in out.iter().enumerate() {
                f[start + m * stride] = *v;
            }
        }
    }
    f
}

/// `out[q] = min_p f[p] + dist_n(p, q)^2` on a periodic line, via the lower
/// envelope of parabolas over three copies of the line.
fn lower_envelope_periodic(f: &[i64], out: &mut [i64]) {
    let n = f.len() as i64;
    let m = 3 * n;
    let val = |p: i64| f[p.rem_euclid(n) as usize];
    let mut v: Vec<i64> = Vec::with_capacity(m as usize);
    let mut z: Vec<f64> = Vec::with_capacity(m as usize + 1);
    for p in 0..m {
        let fp = val(p);
        if fp >= FAR {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(p);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&q) => {
                    let fq = val(q);
                    let s = ((fp + p * p) - (fq + q * q)) as f64 / (2 * (p - q)) as f64;
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                        continue;
                    }
                    v.push(p);
                    z.push(s);
                    break;
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = FAR);
        return;
    }
    let mut j = 0;
    for q in n..2 * n {
        while j + 1 < v.len() && z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        out[(q - n) as usize] = val(p) + (q - p) * (q - p);
    }
}

/// Brute-force lower radius: direct ball sums at every point and level.
pub fn lower_meyers_radius_brute(bundle: &CorrectorBundle, c: f64) -> ScalarField {
    let g = *bundle.grad_phi.grid();
    let levels = dyadic_levels(g.length());
    let f = gradient_power(bundle);
    let norm = 1.0 + norm3(&bundle.xi).powf(bundle.p);
    let data = (0..g.len())
        .map(|k| {
            smallest_good_level(&levels, |i| super::balls::ball_average_direct(&f, k, levels[i]) / norm <= c)
        })
        .collect();
    ScalarField::from_vec(g, data).expect("finite radii")
}

/// Brute-force inf-convolution over all lattice pairs.
pub fn inf_convolution_brute(u: &ScalarField, ell: f64) -> ScalarField {
    let g = *u.grid();
    let d = g.dim();
    let n = g.points_per_dim() as i64;
    let h = g.spacing();
    let data = (0..g.len())
        .map(|x| {
            let cx = g.coords(x);
            (0..g.len())
                .map(|y| {
                    let cy = g.coords(y);
                    let d2: i64 = (0..d)
                        .map(|i| {
                            let a = (cx[i] as i64 - cy[i] as i64).rem_euclid(n);
                            a.min(n - a).pow(2)
                        })
                        .sum();
                    u.values()[y] + ell * (d2 as f64).sqrt() * h
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    ScalarField::from_vec(g, data).expect("finite radii")
}

/// Brute-force linear minimal scale.
pub fn linear_minimal_radius_brute(bundle: &CorrectorBundle, lin: &LinearizedBundle, c: f64) -> ScalarField {
    let g = *bundle.grad_phi.grid();
    let levels = dyadic_levels(0.5 * g.length());
    let energy = weighted_linear_energy(bundle, lin);
    let data = (0..g.len())
        .map(|k| {
            smallest_good_level(&levels, |i| {
                super::balls::ball_average_direct(&energy, k, levels[i])
                    <= c * super::balls::ball_average_direct(&bundle.mu, k, 2.0 * levels[i])
            })
        })
        .collect();
    ScalarField::from_vec(g, data).expect("finite radii")
}

/// Largest excess of `|r(x) - r(y)| - ell |x - y|` over all pairs.
pub fn lipschitz_excess(r: &ScalarField, ell: f64) -> f64 {
    let g = *r.grid();
    let mut worst = f64::NEG_INFINITY;
    for x in 0..g.len() {
        let px = g.position(x);
        for y in 0..g.len() {
            let dist = g.periodic_distance(&px, &g.position(y));
            worst = worst.max((r.values()[x] - r.values()[y]).abs() - ell * dist);
        }
    }
    worst
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichReport {
    pub c1: f64,
    pub c2: f64,
    /// Points where `underline r(c2) > r_*(c1)`.
    pub lower_violations: usize,
    /// Points where `r_*(c1) > underline r(c1)`.
    pub upper_violations: usize,
}

/// Point-wise check of `underline r(x, c2) <= r_*(x, c1) <= underline r(x, c1)`
/// with `c2 = (1/ell + 1)^d c1`.
pub fn sandwich_check(bundle: &CorrectorBundle, c1: f64) -> Result<SandwichReport> {
    let d = bundle.grad_phi.grid().dim();
    let c2 = (1.0 / ELL + 1.0).powi(d as i32) * c1;
    let (levels, avgs) = normalized_meyers_averages(bundle)?;
    let lower1 = lower_radius_from_averages(&levels, &avgs, c1);
    let lower2 = lower_radius_from_averages(&levels, &avgs, c2);
    let star = inf_convolution(&lower1, ELL);
    let mut lv = 0;
    let mut uv = 0;
    for k in 0..lower1.values().len() {
        let s = star.values()[k];
        if lower2.values()[k] > s {
            lv += 1;
        }
        if s > lower1.values()[k] {
            uv += 1;
        }
    }
    Ok(SandwichReport { c1, c2, lower_violations: lv, upper_violations: uv })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels() {
        assert_eq!(dyadic_levels(16.0), vec![1.0, 2.0, 4.0, 8.0, 16.0]);
        assert_eq!(dyadic_levels(12.0), vec![1.0, 2.0, 4.0, 8.0, 12.0]);
        assert_eq!(dyadic_levels(1.0), vec![1.0]);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let g = Grid::new(2, 1.0, 12).unwrap();
        let seeds: Vec<bool> = (0..g.len()).map(|k| k % 37 == 3 || k == 100).collect();
        let fast = squared_distance_transform(&g, &seeds);
        for x in 0..g.len() {
            let cx = g.coords(x);
            let brute = (0..g.len())
                .filter(|&y| seeds[y])
                .map(|y| {
                    let cy = g.coords(y);
                    (0..2)
                        .map(|i| {
                            let a = (cx[i] as i64 - cy[i] as i64).rem_euclid(12);
                            a.min(12 - a).pow(2)
                        })
                        .sum::<i64>()
                })
                .min()
                .unwrap();
            assert_eq!(fast[x], brute);
        }
    }

    #[test]
    fn inf_convolution_matches_brute_force() {
        for d in 1..=3 {
            let g = Grid::new(d, 8.0, 8).unwrap();
            let u = ScalarField::from_fn(g, |x| [1.0, 2.0, 4.0, 8.0][((x[0] * 3.1 + x[1] * 1.7 + x[2]).abs() as usize) % 4]);
            let fast = inf_convolution(&u, 0.3);
            let slow = inf_convolution_brute(&u, 0.3);
            assert_eq!(fast, slow);
            assert!(lipschitz_excess(&fast, 0.3) <= 1e-12);
        }
    }

    use crate::corrector::{solve_corrector, solve_linearized, Ensemble};
    use crate::field::CoefficientRecipe;
    use crate::grid::{identity, unit};
    use crate::operator::OperatorSpec;
    use crate::solver::SolverConfig;

    fn sample(n: usize) -> (OperatorSpec, CorrectorBundle) {
        let g = Grid::new(2, 16.0, n).unwrap();
        let ens = Ensemble::random(g, CoefficientRecipe::isotropic_tanh(0.2, 1.0), 3.0, 21).unwrap();
        let op = ens.operator(0).unwrap();
        let b = solve_corrector(&op, &[1.0, 0.0, 0.0], &SolverConfig::default()).unwrap();
        (op, b)
    }

    #[test]
    fn constant_coefficient_radius_is_one() {
        let g = Grid::new(2, 16.0, 16).unwrap();
        let op = OperatorSpec::constant(g, 3.0, 0.5, &identity(2)).unwrap();
        let b = solve_corrector(&op, &[1.0, 0.0, 0.0], &SolverConfig::default()).unwrap();
        let r = meyers_radius(&b, 1.0).unwrap();
        assert!(r.values.values().iter().all(|&v| v == 1.0));
        let lin = solve_linearized(&op, &b, &unit(0), &SolverConfig::default()).unwrap();
        let rl = linear_minimal_radius(&b, &lin, 1.0).unwrap();
        assert!(rl.values.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn meyers_radius_matches_brute_force() {
        let (_, b) = sample(16);
        let (_, avgs) = normalized_meyers_averages(&b).unwrap();
        // a threshold in the bulk of the averages so radii vary
        let mut all: Vec<f64> = avgs.iter().flat_map(|a| a.values().to_vec()).collect();
        all.sort_by(f64::total_cmp);
        let c = all[all.len() / 2];
        let fast = meyers_radius(&b, c).unwrap();
        let lower = lower_meyers_radius_brute(&b, c);
        assert!(lower.values().iter().any(|&v| v > 1.0));
        assert_eq!(lower_meyers_radius(&b, c).unwrap(), lower);
        assert_eq!(fast.values, inf_convolution_brute(&lower, ELL));
        assert!(lipschitz_excess(&fast.values, ELL) <= 2.0 * b.phi.grid().spacing());
        assert!(fast.values.values().iter().all(|&v| (1.0..=16.0).contains(&v)));
    }

    #[test]
    fn linear_radius_matches_brute_force() {
        let (op, b) = sample(16);
        let lin = solve_linearized(&op, &b, &unit(0), &SolverConfig::default()).unwrap();
        for c in [0.01, 0.05, 0.2, 1e6] {
            let fast = linear_minimal_radius(&b, &lin, c).unwrap();
            assert_eq!(fast.values, linear_minimal_radius_brute(&b, &lin, c), "C = {c}");
        }
        let vacuous = linear_minimal_radius(&b, &lin, 1e12).unwrap();
        assert!(vacuous.values.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn calibration_and_sandwich() {
        let (_, b) = sample(16);
        let c1 = calibrate_c1(&[&b]).unwrap();
        assert!(c1 > 0.0);
        let rep = sandwich_check(&b, c1).unwrap();
        assert_eq!(rep.upper_violations, 0);
    }
}
