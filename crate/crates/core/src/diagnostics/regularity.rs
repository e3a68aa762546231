//! Hole-filling, Caccioppoli and energy-type constants of correctors.

use serde::{Deserialize, Serialize};

use crate::corrector::{per_sample, solve_corrector, CorrectorBundle, Ensemble};
use crate::error::{invalid, Result};
use crate::grid::{add3, ball_average, dot3, norm3, sub3, ScalarField, Vec3, ZERO3};
use crate::operator::OperatorSpec;
use crate::solver::SolverConfig;
use crate::stats::{linear_fit, median, LinearFit};

use super::balls::{cell_radius2, BallAverager};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HoleFillingReport {
    pub radii: Vec<f64>,
    pub averages: Vec<f64>,
    /// Decay exponent of the average: `fint_{B_r} ~ r^{-exponent}`.
    pub exponent: f64,
    pub delta: f64,
    pub fit: LinearFit,
}

/// `|xi + grad phi|^2 mu`, the energy density of `u = xi.x + phi`.
fn energy_density(bundle: &CorrectorBundle) -> ScalarField {
    let g = *bundle.grad_phi.grid();
    let data = (0..g.len())
        .map(|k| {
            let t = add3(&bundle.xi, &bundle.grad_phi.get(k));
            dot3(&t, &t) * bundle.mu.values()[k]
        })
        .collect();
    ScalarField::from_vec(g, data).expect("finite density")
}

/// Log-log fit of the energy of `u = xi.x + phi` on balls about the origin.
pub fn holefilling_fit(bundle: &CorrectorBundle, radii: &[f64]) -> Result<HoleFillingReport> {
    if radii.len() < 4 {
        return Err(invalid("hole-filling fit needs at least four radii"));
    }
    let density = energy_density(bundle);
    let averages = radii
        .iter()
        .map(|&r| ball_average(&density, &ZERO3, r))
        .collect::<Result<Vec<f64>>>()?;
    if averages.iter().any(|a| !(*a > 0.0)) {
        return Err(invalid("energy vanishes on a ball"));
    }
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = averages.iter().map(|a| a.ln()).collect();
    let fit = linear_fit(&x, &y)?;
    let exponent = -fit.slope;
    Ok(HoleFillingReport {
        radii: radii.to_vec(),
        averages,
        exponent,
        delta: bundle.grad_phi.grid().dim() as f64 - exponent,
        fit,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaccioppoliRow {
    pub r: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub best_c: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaccioppoliReport {
    pub rows: Vec<CaccioppoliRow>,
    pub constant: f64,
}

fn golden_min(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Ratios `fint_{B_r} |grad u|^2 mu / inf_c fint_{B_2r \ B_r} ((|u-c|/r)^2 + (|u-c|/r)^p)`
/// for `u = xi.(x - x_0) + phi` about the origin.
pub fn caccioppoli_constant(bundle: &CorrectorBundle, radii: &[f64]) -> Result<CaccioppoliReport> {
    let g = *bundle.phi.grid();
    let d = g.dim();
    let h = g.spacing();
    let p = bundle.p;
    let n = g.points_per_dim() as isize;
    let density = energy_density(bundle);
    let mut rows = Vec::new();
    for &r in radii {
        if !(r > 0.0) || 2.0 * r > 0.5 * g.length() {
            return Err(invalid(format!("radius {r} needs 0 < 2r <= L/2")));
        }
        let inner2 = cell_radius2(&g, r);
        let outer2 = cell_radius2(&g, 2.0 * r);
        let reach = (2.0 * r / h).floor() as isize + 1;
        let mut inner = (0.0, 0usize);
        let mut ring = Vec::new();
        let mut m = vec![-reach; d];
        loop {
            let dist2 = m.iter().map(|v| v * v).sum::<isize>() as f64;
            let idx: Vec<isize> = (0..d).map(|i| n / 2 + m[i]).collect();
            if dist2 <= inner2 {
                inner.0 += density.at(&idx);
                inner.1 += 1;
            } else if dist2 <= outer2 {
                let lin: f64 = (0..d).map(|i| bundle.xi[i] * m[i] as f64 * h).sum();
                ring.push(lin + bundle.phi.at(&idx));
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
        if inner.1 == 0 || ring.is_empty() {
            return Err(invalid(format!("radius {r} resolves no lattice annulus")));
        }
        let lhs = inner.0 / inner.1 as f64;
        let cost = |c: f64| {
            ring.iter()
                .map(|u| {
                    let t = (u - c).abs() / r;
                    t * t + t.powf(p)
                })
                .sum::<f64>()
                / ring.len() as f64
        };
        let lo = ring.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ring.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let best_c = golden_min(lo, hi, cost);
        let rhs = cost(best_c);
        let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
        rows.push(CaccioppoliRow { r, lhs, rhs, ratio, best_c });
    }
    let constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(CaccioppoliReport { rows, constant })
}

/// Smallest `C` with `fint_{B_r(x)} |xi+grad phi|^2 + |xi+grad phi|^p
/// <= C (1+|xi|^p) ((r_*(x) v r) / r)^{d - delta}` over all `x` and `radii`.
pub fn average_control_constant(bundle: &CorrectorBundle, r_star: &ScalarField, delta: f64, radii: &[f64]) -> Result<f64> {
    let g = *bundle.phi.grid();
    let d = g.dim() as f64;
    let p = bundle.p;
    let data = (0..g.len())
        .map(|k| {
            let t = norm3(&add3(&bundle.xi, &bundle.grad_phi.get(k)));
            t * t + t.powf(p)
        })
        .collect();
    let f = ScalarField::from_vec(g, data)?;
    let scale = 1.0 + norm3(&bundle.xi).powf(p);
    let avg = BallAverager::new(g);
    let mut c = 0.0f64;
    for &r in radii {
        let a = avg.average_radius(&f, r)?;
        for k in 0..g.len() {
            let growth = (r_star.values()[k].max(r) / r).powf(d - delta);
            c = c.max(a.values()[k] / (scale * growth));
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RescalingReport {
    pub s: f64,
    /// `||phi_s - phi|| / max(||phi||, 1)`
    pub phi_difference: f64,
    /// `|a_bar_s - s a_bar| / max(|s a_bar|, 1e-300)`
    pub abar_relative_error: f64,
}

/// Compare correctors of `A` and `s A`.
pub fn rescaling_invariance(op: &OperatorSpec, xi: &Vec3, s: f64, cfg: &SolverConfig) -> Result<RescalingReport> {
    let base = solve_corrector(op, xi, cfg)?;
    let scaled = solve_corrector(&op.rescaled(s)?, xi, cfg)?;
    let mut diff = scaled.phi.clone();
    diff.axpy(-1.0, &base.phi);
    let target: Vec3 = base.abar_sample.map(|v| s * v);
    Ok(RescalingReport {
        s,
        phi_difference: diff.norm_l2() / base.phi.norm_l2().max(1.0),
        abar_relative_error: norm3(&sub3(&scaled.abar_sample, &target)) / norm3(&target).max(1e-300),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsReport {
    pub xis: Vec<Vec3>,
    pub sample_count: usize,
    /// Per sample: largest `energy / (|xi|^2 + |xi|^p)` over nonzero `xi`.
    pub energy_constants: Vec<f64>,
    /// Per sample: largest `rms|grad phi_1 - grad phi_2| / |xi_1 - xi_2|`.
    pub lipschitz_constants: Vec<f64>,
    pub energy_constant: f64,
    pub lipschitz_constant: f64,
    /// No sample exceeds ten times the median of either constant.
    pub finite: bool,
}

/// Energy and Lipschitz constants of `xi -> grad phi_xi` across samples.
pub fn corrector_bounds(ens: &Ensemble, xis: &[Vec3], sample_count: usize, cfg: &SolverConfig) -> Result<BoundsReport> {
    if xis.len() < 2 {
        return Err(invalid("need at least two slopes"));
    }
    let p = ens.p();
    let count = if ens.is_deterministic() { 1 } else { sample_count.max(1) };
    let per: Vec<(f64, f64)> = per_sample(count, |i| {
        let op = ens.operator(i)?;
        let bundles = xis.iter().map(|xi| solve_corrector(&op, xi, cfg)).collect::<Result<Vec<_>>>()?;
        let mut energy = 0.0f64;
        for b in &bundles {
            let t = norm3(&b.xi);
            if t > 0.0 {
                energy = energy.max(b.energy() / (t * t + t.powf(p)));
            }
        }
        let n = op.grid().len() as f64;
        let mut lip = 0.0f64;
        for j in 0..bundles.len() {
            for k in (j + 1)..bundles.len() {
                let mut diff = bundles[j].grad_phi.clone();
                diff.axpy(-1.0, &bundles[k].grad_phi);
                let rms = diff.norm_l2() / n.sqrt();
                lip = lip.max(rms / norm3(&sub3(&xis[j], &xis[k])));
            }
        }
        Ok((energy, lip))
    })?;
    let energy_constants: Vec<f64> = per.iter().map(|v| v.0).collect();
    let lipschitz_constants: Vec<f64> = per.iter().map(|v| v.1).collect();
    let bounded = |v: &[f64]| {
        let m = median(v);
        v.iter().all(|x| x.is_finite() && *x <= 10.0 * m.max(f64::MIN_POSITIVE))
    };
    let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    Ok(BoundsReport {
        xis: xis.to_vec(),
        sample_count: count,
        energy_constant: max(&energy_constants),
        lipschitz_constant: max(&lipschitz_constants),
        finite: bounded(&energy_constants) && bounded(&lipschitz_constants),
        energy_constants,
        lipschitz_constants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::solve_corrector;
    use crate::field::CoefficientRecipe;
    use crate::grid::{identity, Grid};

    fn random_bundle(d: usize, n: usize, p: f64, seed: u64) -> (OperatorSpec, CorrectorBundle) {
        let g = Grid::new(d, 16.0, n).unwrap();
        let ens = Ensemble::random(g, CoefficientRecipe::isotropic_tanh(0.25, 1.0), p, seed).unwrap();
        let op = ens.operator(0).unwrap();
        let b = solve_corrector(&op, &[1.0, 0.5, 0.0], &SolverConfig::default()).unwrap();
        (op, b)
    }

    #[test]
    fn constant_coefficient_has_no_decay() {
        let g = Grid::new(2, 16.0, 32).unwrap();
        let op = OperatorSpec::constant(g, 3.0, 0.5, &identity(2)).unwrap();
        let b = solve_corrector(&op, &[1.0, 0.0, 0.0], &SolverConfig::default()).unwrap();
        let r = holefilling_fit(&b, &[1.0, 2.0, 3.0, 4.0, 6.0]).unwrap();
        assert!(r.exponent.abs() < 1e-10);
        assert!((r.delta - 2.0).abs() < 1e-10);
        assert!(holefilling_fit(&b, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn random_sample_exponent_below_dimension() {
        let (_, b) = random_bundle(2, 32, 3.0, 4);
        let r = holefilling_fit(&b, &[1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!(r.exponent < 2.0 && r.delta > 0.0);
    }

    #[test]
    fn golden_section_finds_minimum() {
        let c = golden_min(-3.0, 5.0, |x| (x - 1.25).powi(2) + (x - 1.25).abs().powf(3.0));
        assert!((c - 1.25).abs() < 1e-6);
    }

    #[test]
    fn caccioppoli_constant_is_finite() {
        let (_, b) = random_bundle(2, 32, 3.0, 2);
        let rep = caccioppoli_constant(&b, &[1.0, 2.0, 4.0]).unwrap();
        assert!(rep.constant.is_finite() && rep.constant > 0.0);
        assert!(caccioppoli_constant(&b, &[5.0]).is_err());
    }

    #[test]
    fn affine_function_ring_minimizer_is_center_value() {
        // u = xi.x is odd about the centre, so the best constant is 0
        let g = Grid::new(2, 16.0, 32).unwrap();
        let op = OperatorSpec::constant(g, 2.0, 0.5, &identity(2)).unwrap();
        let b = solve_corrector(&op, &[1.0, 0.0, 0.0], &SolverConfig::default()).unwrap();
        let rep = caccioppoli_constant(&b, &[2.0]).unwrap();
        assert!(rep.rows[0].best_c.abs() < 1e-6, "{:?}", rep.rows[0]);
    }

    #[test]
    fn rescaling_leaves_corrector_unchanged() {
        let (op, _) = random_bundle(2, 16, 3.0, 9);
        let rep = rescaling_invariance(&op, &[1.0, -0.5, 0.0], 0.5, &SolverConfig::default()).unwrap();
        assert!(rep.phi_difference < 1e-8, "{rep:?}");
        assert!(rep.abar_relative_error < 1e-8, "{rep:?}");
    }

    #[test]
    fn bounds_for_constant_coefficient_vanish() {
        let g = Grid::new(2, 8.0, 16).unwrap();
        let ens = Ensemble::Fixed(OperatorSpec::constant(g, 3.0, 0.5, &identity(2)).unwrap());
        let rep = corrector_bounds(&ens, &[[0.0; 3], [1.0, 0.0, 0.0]], 5, &SolverConfig::default()).unwrap();
        assert!(rep.energy_constant < 1e-18 && rep.lipschitz_constant < 1e-9);
        assert!(rep.finite);
    }

    #[test]
    fn average_control_with_unit_radius() {
        let (_, b) = random_bundle(2, 32, 3.0, 1);
        let rstar = ScalarField::constant(*b.phi.grid(), 1.0);
        let c = average_control_constant(&b, &rstar, 1.0, &[1.0, 2.0, 4.0]).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }
}
