//! CLT scaling of ball averages, corrector growth and moment tails.

use serde::{Deserialize, Serialize};

use crate::corrector::{per_sample, solve_corrector, solve_flux_corrector, solve_linearized, Ensemble};
use crate::error::{invalid, Result};
use crate::grid::{ball_average, gradient, unit, Grid, ScalarField, Vec3, ZERO3};
use crate::solver::SolverConfig;
use crate::stats::{linear_fit, mean_stderr, weighted_linear_fit, LinearFit};

use super::mu_d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    GradPhi,
    GradSigma,
    GradPhiTilde,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub quantity: Quantity,
    pub radii: Vec<f64>,
    /// Trace of the covariance of the averaged components, per radius.
    pub variances: Vec<f64>,
    pub variance_stderr: Vec<f64>,
    pub sample_count: usize,
    /// `None` when every variance vanishes.
    pub fit: Option<LinearFit>,
}

impl ScalingReport {
    pub fn is_degenerate(&self) -> bool {
        self.fit.is_none()
    }
}

/// Scalar component fields of the chosen quantity for one sample.
fn quantity_components(ens: &Ensemble, index: u64, xi: &Vec3, q: Quantity, cfg: &SolverConfig) -> Result<Vec<ScalarField>> {
    let op = ens.operator(index)?;
    let bundle = solve_corrector(&op, xi, cfg)?;
    let d = op.grid().dim();
    Ok(match q {
        Quantity::GradPhi => (0..d).map(|i| bundle.grad_phi.component_field(i)).collect(),
        Quantity::GradPhiTilde => {
            let lin = solve_linearized(&op, &bundle, &unit(0), cfg)?;
            (0..d).map(|i| lin.grad_phi.component_field(i)).collect()
        }
        Quantity::GradSigma => {
            let b = solve_flux_corrector(bundle)?;
            let sigma = b.sigma.expect("populated above");
            let grid = *op.grid();
            let mut out = Vec::new();
            for i in 0..d {
                for j in (i + 1)..d {
                    let s = ScalarField::from_vec(grid, sigma.entry(i, j).to_vec())?;
                    let g = gradient(&s);
                    out.extend((0..d).map(|a| g.component_field(a)));
                }
            }
            out
        }
    })
}

/// Variance of `fint_{B_R} quantity` across samples as a function of `R`,
/// with a weighted log-log slope fit.
pub fn clt_scaling(
    ens: &Ensemble,
    xi: &Vec3,
    quantity: Quantity,
    radii: &[f64],
    sample_count: usize,
    cfg: &SolverConfig,
) -> Result<ScalingReport> {
    let grid = ens.grid();
    if radii.len() < 2 {
        return Err(invalid("need at least two radii"));
    }
    if let Some(r) = radii.iter().find(|&&r| !(r > 0.0) || r > 0.25 * grid.length()) {
        return Err(invalid(format!("radius {r} outside (0, L/4]")));
    }
    if sample_count < 2 {
        return Err(invalid("need at least two samples"));
    }
    if quantity == Quantity::GradSigma && grid.dim() < 2 {
        return Err(invalid("the flux corrector is vacuous in one dimension"));
    }
    let count = if ens.is_deterministic() { 2 } else { sample_count };
    // averages[sample][radius][component]
    let averages = per_sample(count, |i| {
        let comps = quantity_components(ens, i, xi, quantity, cfg)?;
        radii
            .iter()
            .map(|&r| comps.iter().map(|c| ball_average(c, &ZERO3, r)).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<Vec<f64>>>>()
    })?;
    let n = count as f64;
    let mut variances = Vec::new();
    let mut stderrs = Vec::new();
    for ri in 0..radii.len() {
        let nc = averages[0][ri].len();
        let means: Vec<f64> = (0..nc).map(|c| averages.iter().map(|s| s[ri][c]).sum::<f64>() / n).collect();
        let y: Vec<f64> = averages
            .iter()
            .map(|s| (0..nc).map(|c| (s[ri][c] - means[c]).powi(2)).sum::<f64>() * n / (n - 1.0))
            .collect();
        let (v, se) = mean_stderr(&y);
        variances.push(v);
        stderrs.push(se);
    }
    let fit = if variances.iter().all(|&v| v > 0.0) {
        let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let y: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
        let s: Vec<f64> = variances.iter().zip(&stderrs).map(|(v, e)| e / v).collect();
        Some(weighted_linear_fit(&x, &y, &s)?)
    } else {
        None
    };
    Ok(ScalingReport {
        quantity,
        radii: radii.to_vec(),
        variances,
        variance_stderr: stderrs,
        sample_count: count,
        fit,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub x: Vec3,
    pub weight: f64,
    /// `E[X^q]^{1/q}` for `q = 1, 2, 4` of `X = |phi(x) - fint_B phi|`.
    pub phi_moments: [f64; 3],
    pub sigma_moments: [f64; 3],
    /// Largest `X / mu_d(x)` over samples.
    pub phi_sup_ratio: f64,
    pub sigma_sup_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthReport {
    pub sample_count: usize,
    pub points: Vec<GrowthPoint>,
}

impl GrowthReport {
    /// Ratio moments `E[X^q]^{1/q} / mu_d(x)` for one `q` index.
    pub fn phi_ratios(&self, qi: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.phi_moments[qi] / p.weight).collect()
    }
}

fn nearest_index(grid: &Grid, x: &Vec3) -> usize {
    let n = grid.points_per_dim() as isize;
    let h = grid.spacing();
    let c: Vec<usize> = (0..grid.dim())
        .map(|i| ((x[i] / h).round() as isize + n / 2).rem_euclid(n) as usize)
        .collect();
    grid.flat(&c)
}

const MOMENTS: [f64; 3] = [1.0, 2.0, 4.0];

fn moments(xs: &[f64]) -> [f64; 3] {
    let n = xs.len() as f64;
    MOMENTS.map(|q| (xs.iter().map(|x| x.powf(q)).sum::<f64>() / n).powf(1.0 / q))
}

/// Moments of the re-anchored correctors `phi(x) - fint_B phi` and
/// `sigma(x) - fint_B sigma` relative to the weight `mu_d(|x|)`.
pub fn corrector_growth(
    ens: &Ensemble,
    xi: &Vec3,
    points: &[Vec3],
    sample_count: usize,
    cfg: &SolverConfig,
) -> Result<GrowthReport> {
    let grid = ens.grid();
    let d = grid.dim();
    if let Some(x) = points.iter().find(|x| (0..d).any(|i| x[i].abs() > 0.25 * grid.length())) {
        return Err(invalid(format!("point {x:?} outside Q_(L/4)")));
    }
    let idx: Vec<usize> = points.iter().map(|x| nearest_index(&grid, x)).collect();
    let count = if ens.is_deterministic() { 1 } else { sample_count.max(1) };
    let unit_radius = 1.0f64.max(grid.spacing());
    // per sample: (phi deviations, sigma deviations) per point
    let per = per_sample(count, |i| {
        let op = ens.operator(i)?;
        let b = solve_flux_corrector(solve_corrector(&op, xi, cfg)?)?;
        let anchor = ball_average(&b.phi, &ZERO3, unit_radius)?;
        let sigma = b.sigma.expect("populated above");
        let mut sigma_anchor = Vec::new();
        for a in 0..d {
            for c in (a + 1)..d {
                let s = ScalarField::from_vec(grid, sigma.entry(a, c).to_vec())?;
                sigma_anchor.push((s.clone(), ball_average(&s, &ZERO3, unit_radius)?));
            }
        }
        Ok(idx
            .iter()
            .map(|&k| {
                let dphi = (b.phi.values()[k] - anchor).abs();
                // Frobenius norm over the full skew matrix
                let ds = (2.0 * sigma_anchor.iter().map(|(s, m)| (s.values()[k] - m).powi(2)).sum::<f64>()).sqrt();
                (dphi, ds)
            })
            .collect::<Vec<_>>())
    })?;
    let points = points
        .iter()
        .enumerate()
        .map(|(pi, x)| {
            let w = mu_d(d, crate::grid::norm3(x));
            let phis: Vec<f64> = per.iter().map(|s| s[pi].0).collect();
            let sigmas: Vec<f64> = per.iter().map(|s| s[pi].1).collect();
            GrowthPoint {
                x: *x,
                weight: w,
                phi_moments: moments(&phis),
                sigma_moments: moments(&sigmas),
                phi_sup_ratio: phis.iter().cloned().fold(0.0, f64::max) / w,
                sigma_sup_ratio: sigmas.iter().cloned().fold(0.0, f64::max) / w,
            }
        })
        .collect();
    Ok(GrowthReport { sample_count: count, points })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailReport {
    pub q: Vec<f64>,
    pub q_norms: Vec<f64>,
    /// Slope of `log E[X^q]^{1/q}` against `log q`.
    pub kappa: f64,
    pub fit: LinearFit,
}

/// Moment growth `E[|X|^q]^{1/q} ~ q^kappa` for `q = 1, 2, 4, 8`.
pub fn moment_tail(values: &[f64]) -> Result<TailReport> {
    if values.len() < 200 {
        return Err(invalid(format!("moment tail needs at least 200 samples, got {}", values.len())));
    }
    let q = vec![1.0, 2.0, 4.0, 8.0];
    let n = values.len() as f64;
    let q_norms: Vec<f64> = q
        .iter()
        .map(|&qq| (values.iter().map(|v| v.abs().powf(qq)).sum::<f64>() / n).powf(1.0 / qq))
        .collect();
    if q_norms.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("moment tail needs a nonzero sample"));
    }
    let x: Vec<f64> = q.iter().map(|v: &f64| v.ln()).collect();
    let y: Vec<f64> = q_norms.iter().map(|v| v.ln()).collect();
    let fit = linear_fit(&x, &y)?;
    Ok(TailReport { q, q_norms, kappa: fit.slope, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{purpose, SampleSeed};

    #[test]
    fn constant_list_has_zero_kappa() {
        let r = moment_tail(&vec![1.0; 250]).unwrap();
        assert!(r.kappa.abs() < 1e-14);
        assert!(r.q_norms.iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(moment_tail(&[1.0; 10]).is_err());
    }

    #[test]
    fn gaussian_moment_growth() {
        // oracle: E|Z|^q = 2^{q/2} Gamma((q+1)/2) / sqrt(pi)
        let exact: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0]
            .iter()
            .map(|&q| {
                let m = 2f64.powf(q / 2.0) * statrs::function::gamma::gamma((q + 1.0) / 2.0) / std::f64::consts::PI.sqrt();
                m.powf(1.0 / q)
            })
            .collect();
        let x: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = exact.iter().map(|v| v.ln()).collect();
        let kappa_exact = linear_fit(&x, &y).unwrap().slope;
        let mut s = SampleSeed::new(5, 0).counter_stream(purpose::MISC);
        let z: Vec<f64> = (0..20_000).map(|k| s.normal_at(k)).collect();
        let r = moment_tail(&z).unwrap();
        assert!((r.kappa - kappa_exact).abs() < 0.05, "{} vs {}", r.kappa, kappa_exact);
        assert!((r.kappa - 0.5).abs() <= 0.15);
    }
}
