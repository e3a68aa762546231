//! Convergence-rate study of the two-scale expansion in `eps`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::CoefficientRecipe;
use crate::grid::{gradient, identity, Grid, MatrixField, ScalarField, VectorField};
use crate::operator::OperatorSpec;
use crate::rng::SampleSeed;
use crate::solver::SolverConfig;
use crate::stats::{linear_fit, LinearFit};

use super::expansion::{
    energy_check, expansion_error, remainder_assembly, restrict_periodic_block, solve_heterogeneous,
    two_scale_expand, CorrectorLibrary, EnergyCheck,
};
use super::homogenized::{gradient_bound, solve_homogenized, tabulate_profile, HomogenizedMap};
use super::partition::build_partition;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientMode {
    /// `A = value Id`; the expansion is exact up to solver tolerance.
    Constant { value: f64 },
    /// `b(x / eps)` with `b(y) = lambda + (1 - lambda)(2 + cos 2 pi y_1 + cos 2 pi y_2) / 4`
    /// (the `y_2` term is dropped in one dimension).
    Periodic,
    /// Isotropic Gaussian recipe with correlation length `ell_ratio * eps`.
    Random {
        samples: usize,
        root: u64,
        #[serde(default = "default_ell_ratio")]
        ell_ratio: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateStudy {
    pub d: usize,
    pub p: f64,
    pub lambda: f64,
    /// Points per dimension on the unit torus.
    pub n: usize,
    pub eps: Vec<f64>,
    pub mode: CoefficientMode,
    /// Amplitude of the forcing `f_1 = F (sin 2 pi x_1 + cos(4 pi x_1) / 2)`.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_table_points")]
    pub table_points: usize,
    /// Corrector cache spacing relative to `max |grad u_bar|`; 0 keys slopes exactly.
    #[serde(default)]
    pub quantum: f64,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_ell_ratio() -> f64 {
    1.0
}

fn default_amplitude() -> f64 {
    0.5
}

fn default_table_points() -> usize {
    9
}

impl RateStudy {
    pub fn periodic(n: usize, eps: Vec<f64>) -> Self {
        Self {
            d: 2,
            p: 3.0,
            lambda: 0.25,
            n,
            eps,
            mode: CoefficientMode::Periodic,
            amplitude: default_amplitude(),
            table_points: default_table_points(),
            quantum: 0.0,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(invalid("dimension must be 1, 2 or 3"));
        }
        if !(self.p >= 2.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(invalid("need p >= 2 and lambda in (0, 1]"));
        }
        if self.eps.len() < 2 {
            return Err(invalid("need at least two values of eps"));
        }
        for &e in &self.eps {
            let cells = e * self.n as f64;
            if (cells - cells.round()).abs() > 1e-9 || cells.round() < 8.0 {
                return Err(invalid(format!("eps = {e} must span a whole number of at least 8 cells")));
            }
            if e > 0.25 {
                return Err(invalid(format!("eps = {e} exceeds 1/4")));
            }
        }
        if let CoefficientMode::Constant { value } = self.mode {
            if !(value >= self.lambda && value <= 1.0) {
                return Err(invalid("constant coefficient must lie in [lambda, 1]"));
            }
        }
        if let CoefficientMode::Random { samples, ell_ratio, .. } = self.mode {
            if samples == 0 || !(ell_ratio > 0.0 && ell_ratio <= 1.0) {
                return Err(invalid("need at least one sample and ell_ratio in (0, 1]"));
            }
            let finest = self.eps.iter().cloned().fold(f64::INFINITY, f64::min);
            if ell_ratio * finest * (self.n as f64) < 8.0 - 1e-9 {
                return Err(invalid("correlation length must span at least 8 grid cells"));
            }
        }
        if self.table_points < 5 || !(self.amplitude > 0.0) || !(self.quantum >= 0.0) {
            return Err(invalid("need table_points >= 5, amplitude > 0, quantum >= 0"));
        }
        self.solver.validate()
    }

    fn samples(&self) -> usize {
        match self.mode {
            CoefficientMode::Random { samples, .. } => samples,
            _ => 1,
        }
    }
}

/// Cell coefficient sampled at `y = (j mod m) h / eps` so that it tiles exactly.
pub fn periodic_coefficient(grid: Grid, eps: f64, lambda: f64) -> Result<MatrixField> {
    let m = (eps / grid.spacing()).round() as usize;
    if m == 0 || grid.points_per_dim() % m != 0 {
        return Err(invalid(format!("eps = {eps} does not tile the grid")));
    }
    let d = grid.dim();
    let mut out = MatrixField::zeros(grid);
    for k in 0..grid.len() {
        let c = grid.coords(k);
        let y: Vec<f64> = (0..d).map(|i| (c[i] % m) as f64 / m as f64).collect();
        let waves: f64 = y.iter().take(2).map(|t| (2.0 * PI * t).cos()).sum();
        let b = lambda + (1.0 - lambda) * (2.0 + waves) / 4.0;
        let mut a = identity(d);
        for (i, row) in a.iter_mut().enumerate().take(d) {
            row[i] = b;
        }
        out.set(k, &a);
    }
    Ok(out)
}

/// `f = (F (sin 2 pi x_1 + cos(4 pi x_1) / 2), 0, ...)` on the unit torus.
pub fn macro_forcing(grid: Grid, amplitude: f64) -> VectorField {
    VectorField::from_fn(grid, |x| {
        let t = x[0] / grid.length();
        [amplitude * ((2.0 * PI * t).sin() + 0.5 * (4.0 * PI * t).cos()), 0.0, 0.0]
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateRow {
    pub epsilon: f64,
    pub delta: f64,
    pub sample: u64,
    pub err_l2: f64,
    pub err_lp: f64,
    pub remainder_l2: f64,
    /// Local slope against the previous `eps` in the list.
    pub slope_partial: Option<f64>,
    pub quantization_error: f64,
    pub correctors: usize,
    pub energy_lhs: f64,
    pub energy_rhs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// Mean over samples of the `L^2` error per `eps`.
    pub mean_errors: Vec<f64>,
    pub mean_remainders: Vec<f64>,
    /// Fit of `log err` against `log eps`.
    pub error_fit: LinearFit,
    pub remainder_fit: LinearFit,
    pub energy_checks_pass: bool,
}

/// Fields of one `(eps, sample)` run, kept for snapshots.
#[derive(Clone, Debug)]
pub struct RateFields {
    pub epsilon: f64,
    pub sample: u64,
    pub ubar: ScalarField,
    pub u_eps: ScalarField,
    pub u2s: ScalarField,
}

struct Outcome {
    fields: Option<RateFields>,
    err_l2: f64,
    err_lp: f64,
    remainder: f64,
    quantization_error: f64,
    correctors: usize,
    energy: Option<EnergyCheck>,
}

fn homogenized_map(study: &RateStudy, ops: &[OperatorSpec], t_max: f64) -> Result<HomogenizedMap> {
    Ok(match study.mode {
        CoefficientMode::Constant { value } => {
            let mut coef = identity(study.d);
            for (i, row) in coef.iter_mut().enumerate().take(study.d) {
                row[i] = value;
            }
            HomogenizedMap::Exact { coef, p: study.p, law: crate::operator::Law::Standard }
        }
        _ => HomogenizedMap::Radial { profile: tabulate_profile(ops, t_max, study.table_points, &study.solver)? },
    })
}

fn run_one(study: &RateStudy, eps: f64, sample: u64, keep: bool) -> Result<Outcome> {
    let grid = Grid::new(study.d, 1.0, study.n)?;
    let m = (eps * study.n as f64).round() as usize;
    let coef = match study.mode {
        CoefficientMode::Constant { value } => {
            let mut a = identity(study.d);
            for (i, row) in a.iter_mut().enumerate().take(study.d) {
                row[i] = value;
            }
            MatrixField::constant(grid, &a)
        }
        CoefficientMode::Periodic => periodic_coefficient(grid, eps, study.lambda)?,
        CoefficientMode::Random { root, ell_ratio, .. } => {
            let recipe = CoefficientRecipe::isotropic_tanh(study.lambda, ell_ratio * eps);
            recipe.sample(&grid, SampleSeed::new(root, sample))?.1
        }
    };
    let op = OperatorSpec::new(study.p, study.lambda, coef)?;
    let cell = match study.mode {
        CoefficientMode::Random { .. } => op.clone(),
        _ => OperatorSpec::new(study.p, study.lambda, restrict_periodic_block(op.coefficient(), m)?)?,
    };
    let f = macro_forcing(grid, study.amplitude);
    let f_max = f.component(0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut t_max = gradient_bound(study.lambda, study.p, f_max);
    let mut map = homogenized_map(study, std::slice::from_ref(&cell), t_max)?;
    let ubar = match solve_homogenized(&map, &f, &study.solver) {
        Ok((u, _)) => u,
        Err(Error::OutOfTable { value, .. }) => {
            // one retry with a wider table
            t_max = 2.0 * value.max(t_max);
            map = homogenized_map(study, std::slice::from_ref(&cell), t_max)?;
            solve_homogenized(&map, &f, &study.solver)?.0
        }
        Err(e) => return Err(e),
    };
    let (u_eps, _) = solve_heterogeneous(&op, &f, &study.solver)?;
    let partition = build_partition(grid, eps)?;
    let gu = gradient(&ubar);
    let quantum = study.quantum * gu.max_abs();
    let mut library = CorrectorLibrary::new(cell, grid, quantum)?;
    library.populate(&partition.local_averages(&gu)?, &study.solver)?;
    let ts = two_scale_expand(&ubar, &partition, &library, eps)?;
    let err = expansion_error(&u_eps, &ts, study.p)?;
    let rem = remainder_assembly(&op, &map, &ubar, &partition, &library)?;
    let energy = if op.is_scalar() { Some(energy_check(&op, &map, &u_eps, &ts)?) } else { None };
    let fields = keep.then(|| RateFields { epsilon: eps, sample, ubar: ubar.clone(), u_eps: u_eps.clone(), u2s: ts.u2s.clone() });
    Ok(Outcome {
        fields,
        err_l2: err.l2,
        err_lp: err.lp,
        remainder: rem.total_norm,
        quantization_error: ts.quantization_error,
        correctors: library.len(),
        energy,
    })
}

/// Run every `(eps, sample)` pair and fit the rates.
pub fn run_rate_study(study: &RateStudy) -> Result<RateReport> {
    Ok(run_rate_study_fields(study, false)?.0)
}

/// As [`run_rate_study`], also returning the fields of every pair when `keep`.
pub fn run_rate_study_fields(study: &RateStudy, keep: bool) -> Result<(RateReport, Vec<RateFields>)> {
    study.validate()?;
    let samples = study.samples() as u64;
    let pairs: Vec<(usize, u64)> = (0..study.eps.len()).flat_map(|i| (0..samples).map(move |s| (i, s))).collect();
    let outcomes: Vec<Result<Outcome>> = pairs
        .par_iter()
        .map(|&(i, s)| {
            let eps = study.eps[i];
            let o = run_one(study, eps, s, keep).map_err(|e| Error::Sample { index: s, source: Box::new(e) })?;
            log::info!("two-scale eps={eps} sample={s} err={:.4e} remainder={:.4e}", o.err_l2, o.remainder);
            Ok(o)
        })
        .collect();
    let mut rows: Vec<RateRow> = Vec::with_capacity(pairs.len());
    let mut fields = Vec::new();
    let mut mean_errors = vec![0.0; study.eps.len()];
    let mut mean_remainders = vec![0.0; study.eps.len()];
    let mut energy_ok = true;
    for (&(i, s), o) in pairs.iter().zip(outcomes) {
        let o = o?;
        let eps = study.eps[i];
        let slope_partial = (i > 0).then(|| {
            let prev = &rows[(i - 1) * samples as usize + s as usize];
            (o.err_l2 / prev.err_l2).ln() / (eps / prev.epsilon).ln()
        });
        let (lhs, rhs) = o.energy.as_ref().map(|c| (c.lhs, c.rhs)).unwrap_or((f64::NAN, f64::NAN));
        energy_ok &= o.energy.as_ref().map(|c| c.pass).unwrap_or(true);
        mean_errors[i] += o.err_l2 / samples as f64;
        mean_remainders[i] += o.remainder / samples as f64;
        rows.push(RateRow {
            epsilon: eps,
            delta: eps,
            sample: s,
            err_l2: o.err_l2,
            err_lp: o.err_lp,
            remainder_l2: o.remainder,
            slope_partial,
            quantization_error: o.quantization_error,
            correctors: o.correctors,
            energy_lhs: lhs,
            energy_rhs: rhs,
        });
        fields.extend(o.fields);
    }
    let x: Vec<f64> = study.eps.iter().map(|e| e.ln()).collect();
    let fit = |v: &[f64]| -> Result<LinearFit> {
        if v.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("rate fit needs positive errors"));
        }
        linear_fit(&x, &v.iter().map(|e| e.ln()).collect::<Vec<_>>())
    };
    let report = RateReport {
        error_fit: fit(&mean_errors)?,
        remainder_fit: fit(&mean_remainders)?,
        mean_errors,
        mean_remainders,
        rows,
        energy_checks_pass: energy_ok,
    };
    Ok((report, fields))
}

/// Errors of a single `(eps, sample)` pair, for callers that expect them to vanish.
pub fn control_errors(study: &RateStudy, eps: f64) -> Result<(f64, f64)> {
    study.validate()?;
    let o = run_one(study, eps, 0, false)?;
    Ok((o.err_l2, o.remainder))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_coefficient_range_and_symmetry() {
        let g = Grid::new(2, 1.0, 64).unwrap();
        let c = periodic_coefficient(g, 0.25, 0.2).unwrap();
        let vals = c.entry(0, 0);
        let (lo, hi) = vals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(lo >= 0.2 - 1e-15 && hi <= 1.0 + 1e-15);
        assert!((hi - 1.0).abs() < 1e-14);
        assert!(restrict_periodic_block(&c, 16).is_ok());
        assert!(periodic_coefficient(g, 0.3, 0.2).is_err());
    }

    #[test]
    fn forcing_has_zero_mean() {
        let g = Grid::new(2, 1.0, 32).unwrap();
        let f = macro_forcing(g, 0.5);
        assert!(f.mean()[0].abs() < 1e-15);
    }

    #[test]
    fn constant_control_is_at_solver_level() {
        let mut s = RateStudy::periodic(64, vec![0.25, 0.125]);
        s.mode = CoefficientMode::Constant { value: 0.6 };
        let (err, rem) = control_errors(&s, 0.125).unwrap();
        assert!(err < 1e-8, "{err}");
        assert!(rem < 1e-8, "{rem}");
    }

    #[test]
    fn validation() {
        let mut s = RateStudy::periodic(64, vec![0.25, 0.1]);
        assert!(s.validate().is_err());
        s.eps = vec![0.25, 0.125];
        assert!(s.validate().is_ok());
        s.eps = vec![0.25, 1.0 / 16.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn small_periodic_study_decreases() {
        let s = RateStudy::periodic(64, vec![0.25, 0.125]);
        let rep = run_rate_study(&s).unwrap();
        assert!(rep.mean_errors[1] < rep.mean_errors[0], "{:?}", rep.mean_errors);
        assert!(rep.energy_checks_pass, "{:?}", rep.rows);
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows[0].slope_partial.is_none() && rep.rows[1].slope_partial.is_some());
    }
}
