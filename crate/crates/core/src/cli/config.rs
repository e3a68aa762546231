//! Experiment configuration, one JSON file per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corrector::Ensemble;
use crate::diagnostics::Quantity;
use crate::error::{Error, Result};
use crate::field::{CoefficientProfile, CoefficientRecipe, CovarianceSpec};
use crate::grid::{identity, Grid, Vec3, ZERO3};
use crate::operator::OperatorSpec;
use crate::solver::SolverConfig;
use crate::twoscale::{CoefficientMode, RateStudy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Corrector,
    Homogenize,
    Tangent,
    Clt,
    Growth,
    Monotonicity,
    RadialOde,
    TwoScale,
    Radius,
    Bounds,
    Verify,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Corrector => "corrector",
            Self::Homogenize => "homogenize",
            Self::Tangent => "tangent",
            Self::Clt => "clt",
            Self::Growth => "growth",
            Self::Monotonicity => "monotonicity",
            Self::RadialOde => "radial-ode",
            Self::TwoScale => "two-scale",
            Self::Radius => "radius",
            Self::Bounds => "bounds",
            Self::Verify => "verify",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub p: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Gaussian,
    Exponential,
    Zero,
}

/// Coefficient recipe; `lambda` comes from the operator block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeConfig {
    #[serde(default = "default_covariance")]
    pub covariance: CovarianceKind,
    #[serde(default = "one")]
    pub ell_c: f64,
    #[serde(default = "two")]
    pub kernel_radius_cells: f64,
    #[serde(default = "default_profile", alias = "B")]
    pub profile: CoefficientProfile,
    #[serde(default = "yes")]
    pub isotropic: bool,
}

fn default_covariance() -> CovarianceKind {
    CovarianceKind::Gaussian
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn yes() -> bool {
    true
}
fn default_profile() -> CoefficientProfile {
    CoefficientProfile::Tanh
}

impl RecipeConfig {
    pub fn build(&self, lambda: f64) -> CoefficientRecipe {
        let covariance = match self.covariance {
            CovarianceKind::Gaussian => CovarianceSpec::Gaussian { ell_c: self.ell_c },
            CovarianceKind::Exponential => CovarianceSpec::Exponential { ell_c: self.ell_c },
            CovarianceKind::Zero => CovarianceSpec::Zero,
        };
        CoefficientRecipe {
            lambda,
            covariance,
            profile: self.profile.clone(),
            kernel_radius_cells: self.kernel_radius_cells,
            isotropic: self.isotropic,
        }
    }
}

/// Study-specific parameters; each study reads the ones it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyParams {
    pub xi: Vec<Vec<f64>>,
    pub sample_count: usize,
    pub radii: Vec<f64>,
    /// Evaluation points of the growth study.
    pub points: Vec<Vec<f64>>,
    pub quantity: Quantity,
    /// Radii of the radial ODE check.
    pub ts: Vec<f64>,
    pub fd_step: f64,
    pub fd_tolerance: f64,
    /// Step of the corrector-level difference quotient.
    pub corrector_fd_step: f64,
    /// Accepted distance of the CLT slope from `-d`.
    pub slope_tolerance: f64,
    pub eps: Vec<f64>,
    pub mode: CoefficientMode,
    pub amplitude: f64,
    pub table_points: usize,
    pub quantum: f64,
    /// Smallest accepted two-scale rate; by mode when absent.
    pub slope_target: Option<f64>,
    /// Write field snapshots under `fields/`.
    pub snapshots: bool,
    /// Meyers constant `c_1`; calibrated when absent.
    pub c1: Option<f64>,
    /// Constant of the linear minimal radius.
    pub linear_c: f64,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            xi: vec![vec![1.0]],
            sample_count: 8,
            radii: Vec::new(),
            points: Vec::new(),
            quantity: Quantity::GradPhi,
            ts: Vec::new(),
            fd_step: 1e-3,
            fd_tolerance: 1e-3,
            corrector_fd_step: 1e-3,
            slope_tolerance: 0.5,
            eps: vec![0.25, 0.125],
            mode: CoefficientMode::Periodic,
            amplitude: 0.5,
            table_points: 9,
            quantum: 0.0,
            slope_target: None,
            snapshots: false,
            c1: None,
            linear_c: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: StudyKind,
    pub grid: GridConfig,
    pub operator: OperatorConfig,
    /// `A = Id` when absent.
    #[serde(default)]
    pub recipe: Option<RecipeConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub params: StudyParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn config_error(msg: impl std::fmt::Display) -> Error {
    Error::Config(msg.to_string())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_error)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn make_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.d, self.grid.length, self.grid.n).map_err(config_error)
    }

    /// Slopes padded to three components.
    pub fn xis(&self) -> Result<Vec<Vec3>> {
        pad_all(&self.params.xi, self.grid.d, "xi")
    }

    pub fn growth_points(&self) -> Result<Vec<Vec3>> {
        pad_all(&self.params.points, self.grid.d, "points")
    }

    pub fn recipe(&self) -> Option<CoefficientRecipe> {
        self.recipe.as_ref().map(|r| r.build(self.operator.lambda))
    }

    pub fn ensemble(&self) -> Result<Ensemble> {
        let grid = self.make_grid()?;
        match self.recipe() {
            Some(r) => Ensemble::random(grid, r, self.operator.p, self.seed),
            None => Ok(Ensemble::Fixed(OperatorSpec::constant(
                grid,
                self.operator.p,
                self.operator.lambda,
                &identity(self.grid.d),
            )?)),
        }
    }

    pub fn rate_study(&self) -> RateStudy {
        RateStudy {
            d: self.grid.d,
            p: self.operator.p,
            lambda: self.operator.lambda,
            n: self.grid.n,
            eps: self.params.eps.clone(),
            mode: self.params.mode.clone(),
            amplitude: self.params.amplitude,
            table_points: self.params.table_points,
            quantum: self.params.quantum,
            solver: self.solver,
        }
    }

    pub fn slope_target(&self) -> f64 {
        self.params.slope_target.unwrap_or(match self.params.mode {
            CoefficientMode::Random { .. } => 0.75,
            _ => 0.8,
        })
    }

    /// Every precondition that can be checked without solving.
    pub fn validate(&self) -> Result<()> {
        let grid = self.make_grid()?;
        let d = grid.dim();
        let op = self.operator;
        if !(op.p.is_finite() && op.p >= 2.0) {
            return Err(config_error(format!("operator.p must satisfy p >= 2, got {}", op.p)));
        }
        if !(op.lambda > 0.0 && op.lambda <= 1.0) {
            return Err(config_error(format!("operator.lambda must lie in (0, 1], got {}", op.lambda)));
        }
        if let Some(r) = self.recipe() {
            r.validate(d).map_err(config_error)?;
            if !r.is_deterministic() && grid.length() < 4.0 * r.covariance.ell_c() {
                return Err(config_error("grid.L must be at least 4 ell_c"));
            }
        }
        self.solver.validate().map_err(config_error)?;
        if self.threads == Some(0) {
            return Err(config_error("threads must be positive"));
        }
        let prm = &self.params;
        if prm.sample_count == 0 {
            return Err(config_error("params.sample_count must be positive"));
        }
        let xis = self.xis()?;
        if xis.is_empty() {
            return Err(config_error("params.xi must not be empty"));
        }
        let quarter = 0.25 * grid.length();
        match self.study {
            StudyKind::Tangent => {
                if !(prm.fd_step > 0.0 && prm.fd_tolerance > 0.0 && prm.corrector_fd_step > 0.0) {
                    return Err(config_error("params.fd_step, corrector_fd_step and fd_tolerance must be positive"));
                }
            }
            StudyKind::Clt => {
                if prm.radii.len() < 2 || prm.radii.iter().any(|&r| !(r > 0.0 && r <= quarter)) {
                    return Err(config_error("params.radii needs two or more radii in (0, L/4]"));
                }
                if prm.sample_count < 2 {
                    return Err(config_error("the CLT study needs at least two samples"));
                }
                if prm.quantity == Quantity::GradSigma && d == 1 {
                    return Err(config_error("grad sigma is not defined in one dimension"));
                }
            }
            StudyKind::Growth => {
                let pts = self.growth_points()?;
                if pts.is_empty() || pts.iter().any(|x| x.iter().any(|v| v.abs() > quarter)) {
                    return Err(config_error("params.points must be non-empty and inside Q_{L/4}"));
                }
            }
            StudyKind::Monotonicity | StudyKind::Bounds => {
                if xis.len() < 2 {
                    return Err(config_error(format!("{} needs at least two slopes", self.study.name())));
                }
            }
            StudyKind::RadialOde => {
                if prm.ts.len() < 5 || prm.ts[0] <= 0.0 || prm.ts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(config_error("params.ts needs five or more positive increasing values"));
                }
                match &self.recipe {
                    Some(r) if !r.isotropic => return Err(config_error("radial-ode requires an isotropic recipe")),
                    _ => {}
                }
            }
            StudyKind::TwoScale => {
                if grid.length() != 1.0 {
                    return Err(config_error("two-scale studies run on the unit torus (grid.L = 1)"));
                }
                self.rate_study().validate().map_err(config_error)?;
            }
            StudyKind::Radius => {
                if !(prm.linear_c > 0.0) || prm.c1.is_some_and(|c| !(c > 0.0)) {
                    return Err(config_error("radius constants must be positive"));
                }
            }
            StudyKind::Corrector | StudyKind::Homogenize | StudyKind::Verify => {}
        }
        Ok(())
    }
}

fn pad_all(v: &[Vec<f64>], d: usize, key: &str) -> Result<Vec<Vec3>> {
    v.iter()
        .map(|x| {
            if x.is_empty() || x.len() > d || x.iter().any(|c| !c.is_finite()) {
                return Err(config_error(format!("params.{key}: each entry needs 1..={d} finite components")));
            }
            let mut out = ZERO3;
            out[..x.len()].copy_from_slice(x);
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"study": "corrector", "grid": {"d": 2, "L": 16.0, "N": 16}, "operator": {"p": 3, "lambda": 0.5}}"#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(c.study, StudyKind::Corrector);
        assert!(c.recipe.is_none());
        c.validate().unwrap();
        assert_eq!(c.xis().unwrap(), vec![[1.0, 0.0, 0.0]]);
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = BASE.replacen('{', "{\"bogus_key\": 1, ", 1);
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
        let nested = BASE.replace("\"p\": 3", "\"p\": 3, \"q\": 1");
        assert!(ExperimentConfig::from_json(&nested).unwrap_err().to_string().contains("`q`"));
    }

    #[test]
    fn zero_lambda_is_rejected() {
        let c = ExperimentConfig::from_json(&BASE.replace("0.5", "0")).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn recipe_block() {
        let text = BASE.replace(
            "}}",
            r#"}, "recipe": {"ell_c": 2.0, "B": {"preset": "constant", "value": 0.7}}}"#,
        );
        let c = ExperimentConfig::from_json(&text).unwrap();
        let r = c.recipe().unwrap();
        assert_eq!(r.lambda, 0.5);
        assert!(r.is_deterministic());
        c.validate().unwrap();
    }

    #[test]
    fn study_parameters_are_checked() {
        let mut c = ExperimentConfig::from_json(BASE).unwrap();
        c.study = StudyKind::Clt;
        assert!(c.validate().is_err());
        c.params.radii = vec![1.0, 2.0, 4.0];
        c.validate().unwrap();
        c.params.radii.push(5.0);
        assert!(c.validate().is_err());
        c.study = StudyKind::TwoScale;
        assert!(c.validate().is_err());
        c.params.xi = vec![vec![1.0, 0.0, 0.0]];
        c.study = StudyKind::Corrector;
        assert!(c.validate().is_err());
    }
}
