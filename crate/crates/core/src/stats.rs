//! Small statistics helpers for Monte-Carlo summaries and log-log fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

/// Sample mean and standard error of the mean (zero for one sample).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the sample variance from the fourth central moment.
pub fn variance_stderr(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if n < 4.0 {
        return f64::INFINITY;
    }
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2).max(0.0) / n).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-sided Student quantile for a `level` confidence interval.
pub fn t_quantile(level: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof).map(|t| t.inverse_cdf(0.5 + 0.5 * level)).unwrap_or(f64::INFINITY)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub ci95: (f64, f64),
}

/// Ordinary least squares `y = a + b x` with a Student-t interval for `b`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("linear fit needs at least two matching points"));
    }
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("linear fit needs distinct abscissae"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let (se, half) = if x.len() > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let se = (rss / (n - 2.0) / sxx).sqrt();
        (se, t_quantile(0.95, n - 2.0) * se)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(LinearFit { slope, intercept, slope_stderr: se, ci95: (slope - half, slope + half) })
}

/// Weighted least squares with known standard errors `s` of the `y`
/// values; the interval is the normal one from the propagated errors.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], s: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() != s.len() || x.len() < 2 {
        return Err(invalid("weighted fit needs at least two matching points"));
    }
    if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("weighted fit needs positive finite standard errors"));
    }
    let w: Vec<f64> = s.iter().map(|v| 1.0 / (v * v)).collect();
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let se = (1.0 / sxx).sqrt();
    let half = 1.959_963_984_540_054 * se;
    Ok(LinearFit { slope, intercept: ym - slope * xm, slope_stderr: se, ci95: (slope - half, slope + half) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_errors() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn exact_line_is_recovered() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14 && (f.intercept - 1.5).abs() < 1e-14);
        assert!(f.slope_stderr < 1e-12);
        let w = weighted_linear_fit(&x, &y, &[1.0, 2.0, 1.0, 0.5]).unwrap();
        assert!((w.slope + 2.0).abs() < 1e-14);
    }

    #[test]
    fn student_quantile() {
        assert!((t_quantile(0.95, 2.0) - 4.302_652_729_911_275).abs() < 1e-9);
    }
}
