//! Log-log slope fitting and pass/fail verdicts.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Least-squares line through `(log parameter, log value)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    /// Two standard errors of the slope (zero for an exact fit or two points).
    pub half_width: f64,
}

pub fn slope_fit(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 3 {
        return Err(LabError::domain("slope fit needs at least 3 points"));
    }
    if points.iter().any(|&(p, v)| !(p > 0.0) || !(v > 0.0) || !p.is_finite() || !v.is_finite()) {
        return Err(LabError::domain("slope fit needs positive finite parameters and values"));
    }
    let mut params: Vec<f64> = points.iter().map(|p| p.0).collect();
    params.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if params.windows(2).any(|w| w[0] == w[1]) {
        return Err(LabError::domain("slope fit needs distinct parameters"));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let residual_rms = (sse / n).sqrt();
    let half_width = 2.0 * (sse / (n - 2.0) / sxx).sqrt();
    Ok(LogLogFit {
        points: points.to_vec(),
        slope,
        intercept,
        residual_rms,
        half_width,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// A fitted exponent judged against its expected value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub residual_rms: f64,
    pub half_width: f64,
    pub expected_slope: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl ScalingFit {
    pub fn assess(name: impl Into<String>, fit: LogLogFit, expected_slope: f64, tolerance: f64) -> Self {
        let verdict = Verdict::from_bool((fit.slope - expected_slope).abs() <= tolerance);
        ScalingFit {
            name: name.into(),
            points: fit.points,
            slope: fit.slope,
            residual_rms: fit.residual_rms,
            half_width: fit.half_width,
            expected_slope,
            tolerance,
            verdict,
        }
    }

    pub fn from_points(name: impl Into<String>, points: &[(f64, f64)], expected: f64, tolerance: f64) -> Result<Self> {
        Ok(Self::assess(name, slope_fit(points)?, expected, tolerance))
    }

    /// Refits from the stored points and checks that slope and verdict agree.
    pub fn is_consistent(&self) -> bool {
        match slope_fit(&self.points) {
            Ok(f) => {
                (f.slope - self.slope).abs() <= 1e-12 * (1.0 + f.slope.abs())
                    && Verdict::from_bool((f.slope - self.expected_slope).abs() <= self.tolerance) == self.verdict
            }
            Err(_) => false,
        }
    }
}
