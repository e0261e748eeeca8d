use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::InferenceError;

/// Fewest retained draws the diagnostics accept.
pub const MIN_DIAGNOSTIC_DRAWS: usize = 200;

/// Convergence thresholds a cell must meet on every parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub max_abs_z: f64,
    pub min_ess: f64,
}

impl Default for Gate {
    fn default() -> Self {
        Self {
            max_abs_z: 3.0,
            min_ess: 1000.0,
        }
    }
}

/// Geweke z and effective sample size of one parameter's draws. `None`
/// marks an undefined value (a constant chain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub geweke_z: Option<f64>,
    pub ess: Option<f64>,
}

impl ParamDiagnostics {
    pub fn passes(&self, gate: &Gate) -> bool {
        matches!((self.geweke_z, self.ess), (Some(z), Some(e)) if z.abs() < gate.max_abs_z && e >= gate.min_ess)
    }

    pub fn compute(x: &[f64]) -> Result<Self, InferenceError> {
        if x.len() < MIN_DIAGNOSTIC_DRAWS {
            return Err(InferenceError::TooFewDraws {
                got: x.len(),
                need: MIN_DIAGNOSTIC_DRAWS,
            });
        }
        Ok(Self {
            geweke_z: geweke_z(x),
            ess: ess(x),
        })
    }
}

/// Biased (divide-by-n) autocovariance at lags 0..n, via FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (m as f64 * n as f64)).collect()
}

/// Integrated autocorrelation time by Geyer's initial monotone positive
/// sequence. `None` for a constant series.
pub fn integrated_autocorr_time(x: &[f64]) -> Option<f64> {
    let acov = autocovariance(x);
    let g0 = *acov.first()?;
    if !(g0 > 0.0) || !g0.is_finite() {
        return None;
    }
    let n = acov.len();
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (acov[2 * m] + acov[2 * m + 1]) / g0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    // Strongly antithetic chains can push tau toward zero; cap the ESS the
    // same way common practice does, at n·log10(n).
    let floor = 1.0 / (x.len() as f64).log10().max(1.0);
    Some(tau.max(floor))
}

pub fn ess(x: &[f64]) -> Option<f64> {
    integrated_autocorr_time(x).map(|tau| x.len() as f64 / tau)
}

/// Spectral density at frequency zero (the long-run variance).
fn spectral_variance(x: &[f64]) -> f64 {
    let acov = autocovariance(x);
    match integrated_autocorr_time(x) {
        Some(tau) => acov[0] * tau,
        None => 0.0,
    }
}

/// Geweke z: mean of the first 10% against the last 50%.
pub fn geweke_z(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let na = (n / 10).max(1);
    let nb = (n / 2).max(1);
    let a = &x[..na];
    let b = &x[n - nb..];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = spectral_variance(a) / na as f64 + spectral_variance(b) / nb as f64;
    let diff = mean(a) - mean(b);
    if var > 0.0 {
        Some(diff / var.sqrt())
    } else if diff == 0.0 {
        None
    } else {
        Some(diff.signum() * f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub variance: f64,
    pub n: usize,
}

/// Mean and unbiased variance.
pub fn summarize_values(x: &[f64]) -> Result<ParamSummary, InferenceError> {
    if x.len() < 2 {
        return Err(InferenceError::TooFewDraws { got: x.len(), need: 2 });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(ParamSummary {
        mean,
        variance: ss / (n - 1.0),
        n: x.len(),
    })
}
