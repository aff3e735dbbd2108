use serde::Serialize;

use crate::error::{LabError, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Wilson score interval for `hits` successes out of `trials`.
pub fn wilson(hits: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials > 0 && hits <= trials);
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // exact endpoints at 0 and 1 hits-fractions, clamped against rounding
    let lo = if hits == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if hits == trials { 1.0 } else { (center + half).clamp(p, 1.0) };
    (lo, hi)
}

/// Estimate at one scale parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub n: u64,
    pub samples: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
    /// No hits: only the upper interval end is informative.
    pub upper_bound_only: bool,
}

impl Estimate {
    pub fn new(n: u64, hits: u64, samples: u64) -> Self {
        let (lo, hi) = wilson(hits, samples, Z95);
        Estimate {
            n,
            samples,
            hits,
            p_hat: hits as f64 / samples as f64,
            lo,
            hi,
            upper_bound_only: hits == 0,
        }
    }

    /// `-log(p_hat) / n`; infinite without hits.
    pub fn empirical_rate(&self) -> f64 {
        -self.p_hat.ln() / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// Fitted rate: slope of `-log p_hat` against `n`.
    pub slope: f64,
    pub intercept: f64,
    pub std_error: f64,
    pub theory: f64,
    /// `slope / theory - 1`.
    pub relative_error: f64,
    pub used_n: Vec<u64>,
}

/// Ordinary least squares of `-log p_hat` on `n` over the estimates with at
/// least one hit.
pub fn extract_rate(estimates: &[Estimate], theory: f64) -> Result<RateFit> {
    let usable: Vec<&Estimate> = estimates.iter().filter(|e| e.hits > 0).collect();
    if usable.len() < 3 {
        return Err(LabError::InsufficientData(format!(
            "rate fit needs at least 3 scales with hits, have {}",
            usable.len()
        )));
    }
    let xs: Vec<f64> = usable.iter().map(|e| e.n as f64).collect();
    let ys: Vec<f64> = usable.iter().map(|e| -e.p_hat.ln()).collect();
    let (slope, intercept, std_error) = least_squares(&xs, &ys)?;
    Ok(RateFit {
        slope,
        intercept,
        std_error,
        theory,
        relative_error: slope / theory - 1.0,
        used_n: usable.iter().map(|e| e.n).collect(),
    })
}

/// Slope, intercept and slope standard error of `y = a x + b`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let m = xs.len();
    if m < 2 || ys.len() != m {
        return Err(LabError::InsufficientData("least squares needs two or more pairs".into()));
    }
    let mf = m as f64;
    let mx = xs.iter().sum::<f64>() / mf;
    let my = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(LabError::InsufficientData("least squares needs distinct abscissae".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if m > 2 {
        let ssr: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (ssr / (mf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok((slope, intercept, se))
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}
