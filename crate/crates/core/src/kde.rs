//! Control limits from a Gaussian kernel density estimate of in-control statistics.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Below this many values the KDE is not trusted and the empirical quantile is used.
pub const MIN_KDE_SAMPLES: usize = 30;
const REL_TOL: f64 = 1e-6;

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`; falls back to the
/// standard deviation alone when the IQR collapses.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = empirical_quantile_sorted(&sorted, 0.75) - empirical_quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Linear-interpolation quantile of sorted data.
pub fn empirical_quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = level.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    empirical_quantile_sorted(&sorted, level)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn kde_cdf(values: &[f64], h: f64, q: f64) -> f64 {
    values
        .iter()
        .map(|&v| std_normal_cdf((q - v) / h))
        .sum::<f64>()
        / values.len() as f64
}

/// Upper control limit at confidence `level` (0.99 leaves a 1% upper tail):
/// the point where the Gaussian-KDE CDF of `values` reaches `level`.
pub fn kde_threshold(values: &[f64], level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param(
            "alpha",
            format!("confidence level must lie in (0, 1), got {level}"),
        ));
    }
    if values.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite statistic value".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if lo == hi {
        let h = 1e-6 * lo.abs().max(1.0);
        return Ok(lo + h);
    }
    if values.len() < MIN_KDE_SAMPLES {
        log::warn!(
            "only {} in-control values; using the empirical quantile instead of a KDE",
            values.len()
        );
        return Ok(empirical_quantile(values, level));
    }

    let h = silverman_bandwidth(values);
    let (mut a, mut b) = (lo, hi + 3.0 * h);
    while kde_cdf(values, h, a) > level {
        a -= 3.0 * h;
    }
    while kde_cdf(values, h, b) < level {
        b += 3.0 * h;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if kde_cdf(values, h, mid) < level {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= REL_TOL * b.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(0.5 * (a + b))
}
