//! Small statistical helpers: normal reference distribution, compensated
//! sums, and batch-means Monte Carlo standard errors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use libm::erfc;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided p-value of a z statistic against N(0, 1).
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// CDF of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(dof as f64)
        .map(|d| d.cdf(x))
        .unwrap_or(f64::NAN)
}

/// Critical value of a two-sided level-`alpha` normal test.
pub fn z_crit(alpha: f64) -> f64 {
    norm_quantile(1.0 - alpha / 2.0)
}

/// Neumaier compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs.iter().copied()) / xs.len() as f64
}

/// Population (divide-by-n) variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    sum(xs.iter().map(|x| (x - m) * (x - m))) / xs.len() as f64
}

/// Divide-by-(n-1) variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() - 1) as f64
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy = sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let sxx = sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    let syy = sum(ys.iter().map(|y| (y - my) * (y - my)));
    sxy / (sxx * syy).sqrt()
}

/// Number of batches used for Monte Carlo standard errors.
pub const MC_BATCHES: usize = 50;

/// A Monte Carlo estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub mc_se: f64,
}

impl McEstimate {
    /// `|value - target| <= k * mc_se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.mc_se
    }
}

/// Evaluate `stat` on all records and on contiguous batches; the standard
/// error is the spread of the batch values over sqrt(batches). Batches on
/// which `stat` is undefined are skipped.
pub fn batch_estimate<R, F>(records: &[R], batches: usize, stat: F) -> McEstimate
where
    F: Fn(&[R]) -> Option<f64>,
{
    let value = stat(records).unwrap_or(f64::NAN);
    let b = batches.max(2).min(records.len().max(1));
    let size = records.len() / b;
    if size == 0 {
        return McEstimate {
            value,
            mc_se: f64::NAN,
        };
    }
    let vals: Vec<f64> = (0..b)
        .filter_map(|k| {
            let lo = k * size;
            let hi = if k + 1 == b { records.len() } else { lo + size };
            stat(&records[lo..hi]).filter(|v| v.is_finite())
        })
        .collect();
    let mc_se = if vals.len() >= 2 {
        (sample_variance(&vals) / vals.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    McEstimate { value, mc_se }
}

/// Paired difference of two batch statistics, with its batch-means SE.
pub fn batch_difference<R, F, G>(records: &[R], batches: usize, a: F, b: G) -> McEstimate
where
    F: Fn(&[R]) -> Option<f64>,
    G: Fn(&[R]) -> Option<f64>,
{
    batch_estimate(records, batches, |r| Some(a(r)? - b(r)?))
}

/// Format with `digits` significant digits.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..15).contains(&mag) {
        return format!("{:.*e}", digits.saturating_sub(1), x);
    }
    let decimals = (digits as i32 - 1 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_reference_values() {
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-15, "{}", norm_cdf(1.959963984540054) - 0.975);
        assert!((z_crit(0.05) - 1.959963984540054).abs() < 1e-9);
        // two-sided p for t = 2.3438 rounds to 0.0191
        assert!((two_sided_p(2.3438) - 0.0191).abs() < 5e-5);
        assert!((two_sided_p(2.7384) - 0.0062).abs() < 5e-5);
    }

    #[test]
    fn chi2_two_dof_has_exponential_cdf() {
        for x in [0.5, 2.0, 5.991, 9.0] {
            assert!((chi2_cdf(x, 2) - (1.0 - (-x / 2.0).exp())).abs() < 1e-10);
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(xs), 2.0);
    }

    #[test]
    fn batch_se_of_iid_mean() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64).collect();
        let est = batch_estimate(&xs, 50, |r| Some(mean(r)));
        assert!((est.value - mean(&xs)).abs() < 1e-12);
        assert!(est.mc_se.is_finite() && est.mc_se > 0.0);
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(0.10904321, 6), "0.109043");
        assert_eq!(fmt_sig(123.456789, 6), "123.457");
        assert_eq!(fmt_sig(-856.29561, 6), "-856.296");
        assert_eq!(fmt_sig(0.0, 6), "0");
        assert_eq!(fmt_sig(1.5e-7, 3), "1.50e-7");
    }
}
