//! Summary statistics used by the estimators and the diagnostics.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Welford accumulator. Feed values in a fixed order for reproducible output.
#[derive(Clone, Copy, Debug, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (0 for fewer than two values).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Monte Carlo speed summary.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpeedEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub replicas: u64,
    pub n_steps: u64,
    pub params: serde_json::Value,
}

impl SpeedEstimate {
    pub fn from_moments(m: &Moments, n_steps: u64, params: serde_json::Value) -> Self {
        let (mean, se) = (m.mean(), m.stderr());
        SpeedEstimate {
            mean,
            stderr: se,
            ci95: (mean - Z95 * se, mean + Z95 * se),
            replicas: m.count(),
            n_steps,
            params,
        }
    }

    /// Is `value` within `k` standard errors of the mean?
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }
}

/// Combined standard error of a difference of independent estimates.
pub fn combined_stderr(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Ratio estimator `sum(num) / sum(den)` with a delta-method standard error.
pub fn ratio_estimate(num: &[f64], den: &[f64]) -> Option<(f64, f64)> {
    let n = num.len();
    if n < 2 || den.len() != n {
        return None;
    }
    let sn: f64 = num.iter().sum();
    let sd: f64 = den.iter().sum();
    if sd == 0.0 {
        return None;
    }
    let r = sn / sd;
    let dbar = sd / n as f64;
    let ss: f64 = num.iter().zip(den).map(|(a, b)| (a - r * b).powi(2)).sum();
    let se = (ss / (n as f64 * (n - 1) as f64)).sqrt() / dbar;
    Some((r, se))
}

/// Pooled lag-1 autocorrelation over several sequences; pairs never straddle
/// two sequences. Returns `(r, pairs)`.
pub fn lag1_autocorrelation(groups: &[Vec<f64>]) -> (f64, usize) {
    let all: Moments = groups.iter().flatten().copied().collect();
    let m = all.mean();
    let total = all.count() as f64;
    let denom: f64 = groups
        .iter()
        .flatten()
        .map(|a| (a - m).powi(2))
        .sum::<f64>()
        / total;
    let mut num = 0.0;
    let mut pairs = 0usize;
    for g in groups {
        for w in g.windows(2) {
            num += (w[0] - m) * (w[1] - m);
            pairs += 1;
        }
    }
    if pairs == 0 || denom == 0.0 {
        return (0.0, pairs);
    }
    ((num / pairs as f64) / denom, pairs)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return (0.0, 1.0);
    }
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Complementary Kolmogorov distribution `P(K > lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Empirical quantile by nearest rank on a sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
    sorted[idx]
}

/// Min / quartiles / max / mean of a sample.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Distribution {
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = v.iter().copied().collect::<Moments>().mean();
        Distribution {
            count: v.len(),
            min: v.first().copied().unwrap_or(f64::NAN),
            q25: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q75: quantile_sorted(&v, 0.75),
            max: v.last().copied().unwrap_or(f64::NAN),
            mean,
        }
    }
}

/// Frequency of successes with its binomial standard error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Frequency {
    pub hits: u64,
    pub trials: u64,
    pub p: f64,
    pub stderr: f64,
}

impl Frequency {
    pub fn new(hits: u64, trials: u64) -> Self {
        let p = if trials == 0 {
            0.0
        } else {
            hits as f64 / trials as f64
        };
        let stderr = if trials == 0 {
            0.0
        } else {
            (p * (1.0 - p) / trials as f64).sqrt()
        };
        Frequency {
            hits,
            trials,
            p,
            stderr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_closed_form() {
        let m: Moments = [1.0, 2.0, 3.0, 4.0].into_iter().collect();
        assert_eq!(m.mean(), 2.5);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_of_proportional_data_is_exact() {
        let t = [1.0, 2.0, 3.0, 5.0];
        let x: Vec<f64> = t.iter().map(|v| 0.5 * v).collect();
        let (r, se) = ratio_estimate(&x, &t).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert!(se < 1e-12);
    }

    #[test]
    fn ks_identical_samples() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn ks_shifted_samples_reject() {
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..500).map(|i| i as f64 + 200.0).collect();
        let (d, p) = ks_two_sample(&a, &b);
        assert!((d - 0.4).abs() < 1e-12);
        assert!(p < 1e-10);
    }

    #[test]
    fn lag1_of_alternating_sequence() {
        let g = vec![vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0]];
        let (r, pairs) = lag1_autocorrelation(&g);
        assert_eq!(pairs, 5);
        assert!(r < -0.8);
    }
}
