//! Sample statistics and goodness-of-fit tests used by the Monte Carlo
//! checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Mean, unbiased variance and their standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
}

impl SampleSummary {
    pub fn from_slice(xs: &[f64]) -> Self {
        let n = xs.len();
        assert!(n >= 2, "need at least two samples");
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let (mut m2, mut m4) = (0.0, 0.0);
        for &x in xs {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m4 += d2 * d2;
        }
        let variance = m2 / (nf - 1.0);
        let mu2 = m2 / nf;
        let mu4 = m4 / nf;
        Self {
            n,
            mean,
            variance,
            se_mean: (variance / nf).sqrt(),
            se_variance: ((mu4 - mu2 * mu2).max(0.0) / nf).sqrt(),
        }
    }

    /// Distance of the mean from `target` in standard errors.
    pub fn mean_z(&self, target: f64) -> f64 {
        (self.mean - target) / self.se_mean
    }

    pub fn variance_z(&self, target: f64) -> f64 {
        (self.variance - target) / self.se_variance
    }
}

/// Weighted sample mean with the delta-method standard error of the plain
/// average `sum(w x) / n` (the importance-sampling estimator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMean {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    /// Kish effective sample size `(sum w)^2 / sum w^2`.
    pub effective_n: f64,
}

impl WeightedMean {
    pub fn importance(values: &[f64], weights: &[f64]) -> Self {
        assert_eq!(values.len(), weights.len());
        let prods: Vec<f64> = values.iter().zip(weights).map(|(x, w)| x * w).collect();
        let s = SampleSummary::from_slice(&prods);
        let sw: f64 = weights.iter().sum();
        let sw2: f64 = weights.iter().map(|w| w * w).sum();
        Self { n: values.len(), mean: s.mean, se: s.se_mean, effective_n: sw * sw / sw2 }
    }
}

/// Asymptotic Kolmogorov critical coefficient `c(alpha)` for the
/// two-sided test.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// One-sample critical value with Stephens' finite-sample correction.
pub fn ks_critical(n: f64, alpha: f64) -> f64 {
    let rn = n.sqrt();
    ks_coefficient(alpha) / (rn + 0.12 + 0.11 / rn)
}

pub fn ks_two_sample_critical(n: f64, m: f64, alpha: f64) -> f64 {
    ks_coefficient(alpha) * ((n + m) / (n * m)).sqrt()
}

/// One-sample KS statistic of unweighted samples against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Weighted one-sample KS statistic. The empirical CDF uses normalised
/// weights; returns `(D, effective_n)`.
pub fn weighted_ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], weights: &[f64], cdf: F) -> (f64, f64) {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    let total: f64 = weights.iter().sum();
    let sw2: f64 = weights.iter().map(|w| w * w).sum();
    let mut acc = 0.0;
    let mut d: f64 = 0.0;
    for &k in &idx {
        let f = cdf(samples[k]);
        let before = acc / total;
        acc += weights[k];
        let after = acc / total;
        d = d.max((f - before).abs()).max((after - f).abs());
    }
    (d, total * total / sw2)
}

/// Two-sample KS statistic between weighted samples; returns
/// `(D, effective_n_a, effective_n_b)`.
pub fn weighted_ks_two_sample(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> (f64, f64, f64) {
    let sort = |x: &[f64], w: &[f64]| {
        let mut v: Vec<(f64, f64)> = x.iter().copied().zip(w.iter().copied()).collect();
        v.sort_by(|p, q| p.0.total_cmp(&q.0));
        v
    };
    let sa = sort(a, wa);
    let sb = sort(b, wb);
    let ta: f64 = wa.iter().sum();
    let tb: f64 = wb.iter().sum();
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => break,
        };
        while i < sa.len() && sa[i].0 <= x {
            ca += sa[i].1;
            i += 1;
        }
        while j < sb.len() && sb[j].0 <= x {
            cb += sb[j].1;
            j += 1;
        }
        d = d.max((ca / ta - cb / tb).abs());
    }
    let neff = |w: &[f64], t: f64| t * t / w.iter().map(|v| v * v).sum::<f64>();
    (d, neff(wa, ta), neff(wb, tb))
}

/// Pearson chi-square statistic over bins with positive expectation.
/// Returns `(statistic, degrees_of_freedom)`.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> (f64, usize) {
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e > 0.0 {
            stat += (o - e) * (o - e) / e;
            bins += 1;
        }
    }
    (stat, bins.saturating_sub(1))
}

/// Upper `alpha` quantile of the chi-square law with `dof` degrees of freedom.
pub fn chi_square_critical(dof: usize, alpha: f64) -> f64 {
    ChiSquared::new(dof as f64).expect("positive degrees of freedom").inverse_cdf(1.0 - alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_known_data() {
        let s = SampleSummary::from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.se_mean - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ks_of_uniform_grid_is_small() {
        let xs: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.0005).abs() < 1e-12);
        let (dw, neff) = weighted_ks_statistic(&xs, &vec![2.0; 1000], |x| x.clamp(0.0, 1.0));
        assert!((dw - d).abs() < 1e-12 && (neff - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn two_sample_identical_is_zero() {
        let a = [0.1, 0.5, 0.9];
        let w = [1.0; 3];
        assert_eq!(weighted_ks_two_sample(&a, &w, &a, &w).0, 0.0);
        let (d, _, _) = weighted_ks_two_sample(&a, &w, &[2.0, 3.0], &[1.0, 1.0]);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn critical_values() {
        assert!((ks_coefficient(0.01) - 1.6276).abs() < 1e-4);
        assert!((chi_square_critical(10, 0.01) - 23.209).abs() < 1e-3);
        let (s, dof) = chi_square(&[10.0, 20.0, 0.0], &[15.0, 15.0, 0.0]);
        assert!((s - 50.0 / 15.0).abs() < 1e-12 && dof == 1);
    }
}
