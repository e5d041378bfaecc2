//! Deterministic reductions and interval estimates.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Pairwise summation in fixed index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and unbiased sample variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, pairwise_sum(&dev) / (n - 1) as f64)
}

/// Least-squares slope of `ln |y|` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Two-sided 97.5% Student-t quantile with `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof.max(1) as f64)
        .expect("valid Student-t")
        .inverse_cdf(0.975)
}

/// Confidence intervals for the mean of positive samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalReport {
    pub mean: f64,
    /// Variance of the sample mean, `s^2 / n`.
    pub var_of_mean: f64,
    /// `mean + V/2 -+ t sqrt(V/n + V^2 / (2(n-1)))` with `V` the variance of the mean.
    pub literal: (f64, f64),
    /// `mean -+ t s / sqrt(n)`.
    pub clt: (f64, f64),
    /// The log-scale interval `exp(m + s^2/2 -+ t sqrt(s^2/n + s^4/(2(n-1))))` on `ln x`.
    pub log_scale: Option<(f64, f64)>,
}

pub fn lognormal_ci(samples: &[f64]) -> IntervalReport {
    let n = samples.len();
    assert!(n >= 2, "need at least two samples");
    let (mean, var) = mean_var(samples);
    let nf = n as f64;
    let v = var / nf;
    let t = t_quantile_975(n - 1);
    let half = t * (v / nf + v * v / (2.0 * (nf - 1.0))).sqrt();
    let centre = mean + v / 2.0;
    let clt_half = t * v.sqrt();
    let log_scale = if samples.iter().all(|x| *x > 0.0) {
        let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
        let (m, s2) = mean_var(&logs);
        let h = t * (s2 / nf + s2 * s2 / (2.0 * (nf - 1.0))).sqrt();
        Some(((m + s2 / 2.0 - h).exp(), (m + s2 / 2.0 + h).exp()))
    } else {
        None
    };
    IntervalReport {
        mean,
        var_of_mean: v,
        literal: (centre - half, centre + half),
        clt: (mean - clt_half, mean + clt_half),
        log_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PathStream;

    #[test]
    fn t_quantiles() {
        assert!((t_quantile_975(1) - 12.706_204_736_174_7).abs() < 1e-8);
        assert!((t_quantile_975(10) - 2.228_138_851_986_274).abs() < 1e-10);
    }

    #[test]
    fn constant_samples_give_zero_width() {
        let r = lognormal_ci(&[0.97; 10]);
        assert_eq!(r.literal, (0.97, 0.97));
        assert_eq!(r.clt, (0.97, 0.97));
    }

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), 249_750.0);
        let (m, v) = mean_var(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((m, v), (2.5, 5.0 / 3.0));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.04, 0.02, 0.01];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    // Coverage of the true lognormal mean over repeated samples.
    fn coverage(pick: impl Fn(&IntervalReport) -> (f64, f64)) -> f64 {
        let (mu, sigma, n, reps): (f64, f64, _, _) = (-0.03, 0.3, 400, 1000);
        let truth = (mu + 0.5 * sigma * sigma).exp();
        let mut rng = PathStream::new(2024, 0);
        let mut hits = 0;
        for _ in 0..reps {
            let xs: Vec<f64> = (0..n).map(|_| (mu + sigma * rng.normal()).exp()).collect();
            let (lo, hi) = pick(&lognormal_ci(&xs));
            hits += usize::from(lo <= truth && truth <= hi);
        }
        hits as f64 / reps as f64
    }

    #[test]
    fn clt_and_log_scale_intervals_cover() {
        let c = coverage(|r| r.clt);
        assert!((c - 0.95).abs() <= 0.02, "clt coverage {c}");
        let c = coverage(|r| r.log_scale.unwrap());
        assert!((c - 0.95).abs() <= 0.02, "log-scale coverage {c}");
    }

    #[test]
    fn literal_interval_is_narrow() {
        // The literal formula shrinks like 1/n, so it under-covers at any useful n.
        let c = coverage(|r| r.literal);
        assert!(c < 0.5, "literal coverage {c}");
    }
}
