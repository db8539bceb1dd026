//! Small numerical helpers shared by the estimators.

/// Number of batches used for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 100;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// `log(sum(exp(x)))` without overflow. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(mean(exp(x)))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Splits `xs` into `batches` contiguous batches of equal length (the
/// remainder goes to the last batch) and applies `stat` to each.
pub fn batch_statistics<F>(xs: &[f64], batches: usize, stat: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let batches = batches.clamp(1, xs.len().max(1));
    let size = xs.len() / batches;
    (0..batches)
        .map(|b| {
            let start = b * size;
            let end = if b + 1 == batches { xs.len() } else { start + size };
            stat(&xs[start..end])
        })
        .collect()
}

/// Batch-means standard error of the statistic `stat` evaluated on the whole
/// sample: `sd(batch statistics) / sqrt(B)`.
pub fn batch_means_se<F>(xs: &[f64], batches: usize, stat: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let values = batch_statistics(xs, batches, stat);
    if values.len() < 2 {
        return f64::NAN;
    }
    std_dev(&values) / (values.len() as f64).sqrt()
}

/// Empirical autocorrelation at `lag`, normalised by the lag-0 autocovariance.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if lag >= n {
        return f64::NAN;
    }
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let ck: f64 = (0..n - lag).map(|t| (xs[t] - m) * (xs[t + lag] - m)).sum::<f64>();
    ck / c0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_large_values() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn variance_of_known_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn batches_cover_every_element() {
        let xs: Vec<f64> = (0..103).map(|i| i as f64).collect();
        let sums = batch_statistics(&xs, 10, |b| b.iter().sum());
        assert_eq!(sums.len(), 10);
        assert_eq!(sums.iter().sum::<f64>(), xs.iter().sum::<f64>());
    }

    #[test]
    fn autocorrelation_of_alternating_series() {
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((autocorrelation(&xs, 1) + 1.0).abs() < 1e-2);
        assert!((autocorrelation(&xs, 2) - 1.0).abs() < 1e-2);
    }
}
