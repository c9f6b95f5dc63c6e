//! Small statistics helpers: regression, order fits, bootstrap, Kolmogorov-Smirnov.

use rand::Rng;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Least-squares line y ≈ a + b x; returns (b, a).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

/// Slope of log|err| against log(eps).
pub fn fit_order(eps: &[f64], err: &[f64]) -> f64 {
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|e| e.abs().max(1e-300).ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Percentile of a sample (linear interpolation), p in [0, 1].
pub fn percentile(x: &[f64], p: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Bootstrap summary of a statistic.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Bootstrap {
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Resamples `n` units with replacement `resamples` times; `stat` receives the index draw.
pub fn bootstrap<R: Rng>(
    n: usize,
    resamples: usize,
    rng: &mut R,
    estimate: f64,
    mut stat: impl FnMut(&[usize]) -> f64,
) -> Bootstrap {
    let mut idx = vec![0usize; n];
    let mut reps = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        reps.push(stat(&idx));
    }
    Bootstrap {
        estimate,
        std_error: std_dev(&reps),
        ci_low: percentile(&reps, 0.025),
        ci_high: percentile(&reps, 0.975),
    }
}

/// Moving-block bootstrap of the mean of a correlated series.
pub fn block_bootstrap_mean<R: Rng>(series: &[f64], block: usize, resamples: usize, rng: &mut R) -> Bootstrap {
    let n = series.len();
    let block = block.clamp(1, n);
    let nblocks = n.div_ceil(block);
    let starts = n - block + 1;
    let mut reps = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut s = 0.0;
        let mut c = 0usize;
        for _ in 0..nblocks {
            let st = rng.random_range(0..starts);
            for v in &series[st..st + block] {
                s += v;
                c += 1;
            }
        }
        reps.push(s / c as f64);
    }
    Bootstrap {
        estimate: mean(series),
        std_error: std_dev(&reps),
        ci_low: percentile(&reps, 0.025),
        ci_high: percentile(&reps, 0.975),
    }
}

/// Kolmogorov-Smirnov statistic sup|F_n - F| of a sample against a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic p-value of the one-sample KS statistic (Kolmogorov distribution with the
/// Stephens small-sample correction).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (b, a) = linear_fit(&x, &y);
        assert!((b - 2.5).abs() < 1e-12 && (a + 1.0).abs() < 1e-12);
        let e = [0.2, 0.1, 0.05];
        let err: Vec<f64> = e.iter().map(|v| 3.0 * v * v).collect();
        assert!((fit_order(&e, &err) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ks_uniform_sample_not_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let d = ks_statistic(&s, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d, s.len()) > 0.01);
        let skew: Vec<f64> = s.iter().map(|x| x * x).collect();
        let d2 = ks_statistic(&skew, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d2, s.len()) < 1e-6);
    }

    #[test]
    fn ks_pvalue_reference_points() {
        // Kolmogorov survival function: Q(1.36) ≈ 0.049, Q(1.63) ≈ 0.0098
        assert!((ks_pvalue(1.36 / 1e4, 100_000_000) - 0.0494).abs() < 1e-3);
        assert!((ks_pvalue(1.63 / 1e4, 100_000_000) - 0.0098).abs() < 5e-4);
    }
}
