//! Empirical-distribution statistics shared by the Monte Carlo modules.

/// Dvoretzky–Kiefer–Wolfowitz half-width: with probability at least
/// `1 - alpha`, `sup |F_n - F| <= sqrt(ln(2/alpha) / (2n))`.
pub fn dkw_epsilon(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// One-sample Kolmogorov–Smirnov statistic of `sorted` against a continuous CDF.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (((i + 1) as f64 / n) - c).max(c - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov statistic; both inputs sorted ascending.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        worst = worst.max((i as f64 / na - j as f64 / nb).abs());
    }
    worst
}

/// Fraction of `sorted` strictly greater than `x`.
pub fn survival_at(sorted: &[f64], x: f64) -> f64 {
    let le = sorted.partition_point(|&v| v <= x);
    (sorted.len() - le) as f64 / sorted.len() as f64
}

pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sample mean and standard error of the mean (0 for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
