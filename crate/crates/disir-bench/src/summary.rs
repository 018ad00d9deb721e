//! Order-pinned summary statistics.
//!
//! Every summary a pipeline writes is recomputable bit-for-bit from the raw
//! rows, so these helpers fix both the algorithm and the evaluation order:
//! compensated (Neumaier) summation in index order for means, a two-pass
//! compensated variance, type-7 quantiles, Tukey whiskers clipped to the
//! data, and a least-squares slope of the log survival function.

/// Neumaier compensated sum, in iteration order.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(values: &[f64]) -> f64 {
    neumaier_sum(values.iter().copied()) / values.len() as f64
}

/// Two-pass sample variance (denominator `n - 1`).
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss = neumaier_sum(values.iter().map(|v| (v - m) * (v - m)));
    ss / (values.len() as f64 - 1.0)
}

/// z-score of the sample mean against a reference value.
pub fn mean_z_score(values: &[f64], reference: f64) -> f64 {
    let m = mean(values);
    let se = (variance(values) / values.len() as f64).sqrt();
    (m - reference) / se
}

/// Linear-interpolation quantile (type 7) of an ascending-sorted slice.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Boxplot summary: quartiles plus Tukey 1.5 IQR whiskers clipped to the
/// observed data.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

pub fn box_stats(sorted: &[f64]) -> BoxStats {
    let q1 = quantile_type7(sorted, 0.25);
    let median = quantile_type7(sorted, 0.5);
    let q3 = quantile_type7(sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_lo = *sorted
        .iter()
        .find(|v| **v >= lo_fence)
        .unwrap_or(&sorted[0]);
    let whisker_hi = *sorted
        .iter()
        .rev()
        .find(|v| **v <= hi_fence)
        .unwrap_or(&sorted[sorted.len() - 1]);
    BoxStats { q1, median, q3, whisker_lo, whisker_hi }
}

/// Integer-valued histogram with uniform bin width chosen to stay under
/// `max_bins` bins; returns `(bin_start, width, count)` triples.
pub fn integer_histogram(values: &[usize], max_bins: usize) -> Vec<(usize, usize, usize)> {
    if values.is_empty() {
        return Vec::new();
    }
    let min = *values.iter().min().unwrap();
    let max = *values.iter().max().unwrap();
    let span = max - min + 1;
    let width = span.div_ceil(max_bins).max(1);
    let bins = span.div_ceil(width);
    let mut counts = vec![0usize; bins];
    for v in values {
        counts[(v - min) / width] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (min + i * width, width, c))
        .collect()
}

/// Least-squares slope of `log S(t)` over the tail beyond the given
/// percentile of the samples. `None` when fewer than three distinct tail
/// points exist.
pub fn survival_log_slope_beyond(values: &[usize], percentile: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let cut = sorted[(((n - 1) as f64) * percentile).floor() as usize];

    // survival S(t) = P(tau > t) evaluated at the distinct tail values
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if v < cut {
            continue;
        }
        let is_last_of_value = i + 1 == n || sorted[i + 1] != v;
        if is_last_of_value {
            let survivors = n - (i + 1);
            if survivors > 0 {
                points.push((v as f64, (survivors as f64 / n as f64).ln()));
            }
        }
    }
    if points.len() < 3 {
        return None;
    }
    let nf = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

/// Kolmogorov-Smirnov distance between an ascending-sorted sample and a
/// reference CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut ks = 0.0f64;
    for (i, z) in sorted.iter().enumerate() {
        let f = cdf(*z);
        ks = ks.max((f - i as f64 / n).abs());
        ks = ks.max(((i + 1) as f64 / n - f).abs());
    }
    ks
}
