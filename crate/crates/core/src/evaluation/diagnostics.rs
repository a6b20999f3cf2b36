//! Distributional diagnostics used to validate the samplers.

/// Monte Carlo estimate of a characteristic function with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfEstimate {
    pub value: f64,
    pub std_err: f64,
}

/// Real part of the empirical characteristic function `mean cos(k . x)` at
/// wavevector `k`, for laws symmetric under `x -> -x`.
pub fn empirical_cf<'a, I>(points: I, k: &[f64]) -> CfEstimate
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    for x in points {
        let phase: f64 = x.iter().zip(k).map(|(a, b)| a * b).sum();
        let c = phase.cos();
        n += 1;
        sum += c;
        sum_sq += c * c;
    }
    let n_f = n as f64;
    let mean = sum / n_f;
    let var = (sum_sq / n_f - mean * mean).max(0.0) * n_f / (n_f - 1.0);
    CfEstimate { value: mean, std_err: (var / n_f).sqrt() }
}

/// Wavevector of length `k` at polar angle `angle` in the first two
/// coordinates of a `dim`-dimensional space.
pub fn planar_wavevector(k: f64, angle: f64, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = k * angle.cos();
    if dim > 1 {
        v[1] = k * angle.sin();
    }
    v
}

/// Pearson chi-squared statistic of the polar angle of the first two
/// coordinates against the uniform law on `bins` equal sectors.
pub fn angular_chi_square<'a, I>(points: I, bins: usize) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut counts = vec![0usize; bins];
    let mut n = 0usize;
    for x in points {
        let angle = x[1].atan2(x[0]) + std::f64::consts::PI;
        let b = ((angle / std::f64::consts::TAU * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
        n += 1;
    }
    let expected = n as f64 / bins as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
