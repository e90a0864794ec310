//! Two-sample statistics for comparing prelimit and limit marginals.

use crate::{Error, Result};

/// Classical two-sample Kolmogorov–Smirnov statistic: the exact supremum
/// difference of the empirical CDFs, by a sorted merge walk. Ties are
/// handled by advancing both samples through the tied value before the
/// difference is evaluated.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParams(
            "ks_two_sample requires nonempty samples".into(),
        ));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d.min(1.0))
}

/// Asymptotic two-sided p-value for the two-sample statistic, via the
/// Kolmogorov distribution with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n_a: usize, n_b: usize) -> f64 {
    let ne = (n_a as f64 * n_b as f64) / (n_a as f64 + n_b as f64);
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    kolmogorov_q(lambda)
}

/// `Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * x * x).exp();
        total += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// Sample mean and (population) variance.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Quantile by linear interpolation of order statistics (sorts a copy).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    let mut s = xs.to_vec();
    s.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    if s.is_empty() {
        return f64::NAN;
    }
    if s.len() == 1 {
        return s[0];
    }
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    s[lo] + frac * (s[hi] - s[lo])
}
