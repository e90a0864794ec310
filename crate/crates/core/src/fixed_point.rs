//! The near fixed point `mu` of the occupancy drift and related quantities.
//!
//! `mu` is defined by the recursion `mu_1 = lambda`, `mu_{i+1} =
//! lambda * beta(mu_i)`; it is the unique point where the arrival inflow
//! field `a(x)_i = lambda (beta(x_{i-1}) - beta(x_i))` (with `x_0 = 1`)
//! balances the service outflow field `b(x)_i = x_i - x_{i+1}`.

use crate::choice::{self, beta, beta_prime};
use crate::{Error, Result, SystemParams};
use serde::Serialize;

/// Default truncation floor. Once `mu_i` drops below ~1/e the tail decays
/// like `mu_{i+1} <= mu_i^d`, so everything below this is numerically inert.
pub const DEFAULT_FLOOR: f64 = 1e-15;

/// The near fixed point, truncated at `floor`.
#[derive(Debug, Clone, Serialize)]
pub struct NearFixedPoint {
    mu: Vec<f64>,
    floor: f64,
    params: SystemParams,
}

impl NearFixedPoint {
    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `mu_i` with 1-based `i`; coordinates beyond the truncation are `0`.
    pub fn get(&self, i: usize) -> f64 {
        if i == 0 || i > self.mu.len() {
            0.0
        } else {
            self.mu[i - 1]
        }
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }
}

/// Iterates the fixed-point recursion until the next coordinate falls below
/// `floor`. Requires `lambda < 1` (otherwise the vector is not summable)
/// and `floor` in `(0, 1e-6]`.
pub fn mu_sequence(params: &SystemParams, floor: f64) -> Result<NearFixedPoint> {
    if !(params.lambda < 1.0) {
        return Err(Error::InvalidParams(format!(
            "mu_sequence requires lambda < 1, got {}",
            params.lambda
        )));
    }
    if !(floor > 0.0 && floor <= 1e-6) {
        return Err(Error::InvalidParams(format!(
            "floor must lie in (0, 1e-6], got {floor}"
        )));
    }
    let mut mu = Vec::new();
    let mut cur = params.lambda;
    while cur >= floor {
        mu.push(cur);
        cur = params.lambda * beta(params, cur)?;
        if mu.len() > 100_000 {
            return Err(Error::InvalidParams(
                "fixed point did not decay below floor within 1e5 coordinates".into(),
            ));
        }
    }
    Ok(NearFixedPoint {
        mu,
        floor,
        params: *params,
    })
}

fn coord(x: &[f64], i: usize) -> f64 {
    if i == 0 {
        1.0
    } else if i <= x.len() {
        x[i - 1]
    } else {
        0.0
    }
}

fn check_occupancy_vector(x: &[f64]) -> Result<()> {
    for (j, w) in x.windows(2).enumerate() {
        if w[1] > w[0] + 1e-12 {
            return Err(Error::InvalidParams(format!(
                "occupancy vector must be nonincreasing (coords {} and {})",
                j + 1,
                j + 2
            )));
        }
    }
    if x.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
        return Err(Error::InvalidParams(
            "occupancy values must lie in [0,1]".into(),
        ));
    }
    Ok(())
}

/// Arrival inflow field over the support of `x` plus one coordinate.
pub fn drift_a(params: &SystemParams, x: &[f64]) -> Result<Vec<f64>> {
    check_occupancy_vector(x)?;
    let len = x.len() + 1;
    let mut a = Vec::with_capacity(len);
    let mut beta_prev = beta(params, 1.0)?;
    for i in 1..=len {
        let beta_cur = beta(params, coord(x, i).clamp(0.0, 1.0))?;
        a.push(params.lambda * (beta_prev - beta_cur));
        beta_prev = beta_cur;
    }
    Ok(a)
}

/// Service outflow field over the support of `x` plus one coordinate.
pub fn drift_b(x: &[f64]) -> Result<Vec<f64>> {
    check_occupancy_vector(x)?;
    Ok((1..=x.len() + 1)
        .map(|i| coord(x, i) - coord(x, i + 1))
        .collect())
}

/// Coordinatewise `a(x) - b(x)` and its l1 norm.
pub fn drift_residual(params: &SystemParams, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let a = drift_a(params, x)?;
    let b = drift_b(x)?;
    let res: Vec<f64> = a.iter().zip(&b).map(|(ai, bi)| ai - bi).collect();
    let l1 = res.iter().map(|v| v.abs()).sum();
    Ok((res, l1))
}

/// Scaled local drift `t_i(z) = lambda * sqrt(n) * (beta(mu_i + z/sqrt(n))
/// - beta(mu_i))`, with `t_0 == 0` and `beta` extended by zero below its
/// domain. Nondecreasing in `z`, with the sign of `z`.
pub fn t_drift(params: &SystemParams, mu: &NearFixedPoint, i: usize, z: f64) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let sqrt_n = params.sqrt_n();
    let mu_i = mu.get(i);
    let shifted = choice::beta_extended(params.n, params.d, mu_i + z / sqrt_n);
    let base = choice::beta_extended(params.n, params.d, mu_i);
    params.lambda * sqrt_n * (shifted - base)
}

/// Exponential surrogate for `t_1(z)`:
/// `(sqrt(n)/d) * (exp((d/sqrt(n))(z - alpha_n)) - exp(-(d/sqrt(n)) alpha_n))`
/// where `alpha_n = sqrt(n)(1 - lambda) - sqrt(n) log(d)/d`.
pub fn t_drift_exponential_surrogate(params: &SystemParams, z: f64) -> f64 {
    let sqrt_n = params.sqrt_n();
    let d = params.d as f64;
    let alpha_n = sqrt_n * (1.0 - params.lambda) - sqrt_n * d.ln() / d;
    let scale = d / sqrt_n;
    (sqrt_n / d) * ((scale * (z - alpha_n)).exp() - (-scale * alpha_n).exp())
}

/// Diagnostics of the log-scale approximation of `mu_{k+1}` and the
/// associated ratio families.
#[derive(Debug, Clone, Serialize)]
pub struct MuApproxReport {
    pub k: usize,
    /// `|log mu_{k+1} - log(lambda) * sum_{i=0}^k d^i|`.
    pub log_mu_abs_err: f64,
    /// `log mu_{k+1} / (log(lambda) * sum_{i=0}^k d^i)`.
    pub log_mu_ratio: f64,
    /// Bound shape `(1/n) * sum_{i=1}^k d^(i+1)` (unit constant; the
    /// statement is existential in the constant).
    pub bound_shape: f64,
    /// `lambda * mu_i * beta'(mu_i) / (d * mu_{i+1})` for `i = 1..=k`.
    pub drift_ratios: Vec<f64>,
    /// `beta'(mu_i) / beta'(mu_1)` for `i = 1..=k-1`.
    pub head_ratios: Vec<f64>,
}

/// Requires `mu_k >= 0.5` (the approximation hypothesis with eps = 0.5).
pub fn mu_log_approx_check(params: &SystemParams, k: usize) -> Result<MuApproxReport> {
    if k == 0 {
        return Err(Error::InvalidParams("k must be >= 1".into()));
    }
    if !(params.lambda < 1.0) {
        return Err(Error::InvalidParams("requires lambda < 1".into()));
    }
    // untruncated head of the recursion up to mu_{k+1}
    let mut mu = vec![params.lambda];
    for _ in 0..k {
        let last = *mu.last().unwrap();
        mu.push(params.lambda * beta(params, last)?);
    }
    let mu_k = mu[k - 1];
    if mu_k < 0.5 {
        return Err(Error::Domain(format!(
            "mu_{k} = {mu_k} < 0.5; approximation hypothesis fails"
        )));
    }
    let d = params.d as f64;
    let geom: f64 = (0..=k).map(|i| d.powi(i as i32)).sum();
    let predicted = params.lambda.ln() * geom;
    let actual = mu[k].ln();
    let bound_shape: f64 = (1..=k).map(|i| d.powi(i as i32 + 1)).sum::<f64>() / params.n as f64;

    let mut drift_ratios = Vec::with_capacity(k);
    for i in 1..=k {
        let bp = beta_prime(params, mu[i - 1])?;
        drift_ratios.push(params.lambda * mu[i - 1] * bp / (d * mu[i]));
    }
    let bp1 = beta_prime(params, mu[0])?;
    let mut head_ratios = Vec::new();
    for i in 1..k {
        head_ratios.push(beta_prime(params, mu[i - 1])? / bp1);
    }

    Ok(MuApproxReport {
        k,
        log_mu_abs_err: (actual - predicted).abs(),
        log_mu_ratio: actual / predicted,
        bound_shape,
        drift_ratios,
        head_ratios,
    })
}

/// Fluid fixed point `f_k^gamma = (1, ..., 1, gamma, 0, ...)` with `k` ones.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FluidFixedPoint {
    pub k: usize,
    pub gamma_coeff: f64,
}

impl FluidFixedPoint {
    pub fn new(k: usize, gamma_coeff: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParams(
                "fluid fixed point needs k >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma_coeff) {
            return Err(Error::InvalidParams(format!(
                "gamma coefficient must lie in [0,1), got {gamma_coeff}"
            )));
        }
        Ok(FluidFixedPoint { k, gamma_coeff })
    }

    /// The vector truncated to `len >= k+1` coordinates.
    pub fn vector(&self, len: usize) -> Vec<f64> {
        let len = len.max(self.k + 1);
        let mut v = vec![0.0; len];
        for vi in v.iter_mut().take(self.k) {
            *vi = 1.0;
        }
        v[self.k] = self.gamma_coeff;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_hand_recursion() {
        let p = SystemParams::new(4, 2, 0.5).unwrap();
        let mu = mu_sequence(&p, 1e-12).unwrap();
        // beta(0.5) = 1/6, beta(1/12) = 0
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.get(1), 0.5);
        assert!((mu.get(2) - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(mu.get(3), 0.0);
    }

    #[test]
    fn mu_head_is_lambda() {
        for &lam in &[1e-6, 0.3, 0.99] {
            let p = SystemParams::new(100, 5, lam).unwrap();
            assert_eq!(mu_sequence(&p, 1e-9).unwrap().get(1), lam);
        }
    }

    #[test]
    fn mu_rejections() {
        let p = SystemParams::new(4, 2, 1.0).unwrap();
        assert!(mu_sequence(&p, 1e-12).is_err());
        let p2 = SystemParams::new(4, 2, 0.5).unwrap();
        assert!(mu_sequence(&p2, 0.0).is_err());
        assert!(mu_sequence(&p2, 1e-3).is_err());
    }

    #[test]
    fn mu_is_drift_fixed_point() {
        let p = SystemParams::new(4, 2, 0.5).unwrap();
        let mu = mu_sequence(&p, 1e-12).unwrap();
        let (res, l1) = drift_residual(&p, mu.as_slice()).unwrap();
        assert!(l1 <= 1e-12, "l1 = {l1}, res = {res:?}");
    }

    #[test]
    fn mu_surrogate_band() {
        // beta(lambda) tracks gamma(lambda) within the d^2/n log band
        let p = SystemParams::new(10_000, 100, 0.954).unwrap();
        let mu = mu_sequence(&p, 1e-12).unwrap();
        let log_gamma_pred = p.lambda.ln() + 100.0 * p.lambda.ln();
        let err = (mu.get(2).ln() - log_gamma_pred).abs();
        let band = choice::ASYMPTOTIC_BAND_CONST * (p.d * p.d) as f64 / p.n as f64;
        assert!(err <= band, "err {err} vs band {band}");
    }

    #[test]
    fn residual_all_zero_vector() {
        let p = SystemParams::new(4, 2, 0.5).unwrap();
        let (res, _) = drift_residual(&p, &[0.0, 0.0]).unwrap();
        assert_eq!(res[0], 0.5); // lambda * beta(1)
        assert_eq!(res[1], 0.0);
    }

    #[test]
    fn residual_fluid_point_differs_from_prelimit() {
        // f_1 with lambda = 1, d = n: the prelimit drift does not vanish
        let p = SystemParams::new(4, 4, 1.0).unwrap();
        let (res, l1) = drift_residual(&p, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(res[0], -1.0);
        assert_eq!(res[1], 1.0);
        assert!(res[2].abs() == 0.0 && res[3].abs() == 0.0);
        assert_eq!(l1, 2.0);
    }

    #[test]
    fn residual_rejects_non_monotone() {
        let p = SystemParams::new(4, 2, 0.5).unwrap();
        assert!(drift_residual(&p, &[0.2, 0.5]).is_err());
    }

    #[test]
    fn t_drift_basics() {
        let p = SystemParams::new(10_000, 100, 1.0 - 100f64.ln() / 100.0).unwrap();
        let mu = mu_sequence(&p, 1e-12).unwrap();
        assert_eq!(t_drift(&p, &mu, 0, 3.0), 0.0);
        assert_eq!(t_drift(&p, &mu, 1, 0.0), 0.0);
        // sign and monotonicity in z
        let mut prev = f64::NEG_INFINITY;
        for k in -30..=30 {
            let z = k as f64 / 10.0;
            let t = t_drift(&p, &mu, 1, z);
            assert!(t >= prev, "non-monotone at z={z}");
            assert!(t * z >= 0.0 || z == 0.0);
            prev = t;
        }
    }

    #[test]
    fn t_drift_matches_derivative_quadrature() {
        // two algebraic routes to the same quantity: the sqrt(n)-scaled
        // difference of beta versus Simpson quadrature of its derivative
        let p = SystemParams::new(10_000, 100, 1.0 - 100f64.ln() / 100.0).unwrap();
        let mu = mu_sequence(&p, 1e-12).unwrap();
        let sqrt_n = p.sqrt_n();
        for &z in &[-3.0, -1.0, 0.5, 2.0, 3.0] {
            let panels = 2000;
            let (a, b) = if z >= 0.0 { (0.0, z) } else { (z, 0.0) };
            let h = (b - a) / panels as f64;
            let f = |y: f64| {
                crate::choice::beta_prime(&p, (mu.get(1) + y / sqrt_n).clamp(0.0, 1.0)).unwrap()
            };
            let mut acc = f(a) + f(b);
            for j in 1..panels {
                let w = if j % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(a + j as f64 * h);
            }
            let mut integral = p.lambda * acc * h / 3.0;
            if z < 0.0 {
                integral = -integral;
            }
            let direct = t_drift(&p, &mu, 1, z);
            assert!(
                (integral - direct).abs() <= 1e-7 * direct.abs().max(1e-3),
                "z={z}: quadrature {integral} vs direct {direct}"
            );
        }
    }

    #[test]
    fn t_drift_exponential_surrogate_converges_at_large_d() {
        // the surrogate's error shrinks like d (1-lambda)^2; at d = 1000,
        // n = 1e6 it is a few percent over |z| <= 1
        let d = 1000u64;
        let n = 1_000_000u64;
        let lambda = 1.0 - (d as f64).ln() / d as f64;
        let p = SystemParams::new(n, d, lambda).unwrap();
        let mu = mu_sequence(&p, 1e-12).unwrap();
        for k in [-10, -5, -1, 1, 5, 10] {
            let z = k as f64 / 10.0;
            let t = t_drift(&p, &mu, 1, z);
            let s = t_drift_exponential_surrogate(&p, z);
            assert!((s / t - 1.0).abs() < 0.05, "z={z}: t={t}, s={s}");
        }
        // alpha_n = 0 by construction here, so the surrogate reduces to
        // (sqrt(n)/d)(e^{(d/sqrt n) z} - 1)
        let s1 = t_drift_exponential_surrogate(&p, 1.0);
        let scale = d as f64 / p.sqrt_n();
        let closed = (scale).exp_m1() / scale;
        assert!((s1 - closed).abs() < 1e-9 * closed, "{s1} vs {closed}");
    }

    #[test]
    fn mu_log_approx_families_near_one() {
        let p = SystemParams::new(1_000_000, 10, 0.999).unwrap();
        let r = mu_log_approx_check(&p, 2).unwrap();
        for v in r.drift_ratios.iter().chain(&r.head_ratios) {
            assert!((0.9..=1.1).contains(v), "{r:?}");
        }
        assert!((0.9..=1.1).contains(&r.log_mu_ratio), "{r:?}");
    }

    #[test]
    fn mu_log_approx_rejects_small_mu() {
        // mu_2 = 1/12 < 0.5
        let p = SystemParams::new(4, 2, 0.5).unwrap();
        assert!(mu_log_approx_check(&p, 2).is_err());
        // boundary mu_1 = 0.5 accepted, report carries the raw error
        let r = mu_log_approx_check(&p, 1).unwrap();
        let want = ((1.0f64 / 12.0).ln() - 3.0 * 0.5f64.ln()).abs();
        assert!((r.log_mu_abs_err - want).abs() < 1e-12);
    }

    #[test]
    fn fluid_fixed_point_shape() {
        let f = FluidFixedPoint::new(2, 0.25).unwrap();
        assert_eq!(f.vector(5), vec![1.0, 1.0, 0.25, 0.0, 0.0]);
        assert!(FluidFixedPoint::new(0, 0.5).is_err());
        assert!(FluidFixedPoint::new(1, 1.0).is_err());
    }

    #[test]
    fn mu_second_coordinate_dominated() {
        // mu_{i+1} <= mu_i^d coordinatewise
        for &(n, d, lam) in &[(100u64, 3u64, 0.9), (1000, 10, 0.99), (50, 2, 0.6)] {
            let p = SystemParams::new(n, d, lam).unwrap();
            let mu = mu_sequence(&p, 1e-12).unwrap();
            for i in 1..mu.len() {
                assert!(mu.get(i + 1) <= mu.get(i).powi(d as i32) + 1e-15);
            }
        }
    }
}
