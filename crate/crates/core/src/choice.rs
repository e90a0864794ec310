//! The without-replacement choice probability and its derivative.
//!
//! `beta(x)` is the probability that all `d` servers sampled without
//! replacement from `n` lie inside a fraction-`x` subset:
//!
//! ```text
//! beta(x) = prod_{i=0}^{d-1} ((x - i/n) / (1 - i/n))^+
//! ```
//!
//! which equals `C(nx, d) / C(n, d)` whenever `nx` is an integer.
//! Sampling with replacement instead gives the surrogate
//! `gamma(x) = x^d`, and `0 <= beta <= gamma <= 1` always.
//!
//! Products are evaluated directly for `d <= DIRECT_PRODUCT_MAX_D` (exactness
//! for tiny oracle cases) and in log space above (no underflow up to
//! `d ~ 1e6`). The derivative uses the identity
//! `beta'(x) = beta(x) * sum_j 1/(x - j/n)`, valid on `x > (d-1)/n`, with the
//! sum rescaled by its largest term so neither factor over- or underflows.

use crate::{Error, Result, SystemParams};
use serde::Serialize;

/// Above this `d`, products are evaluated as sums of logs.
pub const DIRECT_PRODUCT_MAX_D: u64 = 50;

/// Input tolerance: `x` within this distance outside `[0,1]` is clamped,
/// anything farther is rejected.
pub const X_TOLERANCE: f64 = 1e-12;

/// Empirically calibrated constant for the `d^2/n` error band reported by
/// [`asymptotic_report`]. Non-normative: the underlying statement is
/// existential in the constant; this value was fixed once by a brute-force
/// sweep over `n <= 1e6`, `d <= 1e3`, `epsilon >= 0.5`.
pub const ASYMPTOTIC_BAND_CONST: f64 = 1.0;

fn clamp_unit(x: f64, what: &str) -> Result<f64> {
    if !x.is_finite() || x < -X_TOLERANCE || x > 1.0 + X_TOLERANCE {
        return Err(Error::Domain(format!(
            "{what}: x must lie in [0,1] (tolerance {X_TOLERANCE:e}), got {x}"
        )));
    }
    Ok(x.clamp(0.0, 1.0))
}

/// `beta(x)` for `x` in `[0,1]`.
pub fn beta(params: &SystemParams, x: f64) -> Result<f64> {
    let x = clamp_unit(x, "beta")?;
    Ok(beta_unchecked(params.n, params.d, x))
}

/// `beta` without the domain check, extended by `0` below `0` and by the
/// same product formula above `1` (all factors positive there). The
/// extension keeps the scaled drift monotone for arguments beyond the
/// physical range.
pub(crate) fn beta_extended(n: u64, d: u64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    beta_unchecked(n, d, x)
}

fn beta_unchecked(n: u64, d: u64, x: f64) -> f64 {
    let nf = n as f64;
    if d <= DIRECT_PRODUCT_MAX_D {
        let mut prod = 1.0;
        for i in 0..d {
            let f = (x - i as f64 / nf) / (1.0 - i as f64 / nf);
            if f <= 0.0 {
                return 0.0;
            }
            prod *= f;
        }
        if prod > 0.0 || x <= (d - 1) as f64 / nf {
            return prod;
        }
        // underflowed direct product with x above the kink: fall through
    }
    let mut log_sum = 0.0;
    for i in 0..d {
        let f = (x - i as f64 / nf) / (1.0 - i as f64 / nf);
        if f <= 0.0 {
            return 0.0;
        }
        log_sum += f.ln();
    }
    log_sum.exp()
}

/// The one-sided derivative `beta'(x)`: zero on `x <= (d-1)/n` (including
/// the kink itself, by convention), the product-rule sum above it.
pub fn beta_prime(params: &SystemParams, x: f64) -> Result<f64> {
    let x = clamp_unit(x, "beta_prime")?;
    Ok(beta_prime_unchecked(params.n, params.d, x))
}

fn beta_prime_unchecked(n: u64, d: u64, x: f64) -> f64 {
    let nf = n as f64;
    let kink = (d - 1) as f64 / nf;
    if x <= kink {
        return 0.0;
    }
    // Smallest gap is at j = d-1; rescale the reciprocal sum by it so the
    // sum stays in [1, d] and the log recombination cannot overflow.
    let g_min = x - kink;
    let mut scaled_sum = 0.0;
    for j in 0..d {
        scaled_sum += g_min / (x - j as f64 / nf);
    }
    if d <= DIRECT_PRODUCT_MAX_D {
        let b = beta_unchecked(n, d, x);
        if b > 0.0 {
            return b * (scaled_sum / g_min);
        }
    }
    let mut log_beta = 0.0;
    for i in 0..d {
        let f = (x - i as f64 / nf) / (1.0 - i as f64 / nf);
        log_beta += f.ln();
    }
    (log_beta - g_min.ln() + scaled_sum.ln()).exp()
}

/// With-replacement surrogate `gamma(x) = x^d`.
pub fn gamma(params: &SystemParams, x: f64) -> Result<f64> {
    let x = clamp_unit(x, "gamma")?;
    Ok(gamma_unchecked(params.d, x))
}

fn gamma_unchecked(d: u64, x: f64) -> f64 {
    if d <= DIRECT_PRODUCT_MAX_D {
        x.powi(d as i32)
    } else if x == 0.0 {
        0.0
    } else {
        (d as f64 * x.ln()).exp()
    }
}

/// `gamma'(x) = d x^(d-1)`.
pub fn gamma_prime(params: &SystemParams, x: f64) -> Result<f64> {
    let x = clamp_unit(x, "gamma_prime")?;
    let d = params.d;
    if d == 1 {
        return Ok(1.0);
    }
    if d <= DIRECT_PRODUCT_MAX_D {
        Ok(d as f64 * x.powi(d as i32 - 1))
    } else if x == 0.0 {
        Ok(0.0)
    } else {
        Ok(((d - 1) as f64 * x.ln() + (d as f64).ln()).exp())
    }
}

/// `beta` on the `1/n` lattice: `C(s, d) / C(n, d)` as the running product
/// `prod_{i<d} (s-i)/(n-i)`. This is what the event-driven simulator uses;
/// it agrees with `beta(s/n)` up to float roundoff.
pub fn beta_lattice(n: u64, d: u64, s: u64) -> f64 {
    debug_assert!(s <= n && d >= 1 && d <= n);
    if s < d {
        return 0.0;
    }
    if d <= DIRECT_PRODUCT_MAX_D {
        let mut prod = 1.0;
        for i in 0..d {
            prod *= (s - i) as f64 / (n - i) as f64;
        }
        prod
    } else {
        let mut log_sum = 0.0;
        for i in 0..d {
            log_sum += ((s - i) as f64 / (n - i) as f64).ln();
        }
        log_sum.exp()
    }
}

/// Joint evaluation of `beta`, `beta'`, `gamma` at one point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChoiceEval {
    pub x: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub gamma: f64,
}

pub fn evaluate(params: &SystemParams, x: f64) -> Result<ChoiceEval> {
    Ok(ChoiceEval {
        x,
        beta: beta(params, x)?,
        beta_prime: beta_prime(params, x)?,
        gamma: gamma(params, x)?,
    })
}

/// Finite-`n` diagnostics of how well `gamma = x^d` approximates `beta`.
///
/// Sup errors are measured over a fixed 1001-point equispaced grid so the
/// report is bit-reproducible. `sup_log_diff` is `+inf` when `beta`
/// vanishes somewhere on `[epsilon, 1]`; the approximation statements
/// assume `d/n` small and the report is informational outside that range.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticReport {
    pub epsilon: f64,
    pub grid_points: usize,
    /// `sup |beta/gamma - 1|` over `[epsilon, 1]`.
    pub sup_ratio_err_beta: f64,
    /// `sup |beta'/gamma' - 1|` over `[epsilon, 1]`.
    pub sup_ratio_err_beta_prime: f64,
    /// `sup |ln beta - ln gamma|` over `[epsilon, 1]`.
    pub sup_log_diff: f64,
    /// `2 ln d / d`: left of `1 - left_epsilon`, `beta` is uniformly small.
    pub left_epsilon: f64,
    /// `sup beta` over `[0, 1 - left_epsilon]`.
    pub sup_beta_left: f64,
    /// `sup beta'` over `[0, 1 - left_epsilon]`.
    pub sup_beta_prime_left: f64,
    /// `ASYMPTOTIC_BAND_CONST * d^2 / n`, for side-by-side display.
    pub bound_d2_over_n: f64,
}

const REPORT_GRID: usize = 1001;

pub fn asymptotic_report(params: &SystemParams, epsilon: f64) -> Result<AsymptoticReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!(
            "asymptotic_report: epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    let (n, d) = (params.n, params.d);
    let df = d as f64;

    let mut sup_ratio_b = 0.0f64;
    let mut sup_ratio_bp = 0.0f64;
    let mut sup_log = 0.0f64;
    for k in 0..REPORT_GRID {
        let x = epsilon + (1.0 - epsilon) * k as f64 / (REPORT_GRID - 1) as f64;
        let b = beta_unchecked(n, d, x);
        let g = gamma_unchecked(d, x);
        let bp = beta_prime_unchecked(n, d, x);
        let gp = if d == 1 {
            1.0
        } else {
            df * gamma_unchecked(d - 1, x)
        };
        sup_ratio_b = sup_ratio_b.max((b / g - 1.0).abs());
        sup_ratio_bp = sup_ratio_bp.max((bp / gp - 1.0).abs());
        let ld = if b > 0.0 {
            (b.ln() - g.ln()).abs()
        } else {
            f64::INFINITY
        };
        sup_log = sup_log.max(ld);
    }

    let left_eps = 2.0 * df.ln() / df;
    let hi = (1.0 - left_eps).max(0.0);
    let mut sup_b_left = 0.0f64;
    let mut sup_bp_left = 0.0f64;
    for k in 0..REPORT_GRID {
        let x = hi * k as f64 / (REPORT_GRID - 1) as f64;
        sup_b_left = sup_b_left.max(beta_unchecked(n, d, x));
        sup_bp_left = sup_bp_left.max(beta_prime_unchecked(n, d, x));
    }

    Ok(AsymptoticReport {
        epsilon,
        grid_points: REPORT_GRID,
        sup_ratio_err_beta: sup_ratio_b,
        sup_ratio_err_beta_prime: sup_ratio_bp,
        sup_log_diff: sup_log,
        left_epsilon: left_eps,
        sup_beta_left: sup_b_left,
        sup_beta_prime_left: sup_bp_left,
        bound_d2_over_n: ASYMPTOTIC_BAND_CONST * df * df / n as f64,
    })
}
