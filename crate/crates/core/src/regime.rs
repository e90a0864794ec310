//! Classification of parameter sequences `(d_n, lambda_n)` into the three
//! fluctuation regimes, keyed on the measured ratio `d / sqrt(n)`.
//!
//! Any single-`n` classification is a finite-size proxy for a statement
//! about sequences, so every classification carries the measured
//! diagnostics that produced it.

use crate::choice::beta_prime;
use crate::expr::ParamRule;
use crate::fixed_point::{mu_sequence, NearFixedPoint};
use crate::{Result, SystemParams};
use serde::Serialize;

/// Classifier thresholds. All of these are conventions, not limits from
/// the theory; they are plain config values.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegimeThresholds {
    /// `d/sqrt(n)` at or above this is super-root-n.
    pub super_cutoff: f64,
    /// `d/sqrt(n)` in `[critical_low, super_cutoff)` is critical.
    pub critical_low: f64,
    /// Relative half-width of the dead band around each cutoff; a measured
    /// ratio inside a band classifies as `Ambiguous`. Zero disables it.
    pub dead_band: f64,
    /// Sub-regime `k`: the largest index with `mu_k` at least this value.
    /// Coordinates of `mu` decay super-exponentially once below ~1/e, so any
    /// threshold well inside (0,1) selects the same `k`; 0.5 matches the
    /// hypothesis used by the log-scale approximation checks.
    pub mu_one_threshold: f64,
    /// Deepest coordinate scanned.
    pub k_max: usize,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        RegimeThresholds {
            super_cutoff: 10.0,
            critical_low: 0.1,
            dead_band: 0.0,
            mu_one_threshold: 0.5,
            k_max: 8,
        }
    }
}

/// Regime kind with its measured limit parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum LimitRegime {
    /// `d << sqrt(n)`: linear limit system; `k` is the deepest coordinate
    /// of `mu` still near 1 and `alpha = beta'(mu_k)`.
    SubRootN { k: usize, alpha: f64 },
    /// `d ~ c sqrt(n)`: exponential-drift limit system.
    CriticalRootN { c: f64, alpha: f64 },
    /// `d >> sqrt(n)`: reflected limit system with barrier `alpha`.
    SuperRootN { alpha: f64 },
    /// Measured ratio sits inside a threshold dead band.
    Ambiguous { ratio: f64 },
}

/// Everything that was measured to produce a classification.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeDiagnostics {
    pub n: u64,
    pub d: u64,
    pub lambda: f64,
    pub d_over_sqrt_n: f64,
    /// `sqrt(n) * (1 - lambda)`.
    pub sqrt_n_gap: f64,
    /// `sqrt(n)(1 - lambda) - sqrt(n) log(d) / d`.
    pub alpha_n: f64,
    /// `mu_k` for `k = 1..=k_max` (empty when `lambda >= 1`).
    pub mu_head: Vec<f64>,
    /// `beta'(mu_k)` for the same range.
    pub beta_prime_head: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub regime: LimitRegime,
    pub diagnostics: RegimeDiagnostics,
}

/// Measures the diagnostics of `(d(n), lambda(n))` at one `n` and applies
/// the thresholds. Deterministic in all inputs.
pub fn classify_regime(
    rule: &ParamRule,
    n: u64,
    thresholds: &RegimeThresholds,
) -> Result<Classification> {
    let d = rule.d_at(n)?;
    let lambda = rule.lambda_at(n)?;
    classify_params(&SystemParams::new(n, d, lambda)?, thresholds)
}

pub fn classify_params(
    params: &SystemParams,
    thresholds: &RegimeThresholds,
) -> Result<Classification> {
    let (n, d, lambda) = (params.n, params.d, params.lambda);
    let sqrt_n = params.sqrt_n();
    let df = d as f64;
    let ratio = df / sqrt_n;
    let sqrt_n_gap = sqrt_n * (1.0 - lambda);
    let alpha_n = sqrt_n_gap - sqrt_n * df.ln() / df;

    let mu = if lambda < 1.0 {
        Some(mu_sequence(params, crate::fixed_point::DEFAULT_FLOOR)?)
    } else {
        None
    };
    let (mu_head, beta_prime_head) = head_diagnostics(params, mu.as_ref(), thresholds.k_max)?;

    let band = thresholds.dead_band;
    let in_band = |cutoff: f64| band > 0.0 && (ratio - cutoff).abs() <= band * cutoff;

    let regime = if in_band(thresholds.super_cutoff) || in_band(thresholds.critical_low) {
        LimitRegime::Ambiguous { ratio }
    } else if ratio >= thresholds.super_cutoff {
        LimitRegime::SuperRootN { alpha: alpha_n }
    } else if ratio >= thresholds.critical_low {
        LimitRegime::CriticalRootN {
            c: ratio,
            alpha: alpha_n,
        }
    } else if mu.is_none() {
        // d << sqrt(n) with lambda >= 1 has no matching limit system
        LimitRegime::Ambiguous { ratio }
    } else {
        let k = mu_head
            .iter()
            .rposition(|&m| m >= thresholds.mu_one_threshold)
            .map(|p| p + 1)
            .unwrap_or(1);
        LimitRegime::SubRootN {
            k,
            alpha: beta_prime_head[k - 1],
        }
    };

    Ok(Classification {
        regime,
        diagnostics: RegimeDiagnostics {
            n,
            d,
            lambda,
            d_over_sqrt_n: ratio,
            sqrt_n_gap,
            alpha_n,
            mu_head,
            beta_prime_head,
        },
    })
}

fn head_diagnostics(
    params: &SystemParams,
    mu: Option<&NearFixedPoint>,
    k_max: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(mu) = mu else {
        return Ok((Vec::new(), Vec::new()));
    };
    let mut mus = Vec::with_capacity(k_max);
    let mut bps = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let m = mu.get(k);
        mus.push(m);
        bps.push(beta_prime(params, m)?);
    }
    Ok((mus, bps))
}
