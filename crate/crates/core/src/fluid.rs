//! The constrained fluid limit, integrated in two mathematically
//! equivalent forms.
//!
//! Reflected form: per coordinate, the free path
//! `r_i - int (g_i - g_{i+1}) ds + v_{i-1}(t)` is pushed below 1 by the
//! Skorohod map, and the pushing process becomes `v_i`; `v_0(t) = lambda t`.
//! Within each Euler step the sweep runs `i = 1..I`, so the fresh `v_{i-1}`
//! feeds coordinate `i` in the same step.
//!
//! Explicit form: `g_i' = -(g_i - g_{i+1}) + p_{i-1}(g)` where the inflow
//! `p_j` is a case split keyed on `m(g)`, the number of leading coordinates
//! at 1. Uniqueness of the solution makes the two forms a redundancy pair:
//! their discrete trajectories must agree up to O(dt).
//!
//! Both use plain forward Euler: the constrained dynamics are nonsmooth at
//! the barrier and first order is the honest rate.

use crate::path::SampledPath;
use crate::skorohod::ReflectState;
use crate::{Error, Result};
use serde::Serialize;

/// Truncation default: two coordinates of headroom past the support of the
/// initial condition. The tail feeds back only through `g_{I+1} = 0`.
pub fn default_truncation(init: &[f64]) -> usize {
    let support = init.iter().rposition(|&v| v > 0.0).map_or(0, |p| p + 1);
    support + 2
}

/// In the explicit form, a coordinate within `10 dt` of 1 counts as "at 1"
/// when computing `m(g)` (Euler overshoot makes exact equality unreliable).
pub fn barrier_tolerance(dt: f64) -> f64 {
    10.0 * dt
}

/// `m(g) = inf { i : g_{i+1} < 1 }`, with the given at-1 tolerance.
pub fn m_index(g: &[f64], at_one_tol: f64) -> usize {
    g.iter().take_while(|&&v| v >= 1.0 - at_one_tol).count()
}

/// Right-hand side of the explicit form at state `g` (tail closed by 0).
pub fn explicit_drift(lambda: f64, g: &[f64], at_one_tol: f64) -> Vec<f64> {
    let m = m_index(g, at_one_tol);
    let coords = g.len();
    let at = |idx: usize| if idx < coords { g[idx] } else { 0.0 };
    let mut out = Vec::with_capacity(coords);
    for i in 1..=coords {
        let j = i - 1;
        // the four inflow cases, first match wins
        let p = if m >= 1 && j == m - 1 {
            lambda - (lambda - 1.0 + at(j + 1)).max(0.0)
        } else if j == m && m > 0 {
            (lambda - 1.0 + at(j)).max(0.0)
        } else if j == m {
            lambda
        } else {
            0.0
        };
        out.push(-(at(i - 1) - at(i)) + p);
    }
    out
}

#[derive(Debug, Clone)]
pub struct FluidPath {
    /// `g` on the step grid, one row per coordinate.
    pub g: SampledPath,
    /// Cumulative reflection terms `v_0, v_1, ..., v_I` (row 0 is
    /// `lambda * t`).
    pub v: SampledPath,
}

fn check_fluid_inputs(lambda: f64, init: &[f64], t_end: f64, dt: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParams(format!("bad lambda {lambda}")));
    }
    if !(t_end > 0.0) || !(dt > 0.0) || dt > t_end {
        return Err(Error::InvalidParams(format!(
            "need 0 < dt <= t_end, got dt={dt}, t_end={t_end}"
        )));
    }
    if init.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidParams(
            "fluid init values must lie in [0,1]".into(),
        ));
    }
    if init.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidParams(
            "fluid init must be nonincreasing".into(),
        ));
    }
    Ok(())
}

fn padded(init: &[f64], coords: usize) -> Vec<f64> {
    let mut g = init.to_vec();
    g.resize(coords.max(init.len()), 0.0);
    g
}

/// Skorohod-reflected forward-Euler integrator.
pub fn integrate_reflected(
    lambda: f64,
    init: &[f64],
    t_end: f64,
    dt: f64,
    coords: usize,
) -> Result<FluidPath> {
    check_fluid_inputs(lambda, init, t_end, dt)?;
    let coords = if coords == 0 {
        default_truncation(init)
    } else {
        coords
    };
    let mut g = padded(init, coords);
    let coords = g.len();
    let steps = (t_end / dt + 1e-9).floor() as usize;

    // free-path accumulators and per-coordinate reflection states
    let mut free: Vec<f64> = g.clone();
    let mut refl: Vec<ReflectState> = (0..coords).map(|_| ReflectState::new(1.0)).collect();
    let mut v = vec![0.0; coords + 1];
    for (i, st) in refl.iter_mut().enumerate() {
        let (gc, vc) = st.step(free[i]);
        g[i] = gc;
        v[i + 1] = vc;
    }

    let mut g_rows: Vec<Vec<f64>> = (0..coords).map(|i| vec![g[i]]).collect();
    let mut v_rows: Vec<Vec<f64>> = (0..=coords).map(|i| vec![v[i]]).collect();
    let mut times = vec![0.0];

    for k in 1..=steps {
        let t = k as f64 * dt;
        let mut dv_prev = lambda * t - v[0];
        v[0] = lambda * t;
        for i in 0..coords {
            let g_next = if i + 1 < coords { g[i + 1] } else { 0.0 };
            free[i] += -(g[i] - g_next) * dt + dv_prev;
            let v_old = v[i + 1];
            let (gc, vc) = refl[i].step(free[i]);
            g[i] = gc;
            v[i + 1] = vc;
            dv_prev = vc - v_old;
        }
        times.push(t);
        for i in 0..coords {
            g_rows[i].push(g[i]);
        }
        for i in 0..=coords {
            v_rows[i].push(v[i]);
        }
    }

    Ok(FluidPath {
        g: SampledPath::new(times.clone(), g_rows)?,
        v: SampledPath::new(times, v_rows)?,
    })
}

/// Forward Euler on the explicit `p_j` form.
pub fn integrate_explicit(
    lambda: f64,
    init: &[f64],
    t_end: f64,
    dt: f64,
    coords: usize,
) -> Result<SampledPath> {
    check_fluid_inputs(lambda, init, t_end, dt)?;
    let coords = if coords == 0 {
        default_truncation(init)
    } else {
        coords
    };
    let mut g = padded(init, coords);
    let coords = g.len();
    let steps = (t_end / dt + 1e-9).floor() as usize;
    let tol = barrier_tolerance(dt);

    let mut rows: Vec<Vec<f64>> = (0..coords).map(|i| vec![g[i]]).collect();
    let mut times = vec![0.0];
    for k in 1..=steps {
        let drift = explicit_drift(lambda, &g, tol);
        for i in 0..coords {
            g[i] += dt * drift[i];
        }
        times.push(k as f64 * dt);
        for i in 0..coords {
            rows[i].push(g[i]);
        }
    }
    SampledPath::new(times, rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheckReport {
    pub sup_l1_diff: f64,
    pub dt: f64,
    pub coords: usize,
}

/// Runs both integrators and reports `sup_t ||g_refl - g_expl||_1`.
pub fn cross_check(
    lambda: f64,
    init: &[f64],
    t_end: f64,
    dt: f64,
    coords: usize,
) -> Result<CrossCheckReport> {
    let refl = integrate_reflected(lambda, init, t_end, dt, coords)?;
    let expl = integrate_explicit(lambda, init, t_end, dt, coords)?;
    let coords = refl.g.n_coords();
    let mut sup = 0.0f64;
    for j in 0..refl.g.len() {
        let mut l1 = 0.0;
        for c in 0..coords {
            l1 += (refl.g.values[c][j] - expl.values[c][j]).abs();
        }
        sup = sup.max(l1);
    }
    Ok(CrossCheckReport {
        sup_l1_diff: sup,
        dt,
        coords,
    })
}
