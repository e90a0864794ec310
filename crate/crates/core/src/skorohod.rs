//! One-dimensional Skorohod map with reflecting barrier `alpha`.
//!
//! For a path `f` with `f(0) <= alpha`, the constrained path and the
//! pushing (local-time) part are
//!
//! ```text
//! constrained(t) = f(t) - sup_{s<=t} (f(s) - alpha)^+
//! pushing(t)     =        sup_{s<=t} (f(s) - alpha)^+
//! ```
//!
//! `alpha = +inf` is allowed and degenerates to `(f, 0)`.
//!
//! Paths are treated as piecewise constant between grid points, so the
//! running supremum is an exact running maximum over samples. At a step
//! where the running maximum increases, the constrained value is *assigned*
//! the barrier value, which makes the discrete complementarity sum
//! `sum_j (alpha - constrained_j) * (pushing_j - pushing_{j-1})` exactly
//! zero in floating point: every nonzero pushing increment pairs with a
//! constrained value bit-equal to `alpha`.

use crate::path::SampledPath;
use crate::{Error, Result};

/// Tolerance on the precondition `f(0) <= alpha`. Inside the map the
/// barrier comparison itself is exact.
pub const START_TOLERANCE: f64 = 1e-12;

/// Streaming state of the reflection map: the running maximum of
/// `(f - alpha)^+` seen so far. Single-owner; feed values in grid order.
#[derive(Debug, Clone)]
pub struct ReflectState {
    alpha: f64,
    pushing: f64,
    started: bool,
}

impl ReflectState {
    pub fn new(alpha: f64) -> Self {
        ReflectState {
            alpha,
            pushing: 0.0,
            started: false,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Current cumulative pushing.
    pub fn pushing(&self) -> f64 {
        self.pushing
    }

    /// Advances by one sample of the free path; returns
    /// `(constrained, pushing)` at this step.
    pub fn step(&mut self, f_next: f64) -> (f64, f64) {
        self.started = true;
        if self.alpha == f64::INFINITY {
            return (f_next, 0.0);
        }
        let excess = f_next - self.alpha;
        if excess > self.pushing {
            self.pushing = excess;
            // at the barrier: assign exactly, so complementarity is exact
            (self.alpha, self.pushing)
        } else {
            (f_next - self.pushing, self.pushing)
        }
    }
}

/// Constrained and pushing parts of a reflected path, on the input grid.
#[derive(Debug, Clone)]
pub struct ReflectionOutput {
    pub constrained: SampledPath,
    pub pushing: SampledPath,
}

/// Applies the reflection map to a single-coordinate sampled path.
pub fn reflect(f: &SampledPath, alpha: f64) -> Result<ReflectionOutput> {
    if f.n_coords() != 1 {
        return Err(Error::InvalidParams(format!(
            "reflect expects a single-coordinate path, got {} coordinates",
            f.n_coords()
        )));
    }
    let (c, p) = reflect_values(f.coord(0), alpha)?;
    Ok(ReflectionOutput {
        constrained: SampledPath::scalar(f.times.clone(), c)?,
        pushing: SampledPath::scalar(f.times.clone(), p)?,
    })
}

/// Same map on a bare slice of samples. The batch output is bit-identical
/// to feeding the samples through [`ReflectState`] one at a time.
pub fn reflect_values(f: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if f.is_empty() {
        return Err(Error::InvalidParams("reflect: empty path".into()));
    }
    if alpha.is_nan() {
        return Err(Error::InvalidParams("reflect: barrier is NaN".into()));
    }
    if !(f[0] <= alpha + START_TOLERANCE) {
        return Err(Error::Domain(format!(
            "reflect: f(0) = {} exceeds barrier {} beyond tolerance",
            f[0], alpha
        )));
    }
    let mut state = ReflectState::new(alpha);
    let mut constrained = Vec::with_capacity(f.len());
    let mut pushing = Vec::with_capacity(f.len());
    for &v in f {
        let (c, p) = state.step(v);
        constrained.push(c);
        pushing.push(p);
    }
    Ok((constrained, pushing))
}

/// Discrete complementarity sum `sum_j (alpha - constrained_j) * dpushing_j`.
/// Zero exactly for outputs of [`reflect`]; for `alpha = +inf` the pushing
/// part is identically zero and the sum is defined as zero.
pub fn complementarity_sum(constrained: &[f64], pushing: &[f64], alpha: f64) -> f64 {
    if alpha == f64::INFINITY {
        return 0.0;
    }
    let mut prev = 0.0;
    let mut total = 0.0;
    for (c, p) in constrained.iter().zip(pushing) {
        total += (alpha - c) * (p - prev);
        prev = *p;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(k: usize) -> Vec<f64> {
        (0..k).map(|j| j as f64).collect()
    }

    #[test]
    fn identity_drift_at_zero_barrier() {
        // f(t) = t, alpha = 0: constrained stays 0, pushing is t
        let times: Vec<f64> = (0..=10).map(|j| j as f64 / 10.0).collect();
        let f = SampledPath::scalar(times.clone(), times.clone()).unwrap();
        let out = reflect(&f, 0.0).unwrap();
        assert!(out.constrained.coord(0).iter().all(|&v| v == 0.0));
        assert_eq!(out.pushing.coord(0), &times[..]);
    }

    #[test]
    fn barrier_never_hit() {
        let f = SampledPath::scalar(grid(5), vec![0.3; 5]).unwrap();
        let out = reflect(&f, 1.0).unwrap();
        assert_eq!(out.constrained.coord(0), &[0.3; 5]);
        assert_eq!(out.pushing.coord(0), &[0.0; 5]);
    }

    #[test]
    fn worked_example() {
        let f = SampledPath::scalar(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.5]).unwrap();
        let out = reflect(&f, 1.0).unwrap();
        assert_eq!(out.pushing.coord(0), &[0.0, 1.0, 1.0]);
        assert_eq!(out.constrained.coord(0), &[0.0, 1.0, -0.5]);
    }

    #[test]
    fn infinite_barrier_is_identity() {
        let vals = vec![0.0, 5.0, -3.0, 100.0];
        let f = SampledPath::scalar(grid(4), vals.clone()).unwrap();
        let out = reflect(&f, f64::INFINITY).unwrap();
        assert_eq!(out.constrained.coord(0), &vals[..]);
        assert_eq!(out.pushing.coord(0), &[0.0; 4]);
    }

    #[test]
    fn rejects_start_above_barrier() {
        let f = SampledPath::scalar(grid(2), vec![1.1, 0.0]).unwrap();
        assert!(reflect(&f, 1.0).is_err());
        // within tolerance is accepted
        let f2 = SampledPath::scalar(grid(2), vec![1.0 + 5e-13, 0.0]).unwrap();
        assert!(reflect(&f2, 1.0).is_ok());
    }

    #[test]
    fn incremental_matches_batch() {
        let vals = vec![0.0, 2.0, 0.5, 3.0, 3.0, -1.0];
        let (c, p) = reflect_values(&vals, 1.0).unwrap();
        let mut st = ReflectState::new(1.0);
        for (j, &v) in vals.iter().enumerate() {
            let (cj, pj) = st.step(v);
            assert_eq!(cj.to_bits(), c[j].to_bits());
            assert_eq!(pj.to_bits(), p[j].to_bits());
        }
        // fresh state, first value below the barrier
        let mut st2 = ReflectState::new(1.0);
        assert_eq!(st2.step(0.25), (0.25, 0.0));
    }

    #[test]
    fn complementarity_exact() {
        let vals = vec![0.0, 2.0, 0.5, 3.0, 2.9, -1.0, 7.0];
        let (c, p) = reflect_values(&vals, 1.0).unwrap();
        assert_eq!(complementarity_sum(&c, &p, 1.0), 0.0);
    }

    proptest! {
        #[test]
        fn prop_reflection_invariants(
            vals in proptest::collection::vec(-10.0f64..10.0, 1..80),
            alpha in -2.0f64..2.0,
        ) {
            prop_assume!(vals[0] <= alpha);
            let (c, p) = reflect_values(&vals, alpha).unwrap();
            // constrained below the barrier, pushing nondecreasing from 0
            prop_assert!(c.iter().all(|&v| v <= alpha));
            prop_assert!(p[0] >= 0.0);
            prop_assert!(p.windows(2).all(|w| w[1] >= w[0]));
            // additive identity up to roundoff of the barrier assignment
            for j in 0..vals.len() {
                prop_assert!((c[j] + p[j] - vals[j]).abs() <= 1e-12);
            }
            prop_assert_eq!(complementarity_sum(&c, &p, alpha), 0.0);
        }

        #[test]
        fn prop_lipschitz(
            pair in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60),
            alpha in 0.0f64..2.0,
        ) {
            let f1: Vec<f64> = pair.iter().map(|x| x.0.min(alpha)).collect();
            let mut f2: Vec<f64> = pair.iter().map(|x| x.1).collect();
            f2[0] = f2[0].min(alpha);
            let (c1, p1) = reflect_values(&f1, alpha).unwrap();
            let (c2, p2) = reflect_values(&f2, alpha).unwrap();
            let sup_f: f64 = f1.iter().zip(&f2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let sup_c: f64 = c1.iter().zip(&c2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let sup_p: f64 = p1.iter().zip(&p2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(sup_c <= 2.0 * sup_f + 1e-12);
            prop_assert!(sup_p <= sup_f + 1e-12);
        }
    }
}
