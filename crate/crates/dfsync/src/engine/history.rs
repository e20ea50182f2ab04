//! Piecewise-closed-form activator history.
//!
//! Between two consecutive firings the population mean is affine with slope
//! -1, so the activator obeys `A' = m - beta A` with `m(s) = m0 - s` and has
//! an exact solution on each segment. Storing one segment per inter-firing
//! interval makes every delayed lookup `A(t - tau)` exact rather than
//! interpolated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One inter-firing span of activator evolution.
///
/// On `[t_start, t_end]` the mean is `m(s) = m0 - s` with `s = t - t_start`,
/// and the activator follows the closed form produced by [`Self::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivatorSegment {
    pub t_start: f64,
    pub t_end: f64,
    /// Activator value at `t_start`.
    pub a_start: f64,
    /// Mean repressor concentration immediately after `t_start`.
    pub m0: f64,
}

impl ActivatorSegment {
    /// Exact activator value at local offset `s = t - t_start`.
    ///
    /// The variation-of-constants integral
    /// `(A0 + int_0^s e^{beta u} (m0 - u) du) e^{-beta s}`
    /// rearranges to `A_p(s) + (A0 - A_p(0)) e^{-beta s}` with the
    /// particular solution `A_p(s) = (m0 - s)/beta + 1/beta^2`; the two
    /// forms are algebraically identical and the latter avoids evaluating
    /// the integral.
    pub fn eval_at_offset(&self, s: f64, beta: f64) -> f64 {
        let inv_b = 1.0 / beta;
        let a_p = |s: f64| (self.m0 - s) * inv_b + inv_b * inv_b;
        a_p(s) + (self.a_start - a_p(0.0)) * (-beta * s).exp()
    }

    /// Exact activator value at absolute time `t` in `[t_start, t_end]`.
    pub fn eval(&self, t: f64, beta: f64) -> f64 {
        self.eval_at_offset(t - self.t_start, beta)
    }

    /// Mean repressor concentration at absolute time `t` inside the span.
    pub fn mean_at(&self, t: f64) -> f64 {
        self.m0 - (t - self.t_start)
    }

    /// Time derivative of the activator at `t` (from `A' = m - beta A`).
    pub fn derivative_at(&self, t: f64, beta: f64) -> f64 {
        self.mean_at(t) - beta * self.eval(t, beta)
    }

    /// Maximum of the activator over the segment span, located in closed
    /// form: the derivative of `A(s) - A_p(s)` has a single sign change, so
    /// the maximum is at an endpoint or the unique interior critical point.
    pub fn max_value(&self, beta: f64) -> f64 {
        let inv_b = 1.0 / beta;
        let c = self.a_start - (self.m0 * inv_b + inv_b * inv_b);
        let len = self.t_end - self.t_start;
        let end_val = self.eval_at_offset(len, beta);
        let mut best = self.a_start.max(end_val);
        if c < 0.0 {
            // A'(s) = -1/beta - c beta e^{-beta s} = 0 at s* below.
            let arg = -1.0 / (c * beta * beta);
            if arg > 0.0 && arg < 1.0 {
                let s_star = -arg.ln() / beta;
                if s_star > 0.0 && s_star < len {
                    best = best.max(self.eval_at_offset(s_star, beta));
                }
            }
        }
        best
    }
}

/// Backward flow of the activator over a firing-free interval.
///
/// Returns `phi^{-delta}(a) = (a - int_0^delta e^{-beta s} (m_now + s) ds) e^{beta delta}`,
/// valid when no firing occurred in `[t - delta, t]` so that the mean grows
/// affinely (slope +1) going backwards from its current value `m_now`.
pub fn backward_flow(a: f64, m_now: f64, delta: f64, beta: f64) -> Result<f64> {
    debug_assert!(delta >= 0.0);
    let value = (a - backward_integral(m_now, delta, beta)) * (beta * delta).exp();
    if value < 0.0 {
        return Err(Error::NegativeActivator { value, delta });
    }
    Ok(value)
}

/// `int_0^delta e^{-beta s} (m_now + s) ds`, the admissibility threshold:
/// the backward flow stays non-negative over `[0, delta]` iff `A >= this`.
pub fn backward_integral(m_now: f64, delta: f64, beta: f64) -> f64 {
    let bd = beta * delta;
    // int e^{-beta s} ds = (1 - e^{-bd})/beta; int s e^{-beta s} ds = (1 - (1+bd) e^{-bd})/beta^2
    let em = (-bd).exp_m1(); // e^{-bd} - 1
    let i0 = -em / beta;
    let i1 = (-em - bd * (em + 1.0)) / (beta * beta);
    m_now * i0 + i1
}

/// Lipschitz constant (in the lookback variable) of the backward flow on
/// `[0, tau]`: from `d/dt phi^{-t}(A) = beta phi^{-t}(A) - m(-t)` one gets
/// the bound `beta A e^{beta tau} + m_now + tau`.
pub fn backward_lipschitz(a: f64, m_now: f64, tau: f64, beta: f64) -> f64 {
    beta * a * (beta * tau).exp() + m_now + tau
}

/// Ordered, contiguous list of activator segments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    segments: Vec<ActivatorSegment>,
}

impl History {
    pub fn new() -> Self {
        History { segments: Vec::new() }
    }

    /// Validate contiguity and continuity, then build a history.
    pub fn from_segments(segments: Vec<ActivatorSegment>, beta: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("history must contain at least one segment".into()));
        }
        for w in segments.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.t_start != a.t_end {
                return Err(Error::Config(format!(
                    "history segments are not contiguous: {} followed by {}",
                    a.t_end, b.t_start
                )));
            }
            let left = a.eval(a.t_end, beta);
            if (left - b.a_start).abs() > 1e-9 * (1.0 + left.abs()) {
                return Err(Error::Config(format!(
                    "activator discontinuity at t = {}: {} vs {}",
                    b.t_start, left, b.a_start
                )));
            }
        }
        for seg in &segments {
            if !(seg.t_end >= seg.t_start) {
                return Err(Error::Config(format!(
                    "segment with negative span: [{}, {}]",
                    seg.t_start, seg.t_end
                )));
            }
        }
        Ok(History { segments })
    }

    pub fn segments(&self) -> &[ActivatorSegment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(f64::NAN, |s| s.t_start)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(f64::NAN, |s| s.t_end)
    }

    pub fn push(&mut self, seg: ActivatorSegment) {
        debug_assert!(
            self.segments.is_empty() || (seg.t_start - self.end()).abs() == 0.0,
            "segments must be contiguous"
        );
        self.segments.push(seg);
    }

    /// Extend the span of the final segment (no firing happened meanwhile).
    pub fn extend_last_to(&mut self, t: f64) {
        if let Some(last) = self.segments.last_mut() {
            debug_assert!(t >= last.t_end);
            last.t_end = t;
        }
    }

    /// Exact activator value at `t`; errors outside the covered span.
    pub fn evaluate(&self, t: f64, beta: f64) -> Result<f64> {
        let seg = self.segment_at(t)?;
        Ok(seg.eval(t, beta))
    }

    /// The segment containing `t` (the earlier one at shared endpoints).
    pub fn segment_at(&self, t: f64) -> Result<&ActivatorSegment> {
        if self.segments.is_empty() || t < self.start() || t > self.end() {
            return Err(Error::HistoryUnderflow {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        // First segment whose end reaches t.
        let idx = self.segments.partition_point(|s| s.t_end < t);
        Ok(&self.segments[idx])
    }

    /// Drop segments that end before `t_keep` (the delayed lookback plus a
    /// safety margin); the remaining front segment is not truncated.
    pub fn prune_before(&mut self, t_keep: f64) {
        let cut = self.segments.partition_point(|s| s.t_end < t_keep);
        if cut > 0 {
            self.segments.drain(..cut);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_at_start_is_exact() {
        let seg = ActivatorSegment { t_start: 1.0, t_end: 3.0, a_start: 0.7, m0: 2.2 };
        assert_eq!(seg.eval(1.0, 1.0), 0.7);
    }

    #[test]
    fn approaches_particular_solution() {
        // m0 = 0, beta = 1, A_start = 1: |A(s) - A_p(s)| = |1 - A_p(0)| e^{-s}.
        let seg = ActivatorSegment { t_start: 0.0, t_end: 60.0, a_start: 1.0, m0: 0.0 };
        let a_p = |s: f64| -s + 1.0; // (m0 - s)/beta + 1/beta^2
        for s in [0.5, 5.0, 30.0, 60.0] {
            let diff = (seg.eval_at_offset(s, 1.0) - a_p(s)).abs();
            let expected = (1.0f64 - 1.0).abs() * (-s).exp(); // A_start - A_p(0) = 0 here
            assert!((diff - expected).abs() < 1e-12);
        }
        // Non-trivial transient: A_start = 3 has A_start - A_p(0) = 2.
        let seg = ActivatorSegment { t_start: 0.0, t_end: 60.0, a_start: 3.0, m0: 0.0 };
        for s in [0.1, 1.0, 4.0] {
            let diff = (seg.eval_at_offset(s, 1.0) - a_p(s)).abs();
            assert!((diff - 2.0 * (-s).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        // Adaptive Simpson on the variation-of-constants integral.
        let beta = 1.0;
        let seg = ActivatorSegment { t_start: 0.0, t_end: 2.4, a_start: 0.65, m0: 2.14 };
        let m = |u: f64| seg.m0 - u;
        let integrand = |u: f64| (beta * u).exp() * m(u);
        for s in [0.3, 1.1, 2.4] {
            let integral = simpson_adaptive(&integrand, 0.0, s, 1e-13);
            let reference = (seg.a_start + integral) * (-beta * s).exp();
            assert!((seg.eval_at_offset(s, beta) - reference).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_inverts_forward() {
        let beta = 1.3;
        let seg = ActivatorSegment { t_start: 0.0, t_end: 1.5, a_start: 0.9, m0: 1.7 };
        let s = 1.2;
        let a_fwd = seg.eval_at_offset(s, beta);
        let m_now = seg.m0 - s;
        let back = backward_flow(a_fwd, m_now, s, beta).unwrap();
        assert!((back - seg.a_start).abs() < 1e-12);
    }

    #[test]
    fn backward_delta_zero_is_identity() {
        assert_eq!(backward_flow(0.42, 1.0, 0.0, 2.0).unwrap(), 0.42);
    }

    #[test]
    fn negative_backward_value_is_error() {
        // Tiny A with a large mean forces the backward value below zero.
        let err = backward_flow(1e-6, 5.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::NegativeActivator { .. }));
    }

    #[test]
    fn segment_lookup_and_pruning() {
        let beta = 1.0;
        let s0 = ActivatorSegment { t_start: 0.0, t_end: 1.0, a_start: 0.5, m0: 2.0 };
        let a1 = s0.eval(1.0, beta);
        let s1 = ActivatorSegment { t_start: 1.0, t_end: 2.0, a_start: a1, m0: 2.5 };
        let mut h = History::from_segments(vec![s0, s1], beta).unwrap();
        assert_eq!(h.segment_at(0.5).unwrap().t_start, 0.0);
        assert_eq!(h.segment_at(1.0).unwrap().t_start, 0.0); // earlier segment at the joint
        assert_eq!(h.segment_at(1.5).unwrap().t_start, 1.0);
        assert!(h.evaluate(2.5, beta).is_err());
        h.prune_before(1.2);
        assert_eq!(h.segments().len(), 1);
    }

    #[test]
    fn segment_max_is_attained() {
        let beta = 1.0;
        // Rising-then-falling activator: large m0 relative to a_start.
        let seg = ActivatorSegment { t_start: 0.0, t_end: 3.0, a_start: 0.1, m0: 2.5 };
        let analytic = seg.max_value(beta);
        let grid_max = (0..=30_000)
            .map(|i| seg.eval_at_offset(3.0 * i as f64 / 30_000.0, beta))
            .fold(f64::MIN, f64::max);
        assert!(analytic >= grid_max - 1e-12);
        assert!(analytic <= grid_max + 1e-6);
    }

    fn simpson_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn recurse(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                recurse(f, a, m, left, tol / 2.0, depth - 1)
                    + recurse(f, m, b, right, tol / 2.0, depth - 1)
            }
        }
        recurse(f, a, b, simpson(f, a, b), tol, 40)
    }
}
