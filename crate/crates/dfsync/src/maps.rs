//! Return maps on the firing section.
//!
//! The one-dimensional synchronized map `F_1` has an explicit closed form in
//! the effective reset coefficients `(R_tau, nu_tau)`. The N-dimensional
//! section map delegates to the event engine (the single source of truth);
//! a formula-based evaluation for `tau = 0` is kept alongside as a
//! cross-check oracle.

use crate::cluster::ClusterState;
use crate::engine::{backward_flow, ActivatorSegment, PopulationState};
use crate::error::{Error, Result};
use crate::params::ParameterSet;

/// Effective reset coefficients: the reset concentration at any firing is
/// `R_tau + nu_tau * A` with `A` the activator value at the firing instant.
///
/// Errors when `R_tau <= 0` or `nu_tau >= beta` (outside the regime where
/// the synchronized analysis applies).
pub fn reset_coefficients(params: &ParameterSet) -> Result<(f64, f64)> {
    let (r_tau, nu_tau) = params.reset_coefficients_unchecked();
    if !(r_tau > 0.0) {
        return Err(Error::ParameterCondition(format!("R_tau = {r_tau} must be > 0")));
    }
    if !(nu_tau < params.beta) {
        return Err(Error::ParameterCondition(format!(
            "nu_tau = {nu_tau} must be < beta = {}",
            params.beta
        )));
    }
    Ok((r_tau, nu_tau))
}

/// Least admissible activator value on the synchronized section,
/// `A_0(tau) = (1 - (1 + beta tau) e^{-beta tau}) / beta^2`.
pub fn a_lower(params: &ParameterSet) -> f64 {
    crate::engine::backward_integral(0.0, params.tau, params.beta)
}

/// Upper end of the synchronized trapping interval, `A_tau = R_tau / (beta - nu_tau)`.
pub fn a_upper(params: &ParameterSet) -> Result<f64> {
    let (r_tau, nu_tau) = reset_coefficients(params)?;
    Ok(r_tau / (params.beta - nu_tau))
}

/// The explicit synchronized return map
/// `F_1(A) = 1/beta^2 + (A (1 - nu_tau/beta) - R_tau/beta - 1/beta^2) e^{-beta (R_tau + nu_tau A)}`.
pub fn f1(a: f64, params: &ParameterSet) -> Result<f64> {
    let (r_tau, nu_tau) = reset_coefficients(params)?;
    let beta = params.beta;
    let inv_b2 = 1.0 / (beta * beta);
    let t = r_tau + nu_tau * a;
    Ok(inv_b2 + (a * (1.0 - nu_tau / beta) - r_tau / beta - inv_b2) * (-beta * t).exp())
}

/// Derivative of [`f1`] in `A`.
pub fn df1(a: f64, params: &ParameterSet) -> Result<f64> {
    let (r_tau, nu_tau) = reset_coefficients(params)?;
    let beta = params.beta;
    let inv_b2 = 1.0 / (beta * beta);
    let t = r_tau + nu_tau * a;
    let c = a * (1.0 - nu_tau / beta) - r_tau / beta - inv_b2;
    Ok(((1.0 - nu_tau / beta) - beta * nu_tau * c) * (-beta * t).exp())
}

/// Trapping interval, fixed point, and the coefficients behind them.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyncAnalysis {
    pub r_tau: f64,
    pub nu_tau: f64,
    /// Lower admissibility bound `A_0(tau)`.
    pub a0_tau: f64,
    /// Upper end of the trapping interval, `A_tau`.
    pub a_tau_max: f64,
    /// Fixed point of `F_1`.
    pub a_fp: f64,
    /// Synchronized period `R_tau + nu_tau * A_fp`.
    pub period: f64,
}

/// A point on the Poincare section `x_N = 0`, the data acted on by the
/// return map immediately before the firing of oscillator N.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionPoint {
    /// Repressor vector with `x[N-1] == 0`.
    pub x: Vec<f64>,
    /// Activator value at the section instant.
    pub a: f64,
    /// Explicit activator history over the lookback window, with the
    /// section instant at time zero; `None` requests backward
    /// reconstruction (admissibility is then required).
    pub history: Option<Vec<ActivatorSegment>>,
}

impl SectionPoint {
    pub fn new(x: Vec<f64>, a: f64) -> Result<Self> {
        if x.last() != Some(&0.0) {
            return Err(Error::WellPosedness("section requires x_N = 0".into()));
        }
        if x.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::WellPosedness("section coordinates must be >= 0".into()));
        }
        Ok(SectionPoint { x, a, history: None })
    }
}

/// Full return map on the section `x_N = 0`: simulate until the second
/// firing of oscillator N and capture the state immediately before it.
///
/// The output carries the exact activator history over the final lookback
/// window (shifted so the new section instant is time zero), so iterated
/// returns stay exact even when the delay exceeds inter-firing gaps.
pub fn return_map(point: &SectionPoint, params: &ParameterSet) -> Result<SectionPoint> {
    let n = params.n;
    if point.x.len() != n {
        return Err(Error::WellPosedness(format!(
            "section point has {} coordinates, parameters declare N = {n}",
            point.x.len()
        )));
    }
    let mut state = match &point.history {
        None => PopulationState::new(params, point.x.clone(), point.a)?,
        Some(segs) => {
            let history = crate::engine::History::from_segments(segs.clone(), params.beta)?;
            PopulationState::with_history(params, point.x.clone(), history)?
        }
    };
    let section = n - 1;
    let mut fired = 0usize;
    for _ in 0..(4 * n + 16) {
        let ev = state.advance_to_next_firing(params)?;
        if ev.oscillators.contains(&section) {
            fired += 1;
            if fired == 2 {
                let mut x = state.x.clone();
                for &i in &ev.oscillators {
                    x[i] = 0.0;
                }
                let t_r = ev.t;
                // Shift the trailing pre-reset history so the new section
                // sits at time zero; the post-reset live segment is dropped.
                let history: Vec<ActivatorSegment> = state
                    .history()
                    .segments()
                    .iter()
                    .filter(|s| s.t_end >= t_r - params.tau && s.t_start < t_r)
                    .map(|s| ActivatorSegment {
                        t_start: s.t_start - t_r,
                        t_end: s.t_end - t_r,
                        a_start: s.a_start,
                        m0: s.m0,
                    })
                    .collect();
                return Ok(SectionPoint { x, a: state.a, history: Some(history) });
            }
        }
    }
    Err(Error::Numerical(
        "section oscillator did not return within the event budget (order violation?)".into(),
    ))
}

/// Formula-based evaluation of the return map for `tau = 0`:
/// `x'_i = x_i + nu (A(x_i) - A(0))` and `A' = A(t_R)` with
/// `t_R = R + nu A(0)`, composing the closed-form activator flow across the
/// intermediate first firings. Valid under `max_i x_i < t_R`.
pub fn return_map_closed_form_tau0(point: &SectionPoint, params: &ParameterSet) -> Result<SectionPoint> {
    if params.tau != 0.0 {
        return Err(Error::ParameterCondition(
            "closed-form return map evaluation requires tau = 0".into(),
        ));
    }
    let n = params.n;
    let nf = n as f64;
    let x = &point.x;
    let a0 = point.a;
    let t_r = params.r + params.nu * a0;
    let max_x = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max_x < t_r) {
        return Err(Error::WellPosedness(format!(
            "closed form requires max_x = {max_x} < t_R = {t_r}"
        )));
    }

    // Distinct firing times in (0, t_R): the first firing of oscillator i
    // occurs at t = x_i; oscillators at 0 fire with the section at t = 0.
    let mut times: Vec<f64> = x.clone();
    times.sort_by(|p, q| p.partial_cmp(q).unwrap());
    times.dedup();

    // Piece together activator segments across those firings.
    let mut segments: Vec<ActivatorSegment> = Vec::new();
    let mut t_prev = 0.0;
    let mut a_prev = a0;
    let mut mean = {
        // Mean immediately after t = 0: everyone at zero resets to R + nu A(0).
        let fired = x.iter().filter(|&&v| v == 0.0).count() as f64;
        let sum: f64 = x.iter().sum();
        (sum + fired * (params.r + params.nu * a0)) / nf
    };
    let mut push_until = |t_next: f64, segments: &mut Vec<ActivatorSegment>, a_prev: &mut f64, t_prev: &mut f64, mean: &mut f64| {
        let seg = ActivatorSegment { t_start: *t_prev, t_end: t_next, a_start: *a_prev, m0: *mean };
        let a_next = seg.eval(t_next, params.beta);
        segments.push(seg);
        *a_prev = a_next;
        *mean -= t_next - *t_prev;
        *t_prev = t_next;
        a_next
    };
    for &tf in times.iter().filter(|&&tf| tf > 0.0) {
        let a_at = push_until(tf, &mut segments, &mut a_prev, &mut t_prev, &mut mean);
        let firing = x.iter().filter(|&&v| v == tf).count() as f64;
        mean += firing * (params.r + params.nu * a_at) / nf;
    }
    let a_out = push_until(t_r, &mut segments, &mut a_prev, &mut t_prev, &mut mean);

    let eval = |t: f64| -> f64 {
        if t == 0.0 {
            return a0;
        }
        let idx = segments.partition_point(|s| s.t_end < t);
        segments[idx].eval(t, params.beta)
    };
    let x_out: Vec<f64> = x
        .iter()
        .map(|&xi| xi + params.nu * (eval(xi) - a0))
        .collect();
    Ok(SectionPoint { x: x_out, a: a_out, history: None })
}

/// One closed-form firing step on cluster coordinates: the section cluster
/// fires, time advances to the instant immediately before the next
/// cluster's firing, and labels rotate so the new section cluster is last.
///
/// The backward lookback uses the affine mean continuation, so the input
/// must satisfy the finite-data admissibility conditions; ties produced by
/// the step merge clusters (reported through the returned flag).
pub fn firing_map(cs: &ClusterState, params: &ParameterSet) -> Result<(ClusterState, bool)> {
    cs.validate()?;
    let k = cs.k();
    let nf = cs.population() as f64;
    let reset = cs.reset_value(params)?;
    if k == 1 {
        // Single cluster: the step is one full synchronized period.
        let seg = ActivatorSegment { t_start: 0.0, t_end: reset, a_start: cs.a, m0: reset };
        let a_next = seg.eval(reset, params.beta);
        let mut out = ClusterState { n: cs.n.clone(), y: vec![0.0], a: a_next, period: Some(reset) };
        out.validate()?;
        return Ok((out, false));
    }
    let y_next = cs.y[k - 2];
    if !(reset - y_next > 0.0) {
        return Err(Error::WellPosedness(format!(
            "firing map requires the reset value {reset} to exceed the next gap {y_next}"
        )));
    }
    // Mean immediately after the section firing, with the firing cluster's
    // multiplicity weighting its reset contribution.
    let n_fire = cs.n[k - 1] as f64;
    let mean_post = (cs
        .n
        .iter()
        .zip(&cs.y)
        .map(|(&nk, &yk)| nk as f64 * yk)
        .sum::<f64>()
        + n_fire * reset)
        / nf;
    let seg = ActivatorSegment { t_start: 0.0, t_end: y_next, a_start: cs.a, m0: mean_post };
    let a_out = seg.eval(y_next, params.beta);

    let mut n = Vec::with_capacity(k);
    let mut y = Vec::with_capacity(k);
    n.push(cs.n[k - 1]);
    y.push(reset - y_next);
    for i in 0..k - 1 {
        n.push(cs.n[i]);
        y.push(cs.y[i] - y_next);
    }
    let out = ClusterState { n, y, a: a_out, period: None };
    let (out, merged_flag) = out.merged();
    out.validate()?;
    Ok((out, merged_flag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster;

    fn fig1(tau: f64, n: usize) -> ParameterSet {
        ParameterSet::new(2.0, 1.0, 0.2, tau, n).unwrap()
    }

    #[test]
    fn reset_coefficients_collapse_at_tau_zero() {
        let p = fig1(0.0, 1);
        let (r_tau, nu_tau) = reset_coefficients(&p).unwrap();
        assert_eq!(r_tau, p.r);
        assert_eq!(nu_tau, p.nu);
    }

    #[test]
    fn reset_coefficients_reference_value() {
        let p = fig1(0.2, 1);
        let (r_tau, nu_tau) = reset_coefficients(&p).unwrap();
        let expected_r = 2.0 + 0.2 * (1.2 - (0.2f64).exp());
        let expected_nu = 0.2 * (0.2f64).exp();
        assert!((r_tau - expected_r).abs() < 1e-14);
        assert!((nu_tau - expected_nu).abs() < 1e-14);
    }

    #[test]
    fn reset_coefficients_small_beta_series() {
        // R_tau -> R - nu tau^2 / 2 as beta -> 0 (at fixed tau).
        let r = 2.0;
        let nu = 5e-5;
        let tau = 0.2;
        let p = ParameterSet::new(r, 1e-4, nu, tau, 1).unwrap();
        let (r_tau, _) = reset_coefficients(&p).unwrap();
        let series = r - nu * tau * tau / 2.0;
        assert!((r_tau - series).abs() < 1e-6, "{r_tau} vs {series}");
    }

    #[test]
    fn reset_coefficients_reject_violations() {
        // Bypass the constructor to exercise the condition check.
        let bad = ParameterSet { r: 2.0, beta: 50.0, nu: 0.2, tau: 0.3, n: 1 };
        assert!(reset_coefficients(&bad).is_err());
    }

    #[test]
    fn f1_reference_value_at_zero() {
        let p = fig1(0.0, 1);
        let expected = 1.0 - 3.0 * (-2.0f64).exp();
        assert!((f1(0.0, &p).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn f1_maps_trapping_interval_into_itself() {
        for tau in [0.0, 0.05, 0.1, 0.2] {
            let p = fig1(tau, 1);
            let a0 = a_lower(&p);
            let a1 = a_upper(&p).unwrap();
            assert!(a0 < a1);
            assert!(f1(a0, &p).unwrap() > a0, "tau = {tau}");
            assert!(f1(a1, &p).unwrap() < a1, "tau = {tau}");
        }
    }

    #[test]
    fn df1_matches_finite_differences() {
        let p = fig1(0.2, 1);
        for a in [0.1, 0.5, 0.9] {
            let h = 1e-6;
            let fd = (f1(a + h, &p).unwrap() - f1(a - h, &p).unwrap()) / (2.0 * h);
            assert!((df1(a, &p).unwrap() - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn backward_reset_matches_effective_coefficients() {
        // phi^{-tau} from a synchronized section state reproduces
        // reset = R_tau + nu_tau A.
        let p = fig1(0.2, 1);
        let (r_tau, nu_tau) = reset_coefficients(&p).unwrap();
        for a in [0.2, 0.7, 1.3] {
            let back = backward_flow(a, 0.0, p.tau, p.beta).unwrap();
            let reset = p.r + p.nu * back;
            assert!((reset - (r_tau + nu_tau * a)).abs() < 1e-10);
        }
    }

    #[test]
    fn synchronized_point_is_invariant() {
        let p = fig1(0.2, 5);
        let a = 0.8;
        let point = SectionPoint::new(vec![0.0; 5], a).unwrap();
        let out = return_map(&point, &p).unwrap();
        for &xi in &out.x {
            assert_eq!(xi, 0.0);
        }
        let f1a = f1(a, &p).unwrap();
        assert!((out.a - f1a).abs() < 1e-10, "{} vs {f1a}", out.a);
    }

    #[test]
    fn permutation_equivariance_is_exact() {
        let p = fig1(0.2, 4);
        let x = vec![1.3, 0.4, 0.9, 0.0];
        let a = 0.7;
        let out = return_map(&SectionPoint::new(x.clone(), a).unwrap(), &p).unwrap();
        let perm = vec![0.4, 0.9, 1.3, 0.0]; // permute the first three
        let out_p = return_map(&SectionPoint::new(perm, a).unwrap(), &p).unwrap();
        assert_eq!(out.x[0].to_bits(), out_p.x[2].to_bits());
        assert_eq!(out.x[1].to_bits(), out_p.x[0].to_bits());
        assert_eq!(out.x[2].to_bits(), out_p.x[1].to_bits());
        assert_eq!(out.a.to_bits(), out_p.a.to_bits());
    }

    #[test]
    fn closed_form_matches_engine_at_tau_zero() {
        let p = fig1(0.0, 4);
        let point = SectionPoint::new(vec![1.1, 0.8, 0.3, 0.0], 0.65).unwrap();
        let engine = return_map(&point, &p).unwrap();
        let formula = return_map_closed_form_tau0(&point, &p).unwrap();
        for (e, f) in engine.x.iter().zip(&formula.x) {
            assert!((e - f).abs() < 1e-12, "{e} vs {f}");
        }
        assert!((engine.a - formula.a).abs() < 1e-12);
    }

    #[test]
    fn firing_map_composition_equals_return_map() {
        let p = fig1(0.2, 3);
        // Gaps comfortably above tau so the affine lookback is exact.
        let cs = ClusterState::new(vec![1, 1, 1], vec![1.5, 0.8, 0.0], 0.7).unwrap();
        let engine = cluster::return_map(&cs, &p).unwrap();
        let mut composed = cs.clone();
        for _ in 0..3 {
            composed = firing_map(&composed, &p).unwrap().0;
        }
        for (e, f) in engine.y.iter().zip(&composed.y) {
            assert!((e - f).abs() < 1e-10, "{e} vs {f}");
        }
        assert!((engine.a - composed.a).abs() < 1e-10);
    }

    #[test]
    fn firing_map_single_cluster_is_f1_lift() {
        let p = fig1(0.2, 6);
        let cs = ClusterState::synchronized(6, 0.75);
        let (out, _) = firing_map(&cs, &p).unwrap();
        let f = f1(0.75, &p).unwrap();
        assert!((out.a - f).abs() < 1e-12);
        assert_eq!(out.y, vec![0.0]);
    }

    #[test]
    fn firing_map_merges_ties() {
        let p = fig1(0.0, 3);
        // Two clusters at the same positive height merge after the step.
        let cs = ClusterState::new(vec![1, 1, 1], vec![0.9, 0.9, 0.0], 0.5).unwrap();
        let (out, merged) = firing_map(&cs, &p).unwrap();
        assert!(merged);
        assert_eq!(out.k(), 2);
        assert_eq!(out.n, vec![1, 2]);
    }
}
