//! Exact event-driven integration of the coupled repressor/activator system.
//!
//! Repressor concentrations decay at unit speed between firings, so the next
//! event time is `min_i x_i` with no root finding, and the activator evolves
//! in closed form on each inter-firing segment. The delayed reset value
//! `R + nu A(t - tau)` is read from the recorded segment history, which makes
//! every trajectory exact up to floating-point rounding.

mod history;

pub use history::{
    backward_flow, backward_integral, backward_lipschitz, ActivatorSegment, History,
};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::params::ParameterSet;

/// Gap below which two distinct repressor values are flagged as a
/// near-collision (they do not merge; merging requires exact equality).
pub const NEAR_COLLISION_GAP: f64 = 1e-9;

/// One reset event: the oscillators that fired together and the delayed
/// activator value that set their common reset concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringEvent {
    pub t: f64,
    /// Indices (0-based) of the oscillators firing simultaneously.
    pub oscillators: Vec<usize>,
    /// `A(t - tau)` used for the reset.
    pub a_delayed: f64,
    /// `R + nu * a_delayed`.
    pub reset_value: f64,
}

/// Pair of distinct repressor values closer than [`NEAR_COLLISION_GAP`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearCollision {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub gap: f64,
}

/// Population state advanced event by event.
///
/// `weights` are per-entry multiplicities: all ones for a plain population,
/// cluster sizes when an entry stands for a whole cluster. The mean driving
/// the activator is the weighted mean, so trajectories of `{q n_k, y_k}` and
/// `{n_k, y_k}` coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub t: f64,
    pub x: Vec<f64>,
    pub a: f64,
    weights: Vec<f64>,
    history: History,
}

/// How a simulation run terminates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopCondition {
    /// Advance time by this amount past the initial instant.
    Horizon(f64),
    /// Stop at the `count`-th firing of the given oscillator.
    ReturnsOf { oscillator: usize, count: usize },
}

/// Admissibility certificate names, ordered from the cheapest to establish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmissibilityCertificate {
    /// `tau = 0`: finite data always defines the trajectory.
    TauZero,
    /// `min_i x_i >= tau`: no firing can occur before the delay horizon.
    MinAtLeastTau,
    /// `max + min < R - tau` together with `A0 >= A_x(tau)`.
    StrongCondition,
    /// The backward-flow inequality with computed Lipschitz constant.
    Claim1,
    Inadmissible,
}

/// Result of [`check_wellposed`]: verdict plus the quantities it was
/// decided on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellPosedness {
    pub certificate: AdmissibilityCertificate,
    /// `A_x(tau)`: the least initial activator value whose backward flow
    /// stays non-negative over the full lookback.
    pub a_threshold: f64,
    /// Whether `A0 >= a_threshold`.
    pub a0_sufficient: bool,
    /// Lipschitz constant of the backward flow on `[0, tau]`.
    pub lipschitz_k: f64,
    /// Right-hand side of the backward-flow inequality on `max_x`.
    pub claim1_bound: f64,
    pub min_x: f64,
    pub max_x: f64,
}

impl WellPosedness {
    pub fn admissible(&self) -> bool {
        self.certificate != AdmissibilityCertificate::Inadmissible
    }
}

/// Decide whether `(x0, A0)` alone defines a trajectory for these
/// parameters, without an explicit activator history.
///
/// Total function: never errors, the verdict carries the diagnostics.
pub fn check_wellposed(x0: &[f64], a0: f64, params: &ParameterSet) -> WellPosedness {
    check_wellposed_weighted(x0, &vec![1.0; x0.len()], a0, params)
}

/// Weighted variant of [`check_wellposed`] used for cluster states.
pub fn check_wellposed_weighted(
    x0: &[f64],
    weights: &[f64],
    a0: f64,
    params: &ParameterSet,
) -> WellPosedness {
    let m0 = weighted_mean(x0, weights);
    let min_x = x0.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_x = x0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let a_threshold = backward_integral(m0, params.tau, params.beta);
    let a0_sufficient = a0 >= a_threshold;
    let lipschitz_k = backward_lipschitz(a0, m0, params.tau, params.beta);
    let claim1_bound = params.r + params.nu * a0 + (params.nu * lipschitz_k + 1.0) * min_x
        - (2.0 * params.nu * lipschitz_k + 1.0) * params.tau;

    let certificate = if params.tau == 0.0 {
        AdmissibilityCertificate::TauZero
    } else if min_x >= params.tau {
        AdmissibilityCertificate::MinAtLeastTau
    } else if a0_sufficient && max_x + min_x < params.r - params.tau {
        AdmissibilityCertificate::StrongCondition
    } else if a0_sufficient && max_x < claim1_bound {
        AdmissibilityCertificate::Claim1
    } else {
        AdmissibilityCertificate::Inadmissible
    };

    WellPosedness {
        certificate,
        a_threshold,
        a0_sufficient,
        lipschitz_k,
        claim1_bound,
        min_x,
        max_x,
    }
}

/// Weighted mean over value/weight pairs summed in sorted order, so the
/// result is bit-identical under any permutation of the entries.
pub(crate) fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), w.len());
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(w.iter().copied()).collect();
    pairs.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN state"));
    let mut num = 0.0;
    let mut den = 0.0;
    for (xi, wi) in pairs {
        num += xi * wi;
        den += wi;
    }
    num / den
}

impl PopulationState {
    /// Build a state from `(x0, A0)` alone; the pre-initial activator
    /// profile on `[-tau, 0]` is reconstructed by the backward flow, which
    /// is exact precisely when the admissibility check passes. Inadmissible
    /// data is refused rather than completed by guesswork.
    pub fn new(params: &ParameterSet, x0: Vec<f64>, a0: f64) -> Result<Self> {
        Self::with_weights(params, x0, vec![1.0; params.n], a0)
    }

    /// As [`Self::new`] with explicit entry multiplicities (cluster sizes).
    pub fn with_weights(
        params: &ParameterSet,
        x0: Vec<f64>,
        weights: Vec<f64>,
        a0: f64,
    ) -> Result<Self> {
        validate_init(params, &x0, &weights, a0)?;
        let verdict = check_wellposed_weighted(&x0, &weights, a0, params);
        if !verdict.admissible() {
            return Err(Error::WellPosedness(format!(
                "(x0, A0) fails every admissibility certificate: min_x = {}, max_x = {}, \
                 A0 = {a0}, A_x(tau) = {}, backward bound = {}; provide an explicit history",
                verdict.min_x, verdict.max_x, verdict.a_threshold, verdict.claim1_bound
            )));
        }
        let m0 = weighted_mean(&x0, &weights);
        let mut history = History::new();
        if params.tau > 0.0 {
            let a_back = backward_flow(a0, m0, params.tau, params.beta)?;
            history.push(ActivatorSegment {
                t_start: -params.tau,
                t_end: 0.0,
                a_start: a_back,
                m0: m0 + params.tau,
            });
        }
        // Live segment anchored exactly at (0, a0).
        history.push(ActivatorSegment { t_start: 0.0, t_end: 0.0, a_start: a0, m0 });
        Ok(PopulationState { t: 0.0, x: x0, a: a0, weights, history })
    }

    /// Build a state from an explicit activator history covering at least
    /// `[t0 - tau, t0]` where `t0` is the history's final instant.
    pub fn with_history(params: &ParameterSet, x0: Vec<f64>, history: History) -> Result<Self> {
        let weights = vec![1.0; params.n];
        let t0 = history.end();
        let a0 = history.evaluate(t0, params.beta)?;
        validate_init(params, &x0, &weights, a0)?;
        if history.start() > t0 - params.tau {
            return Err(Error::WellPosedness(format!(
                "history covers [{}, {t0}] but the delay needs [{}, {t0}]",
                history.start(),
                t0 - params.tau
            )));
        }
        let mut history = history;
        let m0 = weighted_mean(&x0, &weights);
        history.push(ActivatorSegment { t_start: t0, t_end: t0, a_start: a0, m0 });
        Ok(PopulationState { t: t0, x: x0, a: a0, weights, history })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Weighted mean repressor concentration at the current instant.
    pub fn mean(&self) -> f64 {
        weighted_mean(&self.x, &self.weights)
    }

    /// Exact activator value at a past instant within the recorded history.
    pub fn activator_at(&self, t: f64, params: &ParameterSet) -> Result<f64> {
        self.history.evaluate(t, params.beta)
    }

    /// Backward flow from the current state over a firing-free lookback
    /// `delta <= tau`: exact when no firing occurred in `[t - delta, t]`.
    pub fn backward_activator(&self, delta: f64, params: &ParameterSet) -> Result<f64> {
        backward_flow(self.a, self.mean(), delta, params.beta)
    }

    /// Whether the state lies in the forward-invariant box
    /// `[0, R + nu A_max]^N x [0, A_max]`.
    pub fn in_attracting_set(&self, params: &ParameterSet) -> bool {
        let x_hi = params.x_max();
        self.a >= 0.0
            && self.a <= params.a_max()
            && self.x.iter().all(|&xi| (0.0..=x_hi).contains(&xi))
    }

    /// Advance to the next firing and apply the reset.
    ///
    /// The next firing time is `t + min_i x_i` exactly. Oscillators whose
    /// repressor values are exactly equal fire together and stay a cluster;
    /// no epsilon-merging is applied.
    pub fn advance_to_next_firing(&mut self, params: &ParameterSet) -> Result<FiringEvent> {
        let dt = self.x.iter().cloned().fold(f64::INFINITY, f64::min);
        debug_assert!(dt >= 0.0, "repressor concentrations must stay non-negative");
        let t_fire = self.t + dt;

        self.history.extend_last_to(t_fire);
        let a_fire = self.history.evaluate(t_fire, params.beta)?;
        let a_delayed = if params.tau == 0.0 {
            a_fire
        } else {
            self.history.evaluate(t_fire - params.tau, params.beta)?
        };
        let reset_value = params.r + params.nu * a_delayed;

        let mut firing = Vec::new();
        for (i, xi) in self.x.iter_mut().enumerate() {
            if *xi == dt {
                firing.push(i);
                *xi = reset_value;
            } else {
                *xi -= dt;
            }
        }
        self.t = t_fire;
        self.a = a_fire;
        self.history.push(ActivatorSegment {
            t_start: t_fire,
            t_end: t_fire,
            a_start: a_fire,
            m0: self.mean(),
        });
        self.history
            .prune_before(t_fire - params.tau - params.x_max());

        Ok(FiringEvent { t: t_fire, oscillators: firing, a_delayed, reset_value })
    }

    /// Advance time by `dt` with no firing allowed in between.
    fn coast_with(&mut self, dt: f64, params: &ParameterSet) -> Result<()> {
        debug_assert!(self.x.iter().all(|&xi| xi >= dt - 1e-15));
        for xi in &mut self.x {
            *xi -= dt;
        }
        self.t += dt;
        self.history.extend_last_to(self.t);
        self.a = self.history.evaluate(self.t, params.beta)?;
        Ok(())
    }

    /// Time until the next firing.
    pub fn time_to_next_firing(&self) -> f64 {
        self.x.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn near_collisions(&self) -> Vec<NearCollision> {
        let mut idx: Vec<usize> = (0..self.x.len()).collect();
        idx.sort_by(|&i, &j| self.x[i].partial_cmp(&self.x[j]).expect("non-NaN"));
        let mut out = Vec::new();
        for w in idx.windows(2) {
            let (i, j) = (w[0], w[1]);
            let gap = self.x[j] - self.x[i];
            if gap > 0.0 && gap < NEAR_COLLISION_GAP {
                out.push(NearCollision { t: self.t, i, j, gap });
            }
        }
        out
    }
}

fn validate_init(params: &ParameterSet, x0: &[f64], weights: &[f64], a0: f64) -> Result<()> {
    if x0.len() != weights.len() || x0.is_empty() {
        return Err(Error::WellPosedness(
            "state and weight vectors must be non-empty and of equal length".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - params.n as f64).abs() > 1e-9 {
        return Err(Error::WellPosedness(format!(
            "weights sum to {total} but the parameter set declares N = {}",
            params.n
        )));
    }
    if x0.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::WellPosedness("repressor concentrations must be >= 0".into()));
    }
    if !(a0 >= 0.0) || !a0.is_finite() {
        return Err(Error::WellPosedness(format!("activator must be >= 0, got {a0}")));
    }
    Ok(())
}

/// Event log plus the piecewise-closed-form solution, sufficient to
/// re-evaluate `(x, A)` exactly at any time in the simulated span.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: ParameterSet,
    pub weights: Vec<f64>,
    pub t0: f64,
    pub t_end: f64,
    pub x0: Vec<f64>,
    pub events: Vec<FiringEvent>,
    /// Post-reset repressor vectors, one per event.
    pub x_checkpoints: Vec<Vec<f64>>,
    /// Full (unpruned) activator history from `t0 - tau` to `t_end`.
    pub segments: Vec<ActivatorSegment>,
    pub near_collisions: Vec<NearCollision>,
}

impl Trajectory {
    /// Left-continuous repressor value at `t` (pre-reset at event times).
    pub fn x_at(&self, i: usize, t: f64) -> f64 {
        let k = self.events.partition_point(|e| e.t < t);
        if k == 0 {
            self.x0[i] - (t - self.t0)
        } else {
            self.x_checkpoints[k - 1][i] - (t - self.events[k - 1].t)
        }
    }

    /// Repressor vector immediately before event `k`.
    pub fn x_before_event(&self, k: usize) -> Vec<f64> {
        let t = self.events[k].t;
        (0..self.x0.len()).map(|i| self.x_at(i, t)).collect()
    }

    /// Exact activator value at `t` within the stored span.
    pub fn a_at(&self, t: f64) -> Result<f64> {
        let beta = self.params.beta;
        if self.segments.is_empty()
            || t < self.segments[0].t_start
            || t > self.segments.last().unwrap().t_end
        {
            return Err(Error::HistoryUnderflow {
                t,
                start: self.segments.first().map_or(f64::NAN, |s| s.t_start),
                end: self.segments.last().map_or(f64::NAN, |s| s.t_end),
            });
        }
        let idx = self.segments.partition_point(|s| s.t_end < t);
        Ok(self.segments[idx].eval(t, beta))
    }

    /// Event indices at which the given oscillator fires.
    pub fn firings_of(&self, oscillator: usize) -> Vec<usize> {
        self.events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.oscillators.contains(&oscillator))
            .map(|(k, _)| k)
            .collect()
    }

    /// Write `t,x_1,...,x_N,A,event` rows: two rows per event (pre- and
    /// post-reset) plus an optional uniform sampling grid. Floats carry 17
    /// significant digits so re-parsing is bit-exact.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W, sample_dt: Option<f64>) -> Result<()> {
        let n = self.x0.len();
        let mut header = String::from("t");
        for i in 1..=n {
            let _ = write!(header, ",x_{i}");
        }
        header.push_str(",A,event");
        writeln!(out, "{header}")?;

        let mut write_row = |out: &mut W, t: f64, xs: &[f64], a: f64, ev: &str| -> Result<()> {
            let mut line = fmt_float(t);
            for &v in xs {
                line.push(',');
                line.push_str(&fmt_float(v));
            }
            line.push(',');
            line.push_str(&fmt_float(a));
            line.push(',');
            line.push_str(ev);
            writeln!(out, "{line}")?;
            Ok(())
        };

        let sample_times: Vec<f64> = match sample_dt {
            Some(dt) if dt > 0.0 => {
                let mut ts = Vec::new();
                let mut k = 1usize;
                loop {
                    let t = self.t0 + k as f64 * dt;
                    if t >= self.t_end {
                        break;
                    }
                    ts.push(t);
                    k += 1;
                }
                ts
            }
            _ => Vec::new(),
        };

        let a0 = self.a_at(self.t0)?;
        write_row(out, self.t0, &self.x0, a0, "")?;
        let mut si = 0usize;
        for (k, ev) in self.events.iter().enumerate() {
            while si < sample_times.len() && sample_times[si] < ev.t {
                let t = sample_times[si];
                let xs: Vec<f64> = (0..n).map(|i| self.x_at(i, t)).collect();
                write_row(out, t, &xs, self.a_at(t)?, "")?;
                si += 1;
            }
            let pre = self.x_before_event(k);
            let a = self.a_at(ev.t)?;
            let label = ev
                .oscillators
                .iter()
                .map(|i| (i + 1).to_string())
                .collect::<Vec<_>>()
                .join(";");
            write_row(out, ev.t, &pre, a, &label)?;
            write_row(out, ev.t, &self.x_checkpoints[k], a, "")?;
        }
        while si < sample_times.len() {
            let t = sample_times[si];
            let xs: Vec<f64> = (0..n).map(|i| self.x_at(i, t)).collect();
            write_row(out, t, &xs, self.a_at(t)?, "")?;
            si += 1;
        }
        if self.t_end > self.events.last().map_or(self.t0, |e| e.t) {
            let xs: Vec<f64> = (0..n).map(|i| self.x_at(i, self.t_end)).collect();
            write_row(out, self.t_end, &xs, self.a_at(self.t_end)?, "")?;
        }
        Ok(())
    }

    /// One JSON object per event: `{t, oscillators, A_delayed, reset_value}`
    /// with 1-based oscillator indices and 17-significant-digit floats.
    pub fn write_events_jsonl<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        for ev in &self.events {
            let osc = ev
                .oscillators
                .iter()
                .map(|i| (i + 1).to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(
                out,
                "{{\"t\":{},\"oscillators\":[{}],\"A_delayed\":{},\"reset_value\":{}}}",
                fmt_float(ev.t),
                osc,
                fmt_float(ev.a_delayed),
                fmt_float(ev.reset_value)
            )?;
        }
        Ok(())
    }
}

/// Format with 17 significant digits (round-trips any f64 exactly).
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Run the dynamics from the given state until the stop condition.
///
/// Deterministic: identical inputs produce bit-identical trajectories.
pub fn simulate_state(
    params: &ParameterSet,
    mut state: PopulationState,
    stop: StopCondition,
) -> Result<Trajectory> {
    let t0 = state.t;
    let x0 = state.x.clone();
    let weights = state.weights.clone();
    let mut segments: Vec<ActivatorSegment> = state.history.segments().to_vec();
    // The live (zero-length or growing) segment is re-read after each event.
    segments.pop();

    let mut events = Vec::new();
    let mut checkpoints = Vec::new();
    let mut near = Vec::new();

    let mut returns_seen = 0usize;
    loop {
        match stop {
            StopCondition::Horizon(h) => {
                let dt = state.time_to_next_firing();
                if state.t + dt > t0 + h {
                    state.coast_with(t0 + h - state.t, params)?;
                    break;
                }
            }
            StopCondition::ReturnsOf { count, .. } => {
                if returns_seen >= count {
                    break;
                }
            }
        }
        let before_len = state.history.segments().len();
        let ev = state.advance_to_next_firing(params)?;
        // The segment closed by this event sits just before the new live one.
        let segs = state.history.segments();
        debug_assert!(segs.len() >= 2 || before_len == 1);
        segments.push(segs[segs.len() - 2]);
        if near.len() < 1000 {
            near.extend(state.near_collisions());
        }
        if let StopCondition::ReturnsOf { oscillator, .. } = stop {
            if ev.oscillators.contains(&oscillator) {
                returns_seen += 1;
            }
        }
        checkpoints.push(state.x.clone());
        events.push(ev);
    }
    // Final live segment (may be zero-length when stopping on a return).
    segments.push(*state.history.segments().last().expect("live segment"));

    Ok(Trajectory {
        params: *params,
        weights,
        t0,
        t_end: state.t,
        x0,
        events,
        x_checkpoints: checkpoints,
        segments,
        near_collisions: near,
    })
}

/// Initial data for [`simulate`].
#[derive(Debug, Clone)]
pub enum InitialCondition {
    /// Repressor vector plus the activator value at `t = 0`; admissibility
    /// is checked and the pre-initial profile reconstructed.
    Value { x: Vec<f64>, a: f64 },
    /// Repressor vector plus an explicit activator history whose final
    /// instant defines `t0`.
    WithHistory { x: Vec<f64>, history: Vec<ActivatorSegment> },
}

/// Simulate from initial data for a time horizon.
pub fn simulate(params: &ParameterSet, init: InitialCondition, horizon: f64) -> Result<Trajectory> {
    simulate_until(params, init, StopCondition::Horizon(horizon))
}

/// Simulate from initial data until an arbitrary stop condition.
pub fn simulate_until(
    params: &ParameterSet,
    init: InitialCondition,
    stop: StopCondition,
) -> Result<Trajectory> {
    let state = match init {
        InitialCondition::Value { x, a } => PopulationState::new(params, x, a)?,
        InitialCondition::WithHistory { x, history } => {
            let history = History::from_segments(history, params.beta)?;
            PopulationState::with_history(params, x, history)?
        }
    };
    simulate_state(params, state, stop)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1(tau: f64, n: usize) -> ParameterSet {
        ParameterSet::new(2.0, 1.0, 0.2, tau, n).unwrap()
    }

    #[test]
    fn single_oscillator_fires_after_exact_decay_time() {
        let p = fig1(0.0, 1);
        let mut st = PopulationState::new(&p, vec![1.7], 0.5).unwrap();
        let ev = st.advance_to_next_firing(&p).unwrap();
        assert_eq!(ev.t, 1.7);
        assert_eq!(ev.oscillators, vec![0]);
        assert_eq!(st.x[0], ev.reset_value);
        assert!(ev.reset_value >= p.r);
    }

    #[test]
    fn ties_fire_together_and_stay_clustered() {
        let p = fig1(0.0, 4);
        let mut st = PopulationState::new(&p, vec![0.5, 0.5, 0.9, 1.3], 0.4).unwrap();
        let ev = st.advance_to_next_firing(&p).unwrap();
        assert_eq!(ev.oscillators, vec![0, 1]);
        assert_eq!(st.x[0], st.x[1]);
        let ev2 = st.advance_to_next_firing(&p).unwrap();
        assert_eq!(ev2.oscillators, vec![2]);
    }

    #[test]
    fn simulate_is_deterministic() {
        let p = fig1(0.2, 3);
        let init = || InitialCondition::Value { x: vec![0.4, 0.9, 1.5], a: 0.8 };
        let t1 = simulate(&p, init(), 30.0).unwrap();
        let t2 = simulate(&p, init(), 30.0).unwrap();
        assert_eq!(t1.events.len(), t2.events.len());
        for (a, b) in t1.events.iter().zip(&t2.events) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.reset_value.to_bits(), b.reset_value.to_bits());
        }
    }

    #[test]
    fn refuses_inadmissible_init_without_history() {
        // tau > 0, tiny A0 below the backward threshold, min < tau, large max.
        let p = ParameterSet::new(2.0, 1.0, 0.2, 0.5, 2).unwrap();
        let err = PopulationState::new(&p, vec![0.1, 4.9], 0.0).unwrap_err();
        assert!(matches!(err, Error::WellPosedness(_)));
    }

    #[test]
    fn wellposed_tau_zero_always_admissible() {
        let p = fig1(0.0, 3);
        let v = check_wellposed(&[5.0, 0.0, 9.0], 0.0, &p);
        assert_eq!(v.certificate, AdmissibilityCertificate::TauZero);
    }

    #[test]
    fn wellposed_min_at_least_tau() {
        let p = fig1(0.2, 3);
        let v = check_wellposed(&[0.2, 7.0, 9.0], 0.0, &p);
        assert_eq!(v.certificate, AdmissibilityCertificate::MinAtLeastTau);
    }

    #[test]
    fn wellposed_strong_fails_falls_back_to_claim1() {
        // max + min = 1.9 > R - tau = 1.8 with min < tau.
        let p = fig1(0.2, 2);
        let v = check_wellposed(&[0.1, 1.8], 1.0, &p);
        assert!(v.min_x < p.tau);
        assert!(v.max_x + v.min_x > p.r - p.tau);
        assert_eq!(v.certificate, AdmissibilityCertificate::Claim1);
        assert!(v.max_x < v.claim1_bound);
        assert!(v.lipschitz_k > 0.0);
    }

    #[test]
    fn history_underflow_is_reported() {
        let p = fig1(0.2, 1);
        let st = PopulationState::new(&p, vec![1.0], 0.5).unwrap();
        let err = st.activator_at(-0.5, &p).unwrap_err();
        assert!(matches!(err, Error::HistoryUnderflow { .. }));
    }

    #[test]
    fn trajectory_reevaluation_matches_events() {
        let p = fig1(0.2, 3);
        let traj = simulate(
            &p,
            InitialCondition::Value { x: vec![0.3, 1.1, 1.9], a: 0.7 },
            25.0,
        )
        .unwrap();
        // Left limits at event times must vanish for the firing oscillators.
        for (k, ev) in traj.events.iter().enumerate() {
            let pre = traj.x_before_event(k);
            for &i in &ev.oscillators {
                assert!(pre[i].abs() < 1e-12);
            }
        }
        // A at each event equals the delayed lookup shifted by tau.
        for ev in traj.events.iter().skip(1) {
            let a = traj.a_at(ev.t - p.tau).unwrap();
            assert!((a - ev.a_delayed).abs() < 1e-14);
        }
    }

    #[test]
    fn min_firing_count_per_horizon() {
        let p = fig1(0.0, 4);
        let horizon = 50.0;
        let traj = simulate(
            &p,
            InitialCondition::Value { x: vec![0.3, 0.8, 1.4, 2.0], a: 0.5 },
            horizon,
        )
        .unwrap();
        let min_count = (horizon / p.x_max()).floor() as usize;
        for i in 0..4 {
            assert!(traj.firings_of(i).len() >= min_count);
        }
    }

    #[test]
    fn csv_round_trips_field_values() {
        let p = fig1(0.0, 2);
        let traj = simulate(&p, InitialCondition::Value { x: vec![0.5, 1.0], a: 0.6 }, 6.0)
            .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, Some(0.25)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x_1,x_2,A,event");
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5);
            let t: f64 = fields[0].parse().unwrap();
            let x1: f64 = fields[1].parse().unwrap();
            let a: f64 = fields[3].parse().unwrap();
            // Bit-exact round trip through 17 significant digits.
            assert_eq!(fmt_float(t), fields[0]);
            assert_eq!(fmt_float(x1), fields[1]);
            assert_eq!(fmt_float(a), fields[3]);
        }
    }

    #[test]
    fn events_jsonl_schema() {
        let p = fig1(0.2, 2);
        let traj = simulate(&p, InitialCondition::Value { x: vec![0.5, 1.0], a: 0.6 }, 5.0)
            .unwrap();
        let mut buf = Vec::new();
        traj.write_events_jsonl(&mut buf).unwrap();
        for line in String::from_utf8(buf).unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["t"].is_number());
            assert!(v["oscillators"].is_array());
            assert!(v["A_delayed"].is_number());
            assert!(v["reset_value"].is_number());
        }
    }
}
