//! Independent oracles and observables: a brute-force fixed-step integrator,
//! synchronization spread metrics, and an empirical Lipschitz probe for the
//! return map.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{self, backward_flow, ActivatorSegment, Trajectory};
use crate::error::{Error, Result};
use crate::maps::{self, SectionPoint};
use crate::params::ParameterSet;

/// One recorded sample of the fixed-step run.
#[derive(Debug, Clone)]
pub struct ProbeSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub a: f64,
}

/// Output of [`reference_integrator`]: probed states plus the event log.
#[derive(Debug, Clone)]
pub struct EulerRun {
    pub dt: f64,
    pub probes: Vec<ProbeSample>,
    pub events: Vec<engine::FiringEvent>,
}

/// Explicit-Euler integration of the coupled system with firing detection
/// by sign crossing and linear interpolation of the firing time; the
/// delayed activator is read from a step buffer with linear interpolation.
///
/// Converges to the exact solution at first order in `dt`. Refuses
/// `dt > tau / 10` when `tau > 0` (the delay would be under-resolved).
pub fn reference_integrator(
    params: &ParameterSet,
    x0: &[f64],
    a0: f64,
    dt: f64,
    horizon: f64,
    probe_times: &[f64],
) -> Result<EulerRun> {
    if !(dt > 0.0) {
        return Err(Error::ParameterCondition("dt must be positive".into()));
    }
    if params.tau > 0.0 && dt > params.tau / 10.0 {
        return Err(Error::ParameterCondition(format!(
            "dt = {dt} under-resolves the delay tau = {}; need dt <= tau/10",
            params.tau
        )));
    }
    if x0.len() != params.n {
        return Err(Error::ParameterCondition(format!(
            "got {} oscillators, parameters declare N = {}",
            x0.len(),
            params.n
        )));
    }
    let verdict = engine::check_wellposed(x0, a0, params);
    if !verdict.admissible() {
        return Err(Error::WellPosedness(
            "reference integrator needs admissible finite data".into(),
        ));
    }

    let beta = params.beta;
    let nf = params.n as f64;
    let m0 = x0.iter().sum::<f64>() / nf;
    // Pre-initial profile: the same backward-flow completion the engine uses.
    let pre_segment = if params.tau > 0.0 {
        let a_back = backward_flow(a0, m0, params.tau, beta)?;
        Some(ActivatorSegment {
            t_start: -params.tau,
            t_end: 0.0,
            a_start: a_back,
            m0: m0 + params.tau,
        })
    } else {
        None
    };

    let steps = (horizon / dt).ceil() as usize;
    let mut buffer: Vec<f64> = Vec::with_capacity(steps + 1);
    buffer.push(a0);
    let a_delayed_at = |t_query: f64, buffer: &[f64]| -> f64 {
        if t_query <= 0.0 {
            match &pre_segment {
                Some(seg) => seg.eval(t_query, beta),
                None => buffer[0],
            }
        } else {
            let pos = t_query / dt;
            let j = (pos.floor() as usize).min(buffer.len() - 1);
            let jn = (j + 1).min(buffer.len() - 1);
            let frac = pos - j as f64;
            buffer[j] * (1.0 - frac) + buffer[jn] * frac
        }
    };

    let mut x = x0.to_vec();
    let mut a = a0;
    let mut events: Vec<engine::FiringEvent> = Vec::new();
    let mut probes = Vec::with_capacity(probe_times.len());
    let mut probe_idx = 0usize;
    let mut sorted_probes = probe_times.to_vec();
    sorted_probes.sort_by(|p, q| p.partial_cmp(q).unwrap());

    for k in 0..steps {
        let t_k = k as f64 * dt;
        while probe_idx < sorted_probes.len() && sorted_probes[probe_idx] <= t_k {
            probes.push(ProbeSample { t: t_k, x: x.clone(), a });
            probe_idx += 1;
        }
        // Oscillators at exactly zero fire now (matters only at t = 0).
        let mut zero_now: Vec<usize> =
            (0..x.len()).filter(|&i| x[i] == 0.0).collect();
        if !zero_now.is_empty() {
            let a_del = a_delayed_at(t_k - params.tau, &buffer);
            let reset = params.r + params.nu * a_del;
            for &i in &zero_now {
                x[i] = reset;
            }
            zero_now.sort_unstable();
            events.push(engine::FiringEvent {
                t: t_k,
                oscillators: zero_now,
                a_delayed: a_del,
                reset_value: reset,
            });
        }
        let m_k = x.iter().sum::<f64>() / nf;
        let a_next = a + dt * (m_k - beta * a);

        // Advance repressors; crossings within the step fire at t_k + x_i
        // (exact, since the decay slope is -1).
        let mut crossings: Vec<(f64, usize)> = Vec::new();
        for (i, xi) in x.iter().enumerate() {
            if *xi <= dt && *xi > 0.0 {
                crossings.push((t_k + *xi, i));
            }
        }
        crossings.sort_by(|p, q| p.partial_cmp(q).expect("finite times"));
        let mut ci = 0;
        while ci < crossings.len() {
            let t_fire = crossings[ci].0;
            let mut group = vec![crossings[ci].1];
            while ci + 1 < crossings.len() && crossings[ci + 1].0 == t_fire {
                ci += 1;
                group.push(crossings[ci].1);
            }
            ci += 1;
            let a_del = a_delayed_at(t_fire - params.tau, &buffer);
            let reset = params.r + params.nu * a_del;
            for &i in &group {
                x[i] = reset - (t_k + dt - t_fire);
            }
            group.sort_unstable();
            events.push(engine::FiringEvent {
                t: t_fire,
                oscillators: group,
                a_delayed: a_del,
                reset_value: reset,
            });
        }
        for (i, xi) in x.iter_mut().enumerate() {
            let fired = crossings.iter().any(|&(_, j)| j == i);
            if !fired {
                *xi -= dt;
            }
        }
        a = a_next;
        buffer.push(a);
    }
    let t_end = steps as f64 * dt;
    while probe_idx < sorted_probes.len() && sorted_probes[probe_idx] <= t_end {
        probes.push(ProbeSample { t: t_end, x: x.clone(), a });
        probe_idx += 1;
    }
    Ok(EulerRun { dt, probes, events })
}

/// Event-aware deviation between the exact trajectory and a fixed-step run.
///
/// The activator is compared at every probe time. Repressor values are
/// compared only where both runs are in the same inter-firing segment of
/// the oscillator (around each firing the two runs disagree by the reset
/// jump over a window of width `O(dt)`, which says nothing about accuracy);
/// the firing-time and reset-value mismatches are measured directly on the
/// matched event sequences instead.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Deviation {
    pub a_sup: f64,
    pub x_sup: f64,
    pub event_time_sup: f64,
    pub reset_value_sup: f64,
}

impl Deviation {
    pub fn overall(&self) -> f64 {
        self.a_sup
            .max(self.x_sup)
            .max(self.event_time_sup)
            .max(self.reset_value_sup)
    }
}

/// Compare an exact trajectory with a fixed-step run over the Euler probes.
pub fn trajectory_deviation(exact: &Trajectory, euler: &EulerRun) -> Result<Deviation> {
    let n = exact.x0.len();
    let mut a_sup: f64 = 0.0;
    let mut x_sup: f64 = 0.0;

    // Per-oscillator firing times in both runs.
    let exact_times: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            exact
                .events
                .iter()
                .filter(|e| e.oscillators.contains(&i))
                .map(|e| e.t)
                .collect()
        })
        .collect();
    let euler_times: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            euler
                .events
                .iter()
                .filter(|e| e.oscillators.contains(&i))
                .map(|e| e.t)
                .collect()
        })
        .collect();

    for probe in &euler.probes {
        let a_exact = exact.a_at(probe.t)?;
        a_sup = a_sup.max((a_exact - probe.a).abs());
        for i in 0..n {
            let count_exact = exact_times[i].partition_point(|&t| t <= probe.t);
            let count_euler = euler_times[i].partition_point(|&t| t <= probe.t);
            if count_exact == count_euler {
                let xe = exact.x_at(i, probe.t);
                x_sup = x_sup.max((xe - probe.x[i]).abs());
            }
        }
    }

    let mut event_time_sup: f64 = 0.0;
    let mut reset_value_sup: f64 = 0.0;
    for i in 0..n {
        let matched = exact_times[i].len().min(euler_times[i].len());
        for k in 0..matched {
            event_time_sup = event_time_sup.max((exact_times[i][k] - euler_times[i][k]).abs());
        }
        if exact_times[i].len().abs_diff(euler_times[i].len()) > 1 {
            return Err(Error::Numerical(format!(
                "event counts diverged for oscillator {i}: {} vs {}",
                exact_times[i].len(),
                euler_times[i].len()
            )));
        }
    }
    let matched_events = exact.events.len().min(euler.events.len());
    for k in 0..matched_events {
        reset_value_sup = reset_value_sup
            .max((exact.events[k].reset_value - euler.events[k].reset_value).abs());
    }
    Ok(Deviation { a_sup, x_sup, event_time_sup, reset_value_sup })
}

/// Smearing magnitudes at successive returns of a section oscillator.
#[derive(Debug, Clone, Serialize)]
pub struct SpreadSeries {
    /// Event indices of the section oscillator's firings.
    pub return_events: Vec<usize>,
    /// `max_i x_i - min_i x_i` immediately before each return.
    pub spreads: Vec<f64>,
    /// `spread(n+1) / spread(n)`, defined while `spread(n) > 1e-14`.
    pub ratios: Vec<f64>,
    /// Geometric mean of the defined ratios.
    pub mean_ratio: f64,
}

/// Per-return spreads of a trajectory relative to the returns of the given
/// oscillator (pre-reset states).
pub fn spread_metrics(trajectory: &Trajectory, section_oscillator: usize) -> Result<SpreadSeries> {
    let returns = trajectory.firings_of(section_oscillator);
    if returns.len() < 2 {
        return Err(Error::Numerical(
            "need at least two returns to measure spreads".into(),
        ));
    }
    let spreads: Vec<f64> = returns
        .iter()
        .map(|&k| {
            let x = trajectory.x_before_event(k);
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
            max - min
        })
        .collect();
    let mut ratios = Vec::new();
    for w in spreads.windows(2) {
        if w[0] > 1e-14 {
            ratios.push(w[1] / w[0]);
        }
    }
    let mean_ratio = if ratios.is_empty() {
        f64::NAN
    } else {
        (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp()
    };
    Ok(SpreadSeries { return_events: returns, spreads, ratios, mean_ratio })
}

/// Empirical Lipschitz estimate of the return map.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub seed: u64,
    pub trials: usize,
    pub skipped: usize,
    /// Max over sampled admissible pairs of output/input sup-distance.
    pub l_max: f64,
    /// Input coordinates of the worst pair.
    pub worst_pair: Option<(Vec<f64>, Vec<f64>)>,
    /// How often the first trajectory returned later than the second.
    pub branch_t_first_longer: usize,
    pub branch_t_second_longer: usize,
}

/// Distance `max(||x - x'||_{N-1}, sup |A - A'|)` with the activator
/// histories compared on a uniform grid over the lookback window.
fn pair_distance(
    x1: &[f64],
    a1: impl Fn(f64) -> f64,
    x2: &[f64],
    a2: impl Fn(f64) -> f64,
    tau: f64,
    grid: usize,
) -> f64 {
    let n = x1.len();
    let mut d = 0.0f64;
    for i in 0..n.saturating_sub(1) {
        d = d.max((x1[i] - x2[i]).abs());
    }
    for g in 0..=grid {
        let s = if tau > 0.0 { -tau + tau * g as f64 / grid as f64 } else { 0.0 };
        d = d.max((a1(s) - a2(s)).abs());
        if tau == 0.0 {
            break;
        }
    }
    d
}

/// Sample random admissible section pairs within `radius` of each other and
/// report the worst output/input distance ratio of one return-map step.
pub fn lipschitz_probe(
    params: &ParameterSet,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<LipschitzReport> {
    params.ensure_order_preservation()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n;
    let grid = 1000usize;
    let mut l_max = 0.0f64;
    let mut worst = None;
    let mut skipped = 0usize;
    let mut branch_first = 0usize;
    let mut branch_second = 0usize;

    for _ in 0..trials {
        // Base point: x_N = 0, the rest below R - tau so the strong
        // admissibility condition holds; A in the upper attracting range.
        let mut x1: Vec<f64> = (0..n - 1)
            .map(|_| rng.gen_range(0.0..0.9 * (params.r - params.tau)))
            .collect();
        x1.sort_by(|p, q| q.partial_cmp(p).unwrap());
        x1.push(0.0);
        let a1 = rng.gen_range(0.3 * params.a_max()..0.9 * params.a_max());

        let mut x2: Vec<f64> = x1[..n - 1]
            .iter()
            .map(|&v| (v + rng.gen_range(-radius..radius)).max(0.0))
            .collect();
        x2.sort_by(|p, q| q.partial_cmp(p).unwrap());
        x2.push(0.0);
        let a2 = (a1 + rng.gen_range(-radius..radius)).max(0.0);

        let run = |x: &[f64], a: f64| -> Result<(SectionPoint, f64)> {
            let point = SectionPoint::new(x.to_vec(), a)?;
            let out = maps::return_map(&point, params)?;
            let t_r = params.r
                + params.nu * backward_flow(a, x.iter().sum::<f64>() / n as f64, params.tau, params.beta)?;
            Ok((out, t_r))
        };
        let (out1, t_r1) = match run(&x1, a1) {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let (out2, t_r2) = match run(&x2, a2) {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        // Lemma hypotheses: everyone fires before the earlier return time.
        let max1 = x1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let max2 = x2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max1 < t_r1.min(t_r2) && max2 < t_r1.min(t_r2)) {
            skipped += 1;
            continue;
        }
        if t_r1 >= t_r2 {
            branch_first += 1;
        } else {
            branch_second += 1;
        }

        let hist_in_1 = |s: f64| backward_history_value(a1, &x1, s, params);
        let hist_in_2 = |s: f64| backward_history_value(a2, &x2, s, params);
        let d_in = pair_distance(&x1, hist_in_1, &x2, hist_in_2, params.tau, grid);
        if d_in == 0.0 {
            skipped += 1;
            continue;
        }
        let h1 = out1.history.as_ref().expect("return map records history");
        let h2 = out2.history.as_ref().expect("return map records history");
        let eval_hist = |segs: &[ActivatorSegment], s: f64, fallback: f64| -> f64 {
            let idx = segs.partition_point(|seg| seg.t_end < s);
            if idx < segs.len() && segs[idx].t_start <= s {
                segs[idx].eval(s, params.beta)
            } else {
                fallback
            }
        };
        let d_out = pair_distance(
            &out1.x,
            |s| eval_hist(h1, s, out1.a),
            &out2.x,
            |s| eval_hist(h2, s, out2.a),
            params.tau,
            grid,
        );
        let ratio = d_out / d_in;
        if ratio > l_max {
            l_max = ratio;
            worst = Some((x1.clone(), x2.clone()));
        }
    }
    Ok(LipschitzReport {
        seed,
        trials,
        skipped,
        l_max,
        worst_pair: worst,
        branch_t_first_longer: branch_first,
        branch_t_second_longer: branch_second,
    })
}

/// Backward-completion value of the activator at lookback `s <= 0` from a
/// section state (the history the engine reconstructs for finite data).
fn backward_history_value(a: f64, x: &[f64], s: f64, params: &ParameterSet) -> f64 {
    if s >= 0.0 {
        return a;
    }
    let m0 = x.iter().sum::<f64>() / x.len() as f64;
    backward_flow(a, m0, -s, params.beta).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate, InitialCondition};

    fn fig1(tau: f64, n: usize) -> ParameterSet {
        ParameterSet::new(2.0, 1.0, 0.2, tau, n).unwrap()
    }

    #[test]
    fn euler_converges_first_order_on_single_oscillator() {
        let p = fig1(0.0, 1);
        let x0 = vec![1.2];
        let a0 = 0.6;
        let horizon = 3.0;
        let probes: Vec<f64> = (0..=300).map(|i| horizon * i as f64 / 300.0).collect();
        let exact = simulate(
            &p,
            InitialCondition::Value { x: x0.clone(), a: a0 },
            horizon,
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for dt in [1e-2, 1e-3, 1e-4] {
            let run = reference_integrator(&p, &x0, a0, dt, horizon, &probes).unwrap();
            let dev = trajectory_deviation(&exact, &run).unwrap();
            let overall = dev.overall();
            assert!(overall < prev, "dt {dt}: {overall} !< {prev}");
            // Halving dt at least halves the error (first order).
            if prev.is_finite() {
                assert!(overall < 0.7 * prev);
            }
            prev = overall;
        }
    }

    #[test]
    fn euler_refuses_underresolved_delay() {
        let p = fig1(0.2, 1);
        let err = reference_integrator(&p, &[1.0], 0.5, 0.05, 1.0, &[]).unwrap_err();
        assert!(matches!(err, Error::ParameterCondition(_)));
    }

    #[test]
    fn spreads_vanish_for_synchronized_run() {
        let p = fig1(0.2, 5);
        let a = crate::analysis::sync_fixed_point(&p).unwrap().a_fp;
        let traj = simulate(
            &p,
            InitialCondition::Value { x: vec![0.0; 5], a },
            12.0,
        )
        .unwrap();
        let series = spread_metrics(&traj, 4).unwrap();
        for s in &series.spreads {
            assert_eq!(*s, 0.0);
        }
        assert!(series.ratios.is_empty());
    }

    #[test]
    fn lipschitz_probe_is_finite_and_exercises_both_branches() {
        let p = fig1(0.2, 3);
        let report = lipschitz_probe(&p, 200, 1e-3, 7).unwrap();
        assert!(report.l_max.is_finite());
        assert!(report.l_max > 0.0);
        assert!(report.skipped < report.trials);
        assert!(report.branch_t_first_longer > 0);
        assert!(report.branch_t_second_longer > 0);
    }

    #[test]
    fn lipschitz_estimate_stable_under_radius_refinement() {
        let p = fig1(0.2, 3);
        let coarse = lipschitz_probe(&p, 300, 1e-3, 11).unwrap();
        let fine = lipschitz_probe(&p, 300, 1e-4, 11).unwrap();
        let rel = (coarse.l_max - fine.l_max).abs() / coarse.l_max.max(fine.l_max);
        assert!(rel < 0.2, "coarse {} vs fine {}", coarse.l_max, fine.l_max);
    }
}
