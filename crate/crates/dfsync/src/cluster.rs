//! Partially synchronized states: cluster distributions with per-cluster
//! repressor concentrations, and their return dynamics.
//!
//! A cluster state is evolved by the same event engine as a plain
//! population, with one entry per cluster weighted by its size. The weighted
//! mean makes trajectories independent of a common scaling of the sizes.

use serde::{Deserialize, Serialize};

use crate::engine::{backward_flow, PopulationState};
use crate::error::{Error, Result};
use crate::params::ParameterSet;

/// Cluster distribution `{n_k}` with repressor coordinates `{y_k}` on the
/// section `y_K = 0`, ordered `y_1 >= ... >= y_K = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    /// Cluster sizes; their sum is the population size.
    pub n: Vec<u64>,
    /// Repressor concentrations, non-increasing with `y.last() == 0`.
    pub y: Vec<f64>,
    /// Activator value at the section.
    pub a: f64,
    /// Return period, set when the state is a return-map fixed point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl ClusterState {
    pub fn new(n: Vec<u64>, y: Vec<f64>, a: f64) -> Result<Self> {
        let cs = ClusterState { n, y, a, period: None };
        cs.validate()?;
        Ok(cs)
    }

    /// Fully synchronized state: one cluster of `n` oscillators at the section.
    pub fn synchronized(n: u64, a: f64) -> Self {
        ClusterState { n: vec![n], y: vec![0.0], a, period: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.len() != self.y.len() || self.n.is_empty() {
            return Err(Error::WellPosedness(
                "cluster sizes and coordinates must be non-empty and of equal length".into(),
            ));
        }
        if self.n.iter().any(|&nk| nk == 0) {
            return Err(Error::WellPosedness("cluster sizes must be >= 1".into()));
        }
        if *self.y.last().unwrap() != 0.0 {
            return Err(Error::WellPosedness("the section cluster must sit at y = 0".into()));
        }
        if self.y.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::WellPosedness("cluster coordinates must be >= 0".into()));
        }
        if self.y.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::WellPosedness(
                "cluster coordinates must be non-increasing".into(),
            ));
        }
        Ok(())
    }

    /// Number of clusters.
    pub fn k(&self) -> usize {
        self.n.len()
    }

    /// Total population size.
    pub fn population(&self) -> u64 {
        self.n.iter().sum()
    }

    /// Same coordinates with every cluster size multiplied by `q`.
    pub fn scaled(&self, q: u64) -> Self {
        ClusterState {
            n: self.n.iter().map(|&nk| nk * q).collect(),
            y: self.y.clone(),
            a: self.a,
            period: self.period,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.n.iter().map(|&nk| nk as f64).collect()
    }

    /// Weighted mean repressor concentration at the section (pre-reset).
    pub fn mean(&self) -> f64 {
        let num: f64 = self
            .n
            .iter()
            .zip(&self.y)
            .map(|(&nk, &yk)| nk as f64 * yk)
            .sum();
        num / self.population() as f64
    }

    /// Reset concentration of the section cluster, `R + nu phi^{-tau}(A)`.
    pub fn reset_value(&self, params: &ParameterSet) -> Result<f64> {
        let a_delayed = backward_flow(self.a, self.mean(), params.tau, params.beta)?;
        Ok(params.r + params.nu * a_delayed)
    }

    /// Parameter set with the population size matching this state.
    pub fn params_for(&self, base: &ParameterSet) -> Result<ParameterSet> {
        base.with_n(self.population() as usize)
    }

    /// Engine state with one weighted entry per cluster.
    pub fn to_population_state(&self, params: &ParameterSet) -> Result<PopulationState> {
        PopulationState::with_weights(params, self.y.clone(), self.weights(), self.a)
    }

    /// Merge adjacent clusters with exactly equal coordinates.
    pub fn merged(&self) -> (Self, bool) {
        let mut n = Vec::with_capacity(self.n.len());
        let mut y: Vec<f64> = Vec::with_capacity(self.y.len());
        let mut merged = false;
        for (&nk, &yk) in self.n.iter().zip(&self.y) {
            if let (Some(last_n), Some(&last_y)) = (n.last_mut(), y.last()) {
                if last_y == yk {
                    *last_n += nk;
                    merged = true;
                    continue;
                }
            }
            n.push(nk);
            y.push(yk);
        }
        (ClusterState { n, y, a: self.a, period: self.period }, merged)
    }

    /// Split the section cluster into `(n_K - 1, 1)` with the singleton
    /// offset to `epsilon`: the minimal perturbation smearing that cluster.
    pub fn smear_section(&self, epsilon: f64) -> Result<Self> {
        let k = self.k();
        if self.n[k - 1] < 2 {
            return Err(Error::WellPosedness(
                "smearing needs a section cluster of size >= 2".into(),
            ));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::WellPosedness("smear offset must be >= 0".into()));
        }
        if k >= 2 && epsilon >= self.y[k - 2] {
            return Err(Error::WellPosedness(
                "smear offset must stay below the next cluster".into(),
            ));
        }
        let mut n = self.n.clone();
        let mut y = self.y.clone();
        let last = n[k - 1];
        n[k - 1] = 1;
        y[k - 1] = epsilon;
        n.push(last - 1);
        y.push(0.0);
        Ok(ClusterState { n, y, a: self.a, period: None })
    }

    /// Expand to one oscillator per population member, smearing the chosen
    /// cluster (1-based) over `[y_k, y_k + epsilon]` with equal offsets.
    pub fn expand_with_smear(&self, cluster: usize, epsilon: f64) -> Result<Vec<f64>> {
        if cluster == 0 || cluster > self.k() {
            return Err(Error::Config(format!("no cluster {cluster} in a {}-cluster state", self.k())));
        }
        let mut x = Vec::with_capacity(self.population() as usize);
        for (idx, (&nk, &yk)) in self.n.iter().zip(&self.y).enumerate() {
            if idx + 1 == cluster && nk > 1 {
                for j in 0..nk {
                    // Highest offsets first keeps the vector non-increasing.
                    x.push(yk + epsilon * (nk - 1 - j) as f64 / (nk - 1) as f64);
                }
            } else {
                x.extend(std::iter::repeat(yk).take(nk as usize));
            }
        }
        Ok(x)
    }
}

/// Immediately-before-firing snapshot extracted from a just-fired engine
/// state: fired entries sit at zero, the others keep their post-event
/// values (they do not reset, so both readings are bit-identical).
fn section_snapshot(state: &PopulationState, fired: &[usize]) -> (Vec<f64>, f64) {
    let mut y = state.x.clone();
    for &i in fired {
        y[i] = 0.0;
    }
    (y, state.a)
}

/// One full return of the section cluster: advance until the cluster that
/// starts at `y_K = 0` fires for the second time and capture the state
/// immediately before that firing. Labels are preserved, so the output is
/// again ordered with the section cluster last.
pub fn return_map(cs: &ClusterState, params: &ParameterSet) -> Result<ClusterState> {
    let run_params = cs.params_for(params)?;
    let mut state = cs.to_population_state(&run_params)?;
    let section = cs.k() - 1;
    let mut fired_count = 0usize;
    // Bounded by the population cycle length plus slack.
    for _ in 0..(4 * cs.k() + 16) {
        let ev = state.advance_to_next_firing(&run_params)?;
        if ev.oscillators.contains(&section) {
            fired_count += 1;
            if fired_count == 2 {
                let (y, a) = section_snapshot(&state, &ev.oscillators);
                let mut out = ClusterState { n: cs.n.clone(), y, a, period: Some(ev.t) };
                out.validate().map_err(|_| {
                    Error::Numerical(
                        "return map left the ordered cone: firing order violated".into(),
                    )
                })?;
                return Ok(out);
            }
        }
    }
    Err(Error::Numerical("section cluster did not return within the event budget".into()))
}

/// Advance one firing: stop immediately before the next cluster's firing
/// and relabel cyclically so the new section cluster is last. The engine
/// carries the activator history across the step, so delayed lookbacks that
/// cross the section firing stay exact.
pub fn rotate_section(cs: &ClusterState, params: &ParameterSet) -> Result<ClusterState> {
    let run_params = cs.params_for(params)?;
    let mut state = cs.to_population_state(&run_params)?;
    let k = cs.k();
    // First event: the section cluster (and any exact ties) fires at t = 0.
    let first = state.advance_to_next_firing(&run_params)?;
    if first.t != 0.0 {
        return Err(Error::Numerical("section cluster was not at zero".into()));
    }
    let second = state.advance_to_next_firing(&run_params)?;
    let (y, a) = section_snapshot(&state, &second.oscillators);
    // Cyclic relabel: previous section cluster moves to the front.
    let mut n = Vec::with_capacity(k);
    let mut yy = Vec::with_capacity(k);
    let order: Vec<usize> = std::iter::once(k - 1).chain(0..k - 1).collect();
    for &idx in &order {
        n.push(cs.n[idx]);
        yy.push(y[idx]);
    }
    let mut out = ClusterState { n, y: yy, a, period: None };
    let (m, _) = out.merged();
    out = m;
    out.validate()?;
    Ok(out)
}

/// Rotate until the given cluster (1-based in the input labelling) defines
/// the section.
pub fn rotate_to_cluster(cs: &ClusterState, params: &ParameterSet, cluster: usize) -> Result<ClusterState> {
    let k = cs.k();
    if cluster == 0 || cluster > k {
        return Err(Error::Config(format!("no cluster {cluster} in a {k}-cluster state")));
    }
    let mut out = cs.clone();
    for _ in 0..(k - cluster) % k {
        out = rotate_section(&out, params)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1(tau: f64, n: usize) -> ParameterSet {
        ParameterSet::new(2.0, 1.0, 0.2, tau, n).unwrap()
    }

    #[test]
    fn validation_enforces_section_and_order() {
        assert!(ClusterState::new(vec![1, 1], vec![0.5, 0.0], 0.3).is_ok());
        assert!(ClusterState::new(vec![1, 1], vec![0.5, 0.1], 0.3).is_err());
        assert!(ClusterState::new(vec![1, 1], vec![0.1, 0.5], 0.3).is_err());
        assert!(ClusterState::new(vec![1, 0], vec![0.5, 0.0], 0.3).is_err());
    }

    #[test]
    fn scaling_leaves_return_map_unchanged() {
        let p1 = fig1(0.0, 3);
        let cs = ClusterState::new(vec![1, 1, 1], vec![1.4, 0.7, 0.0], 0.6).unwrap();
        let out1 = return_map(&cs, &p1).unwrap();
        for q in [2u64, 5] {
            let csq = cs.scaled(q);
            let pq = fig1(0.0, 3 * q as usize);
            let outq = return_map(&csq, &pq).unwrap();
            for (a, b) in out1.y.iter().zip(&outq.y) {
                assert!((a - b).abs() <= 1e-12, "q = {q}: {a} vs {b}");
            }
            assert!((out1.a - outq.a).abs() <= 1e-12);
        }
    }

    #[test]
    fn rotation_cycles_back_to_start() {
        let p = fig1(0.0, 3);
        let cs = ClusterState::new(vec![1, 1, 1], vec![1.4, 0.7, 0.0], 0.6).unwrap();
        let ret = return_map(&cs, &p).unwrap();
        let mut rot = cs.clone();
        for _ in 0..3 {
            rot = rotate_section(&rot, &p).unwrap();
        }
        // Three single-firing steps equal one full return (same labels).
        for (a, b) in ret.y.iter().zip(&rot.y) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((ret.a - rot.a).abs() < 1e-12);
    }

    #[test]
    fn smear_section_splits_minimally() {
        let cs = ClusterState::new(vec![2, 3], vec![1.0, 0.0], 0.5).unwrap();
        let sm = cs.smear_section(1e-4).unwrap();
        assert_eq!(sm.n, vec![2, 1, 2]);
        assert_eq!(sm.y[1], 1e-4);
        assert_eq!(sm.y[2], 0.0);
        assert_eq!(sm.population(), cs.population());
        let single = ClusterState::new(vec![2, 1], vec![1.0, 0.0], 0.5).unwrap();
        assert!(single.smear_section(1e-4).is_err());
    }

    #[test]
    fn expand_with_smear_orders_offsets() {
        let cs = ClusterState::synchronized(4, 0.7);
        let x = cs.expand_with_smear(1, 3e-4).unwrap();
        assert_eq!(x.len(), 4);
        assert_eq!(x[0], 3e-4);
        assert_eq!(x[3], 0.0);
        assert!(x.windows(2).all(|w| w[0] >= w[1]));
    }
}
