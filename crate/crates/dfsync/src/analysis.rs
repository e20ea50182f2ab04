//! Fixed points of the return maps, continuation in the delay, spectra, and
//! the delay-dependent stability and instability criteria.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::cluster::{self, ClusterState};
use crate::error::{Error, Result};
use crate::maps::{self, SyncAnalysis};
use crate::params::ParameterSet;
use crate::solve;

/// Residual tolerance for scalar fixed points.
pub const SCALAR_TOL: f64 = 1e-13;
/// Residual tolerance for vector Newton iterations.
pub const NEWTON_TOL: f64 = 1e-11;
/// Base finite-difference step for Jacobians.
pub const FD_STEP: f64 = 1e-6;

/// Fixed point of the synchronized return map `F_1`, with the trapping
/// interval it lives in and the resulting period.
pub fn sync_fixed_point(params: &ParameterSet) -> Result<SyncAnalysis> {
    let (r_tau, nu_tau) = maps::reset_coefficients(params)?;
    let a0 = maps::a_lower(params);
    let a_tau = maps::a_upper(params)?;
    if !(a0 < a_tau) {
        return Err(Error::ParameterCondition(format!(
            "trapping interval is empty: A_0(tau) = {a0} >= A_tau = {a_tau}"
        )));
    }
    let g = |a: f64| maps::f1(a, params).expect("validated params") - a;
    let dg = |a: f64| maps::df1(a, params).expect("validated params") - 1.0;
    let a_fp = solve::bracketed_newton(&g, Some(&dg), a0, a_tau, SCALAR_TOL).map_err(|e| {
        Error::Numerical(format!("synchronized fixed point bracket failed: {e}"))
    })?;
    Ok(SyncAnalysis {
        r_tau,
        nu_tau,
        a0_tau: a0,
        a_tau_max: a_tau,
        a_fp,
        period: r_tau + nu_tau * a_fp,
    })
}

/// `tanh(u) - u` at `u = beta^2 R / (2 beta - nu)`; negative for all valid
/// parameters, which is what forces `A_fp < R / (2 beta - nu)`.
pub fn tanh_gap(params: &ParameterSet) -> f64 {
    let u = params.beta * params.beta * params.r / (2.0 * params.beta - params.nu);
    u.tanh() - u
}

/// The scalar fixed-point function for equi-distributed states with `k`
/// clusters at `tau = 0`:
/// `f(A) = ((k+1)(R+nu A)/(2k) - beta A + 1/beta)(1 - e^{-beta (R+nu A)/k}) - (R+nu A)/k`.
pub fn equi_f(a: f64, params: &ParameterSet, k: usize) -> f64 {
    let kf = k as f64;
    let t = (params.r + params.nu * a) / kf;
    let m0 = (kf + 1.0) * (params.r + params.nu * a) / (2.0 * kf);
    (m0 - params.beta * a + 1.0 / params.beta) * (-(-params.beta * t).exp_m1()) - t
}

fn equi_df(a: f64, params: &ParameterSet, k: usize) -> f64 {
    let kf = k as f64;
    let beta = params.beta;
    let t = (params.r + params.nu * a) / kf;
    let m0 = (kf + 1.0) * (params.r + params.nu * a) / (2.0 * kf);
    let one_m_e = -(-beta * t).exp_m1();
    let dm0 = (kf + 1.0) * params.nu / (2.0 * kf);
    let dt = params.nu / kf;
    (dm0 - beta) * one_m_e + (m0 - beta * a + 1.0 / beta) * beta * dt * (-beta * t).exp() - dt
}

/// Auxiliary function `g` with `f(0) = g(beta R) / (beta k)`:
/// `g(x) = ((k+1) x / 2 + k)(1 - e^{-x/k}) - x`.
pub fn equi_g(x: f64, k: usize) -> f64 {
    let kf = k as f64;
    ((kf + 1.0) * x / 2.0 + kf) * (-(-x / kf).exp_m1()) - x
}

/// The unique equi-distributed fixed point with `k` clusters at `tau = 0`:
/// equally spaced repressor coordinates with gap `(R + nu A_fp)/k`, unit
/// cluster sizes (scale with [`ClusterState::scaled`] as needed).
pub fn equi_fixed_point(params: &ParameterSet, k: usize) -> Result<ClusterState> {
    if params.tau != 0.0 {
        return Err(Error::ParameterCondition(
            "equi-distributed fixed points are solved at tau = 0; continue in tau afterwards".into(),
        ));
    }
    if k < 2 {
        return Err(Error::ParameterCondition("need at least 2 clusters".into()));
    }
    let a_max = params.a_max();
    let f = |a: f64| equi_f(a, params, k);
    let df = |a: f64| equi_df(a, params, k);
    if !(f(0.0) > 0.0) || !(f(a_max) < 0.0) {
        return Err(Error::ParameterCondition(format!(
            "equi fixed-point bracket failed: f(0) = {}, f(A_max) = {}",
            f(0.0),
            f(a_max)
        )));
    }
    let a_fp = solve::bracketed_newton(&f, Some(&df), 0.0, a_max, SCALAR_TOL)?;
    let gap = (params.r + params.nu * a_fp) / k as f64;
    let y: Vec<f64> = (0..k).map(|i| (k - 1 - i) as f64 * gap).collect();
    let mut fp = ClusterState::new(vec![1; k], y, a_fp)?;
    fp.period = Some(params.r + params.nu * a_fp);

    // The coordinates must be reproduced after every single firing, not
    // only after a full return.
    let run_params = fp.params_for(params)?;
    let (step, _) = maps::firing_map(&fp, &run_params)?;
    for (a, b) in fp.y.iter().zip(&step.y) {
        if (a - b).abs() > 1e-10 {
            return Err(Error::Numerical(format!(
                "equi fixed point not recovered after one firing: {a} vs {b}"
            )));
        }
    }
    if (fp.a - step.a).abs() > 1e-10 {
        return Err(Error::Numerical(
            "equi fixed point activator not recovered after one firing".into(),
        ));
    }
    Ok(fp)
}

/// Pack section coordinates `(y_1..y_{K-1}, A)` for Newton iterations.
fn pack(cs: &ClusterState) -> Vec<f64> {
    let mut z: Vec<f64> = cs.y[..cs.k() - 1].to_vec();
    z.push(cs.a);
    z
}

fn unpack(z: &[f64], n: &[u64]) -> Result<ClusterState> {
    let k = n.len();
    let mut y = z[..k - 1].to_vec();
    y.push(0.0);
    ClusterState::new(n.to_vec(), y, z[k - 1])
}

/// In-subspace return map in packed coordinates.
fn return_in_subspace(z: &[f64], n: &[u64], params: &ParameterSet) -> Result<Vec<f64>> {
    let cs = unpack(z, n)?;
    let out = cluster::return_map(&cs, params)?;
    Ok(pack(&out))
}

/// Residual of the fixed-point equation in packed coordinates.
pub fn fixed_point_residual(cs: &ClusterState, params: &ParameterSet) -> Result<f64> {
    let z = pack(cs);
    let image = return_in_subspace(&z, &cs.n, params)?;
    Ok(z.iter()
        .zip(&image)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Newton-refine a cluster fixed point at the delay in `params`.
pub fn refine_fixed_point(guess: &ClusterState, params: &ParameterSet) -> Result<ClusterState> {
    let n = guess.n.clone();
    let mut z = pack(guess);
    let dim = z.len();
    let map = |z: &[f64]| return_in_subspace(z, &n, params);
    for _ in 0..30 {
        let image = map(&z)?;
        let residual: Vec<f64> = image.iter().zip(&z).map(|(f, zi)| f - zi).collect();
        let norm = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if norm <= NEWTON_TOL {
            let mut out = unpack(&z, &n)?;
            out.period = Some(out.reset_value(params)?);
            return Ok(out);
        }
        let jac = solve::central_jacobian(&map, &z, FD_STEP)?;
        let lhs = jac - DMatrix::identity(dim, dim);
        let rhs = -DVector::from_vec(residual);
        let delta = solve::solve_linear(&lhs, &rhs)?;
        for i in 0..dim {
            z[i] += delta[i];
        }
        if z[..dim - 1].iter().any(|&v| !(v >= 0.0)) || !(z[dim - 1] >= 0.0) {
            return Err(Error::Numerical("Newton step left the positive cone".into()));
        }
    }
    Err(Error::Numerical(format!(
        "Newton did not reach residual {NEWTON_TOL} in 30 iterations"
    )))
}

/// Firing-free-window margin `T - y_1 - tau` of the orbit through `cs`;
/// positive iff no firing occurs in `[-tau, 0]` modulo the period.
pub fn window_margin(cs: &ClusterState, params: &ParameterSet) -> Result<f64> {
    let t_fp = cs.reset_value(params)?;
    let y1 = cs.y[0];
    Ok(t_fp - y1 - params.tau)
}

/// Continue a return-map fixed point from the delay in `params` to
/// `target_tau` in `steps` uniform increments, re-verifying the residual
/// and the firing-free window at every accepted step. Failed steps are
/// bisected a few times before the continuation reports where it stalled.
pub fn continue_fixed_point(
    fp: &ClusterState,
    params: &ParameterSet,
    target_tau: f64,
    steps: usize,
) -> Result<ClusterState> {
    let start_tau = params.tau;
    if steps == 0 || target_tau == start_tau {
        return refine_fixed_point(fp, &params.with_tau(target_tau)?);
    }
    let mut current = fp.clone();
    let mut reached = start_tau;
    let mut pending: Vec<f64> = (1..=steps)
        .rev()
        .map(|i| start_tau + (target_tau - start_tau) * i as f64 / steps as f64)
        .collect();
    let mut splits = 0usize;
    while let Some(&tau_next) = pending.last() {
        let step_params = match params.with_tau(tau_next) {
            Ok(p) => p,
            Err(e) => {
                return Err(Error::ContinuationStalled {
                    reached,
                    target: target_tau,
                    reason: e.to_string(),
                })
            }
        };
        match refine_fixed_point(&current, &step_params) {
            Ok(next) => {
                let margin = window_margin(&next, &step_params)?;
                if margin <= 0.0 {
                    return Err(Error::WindowViolation {
                        tau: tau_next,
                        window: margin + tau_next,
                    });
                }
                current = next;
                reached = tau_next;
                pending.pop();
            }
            Err(_) if splits < 12 => {
                // Halve the offending step.
                let mid = 0.5 * (reached + tau_next);
                pending.push(mid);
                splits += 1;
            }
            Err(e) => {
                return Err(Error::ContinuationStalled {
                    reached,
                    target: target_tau,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(current)
}

/// Which linearization of the return dynamics to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// Perturb `(y, A)` inside the partially synchronized subspace.
    InSubspace,
    /// Split the given cluster (1-based) into `(n_k - 1, 1)` and perturb
    /// the singleton offset as an extra coordinate.
    Smeared { cluster: usize },
}

/// Finite-difference Jacobian of the return map at a fixed point.
///
/// In-subspace coordinates are `(y_1..y_{K-1}, A)`. The smeared mode adds
/// the singleton offset `eps` ahead of `A`; its column is one-sided
/// (offsets cannot be negative) and Richardson-extrapolated.
pub fn return_map_jacobian(
    fp: &ClusterState,
    params: &ParameterSet,
    mode: JacobianMode,
) -> Result<DMatrix<f64>> {
    let residual = fixed_point_residual(fp, params)?;
    if residual > 1e-10 {
        return Err(Error::Numerical(format!(
            "fixed-point residual {residual} too large for linearization"
        )));
    }
    match mode {
        JacobianMode::InSubspace => {
            let n = fp.n.clone();
            let map = |z: &[f64]| return_in_subspace(z, &n, params);
            solve::central_jacobian(&map, &pack(fp), FD_STEP)
        }
        JacobianMode::Smeared { cluster } => {
            let at_section = cluster::rotate_to_cluster(fp, params, cluster)?;
            smeared_jacobian_at_section(&at_section, params)
        }
    }
}

/// Smeared Jacobian with the section cluster split; coordinates
/// `(y_1..y_{K-1}, eps, A)`.
fn smeared_jacobian_at_section(
    fp: &ClusterState,
    params: &ParameterSet,
) -> Result<DMatrix<f64>> {
    let k = fp.k();
    let dim = k + 1;
    let eps_idx = k - 1;
    let n_in = fp.n.clone();

    // Map in smeared coordinates; eps = 0 falls back to the merged state.
    let eval = |z: &[f64]| -> Result<Vec<f64>> {
        let eps = z[eps_idx];
        let mut y_base: Vec<f64> = z[..k - 1].to_vec();
        y_base.push(0.0);
        let base = ClusterState::new(n_in.clone(), y_base, z[dim - 1])?;
        if eps == 0.0 {
            let out = cluster::return_map(&base, params)?;
            let mut packed = pack(&out);
            packed.insert(eps_idx, 0.0);
            return Ok(packed);
        }
        let smeared = base.smear_section(eps)?;
        let out = cluster::return_map(&smeared, params)?;
        // Output layout matches: (y_1..y_{K-1}, eps', 0) and A.
        let mut packed: Vec<f64> = out.y[..k].to_vec();
        packed.push(out.a);
        Ok(packed)
    };

    let mut z0 = pack(fp);
    z0.insert(eps_idx, 0.0);
    let f0 = eval(&z0)?;

    let mut jac = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        if j == eps_idx {
            for i in 0..dim {
                let g = |h: f64| -> Result<f64> {
                    let mut z = z0.clone();
                    z[eps_idx] = h;
                    Ok(eval(&z)?[i])
                };
                jac[(i, j)] = solve::one_sided_derivative(&g, f0[i], 1e-3)?;
            }
        } else {
            let column = |h: f64| -> Result<Vec<f64>> {
                let mut zp = z0.clone();
                let mut zm = z0.clone();
                zp[j] += h;
                zm[j] -= h;
                let fp_ = eval(&zp)?;
                let fm = eval(&zm)?;
                Ok(fp_
                    .iter()
                    .zip(&fm)
                    .map(|(p, m)| (p - m) / (2.0 * h))
                    .collect())
            };
            let c1 = column(FD_STEP)?;
            let c2 = column(FD_STEP / 2.0)?;
            for i in 0..dim {
                jac[(i, j)] = (4.0 * c2[i] - c1[i]) / 3.0;
            }
        }
    }
    Ok(jac)
}

/// One-sided multiplier of the smear offset of the given cluster under one
/// return: the diagonal entry of the smeared Jacobian in the `eps` slot.
pub fn smeared_multiplier(
    fp: &ClusterState,
    params: &ParameterSet,
    cluster: usize,
) -> Result<f64> {
    let at_section = cluster::rotate_to_cluster(fp, params, cluster)?;
    let k = at_section.k();
    let jac = smeared_jacobian_at_section(&at_section, params)?;
    Ok(jac[(k - 1, k - 1)])
}

/// The large-`beta` leading-order matrices of the equi-distributed firing
/// map: the exact derivative `M`, its limits `U`, `V`, the combination
/// `W = U^K + (1/beta) sum U^j V U^{K-1-j}`, and the spectra of `M^K`
/// and `W`.
#[derive(Debug, Clone)]
pub struct StabilityMatrices {
    pub m: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub spectrum_m_pow: Vec<Complex<f64>>,
    pub spectrum_w: Vec<Complex<f64>>,
}

/// Analytic firing-map derivative and its large-`beta` structure at an
/// equi-distributed fixed point with `k` equal clusters (`tau = 0`).
pub fn cluster_matrices(
    params: &ParameterSet,
    k: usize,
    fp: &ClusterState,
) -> Result<StabilityMatrices> {
    if params.tau != 0.0 {
        return Err(Error::ParameterCondition("cluster matrices require tau = 0".into()));
    }
    if fp.k() != k || k < 2 {
        return Err(Error::ParameterCondition(format!(
            "expected an equi-distributed state with {k} >= 2 clusters"
        )));
    }
    if fp.n.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::ParameterCondition(
            "cluster matrices assume equal cluster sizes".into(),
        ));
    }
    let kf = k as f64;
    let beta = params.beta;
    let a = fp.a;
    let t_fp = params.r + params.nu * a;
    let gap = t_fp / kf;
    let m0 = (kf + 1.0) * t_fp / (2.0 * kf);
    let e = (-beta * gap).exp();
    let one_m_e = -(-beta * gap).exp_m1();

    // Derivative of the firing map in coordinates (x_1..x_{K-1}, A).
    let mut m = DMatrix::zeros(k, k);
    m[(0, k - 2)] = -1.0;
    m[(0, k - 1)] = params.nu;
    for i in 1..k - 1 {
        m[(i, i - 1)] = 1.0;
        m[(i, k - 2)] += -1.0;
    }
    let d_shared = one_m_e / (beta * kf);
    for j in 0..k.saturating_sub(2) {
        m[(k - 1, j)] = d_shared;
    }
    m[(k - 1, k - 2)] = (m0 + 1.0 / beta - beta * a) * e - 1.0 / beta + d_shared;
    m[(k - 1, k - 1)] = e + params.nu * one_m_e / (beta * kf);

    let mut u = DMatrix::zeros(k, k);
    u[(0, k - 2)] = -1.0;
    u[(0, k - 1)] = params.nu;
    for i in 1..k - 1 {
        u[(i, i - 1)] = 1.0;
        u[(i, k - 2)] += -1.0;
    }

    let mut v = DMatrix::zeros(k, k);
    for j in 0..k.saturating_sub(2) {
        v[(k - 1, j)] = 1.0 / kf;
    }
    v[(k - 1, k - 2)] = -(kf - 1.0) / kf;
    v[(k - 1, k - 1)] = params.nu / kf;

    let u_pow = |p: usize| -> DMatrix<f64> {
        let mut acc = DMatrix::identity(k, k);
        for _ in 0..p {
            acc = &acc * &u;
        }
        acc
    };
    let mut w = u_pow(k);
    for j in 1..k {
        w += u_pow(j) * &v * u_pow(k - 1 - j) / beta;
    }

    let m_pow = {
        let mut acc = DMatrix::identity(k, k);
        for _ in 0..k {
            acc = &acc * &m;
        }
        acc
    };
    let spectrum_m_pow = solve::spectrum(&m_pow);
    let spectrum_w = solve::spectrum(&w);
    Ok(StabilityMatrices { m, u, v, w, spectrum_m_pow, spectrum_w })
}

/// Evaluation of the delay-stability criterion at one cluster's section.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterCriterion {
    /// 1-based cluster label in the input state.
    pub cluster: usize,
    /// Whether the cluster can be smeared at all (size >= 2).
    pub smearable: bool,
    /// Spectral radius inside the partially synchronized subspace.
    pub in_subspace_radius: f64,
    /// `T - y_1 - tau` at this cluster's section: positive iff the orbit
    /// has no firing in `[-tau, 0]`.
    pub window_margin: f64,
    /// `dA/dt` at `t = -tau` on the orbit, evaluated in closed form.
    pub a_derivative_before_firing: f64,
    /// All three conditions hold: in-subspace stability, firing-free
    /// window, and negative activator derivative at the lookback instant.
    pub stable_to_smearing: bool,
    /// Inapplicable when the window condition fails (no verdict implied).
    pub applicable: bool,
}

/// Delay-stability criterion (`tau > 0`): for each cluster, checks
/// in-subspace exponential stability, the firing-free window, and the sign
/// of the activator derivative at `t = -tau` on that cluster's section.
pub fn check_stability_criterion(
    fp: &ClusterState,
    params: &ParameterSet,
) -> Result<Vec<ClusterCriterion>> {
    if params.tau <= 0.0 {
        return Err(Error::ParameterCondition(
            "the delay-stability criterion applies for tau > 0".into(),
        ));
    }
    let residual = fixed_point_residual(fp, params)?;
    if residual > 1e-9 {
        return Err(Error::Numerical(format!(
            "not a return-map fixed point: residual {residual}"
        )));
    }
    let jac = return_map_jacobian(fp, params, JacobianMode::InSubspace)?;
    let rho_in = solve::spectral_radius(&jac);

    let mut out = Vec::with_capacity(fp.k());
    let mut rotated = fp.clone();
    for step in 0..fp.k() {
        // `rotated` has the cluster originally labelled K - step at the section.
        let label = fp.k() - step;
        let window = window_margin(&rotated, params)?;
        let mean_pre = rotated.mean();
        let a_back = crate::engine::backward_flow(rotated.a, mean_pre, params.tau, params.beta)?;
        let a_dot = (mean_pre + params.tau) - params.beta * a_back;
        let applicable = window > 0.0;
        out.push(ClusterCriterion {
            cluster: label,
            smearable: rotated.n[rotated.k() - 1] >= 2,
            in_subspace_radius: rho_in,
            window_margin: window,
            a_derivative_before_firing: a_dot,
            stable_to_smearing: rho_in < 1.0 && applicable && a_dot < 0.0,
            applicable,
        });
        if step + 1 < fp.k() {
            rotated = cluster::rotate_section(&rotated, params)?;
            if rotated.k() != fp.k() {
                return Err(Error::Numerical(
                    "clusters merged while rotating a fixed point".into(),
                ));
            }
        }
    }
    out.sort_by_key(|c| c.cluster);
    Ok(out)
}

/// Evaluation of the zero-delay instability criterion at the section.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InstabilityCheck {
    /// `dA/dt` immediately after the section firing.
    pub a_dot_after_firing: f64,
    /// `(R + nu A_fp) / N`.
    pub threshold: f64,
    /// `a_dot_after_firing - threshold`; instability iff positive.
    pub margin: f64,
    pub unstable: bool,
}

/// Zero-delay instability criterion: the fixed point is unstable to
/// smearing of the section cluster when the activator derivative right
/// after firing exceeds `(R + nu A_fp) / N`.
pub fn check_instability_criterion(
    fp: &ClusterState,
    params: &ParameterSet,
) -> Result<InstabilityCheck> {
    if params.tau != 0.0 {
        return Err(Error::ParameterCondition(
            "the instability criterion applies at tau = 0".into(),
        ));
    }
    let residual = fixed_point_residual(fp, params)?;
    if residual > 1e-9 {
        return Err(Error::Numerical(format!(
            "not a return-map fixed point: residual {residual}"
        )));
    }
    let nf = fp.population() as f64;
    let reset = params.r + params.nu * fp.a;
    let k = fp.k();
    let sum_ny: f64 = fp
        .n
        .iter()
        .zip(&fp.y)
        .map(|(&nk, &yk)| nk as f64 * yk)
        .sum();
    let mean_post = (sum_ny + fp.n[k - 1] as f64 * reset) / nf;
    let a_dot_after = mean_post - params.beta * fp.a;
    let threshold = reset / nf;
    let margin = a_dot_after - threshold;
    Ok(InstabilityCheck {
        a_dot_after_firing: a_dot_after,
        threshold,
        margin,
        unstable: margin > 0.0,
    })
}

/// Estimate of the degradation-rate threshold above which the
/// equi-distributed fixed point is stable in its own subspace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BetaThreshold {
    /// Largest scanned `beta` with in-subspace spectral radius >= 1, then
    /// bisected against the first stable value; `None` when the whole
    /// scanned range is already stable.
    pub beta_n: Option<f64>,
    pub scanned_from: f64,
    pub scanned_to: f64,
}

fn equi_radius_at(params: &ParameterSet, k: usize, beta: f64) -> Result<f64> {
    let p = ParameterSet::new(params.r, beta, params.nu, 0.0, params.n)?;
    let fp = equi_fixed_point(&p, k)?;
    let run = fp.params_for(&p)?;
    let jac = return_map_jacobian(&fp, &run, JacobianMode::InSubspace)?;
    Ok(solve::spectral_radius(&jac))
}

/// Scan `beta` over `[lo, hi]` (log grid) for the stability threshold of
/// the `k`-cluster equi-distributed fixed point, bisecting the last
/// unstable/stable pair.
pub fn estimate_beta_threshold(
    params: &ParameterSet,
    k: usize,
    lo: f64,
    hi: f64,
) -> Result<BetaThreshold> {
    let grid = 24usize;
    let mut last_unstable: Option<f64> = None;
    let mut first_stable_after: Option<f64> = None;
    for i in 0..=grid {
        let beta = lo * (hi / lo).powf(i as f64 / grid as f64);
        let rho = match equi_radius_at(params, k, beta) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if rho >= 1.0 {
            last_unstable = Some(beta);
            first_stable_after = None;
        } else if last_unstable.is_some() && first_stable_after.is_none() {
            first_stable_after = Some(beta);
        } else if last_unstable.is_none() && first_stable_after.is_none() {
            first_stable_after = Some(beta);
        }
    }
    let beta_n = match (last_unstable, first_stable_after) {
        (Some(mut bad), Some(mut good)) if bad < good => {
            for _ in 0..40 {
                let mid = (bad * good).sqrt();
                match equi_radius_at(params, k, mid) {
                    Ok(r) if r >= 1.0 => bad = mid,
                    Ok(_) => good = mid,
                    Err(_) => bad = mid,
                }
            }
            Some(good)
        }
        (Some(bad), _) => Some(bad), // unstable up to the top of the range
        (None, _) => None,
    };
    Ok(BetaThreshold { beta_n, scanned_from: lo, scanned_to: hi })
}

/// Largest delay (within `tau_max`, scanned in `step` increments) for which
/// the continued fixed point exists and passes the window and
/// derivative-sign conditions.
pub fn estimate_tau_sup(
    fp: &ClusterState,
    params: &ParameterSet,
    step: f64,
    tau_max: f64,
) -> Result<f64> {
    let mut reached = params.tau;
    let mut current = fp.clone();
    let mut tau = params.tau + step;
    while tau <= tau_max + 1e-12 {
        let from = match params.with_tau(reached) {
            Ok(p) => p,
            Err(_) => break,
        };
        match continue_fixed_point(&current, &from, tau, 1) {
            Ok(next) => {
                let p = match params.with_tau(tau) {
                    Ok(p) => p,
                    Err(_) => break,
                };
                match check_stability_criterion(&next, &p) {
                    Ok(criteria)
                        if criteria.iter().all(|c| c.applicable && c.stable_to_smearing) =>
                    {
                        current = next;
                        reached = tau;
                    }
                    _ => break,
                }
            }
            Err(_) => break,
        }
        tau += step;
    }
    Ok(reached)
}

/// Smallest cluster-size multiplier `q` making the zero-delay instability
/// margin positive, scanned over `1..=q_max`.
pub fn estimate_q0(fp: &ClusterState, params: &ParameterSet, q_max: u64) -> Result<Option<u64>> {
    for q in 1..=q_max {
        let scaled = fp.scaled(q);
        let p = scaled.params_for(params)?;
        let check = check_instability_criterion(&scaled, &p)?;
        if check.unstable {
            return Ok(Some(q));
        }
    }
    Ok(None)
}

/// Serializable record of one smeared-direction linearization.
#[derive(Debug, Clone, Serialize)]
pub struct SmearSpectrum {
    pub cluster: usize,
    pub multiplier: f64,
    pub spectrum: Vec<[f64; 2]>,
    pub spectral_radius: f64,
}

/// Full stability report for one fixed point: coordinates, spectra,
/// criterion evaluations, and the verdict per cluster.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub version: String,
    pub params: ParameterSet,
    pub fixed_point: ClusterState,
    pub residual: f64,
    pub in_subspace_spectrum: Vec<[f64; 2]>,
    pub in_subspace_radius: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub smeared: Vec<SmearSpectrum>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_criteria: Option<Vec<ClusterCriterion>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instability: Option<InstabilityCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_threshold: Option<BetaThreshold>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_sup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q0: Option<u64>,
    pub verdict: String,
}

/// Optional extras for [`stability_report`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    pub estimate_beta_n: bool,
    pub estimate_tau_sup: bool,
    pub estimate_q0: bool,
}

fn complex_pairs(spec: &[Complex<f64>]) -> Vec<[f64; 2]> {
    let mut v: Vec<[f64; 2]> = spec.iter().map(|c| [c.re, c.im]).collect();
    v.sort_by(|a, b| {
        (b[0] * b[0] + b[1] * b[1])
            .partial_cmp(&(a[0] * a[0] + a[1] * a[1]))
            .unwrap()
    });
    v
}

/// Assemble the full report for a validated fixed point.
pub fn stability_report(
    fp: &ClusterState,
    params: &ParameterSet,
    options: ReportOptions,
) -> Result<StabilityReport> {
    let residual = fixed_point_residual(fp, params)?;
    let jac = return_map_jacobian(fp, params, JacobianMode::InSubspace)?;
    let spectrum = solve::spectrum(&jac);
    let rho_in = spectrum.iter().map(|c| c.norm()).fold(0.0, f64::max);

    let mut smeared = Vec::new();
    for (idx, &nk) in fp.n.iter().enumerate() {
        if nk < 2 {
            continue;
        }
        let cluster = idx + 1;
        let sj = return_map_jacobian(fp, params, JacobianMode::Smeared { cluster })?;
        let spec = solve::spectrum(&sj);
        let at_section = cluster::rotate_to_cluster(fp, params, cluster)?;
        let multiplier = sj[(at_section.k() - 1, at_section.k() - 1)];
        smeared.push(SmearSpectrum {
            cluster,
            multiplier,
            spectral_radius: spec.iter().map(|c| c.norm()).fold(0.0, f64::max),
            spectrum: complex_pairs(&spec),
        });
    }

    let delay_criteria = if params.tau > 0.0 {
        Some(check_stability_criterion(fp, params)?)
    } else {
        None
    };
    let instability = if params.tau == 0.0 {
        Some(check_instability_criterion(fp, params)?)
    } else {
        None
    };

    let beta_threshold = if options.estimate_beta_n && fp.k() >= 2 {
        Some(estimate_beta_threshold(params, fp.k(), 0.5, 200.0)?)
    } else {
        None
    };
    let tau_sup = if options.estimate_tau_sup && params.tau > 0.0 {
        Some(estimate_tau_sup(fp, params, 0.01, params.r * 0.9)?)
    } else {
        None
    };
    let q0 = if options.estimate_q0 && params.tau == 0.0 {
        estimate_q0(fp, params, 64)?
    } else {
        None
    };

    let verdict = match (&instability, &delay_criteria) {
        (Some(check), _) if check.unstable => {
            format!("UNSTABLE to cluster smearing (margin {:.6e})", check.margin)
        }
        (Some(_), _) => "no instability certificate at tau = 0".to_string(),
        (_, Some(criteria)) => {
            if criteria.iter().all(|c| c.applicable && c.stable_to_smearing) {
                "STABLE to smearing of every cluster".to_string()
            } else if criteria.iter().any(|c| !c.applicable) {
                "criterion inapplicable for some clusters (window violated)".to_string()
            } else {
                "criterion fails for some clusters".to_string()
            }
        }
        _ => "no criterion evaluated".to_string(),
    };

    Ok(StabilityReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        params: *params,
        fixed_point: fp.clone(),
        residual,
        in_subspace_spectrum: complex_pairs(&spectrum),
        in_subspace_radius: rho_in,
        smeared,
        delay_criteria,
        instability,
        beta_threshold,
        tau_sup,
        q0,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1(tau: f64, n: usize) -> ParameterSet {
        ParameterSet::new(2.0, 1.0, 0.2, tau, n).unwrap()
    }

    #[test]
    fn sync_fixed_point_is_fixed_and_inside_interval() {
        for tau in [0.0, 0.1, 0.2] {
            let p = fig1(tau, 1);
            let s = sync_fixed_point(&p).unwrap();
            assert!(s.a0_tau < s.a_fp && s.a_fp < s.a_tau_max);
            let f = maps::f1(s.a_fp, &p).unwrap();
            assert!((f - s.a_fp).abs() <= 1e-12);
        }
    }

    #[test]
    fn f1_iterations_converge_monotonically_from_both_ends() {
        let p = fig1(0.2, 1);
        let s = sync_fixed_point(&p).unwrap();
        let mut lo = s.a0_tau;
        let mut hi = s.a_tau_max;
        for _ in 0..500 {
            let nlo = maps::f1(lo, &p).unwrap();
            let nhi = maps::f1(hi, &p).unwrap();
            assert!(nlo >= lo - 1e-15 && nhi <= hi + 1e-15, "monotone approach");
            lo = nlo;
            hi = nhi;
        }
        assert!((lo - s.a_fp).abs() < 1e-9);
        assert!((hi - s.a_fp).abs() < 1e-9);
    }

    #[test]
    fn tau0_fixed_point_below_half_rate_bound() {
        let p = fig1(0.0, 2);
        let s = sync_fixed_point(&p).unwrap();
        let bound = p.r / (2.0 * p.beta - p.nu);
        assert!(s.a_fp < bound, "{} vs {bound}", s.a_fp);
    }

    #[test]
    fn tanh_gap_is_negative() {
        // tanh(u) < u for u > 0, and at the reference parameters.
        for (r, beta, nu) in [(0.2, 1.0, 0.5), (2.0, 1.0, 0.2), (20.0, 1.0, 0.5)] {
            let p = ParameterSet { r, beta, nu, tau: 0.0, n: 2 };
            assert!(tanh_gap(&p) < 0.0);
        }
    }

    #[test]
    fn tanh_gap_small_u_series() {
        // tanh(u) - u ~ -u^3/3 as u -> 0.
        let u = 1e-3f64;
        // Pick parameters realizing this u: beta^2 R/(2 beta - nu) = u.
        let beta = 1.0;
        let nu = 0.5;
        let r = u * (2.0 * beta - nu) / (beta * beta);
        let p = ParameterSet { r, beta, nu, tau: 0.0, n: 2 };
        let got = tanh_gap(&p);
        let expected = -u * u * u / 3.0;
        assert!(((got - expected) / expected).abs() < 0.01, "{got} vs {expected}");
    }

    #[test]
    fn equi_f_reference_value() {
        let p = fig1(0.0, 2);
        let f0 = equi_f(0.0, &p, 2);
        let expected = (5.0 * (1.0 - (-1.0f64).exp()) - 2.0) / 2.0;
        assert!((f0 - expected).abs() < 1e-12, "{f0} vs {expected}");
        assert!((f0 - equi_g(p.beta * p.r, 2) / (p.beta * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn equi_fixed_point_has_single_root_and_even_spacing() {
        for k in 2..=5 {
            let p = fig1(0.0, k);
            let a_max = p.a_max();
            assert!(equi_f(0.0, &p, k) > 0.0);
            assert!(equi_f(a_max, &p, k) < 0.0);
            // At most one sign change over a fine grid.
            let grid = 100_000;
            let mut changes = 0;
            let mut prev = equi_f(1e-12, &p, k);
            for i in 1..=grid {
                let a = a_max * i as f64 / grid as f64;
                let val = equi_f(a, &p, k);
                if val.signum() != prev.signum() {
                    changes += 1;
                }
                prev = val;
            }
            assert_eq!(changes, 1, "k = {k}");

            let fp = equi_fixed_point(&p, k).unwrap();
            let gap = (p.r + p.nu * fp.a) / k as f64;
            for w in fp.y.windows(2) {
                assert!((w[0] - w[1] - gap).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refine_fixed_point_reaches_newton_tolerance() {
        let p = fig1(0.0, 2);
        let fp = equi_fixed_point(&p, 2).unwrap();
        let mut rough = fp.clone();
        rough.y[0] += 1e-4;
        rough.a += 1e-4;
        let run = rough.params_for(&p).unwrap();
        let refined = refine_fixed_point(&rough, &run).unwrap();
        assert!(fixed_point_residual(&refined, &run).unwrap() <= NEWTON_TOL);
        assert!((refined.a - fp.a).abs() < 1e-9);
    }

    #[test]
    fn continuation_to_zero_is_identity() {
        let p = fig1(0.0, 2);
        let fp = equi_fixed_point(&p, 2).unwrap();
        let run = fp.params_for(&p).unwrap();
        let back = continue_fixed_point(&fp, &run, 0.0, 0).unwrap();
        assert!((back.a - fp.a).abs() < 1e-11);
    }

    #[test]
    fn continued_sync_fp_matches_explicit_map() {
        // Continue the synchronized fixed point from tau = 0 to 0.2 and
        // compare with the closed-form F_1 fixed point at tau = 0.2.
        let p0 = fig1(0.0, 4);
        let s0 = sync_fixed_point(&p0).unwrap();
        let fp0 = ClusterState {
            n: vec![4],
            y: vec![0.0],
            a: s0.a_fp,
            period: Some(s0.period),
        };
        let continued = continue_fixed_point(&fp0, &p0, 0.2, 8).unwrap();
        let p2 = fig1(0.2, 1);
        let s2 = sync_fixed_point(&p2).unwrap();
        assert!((continued.a - s2.a_fp).abs() < 1e-11, "{} vs {}", continued.a, s2.a_fp);
    }

    #[test]
    fn continued_equi_fp_keeps_even_spacing() {
        let p0 = fig1(0.0, 2);
        let fp0 = equi_fixed_point(&p0, 2).unwrap();
        let run0 = fp0.params_for(&p0).unwrap();
        let tau = 0.15;
        let continued = continue_fixed_point(&fp0, &run0, tau, 6).unwrap();
        let run = run0.with_tau(tau).unwrap();
        let t_fp = continued.reset_value(&run).unwrap();
        let gap = t_fp / 2.0;
        assert!((continued.y[0] - gap).abs() < 1e-9, "{} vs {gap}", continued.y[0]);
    }

    #[test]
    fn sync_jacobian_is_f1_derivative() {
        let p = fig1(0.2, 1);
        let s = sync_fixed_point(&p).unwrap();
        let fp = ClusterState { n: vec![1], y: vec![0.0], a: s.a_fp, period: Some(s.period) };
        let jac = return_map_jacobian(&fp, &p, JacobianMode::InSubspace).unwrap();
        let expected = maps::df1(s.a_fp, &p).unwrap();
        assert!((jac[(0, 0)] - expected).abs() < 1e-7, "{} vs {expected}", jac[(0, 0)]);
        assert!(expected > 0.0 && expected < 1.0);
    }

    #[test]
    fn instability_margin_matches_synchronized_formula() {
        let p = fig1(0.0, 10);
        let s = sync_fixed_point(&p).unwrap();
        let fp = ClusterState { n: vec![10], y: vec![0.0], a: s.a_fp, period: Some(s.period) };
        let check = check_instability_criterion(&fp, &p).unwrap();
        // (N-1)/N (R + nu A) - beta A, the synchronized special case.
        let expected = 9.0 / 10.0 * (p.r + p.nu * s.a_fp) - p.beta * s.a_fp;
        assert!((check.margin - expected).abs() < 1e-12);
        assert!(check.unstable);
    }

    #[test]
    fn matrices_kernel_vector_and_w_spectrum() {
        let p = ParameterSet::new(2.0, 1.0, 0.2, 0.0, 3).unwrap();
        for k in 2..=5 {
            let pk = ParameterSet::new(2.0, 1.0, 0.2, 0.0, k).unwrap();
            let fp = equi_fixed_point(&pk, k).unwrap();
            let mats = cluster_matrices(&pk, k, &fp).unwrap();
            let mut kernel = DVector::from_element(k, p.nu);
            kernel[k - 1] = 1.0;
            assert!((&mats.u * &kernel).norm() < 1e-14);
            assert!((&mats.v * &kernel).norm() < 1e-14);
            // Spectrum {0} plus 1 - nu/beta with multiplicity k - 1.
            let mut norms: Vec<f64> = mats.spectrum_w.iter().map(|c| c.norm()).collect();
            norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(norms[0] < 1e-10);
            for &nrm in &norms[1..] {
                assert!((nrm - (1.0 - pk.nu / pk.beta)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn m_converges_to_u_plus_v_over_beta() {
        let k = 3;
        let mut prev = f64::INFINITY;
        for beta in [10.0, 100.0, 1000.0] {
            let p = ParameterSet::new(2.0, beta, 0.2, 0.0, k).unwrap();
            let fp = equi_fixed_point(&p, k).unwrap();
            let mats = cluster_matrices(&p, k, &fp).unwrap();
            let diff = (&mats.m - &mats.u - &mats.v / beta).abs().max() * beta;
            assert!(diff < prev, "beta {beta}: {diff} !< {prev}");
            prev = diff;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn q0_scan_finds_threshold() {
        // The synchronized fixed point is unstable already at q = 2
        // (two oscillators), and a singleton population has no margin.
        let p = fig1(0.0, 1);
        let s = sync_fixed_point(&p).unwrap();
        let fp = ClusterState { n: vec![1], y: vec![0.0], a: s.a_fp, period: Some(s.period) };
        let q0 = estimate_q0(&fp, &p, 64).unwrap();
        assert_eq!(q0, Some(2));
    }
}
