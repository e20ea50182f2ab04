//! Model parameters and the inequalities they must satisfy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four model parameters plus the population size.
///
/// `R` is the base reset concentration, `beta` the activator degradation
/// rate, `nu` the activator-to-reset coupling gain, `tau` the synthesis
/// delay (repressor decay rate is normalized to 1), and `n` the number of
/// oscillators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub r: f64,
    pub beta: f64,
    pub nu: f64,
    pub tau: f64,
    pub n: usize,
}

impl ParameterSet {
    /// Build a parameter set, checking every required inequality:
    /// positivity, `nu < beta`, `tau < R`, and the effective-reset
    /// conditions `R_tau > 0`, `nu_tau < beta`.
    pub fn new(r: f64, beta: f64, nu: f64, tau: f64, n: usize) -> Result<Self> {
        let p = ParameterSet { r, beta, nu, tau, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::ParameterCondition(format!("R must be > 0, got {}", self.r)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::ParameterCondition(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::ParameterCondition(format!("nu must be > 0, got {}", self.nu)));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::ParameterCondition(format!(
                "tau must be >= 0, got {}",
                self.tau
            )));
        }
        if self.n < 1 {
            return Err(Error::ParameterCondition("N must be >= 1".into()));
        }
        if !(self.nu < self.beta) {
            return Err(Error::ParameterCondition(format!(
                "nu < beta required, got nu = {}, beta = {}",
                self.nu, self.beta
            )));
        }
        if !(self.tau < self.r) {
            return Err(Error::ParameterCondition(format!(
                "tau < R required, got tau = {}, R = {}",
                self.tau, self.r
            )));
        }
        // Effective reset coefficients must stay in the contracting regime.
        let (r_tau, nu_tau) = self.reset_coefficients_unchecked();
        if !(r_tau > 0.0) {
            return Err(Error::ParameterCondition(format!(
                "R_tau must be > 0, got {r_tau} (R = {}, beta = {}, nu = {}, tau = {})",
                self.r, self.beta, self.nu, self.tau
            )));
        }
        if !(nu_tau < self.beta) {
            return Err(Error::ParameterCondition(format!(
                "nu_tau < beta required, got nu_tau = {nu_tau}, beta = {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Effective reset coefficients `(R_tau, nu_tau)` such that the reset
    /// concentration at any firing equals `R_tau + nu_tau * A` where `A` is
    /// the activator value at the firing instant.
    ///
    /// `R_tau = R + nu (1 + beta tau - e^{beta tau}) / beta^2`,
    /// `nu_tau = nu e^{beta tau}`. The first factor is computed through
    /// `exp_m1` so the `tau -> 0` cancellation stays accurate.
    pub(crate) fn reset_coefficients_unchecked(&self) -> (f64, f64) {
        let bt = self.beta * self.tau;
        // 1 + bt - e^{bt} = bt - expm1(bt)
        let r_tau = self.r + self.nu * (bt - bt.exp_m1()) / (self.beta * self.beta);
        let nu_tau = self.nu * bt.exp();
        (r_tau, nu_tau)
    }

    /// Upper bound of the attracting activator range, `A_max = R / (beta - nu)`.
    pub fn a_max(&self) -> f64 {
        self.r / (self.beta - self.nu)
    }

    /// Upper bound of the attracting repressor range, `R + nu A_max`.
    pub fn x_max(&self) -> f64 {
        self.r + self.nu * self.a_max()
    }

    /// Whether `nu < beta / (1 + beta R)` holds, which guarantees that the
    /// cyclic order in which the oscillators fire is preserved.
    pub fn preserves_firing_order(&self) -> bool {
        self.nu < self.beta / (1.0 + self.beta * self.r)
    }

    /// Error unless the order-preservation inequality holds.
    pub fn ensure_order_preservation(&self) -> Result<()> {
        if self.preserves_firing_order() {
            Ok(())
        } else {
            Err(Error::ParameterCondition(format!(
                "order preservation requires nu < beta/(1 + beta R) = {}, got nu = {}",
                self.beta / (1.0 + self.beta * self.r),
                self.nu
            )))
        }
    }

    /// Same parameters with a different delay.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        ParameterSet::new(self.r, self.beta, self.nu, tau, self.n)
    }

    /// Same parameters with a different population size.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        ParameterSet::new(self.r, self.beta, self.nu, self.tau, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_reference_regime() {
        let p = ParameterSet::new(2.0, 1.0, 0.2, 0.2, 10).unwrap();
        assert!(p.preserves_firing_order());
        assert!((p.a_max() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_nu_ge_beta() {
        assert!(ParameterSet::new(2.0, 1.0, 1.0, 0.0, 4).is_err());
        assert!(ParameterSet::new(2.0, 1.0, 1.5, 0.0, 4).is_err());
    }

    #[test]
    fn rejects_tau_ge_r() {
        assert!(ParameterSet::new(2.0, 1.0, 0.2, 2.0, 4).is_err());
    }

    #[test]
    fn rejects_nu_tau_ge_beta() {
        // nu e^{beta tau} grows past beta for large beta*tau.
        assert!(ParameterSet::new(2.0, 50.0, 0.2, 0.3, 4).is_err());
    }
}
