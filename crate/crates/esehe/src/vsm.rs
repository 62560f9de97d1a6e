//! DC-link synchronising virtual synchronous machine for the AC/DC stage.
//!
//! The engine and the linear model use the voltage-driven frequency law
//! `omega = omega_0 + K_J xi + K_D dV` with `dV = V_ref - V_dc`, plus the
//! power-voltage droop as a direct power term `G (V_ref - V_dc)` with
//! `G = K_droop * S_base` W/V. Positive AC power flows into the DC bus.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct VsmParams {
    /// rad/s per (V s)
    pub K_J: f64,
    /// rad/s per V
    pub K_D: f64,
    /// pu of S_base per volt
    pub K_droop: f64,
    pub omega_0: f64,
    pub V_dc_ref: f64,
    /// EMS power setpoint, W.
    pub P_0: f64,
    /// Q-V droop, V per var.
    pub k_q: f64,
    /// Synchronising coefficient, W/rad.
    pub K_delta: f64,
    /// Line-to-line AC voltage reference, V.
    pub V_acref: f64,
    /// Power base, VA.
    pub S_base: f64,
}

impl Default for VsmParams {
    fn default() -> Self {
        Self {
            K_J: 1.0,
            K_D: 0.1,
            K_droop: 0.002,
            omega_0: 2.0 * PI * 50.0,
            V_dc_ref: 1000.0,
            P_0: 0.0,
            k_q: 0.0,
            K_delta: 1.0e7,
            V_acref: 35_000.0,
            S_base: 6.63e6,
        }
    }
}

impl VsmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.K_J > 0.0 && self.K_D > 0.0 && self.K_droop > 0.0 && self.K_delta > 0.0) {
            return Err(Error::Invalid("vsm K_J, K_D, K_droop, K_delta must be positive".into()));
        }
        if !(self.omega_0 > 0.0 && self.V_dc_ref > 0.0 && self.S_base > 0.0) {
            return Err(Error::Invalid("vsm omega_0, V_dc_ref, S_base must be positive".into()));
        }
        Ok(())
    }

    /// Power-voltage droop gain in W/V.
    pub fn droop_gain(&self) -> f64 {
        self.K_droop * self.S_base
    }

    /// Line reactance implied by `K_delta = V_acref^2 / X`.
    pub fn line_reactance(&self) -> f64 {
        self.V_acref * self.V_acref / self.K_delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VsmState {
    /// Integral of `V_ref - V_dc`, V s.
    pub xi: f64,
    pub omega: f64,
    /// Internal angle, wrapped to [-pi, pi).
    pub theta: f64,
}

impl VsmState {
    pub fn at_rest(p: &VsmParams) -> Self {
        Self {
            xi: 0.0,
            omega: p.omega_0,
            theta: 0.0,
        }
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Advance the `V_ref - V_dc` integral by `dt` and return the frequency
/// reference.
pub fn vsm_frequency(dv: f64, state: &VsmState, p: &VsmParams, dt: f64) -> Result<(f64, VsmState)> {
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
    }
    let xi = state.xi + dv * dt;
    let omega = p.omega_0 + p.K_J * xi + p.K_D * dv;
    Ok((omega, VsmState { xi, omega, ..*state }))
}

/// `P_ref = P_0 + G (V_ref - V_dc)`.
pub fn power_droop(v_dc: f64, p: &VsmParams) -> f64 {
    p.P_0 + p.droop_gain() * (p.V_dc_ref - v_dc)
}

/// One exact step of the per-unit swing law `(K_J s + K_D) dw = (P_ref - P_e)/S_base`,
/// with `dw` in pu of `omega_0`. Returns (frequency deviation rad/s, theta, state).
pub fn swing_step(p_ref: f64, p_e: f64, state: &VsmState, p: &VsmParams, dt: f64) -> Result<(f64, f64, VsmState)> {
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
    }
    let dw0 = (state.omega - p.omega_0) / p.omega_0;
    let target = (p_ref - p_e) / p.S_base / p.K_D;
    let tau = p.K_J / p.K_D;
    let a = (-dt / tau).exp();
    let dw1 = target + (dw0 - target) * a;
    // exact integral of the first-order response over the step
    let area = target * dt + (dw0 - target) * tau * (1.0 - a);
    let theta = wrap_angle(state.theta + p.omega_0 * dt + p.omega_0 * area);
    let omega = p.omega_0 * (1.0 + dw1);
    let next = VsmState { omega, theta, ..*state };
    Ok((omega - p.omega_0, theta, next))
}

/// Large-signal AC power into the DC side, `K_delta sin(theta - delta)`.
pub fn ac_power(theta: f64, delta_grid: f64, p: &VsmParams) -> f64 {
    p.K_delta * (theta - delta_grid).sin()
}

/// Small-signal form `K_delta (theta - delta)`.
pub fn ac_power_linear(theta: f64, delta_grid: f64, p: &VsmParams) -> f64 {
    p.K_delta * (theta - delta_grid)
}

/// `V1 V2 / X`.
pub fn k_delta_from_line(v1: f64, v2: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Precondition(format!("line reactance must be positive, got {x}")));
    }
    Ok(v1 * v2 / x)
}

/// Q-V droop voltage reference.
pub fn ac_voltage_ref(q: f64, p: &VsmParams) -> f64 {
    p.V_acref - p.k_q * q
}
