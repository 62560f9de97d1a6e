//! Tri-band power splitting and the stack / ES control loops.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::PerUnitBase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiquadKind {
    Highpass,
    Bandpass,
    Lowpass,
}

/// Second-order section discretised with the bilinear transform
/// (transposed direct form II).
#[derive(Debug, Clone, PartialEq)]
pub struct Biquad {
    pub kind: BiquadKind,
    pub omega_n: f64,
    pub zeta: f64,
    pub dt: f64,
    b: [f64; 3],
    a: [f64; 2],
    state: [f64; 2],
}

impl Biquad {
    pub fn new(kind: BiquadKind, omega_n: f64, zeta: f64, dt: f64) -> Result<Self> {
        if !(omega_n > 0.0 && zeta > 0.0 && dt > 0.0) {
            return Err(Error::Precondition(format!(
                "biquad needs omega_n, zeta, dt > 0 (got {omega_n}, {zeta}, {dt})"
            )));
        }
        let k = 2.0 / dt;
        let (w, z) = (omega_n, zeta);
        let a0 = k * k + 2.0 * z * w * k + w * w;
        let a1 = 2.0 * w * w - 2.0 * k * k;
        let a2 = k * k - 2.0 * z * w * k + w * w;
        let b = match kind {
            BiquadKind::Highpass => [k * k, -2.0 * k * k, k * k],
            BiquadKind::Bandpass => [2.0 * z * w * k, 0.0, -2.0 * z * w * k],
            BiquadKind::Lowpass => [w * w, 2.0 * w * w, w * w],
        };
        Ok(Self {
            kind,
            omega_n,
            zeta,
            dt,
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a1 / a0, a2 / a0],
            state: [0.0; 2],
        })
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.state[0];
        self.state[0] = self.b[1] * x - self.a[0] * y + self.state[1];
        self.state[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    /// Steady-state output for a constant input.
    pub fn dc_gain(&self) -> f64 {
        // exact for the bilinear map (z = 1 is s = 0); the normalised
        // coefficient sums lose digits for small omega_n dt
        match self.kind {
            BiquadKind::Lowpass => 1.0,
            BiquadKind::Highpass | BiquadKind::Bandpass => 0.0,
        }
    }

    /// Load the internal state as if `x` had been applied forever.
    pub fn prime(&mut self, x: f64) {
        let y = self.dc_gain() * x;
        self.state[1] = self.b[2] * x - self.a[1] * y;
        self.state[0] = self.b[1] * x - self.a[0] * y + self.state[1];
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }

    /// Magnitude of the continuous prototype at `omega` rad/s.
    pub fn analog_magnitude(&self, omega: f64) -> f64 {
        let (w, z) = (self.omega_n, self.zeta);
        let re = w * w - omega * omega;
        let im = 2.0 * z * w * omega;
        let den = (re * re + im * im).sqrt();
        let num = match self.kind {
            BiquadKind::Highpass => omega * omega,
            BiquadKind::Bandpass => 2.0 * z * w * omega,
            BiquadKind::Lowpass => w * w,
        };
        num / den
    }
}

/// How the high band delivered to the double layer is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighBand {
    /// `P_s - P_m - P_L`, so the three bands sum to the input.
    Complement,
    /// Output of the high-pass section.
    Filter,
    /// The stack reference carries no high band.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub omega_h: f64,
    pub zeta_h: f64,
    pub omega_m: f64,
    pub zeta_m: f64,
    #[serde(rename = "omega_L")]
    pub omega_l: f64,
    #[serde(rename = "zeta_L")]
    pub zeta_l: f64,
    pub high_band: HighBand,
    /// Bound on the inductor power `L i di/dt` the high-band command may
    /// demand from the bus, W. The command is rate limited to
    /// `limit V_stack / (L i)`.
    pub high_band_reactive_limit: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            omega_h: 20.0 * PI,
            zeta_h: 0.707,
            omega_m: 2.0 * PI,
            zeta_m: 0.707,
            omega_l: 0.2 * PI,
            zeta_l: 0.77,
            high_band: HighBand::Filter,
            high_band_reactive_limit: 2e4,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_l < self.omega_m && self.omega_m < self.omega_h) {
            return Err(Error::Invalid("filter cutoffs must satisfy omega_L < omega_m < omega_h".into()));
        }
        if !(self.zeta_h > 0.0 && self.zeta_m > 0.0 && self.zeta_l > 0.0 && self.omega_l > 0.0) {
            return Err(Error::Invalid("filter damping ratios and cutoffs must be positive".into()));
        }
        if !(self.high_band_reactive_limit >= 0.0) {
            return Err(Error::Invalid("high_band_reactive_limit must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[allow(non_snake_case)]
pub struct SplitPowers {
    pub P_h: f64,
    pub P_m: f64,
    pub P_L: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub high: Biquad,
    pub mid: Biquad,
    pub low: Biquad,
}

impl FilterBank {
    pub fn new(p: &FilterParams, dt: f64) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            high: Biquad::new(BiquadKind::Highpass, p.omega_h, p.zeta_h, dt)?,
            mid: Biquad::new(BiquadKind::Bandpass, p.omega_m, p.zeta_m, dt)?,
            low: Biquad::new(BiquadKind::Lowpass, p.omega_l, p.zeta_l, dt)?,
        })
    }

    pub fn prime(&mut self, x: f64) {
        self.high.prime(x);
        self.mid.prime(x);
        self.low.prime(x);
    }
}

/// Advance every band by one sample of `p_s`.
pub fn filter_step(bank: &mut FilterBank, p_s: f64, dt: f64) -> Result<SplitPowers> {
    let f_h = bank.high.omega_n / (2.0 * PI);
    if dt > 1.0 / (10.0 * f_h) {
        return Err(Error::Precondition(format!(
            "dt {dt} exceeds 1/(10 f_h) = {}",
            1.0 / (10.0 * f_h)
        )));
    }
    if (dt - bank.high.dt).abs() > 1e-15 {
        return Err(Error::Precondition("dt differs from the bank discretisation step".into()));
    }
    Ok(SplitPowers {
        P_h: bank.high.step(p_s),
        P_m: bank.mid.step(p_s),
        P_L: bank.low.step(p_s),
    })
}

/// PI controller with clamped output and conditional integration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pi {
    pub kp: f64,
    pub ki: f64,
    pub integ: f64,
}

impl Pi {
    pub fn new(kp: f64, ki: f64) -> Self {
        Self { kp, ki, integ: 0.0 }
    }

    /// Returns the clamped output and whether clamping was active. The
    /// integrator is frozen while clamped unless the error unwinds it.
    pub fn step(&mut self, e: f64, dt: f64, lo: f64, hi: f64) -> (f64, bool) {
        let trial = self.integ + e * dt;
        let u = self.kp * e + self.ki * trial;
        if u > hi {
            if e < 0.0 {
                self.integ = trial;
            }
            (hi, true)
        } else if u < lo {
            if e > 0.0 {
                self.integ = trial;
            }
            (lo, true)
        } else {
            self.integ = trial;
            (u, false)
        }
    }

    pub fn output(&self, e: f64) -> f64 {
        self.kp * e + self.ki * self.integ
    }
}

/// Control gains; names follow the usual symbol table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct LoopGains {
    /// Stack current loop, duty per A.
    pub K_p: f64,
    /// Stack current loop, duty per A s.
    pub K_i: f64,
    /// Stack power loop, pu.
    pub K_p1: f64,
    pub K_i1: f64,
    /// ES voltage loop, pu.
    pub K_p2: f64,
    pub K_i2: f64,
    /// ES current loop, pu.
    pub K_p3: f64,
    pub K_i3: f64,
    /// Extra ES current authority of the voltage loop beyond the
    /// feedforward, as a fraction of the ES power rating.
    pub es_headroom: f64,
    /// Rate (1/s) at which the ES voltage target pulls the VSM integrator
    /// back to zero, restoring nominal frequency while the ES has headroom.
    pub xi_restore: f64,
    /// Bound on that target offset as a fraction of nominal V_dc.
    pub xi_restore_limit: f64,
    /// Division guard for `P / V_stack`, V.
    pub v_stack_floor: f64,
    pub v_dc_floor: f64,
    pub edl_feedforward: bool,
}

impl Default for LoopGains {
    fn default() -> Self {
        Self {
            K_p: 0.02,
            K_i: 15.0,
            K_p1: 0.3,
            K_i1: 10.0,
            K_p2: 0.715,
            K_i2: 10.0,
            K_p3: 3.0,
            K_i3: 100.0,
            es_headroom: 0.1,
            xi_restore: 2.0,
            xi_restore_limit: 0.015,
            v_stack_floor: 100.0,
            v_dc_floor: 100.0,
            edl_feedforward: true,
        }
    }
}

impl LoopGains {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.K_p, self.K_i, self.K_p1, self.K_i1, self.K_p2, self.K_i2, self.K_p3, self.K_i3, self.xi_restore, self.xi_restore_limit,
        ];
        if all.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Invalid("loop gains must be nonnegative".into()));
        }
        if !(self.v_stack_floor > 0.0 && self.v_dc_floor > 0.0 && self.es_headroom >= 0.0) {
            return Err(Error::Invalid("loop floors must be positive".into()));
        }
        Ok(())
    }
}

/// Symmetric rate limiter.
pub fn rate_limit(target: f64, previous: f64, max_step: f64) -> f64 {
    previous + (target - previous).clamp(-max_step, max_step)
}

/// Power loop feeding the stack current reference.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StackPowerLoop {
    pub pi: Pi,
    /// Ramp-limited low-band power command, W.
    pub p_cmd: f64,
    /// Last current reference, A.
    pub i_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLoopOutput {
    pub i_ref: f64,
    pub p_cmd: f64,
    /// `V_stack` was below the floor; the reference was frozen.
    pub frozen: bool,
    pub slew_clamped: bool,
}

pub struct PowerLoopLimits {
    /// W/s; `None` bypasses the ramp.
    pub ramp: Option<f64>,
    /// Largest rise rate of the current reference, A/s.
    pub slew: f64,
    /// Largest fall rate; `None` uses `slew`.
    pub slew_down: Option<f64>,
    pub v_floor: f64,
    /// Upper bound on the current reference, A.
    pub i_max: f64,
    /// Keep the integrator still, e.g. while the current loop is saturated.
    pub hold: bool,
}

impl StackPowerLoop {
    pub fn new(gains: &LoopGains, base: &PerUnitBase) -> Self {
        // pu gains: dI/I_base = K (dP/S_base)
        let k = base.i_base() / base.s_base;
        Self {
            pi: Pi::new(gains.K_p1 * k, gains.K_i1 * k),
            p_cmd: 0.0,
            i_ref: 0.0,
        }
    }

    /// `I_ref = P / V_stack + PI(P - V_stack i_L)` with `P` the ramp-limited
    /// low band plus the additive high-band command, then slew-limited.
    pub fn step(&mut self, p_low: f64, p_high: f64, v_stack: f64, i_l: f64, dt: f64, lim: &PowerLoopLimits) -> PowerLoopOutput {
        self.p_cmd = match lim.ramp {
            Some(r) => rate_limit(p_low, self.p_cmd, r * dt),
            None => p_low,
        };
        if v_stack < lim.v_floor {
            return PowerLoopOutput {
                i_ref: self.i_ref,
                p_cmd: self.p_cmd,
                frozen: true,
                slew_clamped: false,
            };
        }
        let target = (self.p_cmd + p_high).max(0.0);
        let ff = target / v_stack;
        let corr = if lim.hold {
            // the branch cannot follow; a proportional kick here would only
            // drag the reference away from where the current is heading
            (self.pi.ki * self.pi.integ).clamp(-ff, lim.i_max - ff)
        } else {
            self.pi.step(target - v_stack * i_l, dt, -ff, lim.i_max - ff).0
        };
        let raw = (ff + corr).clamp(0.0, lim.i_max);
        let down = lim.slew_down.unwrap_or(lim.slew);
        let limited = self.i_ref + (raw - self.i_ref).clamp(-down * dt, lim.slew * dt);
        let slew_clamped = limited != raw;
        self.i_ref = limited;
        PowerLoopOutput {
            i_ref: limited,
            p_cmd: self.p_cmd,
            frozen: false,
            slew_clamped,
        }
    }
}

/// Stateless form of the power loop for a single evaluation.
pub fn stack_power_loop(p_l: f64, v_stack: f64, i_l: f64, integ: f64, gains: &LoopGains, base: &PerUnitBase) -> Result<f64> {
    if v_stack < gains.v_stack_floor {
        return Err(Error::Precondition(format!(
            "V_stack {v_stack} below floor {}",
            gains.v_stack_floor
        )));
    }
    let k = base.i_base() / base.s_base;
    let e = p_l - v_stack * i_l;
    Ok(p_l / v_stack + gains.K_p1 * k * e + gains.K_i1 * k * integ)
}

/// Duty correction `-L_stack / V_dc * dV_dl/dt`.
pub fn edl_feedforward(dv_dl_dt: f64, v_dc: f64, l_stack: f64, v_floor: f64) -> Result<f64> {
    if v_dc < v_floor {
        return Err(Error::Precondition(format!("V_dc {v_dc} below floor {v_floor}")));
    }
    Ok(-l_stack / v_dc * dv_dl_dt)
}

/// Stack current loop: `D = K_p (I_ref - i) + K_i gamma`, `gamma' = I_ref - i`.
pub fn stack_current_loop(pi: &mut Pi, i_ref: f64, i_l: f64, dt: f64, lo: f64, hi: f64) -> (f64, bool) {
    pi.step(i_ref - i_l, dt, lo, hi)
}

/// ES outer voltage loop, returning the PI part of the battery current
/// reference in A, clamped to `+/- limit`.
pub fn es_voltage_loop(v_ref: f64, v_dc: f64, pi: &mut Pi, dt: f64, limit: f64) -> (f64, bool) {
    pi.step(v_ref - v_dc, dt, -limit, limit)
}

/// Voltage-loop PI in SI units from pu gains.
pub fn es_voltage_pi(gains: &LoopGains, base: &PerUnitBase) -> Pi {
    let k = base.i_base() / base.v_base;
    Pi::new(gains.K_p2 * k, gains.K_i2 * k)
}

/// Current-loop PI in SI units (duty per A) from pu gains.
pub fn es_current_pi(gains: &LoopGains, base: &PerUnitBase) -> Pi {
    let k = 1.0 / base.i_base();
    Pi::new(gains.K_p3 * k, gains.K_i3 * k)
}

/// ES inner current loop: `D_b = bias + PI(I_ref - i_b)`, clamped to the
/// duty range with the integrator frozen while clamped.
pub fn es_current_loop(i_ref: f64, i_b: f64, bias: f64, pi: &mut Pi, dt: f64, duty_min: f64, duty_max: f64) -> (f64, bool) {
    let (u, clamped) = pi.step(i_ref - i_b, dt, duty_min - bias, duty_max - bias);
    (bias + u, clamped)
}

/// Crossover of the ES voltage loop against the DC capacitance,
/// `|K(jw)| / (w C) = 1`, solved by bisection (rad/s).
pub fn voltage_loop_crossover(kp: f64, ki: f64, c_dc: f64) -> f64 {
    let mag = |w: f64| (kp * kp + (ki / w).powi(2)).sqrt() / (w * c_dc);
    let (mut lo, mut hi) = (1e-6_f64, 1e9_f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mag(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}
