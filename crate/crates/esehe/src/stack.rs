//! Alkaline electrolysis stack: U-I curve, double layer and DC/DC branch.
//!
//! Circuit used throughout: the branch inductor feeds an output capacitor
//! `C_out` across the stack terminals. Behind the terminals sit the lye
//! shunt `R_1`, and in the cell path the ohmic resistance in series with the
//! electrode interface. The interface holds the reversible voltage plus the
//! activation voltage `V_dl`; the double-layer capacitance carries the
//! difference between the cell current and the faradaic current.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FARADAY: f64 = 96_485.332_12;
pub const GAS_CONSTANT: f64 = 8.314_462_618;

/// How the per-area double-layer capacitance is aggregated over the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdlAggregation {
    /// `C_dl * area`: one lumped interface for the whole stack.
    Lumped,
    /// `C_dl * area / N_cell`: cells in series.
    Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct StackParams {
    /// F/cm^2
    pub C_dl: f64,
    /// V per cell at the reference state
    #[serde(rename = "U_rev")]
    pub U_rev0: f64,
    /// ohm cm^2
    pub R_ohm: f64,
    /// A/cm^2
    pub I_exchange: f64,
    pub K_act: f64,
    pub N_cell: u32,
    /// cm^2
    pub area: f64,
    /// K
    pub T: f64,
    pub p_H2: f64,
    pub p_O2: f64,
    pub a_H2O: f64,
    /// Multiplier on `K_act * R T / 2F` giving v1.
    pub v1_calibration: f64,
    /// ohm
    pub R_1: f64,
    /// H
    pub L_stack: f64,
    /// ohm
    pub R_L_stack: f64,
    /// F
    pub C_out: f64,
    /// W/min
    pub ramp_limit: f64,
    /// A/us
    pub slew_limit: f64,
    /// W
    pub P_rated: f64,
    /// Minimum operating power as a fraction of rated.
    pub min_power_fraction: f64,
    pub edl_aggregation: EdlAggregation,
}

impl Default for StackParams {
    fn default() -> Self {
        Self {
            C_dl: 0.02,
            U_rev0: 1.228,
            R_ohm: 1.1918,
            I_exchange: 0.0015,
            K_act: 0.1521,
            N_cell: 445,
            area: 15_000.0,
            T: 353.15,
            p_H2: 1.0,
            p_O2: 1.0,
            a_H2O: 1.0,
            v1_calibration: 12.981_620_351_910_058,
            R_1: 833.333_333 / 0.005,
            L_stack: 0.025,
            R_L_stack: 0.01,
            C_out: 0.005,
            ramp_limit: 0.5e6,
            slew_limit: 0.1,
            P_rated: 5.0e6,
            min_power_fraction: 0.1,
            edl_aggregation: EdlAggregation::Lumped,
        }
    }
}

impl StackParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("C_dl", self.C_dl),
            ("U_rev", self.U_rev0),
            ("R_ohm", self.R_ohm),
            ("I_exchange", self.I_exchange),
            ("K_act", self.K_act),
            ("area", self.area),
            ("T", self.T),
            ("p_H2", self.p_H2),
            ("p_O2", self.p_O2),
            ("a_H2O", self.a_H2O),
            ("v1_calibration", self.v1_calibration),
            ("R_1", self.R_1),
            ("L_stack", self.L_stack),
            ("C_out", self.C_out),
            ("ramp_limit", self.ramp_limit),
            ("slew_limit", self.slew_limit),
            ("P_rated", self.P_rated),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("stack.{name} must be positive, got {v}")));
            }
        }
        if self.N_cell < 1 {
            return Err(Error::Invalid("stack.N_cell must be >= 1".into()));
        }
        if self.R_L_stack < 0.0 || !(0.0..1.0).contains(&self.min_power_fraction) {
            return Err(Error::Invalid(
                "stack.R_L_stack must be >= 0 and min_power_fraction in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn n(&self) -> f64 {
        self.N_cell as f64
    }

    /// Tafel slope-like parameter v1 (V per cell).
    pub fn v1(&self) -> f64 {
        self.v1_calibration * self.K_act * GAS_CONSTANT * self.T / (2.0 * FARADAY)
    }

    /// Exchange-current parameter v2 (A/cm^2).
    pub fn v2(&self) -> f64 {
        self.I_exchange
    }

    /// `S * v2` in amperes.
    pub fn i0(&self) -> f64 {
        self.area * self.v2()
    }

    /// Stack-level ohmic resistance (ohm).
    pub fn r_ohm_total(&self) -> f64 {
        self.n() * self.R_ohm / self.area
    }

    /// Aggregate double-layer capacitance (F).
    pub fn c_dl_total(&self) -> f64 {
        match self.edl_aggregation {
            EdlAggregation::Lumped => self.C_dl * self.area,
            EdlAggregation::Series => self.C_dl * self.area / self.n(),
        }
    }

    pub fn p_min(&self) -> f64 {
        self.P_rated * self.min_power_fraction
    }

    /// Ramp limit in W/s.
    pub fn ramp_per_second(&self) -> f64 {
        self.ramp_limit / 60.0
    }

    /// Current slew limit in A/s.
    pub fn slew_per_second(&self) -> f64 {
        self.slew_limit * 1e6
    }

    /// Stack-level reversible voltage `N * U_rev`.
    pub fn u_rev_total(&self) -> Result<f64> {
        Ok(self.n() * reversible_voltage(self)?)
    }
}

/// Reversible cell voltage with the Nernst correction for the partial
/// pressures and water activity.
pub fn reversible_voltage(p: &StackParams) -> Result<f64> {
    if !(p.p_H2 > 0.0 && p.p_O2 > 0.0 && p.a_H2O > 0.0) {
        return Err(Error::Precondition(
            "pressures and water activity must be positive".into(),
        ));
    }
    let rt2f = GAS_CONSTANT * p.T / (2.0 * FARADAY);
    Ok(p.U_rev0 + rt2f * (p.p_H2 * p.p_O2.sqrt() / p.a_H2O).ln())
}

/// Activation overvoltage per cell, `v1 ln(I/(S v2) + 1)`.
pub fn activation_voltage(i: f64, p: &StackParams) -> Result<f64> {
    if i < 0.0 {
        return Err(Error::Precondition(format!("negative stack current {i}")));
    }
    Ok(p.v1() * (i / p.i0()).ln_1p())
}

/// `dU_act/dI` per cell (ohm).
pub fn activation_resistance(i: f64, p: &StackParams) -> f64 {
    p.v1() / (i.max(0.0) + p.i0())
}

/// Stack-level linearised activation resistance `N dU_act/dI`.
pub fn r_act_total(i: f64, p: &StackParams) -> f64 {
    p.n() * activation_resistance(i, p)
}

/// Total stack voltage `N (U_rev + U_act + I R_ohm / area)`.
pub fn stack_voltage(i: f64, p: &StackParams) -> Result<f64> {
    let u_act = activation_voltage(i, p)?;
    Ok(p.n() * (reversible_voltage(p)? + u_act + i * p.R_ohm / p.area))
}

/// Analytic slope `dU_stack/dI`.
pub fn stack_slope(i: f64, p: &StackParams) -> f64 {
    p.n() * (activation_resistance(i, p) + p.R_ohm / p.area)
}

/// Current at which `U_stack(I) * I` equals `power`, by bisection.
pub fn current_for_power(power: f64, p: &StackParams) -> Result<f64> {
    if power < 0.0 {
        return Err(Error::Precondition(format!("negative power {power}")));
    }
    if power == 0.0 {
        return Ok(0.0);
    }
    let f = |i: f64| stack_voltage(i, p).map(|u| u * i - power);
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi)? < 0.0 {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::Precondition("power not reachable".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Rated current, the root of `U_stack(I) I = P_rated`.
pub fn rated_current(p: &StackParams) -> Result<f64> {
    current_for_power(p.P_rated, p)
}

/// v1 calibration multiplier that places `U_stack(j A) * j A` at `power`.
pub fn calibrate_v1(p: &StackParams, power: f64, j_rated: f64) -> Result<f64> {
    let i = j_rated * p.area;
    let per_cell = power / i / p.n();
    let rest = reversible_voltage(p)? + i * p.R_ohm / p.area;
    let v1 = (per_cell - rest) / (i / p.i0()).ln_1p();
    if v1 <= 0.0 {
        return Err(Error::Precondition("rated point below ohmic line".into()));
    }
    Ok(v1 / (p.K_act * GAS_CONSTANT * p.T / (2.0 * FARADAY)))
}

/// Sampled U-I characteristic on `[0, i_max]`.
pub fn ui_curve(p: &StackParams, i_max: f64, points: usize) -> Result<Vec<(f64, f64)>> {
    let points = points.max(2);
    (0..points)
        .map(|k| {
            let i = i_max * k as f64 / (points - 1) as f64;
            stack_voltage(i, p).map(|u| (i, u))
        })
        .collect()
}

/// Dynamic state of one stack branch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct StackState {
    /// Stack-level activation (double-layer) voltage, V.
    pub V_dl: f64,
    /// Branch inductor current, A.
    pub i_L: f64,
    /// Terminal voltage across `C_out`, V.
    pub V_stack: f64,
    /// Current-loop integral state, A s.
    pub gamma: f64,
}

impl StackState {
    /// Equilibrium at cell current `i` (no leakage through `C_out`).
    pub fn equilibrium(i: f64, p: &StackParams) -> Result<Self> {
        let v_dl = p.n() * activation_voltage(i, p)?;
        let v_stack = stack_voltage(i, p)?;
        Ok(Self {
            V_dl: v_dl,
            i_L: i + v_stack / p.R_1,
            V_stack: v_stack,
            gamma: 0.0,
        })
    }
}

/// Faradaic current through the interface at activation voltage `v_dl`
/// (exact inverse of `N U_act(I)`; its slope is `1 / r_act_total`).
pub fn faradaic_current(v_dl: f64, p: &StackParams) -> f64 {
    p.i0() * (v_dl.max(0.0) / (p.n() * p.v1())).exp_m1()
}

/// Current into the cells from the terminal voltage; no reverse conduction.
pub fn cell_current(state: &StackState, p: &StackParams) -> f64 {
    let u_rev = p.n() * reversible_voltage(p).unwrap_or(p.U_rev0);
    ((state.V_stack - u_rev - state.V_dl) / p.r_ohm_total()).max(0.0)
}

/// `dV_dl/dt` for cell current `i`: the double layer carries `i - I_act`.
pub fn edl_derivatives(state: &StackState, i: f64, p: &StackParams) -> f64 {
    (i - faradaic_current(state.V_dl, p)) / p.c_dl_total()
}

/// Branch derivatives and the currents assembled at the stack terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchDerivatives {
    pub di_l: f64,
    pub dv_stack: f64,
    pub dv_dl: f64,
    /// Current into the cell path.
    pub i_cell: f64,
    /// Lye shunt current `V_stack / R_1`.
    pub i_shunt: f64,
    /// Faradaic current.
    pub i_act: f64,
    /// Double-layer displacement current.
    pub i_edl: f64,
}

impl BranchDerivatives {
    /// Total stack current: faradaic + shunt + double-layer displacement.
    pub fn stack_current(&self) -> f64 {
        self.i_act + self.i_shunt + self.i_edl
    }
}

pub fn branch_derivatives(state: &StackState, d: f64, v_dc: f64, p: &StackParams) -> Result<BranchDerivatives> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Precondition(format!("duty {d} outside [0, 1]")));
    }
    Ok(branch_derivatives_unchecked(state, d, v_dc, p))
}

pub(crate) fn branch_derivatives_unchecked(state: &StackState, d: f64, v_dc: f64, p: &StackParams) -> BranchDerivatives {
    let i_cell = cell_current(state, p);
    let i_shunt = state.V_stack / p.R_1;
    let i_act = faradaic_current(state.V_dl, p);
    BranchDerivatives {
        di_l: (d * v_dc - state.V_stack - state.i_L * p.R_L_stack) / p.L_stack,
        dv_stack: (state.i_L - i_cell - i_shunt) / p.C_out,
        dv_dl: (i_cell - i_act) / p.c_dl_total(),
        i_cell,
        i_shunt,
        i_act,
        i_edl: i_cell - i_act,
    }
}

/// Power split of the stack terminal power.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StackPowers {
    /// Electrochemical reaction (electrolytic load) power.
    pub reaction: f64,
    /// Power into the double layer.
    pub edl: f64,
    /// Ohmic loss in the cells.
    pub ohmic: f64,
    /// Shunt loss.
    pub shunt: f64,
}

pub fn stack_powers(state: &StackState, p: &StackParams) -> StackPowers {
    let d = branch_derivatives_unchecked(state, 0.0, 0.0, p);
    let u_if = p.n() * reversible_voltage(p).unwrap_or(p.U_rev0) + state.V_dl;
    StackPowers {
        reaction: u_if * d.i_act,
        edl: u_if * d.i_edl,
        ohmic: d.i_cell * d.i_cell * p.r_ohm_total(),
        shunt: state.V_stack * d.i_shunt,
    }
}
