//! Averaged DC/DC converter models, the ES battery and converter losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct DcDcParams {
    /// ES converter inductance, H.
    pub L_b: f64,
    /// ES inductor resistance, ohm.
    pub R_b: f64,
    /// Stack buck inductance, H.
    pub L_buck: f64,
    pub f_sw: f64,
    pub duty_min: f64,
    pub duty_max: f64,
}

impl Default for DcDcParams {
    fn default() -> Self {
        Self {
            L_b: 1e-3,
            R_b: 0.01,
            L_buck: 0.025,
            f_sw: 2000.0,
            duty_min: 0.02,
            duty_max: 0.98,
        }
    }
}

impl DcDcParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.duty_min && self.duty_min < self.duty_max && self.duty_max < 1.0) {
            return Err(Error::Invalid(format!(
                "dcdc duty range must satisfy 0 < duty_min < duty_max < 1, got [{}, {}]",
                self.duty_min, self.duty_max
            )));
        }
        if !(self.L_b > 0.0 && self.L_buck > 0.0 && self.R_b >= 0.0 && self.f_sw >= 0.0) {
            return Err(Error::Invalid("dcdc inductances must be positive".into()));
        }
        Ok(())
    }

    pub fn clamp_duty(&self, d: f64) -> (f64, bool) {
        let c = d.clamp(self.duty_min, self.duty_max);
        (c, c != d)
    }
}

/// ES battery: constant EMF behind a series resistance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct BatteryParams {
    /// Open-circuit EMF, V.
    pub V_bat: f64,
    /// Internal resistance, ohm.
    pub R_int: f64,
    /// Energy capacity, Wh.
    pub E_cap: f64,
    /// Converter power limit, W.
    pub P_max: f64,
    /// One-way efficiency applied to SOC integration.
    pub efficiency: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            V_bat: 1250.0,
            R_int: 0.05,
            E_cap: 0.8e6,
            P_max: 0.82e6,
            efficiency: 0.95,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.V_bat > 0.0 && self.E_cap > 0.0 && self.P_max > 0.0 && self.R_int >= 0.0) {
            return Err(Error::Invalid("battery V_bat, E_cap, P_max must be positive".into()));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::Invalid("battery efficiency must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Terminal voltage for battery-side current `i` (positive discharging).
    pub fn terminal_voltage(&self, i: f64) -> f64 {
        self.V_bat - self.R_int * i
    }
}

fn open_duty(d: f64) -> Result<()> {
    if d > 0.0 && d < 1.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!("duty {d} outside (0, 1)")))
    }
}

/// Buck output `D V_dc`.
pub fn buck_voltage(d: f64, v_dc: f64) -> Result<f64> {
    open_duty(d)?;
    Ok(d * v_dc)
}

/// Charging power into a resistive equivalent `R` in buck mode.
pub fn buck_charging_power(d: f64, v_dc: f64, r_charge: f64) -> Result<f64> {
    open_duty(d)?;
    Ok(v_dc * v_dc * d * d / r_charge)
}

/// Boost output `V_boost / (1 - D)`.
pub fn boost_voltage(d: f64, v_boost: f64) -> Result<f64> {
    open_duty(d)?;
    Ok(v_boost / (1.0 - d))
}

/// Discharge power `V_dc^2 (1 - D) D / R` in boost mode.
pub fn boost_discharge_power(d: f64, v_dc: f64, r_discharge: f64) -> Result<f64> {
    open_duty(d)?;
    Ok(v_dc * v_dc * (1.0 - d) * d / r_discharge)
}

/// ES inductor derivative and the current it injects into the DC node.
///
/// Sign convention: `i_b > 0` discharges the battery into the DC bus.
pub fn es_branch_derivatives(i_b: f64, d_b: f64, v_bat: f64, v_dc: f64, p: &DcDcParams) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&d_b) {
        return Err(Error::Precondition(format!("duty {d_b} outside [0, 1]")));
    }
    Ok(((d_b * v_bat - v_dc - i_b * p.R_b) / p.L_b, i_b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct LossParams {
    /// On-state voltage, V.
    pub V_ce: f64,
    /// Conduction slope resistance, ohm.
    pub R_ce: f64,
    /// J per event.
    pub E_on: f64,
    pub E_off: f64,
    pub f_sw: f64,
    /// Parallel device modules (real-valued after calibration).
    pub n_modules: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        let mut p = Self {
            V_ce: 0.9697,
            R_ce: 0.0009,
            E_on: 0.040,
            E_off: 0.100,
            f_sw: 2000.0,
            n_modules: 1.0,
        };
        p.n_modules = calibrate_n_modules(&p, 5.82e3, 5000.0).unwrap_or(1.0);
        p
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.V_ce, self.R_ce, self.E_on, self.E_off, self.f_sw]
            .iter()
            .all(|v| *v >= 0.0)
            && self.n_modules >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("loss parameters must be nonnegative with n_modules >= 1".into()))
        }
    }
}

/// `n (V_ce I_avg/n + R_ce (I_rms/n)^2)`.
pub fn conduction_loss(i_avg: f64, i_rms: f64, p: &LossParams) -> f64 {
    let n = p.n_modules;
    n * (p.V_ce * (i_avg / n) + p.R_ce * (i_rms / n).powi(2))
}

/// `(E_on + E_off) f_sw`.
pub fn switching_loss(p: &LossParams) -> f64 {
    (p.E_on + p.E_off) * p.f_sw
}

/// Module count that makes `conduction_loss(i, i)` equal `target`.
pub fn calibrate_n_modules(p: &LossParams, target: f64, i: f64) -> Result<f64> {
    let linear = p.V_ce * i;
    if target <= linear {
        return Err(Error::Precondition(format!(
            "target {target} W is below the on-state floor {linear} W"
        )));
    }
    Ok(p.R_ce * i * i / (target - linear))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buck_and_boost_algebra() {
        assert_eq!(buck_voltage(0.5, 1000.0).unwrap(), 500.0);
        assert!((boost_voltage(0.2, 800.0).unwrap() - 1000.0).abs() < 1e-12);
        assert!(buck_voltage(0.0, 1000.0).is_err());
        assert!(boost_voltage(1.0, 800.0).is_err());
        let v = boost_voltage(0.3, 700.0).unwrap();
        assert!((buck_voltage(0.7, v).unwrap() - 700.0).abs() < 1e-9);
        assert!((buck_charging_power(0.5, 1000.0, 10.0).unwrap() - 25_000.0).abs() < 1e-9);
    }

    #[test]
    fn discharge_power_peaks_at_half_duty() {
        let best = (1..100)
            .map(|k| k as f64 / 100.0)
            .max_by(|a, b| {
                boost_discharge_power(*a, 1000.0, 5.0)
                    .unwrap()
                    .total_cmp(&boost_discharge_power(*b, 1000.0, 5.0).unwrap())
            })
            .unwrap();
        assert_eq!(best, 0.5);
    }

    #[test]
    fn es_branch_equilibrium_and_sign() {
        let p = DcDcParams::default();
        let i = 300.0;
        let d = (1000.0 + i * p.R_b) / 1250.0;
        let (di, node) = es_branch_derivatives(i, d, 1250.0, 1000.0, &p).unwrap();
        assert!(di.abs() < 1e-9);
        assert_eq!(node, i);
        let (di, _) = es_branch_derivatives(0.0, 0.9, 1250.0, 1000.0, &p).unwrap();
        assert!(di > 0.0, "higher battery-side voltage pushes current into the bus");
    }

    #[test]
    fn es_branch_frozen_decay_rate() {
        let p = DcDcParams::default();
        let d = 1000.0 / 1250.0;
        // dx/dt = -(R_b/L_b) x about the zero-current equilibrium
        let (di, _) = es_branch_derivatives(1.0, d, 1250.0, 1000.0, &p).unwrap();
        assert!((di + p.R_b / p.L_b).abs() < 1e-9);
    }

    #[test]
    fn loss_models() {
        let p = LossParams::default();
        assert_eq!(conduction_loss(0.0, 0.0, &p), 0.0);
        assert!((switching_loss(&p) - 280.0).abs() < 1e-9);
        assert!((conduction_loss(5000.0, 5000.0, &p) - 5820.0).abs() < 1e-6);
        let lin = LossParams { R_ce: 0.0, ..p.clone() };
        assert!((conduction_loss(200.0, 200.0, &lin) - 2.0 * conduction_loss(100.0, 100.0, &lin)).abs() < 1e-9);
        let half = LossParams { f_sw: 1000.0, ..p };
        assert!((switching_loss(&half) - 140.0).abs() < 1e-9);
    }
}
