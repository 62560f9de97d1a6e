//! Scenario configuration (TOML).
//!
//! Every field has a default, so a file naming only `[pv_profile]` is a
//! complete scenario. Symbol-table names (`K_J`, `C_dl`, `omega_L`, ...)
//! are accepted verbatim as keys.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::converters::{BatteryParams, DcDcParams, LossParams};
use crate::error::{Error, Result};
use crate::fleet::SocParams;
use crate::pv::PvProfile;
use crate::split::{FilterParams, LoopGains};
use crate::stack::StackParams;
use crate::units::PerUnitBase;
use crate::vsm::VsmParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    /// PV and the units form the AC bus on their own.
    Islanded,
    /// Stiff grid at nominal frequency and zero angle.
    InfiniteBus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct NetworkParams {
    pub kind: NetworkKind,
    /// DC bus reference, V.
    pub V_dc: f64,
    /// DC link capacitance per unit, F.
    pub C_dc: f64,
    /// Hz
    pub f_ref: f64,
    /// VA
    pub S_base: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            kind: NetworkKind::Islanded,
            V_dc: 1000.0,
            C_dc: 0.05,
            f_ref: 50.0,
            S_base: 6.63e6,
        }
    }
}

impl NetworkParams {
    pub fn base(&self) -> PerUnitBase {
        PerUnitBase {
            s_base: self.S_base,
            v_base: self.V_dc,
            f_base: self.f_ref,
        }
    }

    pub fn omega_0(&self) -> f64 {
        2.0 * PI * self.f_ref
    }
}

/// Frequency-watt curtailment of the PV plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurtailmentParams {
    pub deadband_hz: f64,
    /// Under-frequency beyond the deadband at which output reaches zero.
    pub span_hz: f64,
    /// First-order lag, s.
    pub lag: f64,
}

impl Default for CurtailmentParams {
    fn default() -> Self {
        Self {
            deadband_hz: 0.5,
            span_hz: 1.0,
            lag: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeThresholds {
    /// Dead band on every power guard, fraction of rated stack power.
    pub hysteresis: f64,
    /// A unit counts as full (empty) within this distance of its SOC limit.
    pub soc_tolerance: f64,
    /// Below this fraction of rated power the source counts as absent.
    pub zero_power: f64,
}

impl Default for ModeThresholds {
    fn default() -> Self {
        Self {
            hysteresis: 0.02,
            soc_tolerance: 0.002,
            zero_power: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// PV output lost.
    GenerationTrip,
    /// One stack becomes unavailable.
    StackTrip,
    /// One whole unit disconnects.
    UnitTrip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// 1-based unit index for stack and unit trips.
    #[serde(default = "default_unit")]
    pub unit: usize,
}

fn default_unit() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitConfig {
    pub soc0: f64,
    /// Disable the ES branch (current held at zero).
    pub es_enabled: bool,
    /// Fixed stack current reference, bypassing the power loop and the
    /// mode machine.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_reference: Option<f64>,
    pub stack: StackParams,
    pub vsm: VsmParams,
    pub dcdc: DcDcParams,
    pub battery: BatteryParams,
    pub gains: LoopGains,
    pub filter: FilterParams,
    pub losses: LossParams,
}

impl Default for UnitConfig {
    fn default() -> Self {
        Self {
            soc0: 0.5,
            es_enabled: true,
            current_reference: None,
            stack: StackParams::default(),
            vsm: VsmParams::default(),
            dcdc: DcDcParams::default(),
            battery: BatteryParams::default(),
            gains: LoopGains::default(),
            filter: FilterParams::default(),
            losses: LossParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordConfig {
    /// Record every n-th step.
    pub every: usize,
    /// Channel names; empty records everything.
    pub channels: Vec<String>,
}

impl Default for RecordConfig {
    fn default() -> Self {
        Self {
            every: 10,
            channels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// s
    pub duration: f64,
    /// Integration step, s.
    pub step: f64,
    pub max_step: f64,
    pub seed: u64,
    /// Real seconds represented by one simulated second; scales the
    /// battery capacity down.
    pub time_compression: f64,
    /// Abort when a state exceeds this multiple of its base value.
    pub divergence_factor: f64,
    pub pv_profile: PvProfile,
    pub network: NetworkParams,
    pub soc: SocParams,
    pub modes: ModeThresholds,
    pub curtailment: CurtailmentParams,
    pub record: RecordConfig,
    pub units: Vec<UnitConfig>,
    pub events: Vec<Event>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            duration: 10.0,
            step: 1e-4,
            max_step: 1e-4,
            seed: 0,
            time_compression: 1.0,
            divergence_factor: 10.0,
            pv_profile: PvProfile::default(),
            network: NetworkParams::default(),
            soc: SocParams::default(),
            modes: ModeThresholds::default(),
            curtailment: CurtailmentParams::default(),
            record: RecordConfig::default(),
            units: vec![UnitConfig::default()],
            events: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    /// Copy the network-level references into every unit's VSM block so
    /// there is a single source for `V_dc`, `omega_0` and `S_base`.
    pub fn normalize(&mut self) {
        for u in &mut self.units {
            u.vsm.V_dc_ref = self.network.V_dc;
            u.vsm.omega_0 = self.network.omega_0();
            u.vsm.S_base = self.network.S_base;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.step > 0.0) {
            return bad(format!("step must be > 0, got {}", self.step));
        }
        if self.step > self.max_step {
            return bad(format!("step {} exceeds max_step {}", self.step, self.max_step));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return bad(format!("duration must be finite and >= 0, got {}", self.duration));
        }
        if self.duration > 0.0 && self.duration < self.step {
            return bad(format!("duration {} shorter than step {}", self.duration, self.step));
        }
        if self.units.is_empty() {
            return bad("at least one unit is required".into());
        }
        if !(self.time_compression > 0.0 && self.divergence_factor > 1.0) {
            return bad("time_compression must be > 0 and divergence_factor > 1".into());
        }
        if self.record.every == 0 {
            return bad("record.every must be >= 1".into());
        }
        let n = &self.network;
        if !(n.V_dc > 0.0 && n.C_dc > 0.0 && n.f_ref > 0.0 && n.S_base > 0.0) {
            return bad("network V_dc, C_dc, f_ref, S_base must be positive".into());
        }
        let c = &self.curtailment;
        if !(c.deadband_hz >= 0.0 && c.span_hz > 0.0 && c.lag > 0.0) {
            return bad("curtailment span and lag must be positive".into());
        }
        let m = &self.modes;
        if !(m.hysteresis >= 0.0 && m.soc_tolerance >= 0.0 && m.zero_power >= 0.0) {
            return bad("mode thresholds must be nonnegative".into());
        }
        self.soc.validate()?;
        self.pv_profile.validate()?;
        for (i, u) in self.units.iter().enumerate() {
            let tag = |e: Error| Error::Invalid(format!("unit {}: {e}", i + 1));
            u.stack.validate().map_err(tag)?;
            u.vsm.validate().map_err(tag)?;
            u.dcdc.validate().map_err(tag)?;
            u.battery.validate().map_err(tag)?;
            u.gains.validate().map_err(tag)?;
            u.filter.validate().map_err(tag)?;
            u.losses.validate().map_err(tag)?;
            if !(self.soc.SOC_min..=self.soc.SOC_max).contains(&u.soc0) {
                return bad(format!("unit {}: soc0 {} outside the SOC window", i + 1, u.soc0));
            }
            if let Some(i_ref) = u.current_reference {
                if !(i_ref >= 0.0) {
                    return bad(format!("unit {}: current_reference must be >= 0", i + 1));
                }
            }
        }
        for e in &self.events {
            if !(0.0..=self.duration).contains(&e.time) {
                return bad(format!("event at t = {} outside [0, {}]", e.time, self.duration));
            }
            if e.kind != EventKind::GenerationTrip && !(1..=self.units.len()).contains(&e.unit) {
                return bad(format!("event names unit {} of {}", e.unit, self.units.len()));
            }
            if e.kind == EventKind::UnitTrip && self.units.len() < 2 {
                return bad("unit trip needs at least two units".into());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Parse, normalise and validate a TOML scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.normalize();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("[pv_profile]\nkind = \"constant\"\npower = 3e6\n").unwrap();
        assert_eq!(cfg.network.V_dc, 1000.0);
        assert_eq!(cfg.network.C_dc, 0.05);
        assert_eq!(cfg.network.f_ref, 50.0);
        assert_eq!(cfg.units.len(), 1);
        assert_eq!(cfg.pv_profile, PvProfile::Constant { power: 3e6 });
    }

    #[test]
    fn zero_step_rejected() {
        assert!(matches!(parse_config("step = 0.0\n"), Err(Error::Invalid(_))));
        assert!(matches!(parse_config("step = ["), Err(Error::Parse(_))));
        assert!(matches!(parse_config("bogus = 1\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn two_unit_fleet() {
        let cfg = parse_config("[[units]]\nsoc0 = 0.55\n[[units]]\nsoc0 = 0.45\n").unwrap();
        assert_eq!(cfg.units.len(), 2);
        assert_eq!(cfg.units[0].soc0, 0.55);
        assert_eq!(cfg.units[1].soc0, 0.45);
        assert_eq!(cfg.units[1].stack.N_cell, 445);
    }

    #[test]
    fn symbol_names_are_keys() {
        let cfg = parse_config(
            "[[units]]\n[units.vsm]\nK_J = 2.0\nK_droop = 0.004\n[units.stack]\nU_rev = 1.23\nC_dl = 0.03\n[units.filter]\nomega_L = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.units[0].vsm.K_J, 2.0);
        assert_eq!(cfg.units[0].stack.U_rev0, 1.23);
        assert_eq!(cfg.units[0].filter.omega_l, 0.5);
    }

    #[test]
    fn event_validation() {
        let ok = "duration = 10.0\n[[events]]\ntime = 5.0\nkind = \"stack_trip\"\n";
        assert!(parse_config(ok).is_ok());
        let late = "duration = 10.0\n[[events]]\ntime = 50.0\nkind = \"stack_trip\"\n";
        assert!(parse_config(late).is_err());
        let lonely = "duration = 10.0\n[[events]]\ntime = 1.0\nkind = \"unit_trip\"\n";
        assert!(parse_config(lonely).is_err());
    }

    #[test]
    fn defaulting_is_idempotent() {
        let minimal = parse_config("[[units]]\nsoc0 = 0.55\n[[units]]\nsoc0 = 0.45\n").unwrap();
        let full = minimal.to_toml().unwrap();
        let reparsed = parse_config(&full).unwrap();
        assert_eq!(minimal, reparsed);
        assert_eq!(full, reparsed.to_toml().unwrap());
    }
}
