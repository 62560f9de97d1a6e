//! SOC equalisation across parallel units: SOC-shifted voltage references
//! and SOC-weighted droop shares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct SocParams {
    pub SOC_min: f64,
    pub SOC_max: f64,
    /// Equalisation gain, V.
    pub k: f64,
    pub n: f64,
    /// Offset, V. `None` centres the offset at SOC = 0.5.
    pub delta: Option<f64>,
}

impl Default for SocParams {
    fn default() -> Self {
        Self {
            SOC_min: 0.10,
            SOC_max: 0.90,
            k: 2.0,
            n: 2.0,
            delta: None,
        }
    }
}

impl SocParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.SOC_min && self.SOC_min < self.SOC_max && self.SOC_max <= 1.0) {
            return Err(Error::Invalid(format!(
                "SOC window must satisfy 0 <= SOC_min < SOC_max <= 1, got [{}, {}]",
                self.SOC_min, self.SOC_max
            )));
        }
        if !(self.k > 0.0 && self.n >= 1.0) {
            return Err(Error::Invalid("SOC equalisation needs k > 0 and n >= 1".into()));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.delta
            .unwrap_or_else(|| self.k * (0.5f64.powf(self.n).exp() - 1.0))
    }

    /// `f(SOC) = k (exp(SOC^n) - 1) - delta`.
    pub fn offset(&self, soc: f64) -> f64 {
        self.k * (soc.powf(self.n).exp() - 1.0) - self.delta()
    }
}

/// `V_oi* = V_dc + f(SOC_i)`.
pub fn soc_voltage_ref(soc: f64, v_dc: f64, p: &SocParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::Precondition(format!("SOC {soc} outside [0, 1]")));
    }
    Ok(v_dc + p.offset(soc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSoc {
    pub soc: f64,
    pub soc_min: f64,
    pub soc_max: f64,
}

impl UnitSoc {
    pub fn new(soc: f64, p: &SocParams) -> Self {
        Self {
            soc,
            soc_min: p.SOC_min,
            soc_max: p.SOC_max,
        }
    }

    /// Adjustable capacity `SOC_max - SOC_min`.
    pub fn range(&self) -> f64 {
        self.soc_max - self.soc_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetState {
    pub units: Vec<UnitSoc>,
}

impl FleetState {
    pub fn new(socs: &[f64], p: &SocParams) -> Result<Self> {
        if socs.is_empty() {
            return Err(Error::Invalid("fleet needs at least one unit".into()));
        }
        Ok(Self {
            units: socs.iter().map(|&s| UnitSoc::new(s, p)).collect(),
        })
    }

    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .units
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| (lo.min(u.soc), hi.max(u.soc)));
        hi - lo
    }
}

/// Per-unit shares. `up` weights charging (absorbing surplus) by headroom
/// below `SOC_max`; `down` weights discharging by energy above `SOC_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shares {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
}

pub fn droop_shares(fleet: &FleetState) -> Result<Shares> {
    let up_w: Vec<f64> = fleet
        .units
        .iter()
        .map(|u| ((u.soc_max - u.soc) * u.range()).max(0.0))
        .collect();
    let down_w: Vec<f64> = fleet
        .units
        .iter()
        .map(|u| ((u.soc - u.soc_min) * u.range()).max(0.0))
        .collect();
    let su: f64 = up_w.iter().sum();
    let sd: f64 = down_w.iter().sum();
    if su <= 0.0 {
        return Err(Error::Saturated("every unit is at SOC_max; no charging capacity".into()));
    }
    if sd <= 0.0 {
        return Err(Error::Saturated("every unit is at SOC_min; no discharging capacity".into()));
    }
    Ok(Shares {
        up: up_w.iter().map(|w| w / su).collect(),
        down: down_w.iter().map(|w| w / sd).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocClamp {
    Min,
    Max,
}

/// Coulomb-counting SOC update. `p_bat > 0` discharges; `e_cap` in Wh.
pub fn soc_step(soc: f64, p_bat: f64, e_cap: f64, dt: f64, efficiency: f64, p: &SocParams) -> Result<(f64, Option<SocClamp>)> {
    if !(e_cap > 0.0) {
        return Err(Error::Precondition(format!("E_cap must be positive, got {e_cap}")));
    }
    let energy = p_bat * dt / 3600.0;
    let d = if p_bat > 0.0 {
        -energy / efficiency
    } else {
        -energy * efficiency
    };
    let next = soc + d / e_cap;
    if next < p.SOC_min {
        Ok((p.SOC_min, Some(SocClamp::Min)))
    } else if next > p.SOC_max {
        Ok((p.SOC_max, Some(SocClamp::Max)))
    } else {
        Ok((next, None))
    }
}
