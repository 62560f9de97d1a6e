//! Named scenario presets used by the CLI and the test suites.

use crate::config::{Event, EventKind, ScenarioConfig, UnitConfig};
use crate::error::{Error, Result};
use crate::pv::PvProfile;

pub const PRESETS: [&str; 6] = [
    "steady",
    "high_volatility",
    "generation_trip",
    "stack_trip",
    "unit_trip",
    "soc_equalization",
];

/// One unit at a constant 3 MW.
pub fn steady() -> ScenarioConfig {
    ScenarioConfig {
        name: "steady".into(),
        duration: 5.0,
        pv_profile: PvProfile::Constant { power: 3e6 },
        ..ScenarioConfig::default()
    }
}

/// 4.5 MW with slow drift and 1-10 Hz cloud flicker.
///
/// The flicker is an OU process with a 50 ms correlation time, high-passed
/// at 1 Hz, so most of its energy sits between the slow and fast bands.
pub fn high_volatility() -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        name: "high_volatility".into(),
        duration: 120.0,
        seed: 7,
        pv_profile: PvProfile::Stochastic {
            mean: 4.5e6,
            volatility: 0.02 / 4.5,
            correlation_time: 30.0,
            flicker: 0.05 / 4.5,
            flicker_time: 0.05,
            flicker_highpass_hz: 1.0,
        },
        ..ScenarioConfig::default()
    };
    cfg.record.channels = ["u1_P_edl", "u1_P_es", "u1_P_load", "u1_P_stack", "u1_V_dc", "u1_P_L", "u1_mode", "pv_power"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cfg
}

fn trip(name: &str, power: f64, units: usize, kind: EventKind, unit: usize) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        duration: 3.0,
        pv_profile: PvProfile::Constant { power },
        units: vec![UnitConfig::default(); units],
        events: vec![Event { time: 1.0, kind, unit }],
        ..ScenarioConfig::default()
    }
}

/// PV lost at t = 1 s with the stack at 3 MW.
pub fn generation_trip() -> ScenarioConfig {
    trip("generation_trip", 3e6, 1, EventKind::GenerationTrip, 1)
}

/// Stack unavailable at t = 1 s with 3 MW incoming.
pub fn stack_trip() -> ScenarioConfig {
    trip("stack_trip", 3e6, 1, EventKind::StackTrip, 1)
}

/// Second of two units disconnects at t = 1 s; 1.5 MW shared.
pub fn unit_trip() -> ScenarioConfig {
    trip("unit_trip", 1.5e6, 2, EventKind::UnitTrip, 2)
}

/// Two units starting at 55% and 45% SOC under a 60 s power swing.
///
/// The battery runs at 36x time compression so 300 s cover several
/// charge/discharge cycles.
pub fn soc_equalization() -> ScenarioConfig {
    let unit = |soc0| UnitConfig {
        soc0,
        ..UnitConfig::default()
    };
    let mut cfg = ScenarioConfig {
        name: "soc_equalization".into(),
        duration: 300.0,
        time_compression: 36.0,
        pv_profile: PvProfile::Sinusoid {
            mean: 6e6,
            amplitude: 1.2e6,
            period: 60.0,
        },
        units: vec![unit(0.55), unit(0.45)],
        ..ScenarioConfig::default()
    };
    cfg.record.every = 1000;
    cfg
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let cfg = match name {
        "steady" => steady(),
        "high_volatility" => high_volatility(),
        "generation_trip" => generation_trip(),
        "stack_trip" => stack_trip(),
        "unit_trip" => unit_trip(),
        "soc_equalization" => soc_equalization(),
        _ => {
            return Err(Error::Invalid(format!(
                "unknown preset '{name}'; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}
