//! Operating modes a-h and the guard table that selects between them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::ModeThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatingMode {
    /// Surplus beyond stack rating plus ES charging; curtail the rest.
    A,
    /// Stack follows the slow band, ES takes the difference.
    B,
    /// ES full and surplus beyond rating; curtail.
    C,
    /// Source below the stack minimum; ES tops the stack up.
    D,
    /// Stack unavailable; ES absorbs.
    E,
    /// Stack unavailable and ES full; curtail everything.
    F,
    /// No source and nothing to run from; idle.
    G,
    /// No source; ES holds the stack at minimum.
    H,
}

impl OperatingMode {
    pub const ALL: [OperatingMode; 8] = [
        OperatingMode::A,
        OperatingMode::B,
        OperatingMode::C,
        OperatingMode::D,
        OperatingMode::E,
        OperatingMode::F,
        OperatingMode::G,
        OperatingMode::H,
    ];

    pub fn letter(self) -> char {
        (b'a' + self.index() as u8) as char
    }

    pub fn index(self) -> usize {
        OperatingMode::ALL.iter().position(|m| *m == self).unwrap_or(0)
    }

    pub fn from_index(i: usize) -> Option<Self> {
        OperatingMode::ALL.get(i).copied()
    }

    /// Whether the stack draws power in this mode.
    pub fn stack_on(self) -> bool {
        !matches!(self, OperatingMode::E | OperatingMode::F | OperatingMode::G)
    }

    /// Modes entered on a contingency; the stack ramp limiter is bypassed.
    pub fn emergency(self) -> bool {
        matches!(
            self,
            OperatingMode::E | OperatingMode::F | OperatingMode::G | OperatingMode::H
        )
    }
}

impl fmt::Display for OperatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Unit-level quantities the guards compare against.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeLimits {
    pub p_rated: f64,
    pub p_min: f64,
    /// Largest ES charging power, W.
    pub es_charge_max: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub thresholds: ModeThresholds,
}

/// Guard table without hysteresis. `p_he_demand` is the power the stack
/// can take (zero when it is unavailable).
pub fn raw_mode(p_s: f64, p_he_demand: f64, soc: f64, lim: &ModeLimits) -> OperatingMode {
    use OperatingMode::*;
    let zero = lim.thresholds.zero_power * lim.p_rated;
    let full = soc >= lim.soc_max - lim.thresholds.soc_tolerance;
    let empty = soc <= lim.soc_min + lim.thresholds.soc_tolerance;
    let stack_available = p_he_demand > 0.0;
    if p_s <= zero {
        return if stack_available && !empty { H } else { G };
    }
    if !stack_available {
        return if full { F } else { E };
    }
    if p_s < lim.p_min {
        return D;
    }
    if p_s > lim.p_rated {
        if full {
            return C;
        }
        if p_s > lim.p_rated + lim.es_charge_max {
            return A;
        }
    }
    B
}

/// Next mode with a power dead band: a change is accepted only if the
/// source power is at least the hysteresis band inside the new region.
pub fn mode_transition(p_s: f64, p_he_demand: f64, soc: f64, lim: &ModeLimits, current: Option<OperatingMode>) -> OperatingMode {
    let raw = raw_mode(p_s, p_he_demand, soc, lim);
    let Some(cur) = current else {
        return raw;
    };
    if raw == cur {
        return cur;
    }
    let h = lim.thresholds.hysteresis * lim.p_rated;
    let firm = raw_mode(p_s + h, p_he_demand, soc, lim) == raw && raw_mode(p_s - h, p_he_demand, soc, lim) == raw;
    // stack availability changes are not debounced
    let unavailable = |m: OperatingMode| matches!(m, OperatingMode::E | OperatingMode::F);
    if firm || unavailable(raw) != unavailable(cur) {
        raw
    } else {
        cur
    }
}

/// True if `mode` is the raw guard outcome somewhere in `p_s +/- band`.
pub fn consistent(mode: OperatingMode, p_s: f64, p_he_demand: f64, soc: f64, lim: &ModeLimits) -> bool {
    let h = lim.thresholds.hysteresis * lim.p_rated;
    (0..=20).any(|k| {
        let p = p_s - h + 2.0 * h * k as f64 / 20.0;
        raw_mode(p, p_he_demand, soc, lim) == mode
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use OperatingMode::*;

    fn lim() -> ModeLimits {
        ModeLimits {
            p_rated: 5e6,
            p_min: 0.5e6,
            es_charge_max: 0.82e6,
            soc_min: 0.1,
            soc_max: 0.9,
            thresholds: ModeThresholds::default(),
        }
    }

    #[test]
    fn table_rows() {
        let l = lim();
        assert_eq!(raw_mode(3e6, 5e6, 0.5, &l), B);
        assert_eq!(raw_mode(5.5e6, 5e6, 0.5, &l), B);
        assert_eq!(raw_mode(6.5e6, 5e6, 0.5, &l), A);
        assert_eq!(raw_mode(6.5e6, 5e6, 0.9, &l), C);
        assert_eq!(raw_mode(0.3e6, 5e6, 0.5, &l), D);
        assert_eq!(raw_mode(0.0, 5e6, 0.5, &l), H);
        assert_eq!(raw_mode(0.0, 5e6, 0.1, &l), G);
        assert_eq!(raw_mode(3e6, 0.0, 0.5, &l), E);
        assert_eq!(raw_mode(3e6, 0.0, 0.9, &l), F);
    }

    #[test]
    fn hysteresis_prevents_chatter() {
        let l = lim();
        let mut m = mode_transition(0.6e6, 5e6, 0.5, &l, None);
        assert_eq!(m, B);
        let mut changes = 0;
        for k in 0..1000 {
            let p = 0.5e6 + 50e3 * ((k as f64) * 0.3).sin();
            let next = mode_transition(p, 5e6, 0.5, &l, Some(m));
            if next != m {
                changes += 1;
            }
            m = next;
        }
        assert!(changes <= 1, "{changes}");
        assert_eq!(mode_transition(0.3e6, 5e6, 0.5, &l, Some(m)), D);
    }

    #[test]
    fn trips_switch_immediately() {
        let l = lim();
        assert_eq!(mode_transition(3e6, 0.0, 0.5, &l, Some(B)), E);
        assert_eq!(mode_transition(0.0, 5e6, 0.5, &l, Some(B)), H);
    }

    #[test]
    fn letters_round_trip() {
        for m in OperatingMode::ALL {
            assert_eq!(OperatingMode::from_index(m.index()), Some(m));
        }
        assert_eq!(H.to_string(), "h");
    }
}
