//! Physical units and per-unit conversion.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical unit tags carried by [`UnitValue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    Volt,
    Ampere,
    Watt,
    VoltAmpere,
    WattHour,
    Farad,
    Henry,
    Ohm,
    Hertz,
    RadPerSec,
    Second,
    PerUnit,
}

impl Unit {
    pub const ALL: [Unit; 12] = [
        Unit::Volt,
        Unit::Ampere,
        Unit::Watt,
        Unit::VoltAmpere,
        Unit::WattHour,
        Unit::Farad,
        Unit::Henry,
        Unit::Ohm,
        Unit::Hertz,
        Unit::RadPerSec,
        Unit::Second,
        Unit::PerUnit,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Volt => "V",
            Unit::Ampere => "A",
            Unit::Watt => "W",
            Unit::VoltAmpere => "VA",
            Unit::WattHour => "Wh",
            Unit::Farad => "F",
            Unit::Henry => "H",
            Unit::Ohm => "Ω",
            Unit::Hertz => "Hz",
            Unit::RadPerSec => "rad/s",
            Unit::Second => "s",
            Unit::PerUnit => "pu",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A magnitude tagged with its unit. Arithmetic checks unit compatibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitValue {
    pub magnitude: f64,
    pub unit: Unit,
}

impl UnitValue {
    pub fn new(magnitude: f64, unit: Unit) -> Self {
        Self { magnitude, unit }
    }

    pub fn add(self, other: UnitValue) -> Result<UnitValue> {
        self.same_unit(other, "+")?;
        Ok(UnitValue::new(self.magnitude + other.magnitude, self.unit))
    }

    pub fn sub(self, other: UnitValue) -> Result<UnitValue> {
        self.same_unit(other, "-")?;
        Ok(UnitValue::new(self.magnitude - other.magnitude, self.unit))
    }

    pub fn scale(self, k: f64) -> UnitValue {
        UnitValue::new(self.magnitude * k, self.unit)
    }

    /// Product of two quantities. Only products with a defined result unit
    /// are accepted.
    pub fn mul(self, other: UnitValue) -> Result<UnitValue> {
        use Unit::*;
        let m = self.magnitude * other.magnitude;
        let out = match (self.unit, other.unit) {
            (PerUnit, u) | (u, PerUnit) => (u, 1.0),
            (Volt, Ampere) | (Ampere, Volt) => (Watt, 1.0),
            (Ampere, Ohm) | (Ohm, Ampere) => (Volt, 1.0),
            (Watt, Second) | (Second, Watt) => (WattHour, 1.0 / 3600.0),
            (Hertz, Second) | (Second, Hertz) => (PerUnit, 1.0),
            (RadPerSec, Second) | (Second, RadPerSec) => (PerUnit, 1.0),
            (Ohm, Farad) | (Farad, Ohm) => (Second, 1.0),
            (a, b) => {
                return Err(Error::Units(format!("no product defined for {a} * {b}")));
            }
        };
        Ok(UnitValue::new(m * out.1, out.0))
    }

    /// Quotient of two quantities.
    pub fn div(self, other: UnitValue) -> Result<UnitValue> {
        use Unit::*;
        let m = self.magnitude / other.magnitude;
        let out = match (self.unit, other.unit) {
            (a, b) if a == b => (PerUnit, 1.0),
            (u, PerUnit) => (u, 1.0),
            (Watt, Volt) => (Ampere, 1.0),
            (Watt, Ampere) => (Volt, 1.0),
            (Volt, Ampere) => (Ohm, 1.0),
            (Volt, Ohm) => (Ampere, 1.0),
            (WattHour, Watt) => (Second, 3600.0),
            (Henry, Ohm) => (Second, 1.0),
            (a, b) => {
                return Err(Error::Units(format!("no quotient defined for {a} / {b}")));
            }
        };
        Ok(UnitValue::new(m * out.1, out.0))
    }

    fn same_unit(self, other: UnitValue, op: &str) -> Result<()> {
        if self.unit == other.unit {
            Ok(())
        } else {
            Err(Error::Units(format!("{} {op} {}", self.unit, other.unit)))
        }
    }
}

impl fmt::Display for UnitValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.magnitude, self.unit)
    }
}

/// Per-unit bases: apparent power, DC voltage and frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub s_base: f64,
    pub v_base: f64,
    pub f_base: f64,
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self {
            s_base: 6.63e6,
            v_base: 1000.0,
            f_base: 50.0,
        }
    }
}

impl PerUnitBase {
    pub fn i_base(&self) -> f64 {
        self.s_base / self.v_base
    }

    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    /// Base magnitude for `unit`, if the unit has one.
    pub fn base_for(&self, unit: Unit) -> Option<f64> {
        match unit {
            Unit::Volt => Some(self.v_base),
            Unit::Ampere => Some(self.i_base()),
            Unit::Watt | Unit::VoltAmpere => Some(self.s_base),
            Unit::Ohm => Some(self.z_base()),
            Unit::Hertz => Some(self.f_base),
            Unit::RadPerSec => Some(2.0 * std::f64::consts::PI * self.f_base),
            _ => None,
        }
    }

    pub fn to_per_unit(&self, v: UnitValue) -> Result<UnitValue> {
        let base = self
            .base_for(v.unit)
            .ok_or_else(|| Error::Units(format!("no per-unit base for {}", v.unit)))?;
        Ok(UnitValue::new(v.magnitude / base, Unit::PerUnit))
    }

    pub fn from_per_unit(&self, v: UnitValue, target: Unit) -> Result<UnitValue> {
        if v.unit != Unit::PerUnit {
            return Err(Error::Units(format!("expected pu, got {}", v.unit)));
        }
        let base = self
            .base_for(target)
            .ok_or_else(|| Error::Units(format!("no per-unit base for {target}")))?;
        Ok(UnitValue::new(v.magnitude * base, target))
    }
}
