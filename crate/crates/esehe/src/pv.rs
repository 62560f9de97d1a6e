//! Synthetic PV power profiles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;
use crate::units::Unit;

/// Available PV power as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PvProfile {
    Constant {
        power: f64,
    },
    /// `start_power + rate * t`, clamped at zero.
    Ramp {
        start_power: f64,
        rate: f64,
    },
    /// Linear drop by `drop_fraction` of `power` over `drop_duration`,
    /// starting at `drop_start`.
    Step {
        power: f64,
        drop_fraction: f64,
        #[serde(default)]
        drop_start: f64,
        drop_duration: f64,
    },
    /// Mean-reverting (Ornstein-Uhlenbeck) volatility around `mean`, with an
    /// optional fast flicker component high-passed at `flicker_highpass_hz`.
    Stochastic {
        mean: f64,
        volatility: f64,
        #[serde(default = "default_corr_time")]
        correlation_time: f64,
        #[serde(default)]
        flicker: f64,
        #[serde(default = "default_flicker_time")]
        flicker_time: f64,
        #[serde(default)]
        flicker_highpass_hz: f64,
    },
    /// `mean + amplitude * sin(2 pi t / period)`.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period: f64,
    },
    /// Linear interpolation of a `time_s,<name>` CSV file.
    File {
        path: String,
    },
}

fn default_corr_time() -> f64 {
    30.0
}

fn default_flicker_time() -> f64 {
    0.005
}

impl Default for PvProfile {
    fn default() -> Self {
        PvProfile::Constant { power: 5.0e6 }
    }
}

impl PvProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("pv profile: {m}")));
        match *self {
            PvProfile::Constant { power } if power < 0.0 => bad("power must be >= 0"),
            PvProfile::Step {
                drop_fraction,
                drop_duration,
                ..
            } if !(0.0..=1.0).contains(&drop_fraction) || drop_duration < 0.0 => {
                bad("drop_fraction must lie in [0, 1] and drop_duration >= 0")
            }
            PvProfile::Stochastic {
                mean,
                volatility,
                correlation_time,
                flicker,
                flicker_time,
                ..
            } if mean < 0.0
                || volatility < 0.0
                || flicker < 0.0
                || correlation_time <= 0.0
                || flicker_time <= 0.0 =>
            {
                bad("stochastic parameters must be nonnegative with positive time constants")
            }
            PvProfile::Sinusoid { period, .. } if period <= 0.0 => bad("period must be > 0"),
            _ => Ok(()),
        }
    }
}

fn sample_count(duration: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::Precondition(format!(
            "invalid grid: duration {duration}, step {step}"
        )));
    }
    Ok((duration / step + 1e-9).floor() as usize + 1)
}

/// Sample `profile` on a uniform grid `0, step, ..., <= duration`.
///
/// Deterministic for a fixed `seed`; power is clamped at zero.
pub fn synthesize_pv(profile: &PvProfile, duration: f64, step: f64, seed: u64) -> Result<TimeSeries> {
    profile.validate()?;
    let n = sample_count(duration, step)?;
    let t = |k: usize| k as f64 * step;
    let values: Vec<f64> = match profile {
        PvProfile::Constant { power } => vec![*power; n],
        PvProfile::Ramp { start_power, rate } => (0..n).map(|k| start_power + rate * t(k)).collect(),
        PvProfile::Step {
            power,
            drop_fraction,
            drop_start,
            drop_duration,
        } => (0..n)
            .map(|k| {
                let x = if *drop_duration > 0.0 {
                    ((t(k) - drop_start) / drop_duration).clamp(0.0, 1.0)
                } else if t(k) >= *drop_start {
                    1.0
                } else {
                    0.0
                };
                power * (1.0 - drop_fraction * x)
            })
            .collect(),
        PvProfile::Stochastic {
            mean,
            volatility,
            correlation_time,
            flicker,
            flicker_time,
            flicker_highpass_hz,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let slow = ou_path(&mut rng, n, step, *correlation_time, volatility * mean);
            let mut fast = ou_path(&mut rng, n, step, *flicker_time, flicker * mean);
            if *flicker_highpass_hz > 0.0 {
                highpass_in_place(&mut fast, step, *flicker_highpass_hz);
            }
            (0..n).map(|k| mean + slow[k] + fast[k]).collect()
        }
        PvProfile::Sinusoid {
            mean,
            amplitude,
            period,
        } => (0..n)
            .map(|k| mean + amplitude * (2.0 * std::f64::consts::PI * t(k) / period).sin())
            .collect(),
        PvProfile::File { path } => {
            let src = TimeSeries::load(path, Unit::Watt)?;
            (0..n).map(|k| src.sample(t(k))).collect()
        }
    };
    let values = values.into_iter().map(|p| p.max(0.0)).collect();
    TimeSeries::uniform("pv_power", Unit::Watt, step, values)
}

/// Exact discretisation of an OU process with stationary std `sigma`.
fn ou_path(rng: &mut ChaCha8Rng, n: usize, step: f64, tau: f64, sigma: f64) -> Vec<f64> {
    let a = (-step / tau).exp();
    let b = sigma * (1.0 - a * a).sqrt();
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        let z: f64 = StandardNormal.sample(rng);
        x = a * x + b * z;
    }
    out
}

fn highpass_in_place(x: &mut [f64], step: f64, f_hz: f64) {
    let tau = 1.0 / (2.0 * std::f64::consts::PI * f_hz);
    let alpha = tau / (tau + step);
    let mut prev_in = x.first().copied().unwrap_or(0.0);
    let mut prev_out = 0.0;
    for v in x.iter_mut().skip(1) {
        let y = alpha * (prev_out + *v - prev_in);
        prev_in = *v;
        prev_out = y;
        *v = y;
    }
    if let Some(v) = x.first_mut() {
        *v = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_profile_is_flat() {
        let s = synthesize_pv(&PvProfile::Constant { power: 5e6 }, 100.0, 1.0, 0).unwrap();
        assert_eq!(s.len(), 101);
        assert!(s.values().iter().all(|&p| p == 5e6));
    }

    #[test]
    fn step_drop_reaches_fraction() {
        let p = PvProfile::Step {
            power: 5e6,
            drop_fraction: 0.67,
            drop_start: 0.0,
            drop_duration: 120.0,
        };
        let s = synthesize_pv(&p, 120.0, 0.1, 0).unwrap();
        assert!((s.last().unwrap() - 1.65e6).abs() < 1e-3);
    }

    #[test]
    fn stochastic_is_reproducible_and_nonnegative() {
        let p = PvProfile::Stochastic {
            mean: 1e6,
            volatility: 2.0,
            correlation_time: 1.0,
            flicker: 0.0,
            flicker_time: 0.005,
            flicker_highpass_hz: 0.0,
        };
        let a = synthesize_pv(&p, 50.0, 0.01, 9).unwrap();
        let b = synthesize_pv(&p, 50.0, 0.01, 9).unwrap();
        let c = synthesize_pv(&p, 50.0, 0.01, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_duration_gives_single_sample() {
        let s = synthesize_pv(&PvProfile::default(), 0.0, 1e-4, 0).unwrap();
        assert_eq!(s.len(), 1);
    }
}
