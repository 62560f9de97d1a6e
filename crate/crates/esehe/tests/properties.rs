//! Property tests over the pure building blocks.

mod common;

use std::f64::consts::PI;

use proptest::prelude::*;

use esehe::config::{parse_config, ScenarioConfig};
use esehe::converters::{boost_voltage, buck_voltage, conduction_loss, switching_loss, LossParams};
use esehe::fleet::{droop_shares, FleetState, SocParams};
use esehe::split::{Biquad, BiquadKind, FilterBank, FilterParams};
use esehe::stack::{activation_voltage, r_act_total, rated_current, stack_slope, stack_voltage, StackParams};
use esehe::techno::{self, CycleHistogram, DegradationParams, SizingParams, TemperatureModel};
use esehe::units::{PerUnitBase, Unit, UnitValue};
use esehe::vsm::wrap_angle;

use common::{rainflow_oracle, random_walk};

const BASED: [Unit; 7] = [
    Unit::Volt,
    Unit::Ampere,
    Unit::Watt,
    Unit::VoltAmpere,
    Unit::Ohm,
    Unit::Hertz,
    Unit::RadPerSec,
];

// --- units and config ------------------------------------------------------

#[test]
fn unit_algebra_over_every_pair() {
    for a in Unit::ALL {
        for b in Unit::ALL {
            let sum = UnitValue::new(1.0, a).add(UnitValue::new(1.0, b));
            assert_eq!(sum.is_ok(), a == b);
        }
    }
    let w = UnitValue::new(2.0, Unit::Volt).mul(UnitValue::new(3.0, Unit::Ampere)).unwrap();
    assert_eq!(w.unit, Unit::Watt);
}

proptest! {
    #[test]
    fn per_unit_round_trip(mag in -1e7f64..1e7, k in 0usize..BASED.len()) {
        let base = PerUnitBase::default();
        let v = UnitValue::new(mag, BASED[k]);
        let back = base.from_per_unit(base.to_per_unit(v).unwrap(), BASED[k]).unwrap();
        prop_assert_eq!(back.unit, v.unit);
        prop_assert!((back.magnitude - mag).abs() <= 4.0 * f64::EPSILON * mag.abs());
    }
}

#[test]
fn config_defaulting_is_idempotent() {
    let minimal = parse_config("name = \"scenario\"\n").unwrap();
    let full = parse_config(&minimal.to_toml().unwrap()).unwrap();
    assert_eq!(minimal, full);
    let mut d = ScenarioConfig::default();
    d.normalize();
    assert_eq!(minimal, d);
}

#[test]
fn zero_step_is_rejected() {
    assert!(parse_config("step = 0.0\n").is_err());
}

// --- stack -----------------------------------------------------------------

proptest! {
    #[test]
    fn stack_voltage_increasing_with_analytic_slope(f in 0.01f64..2.0, g in 0.0f64..1.0) {
        let p = StackParams::default();
        let i_rated = rated_current(&p).unwrap();
        let (a, b) = (f * i_rated, (f + g * (2.0 - f)) * i_rated);
        if b > a {
            prop_assert!(stack_voltage(b, &p).unwrap() > stack_voltage(a, &p).unwrap());
        }
        let h = 1e-4 * a;
        let fd = (stack_voltage(a + h, &p).unwrap() - stack_voltage(a - h, &p).unwrap()) / (2.0 * h);
        let slope = stack_slope(a, &p);
        prop_assert!((fd - slope).abs() <= 1e-6 * slope, "fd {} vs {}", fd, slope);
    }

    #[test]
    fn r_act_matches_finite_difference(f in 0.01f64..2.0) {
        let p = StackParams::default();
        let i = f * rated_current(&p).unwrap();
        let h = 1e-4 * i;
        let u = |x: f64| p.n() * activation_voltage(x, &p).unwrap();
        let fd = (u(i + h) - u(i - h)) / (2.0 * h);
        prop_assert!((fd - r_act_total(i, &p)).abs() <= 1e-6 * fd);
    }
}

// --- converters ------------------------------------------------------------

proptest! {
    #[test]
    fn buck_then_boost_is_identity(d in 0.02f64..0.98, v in 100.0f64..2000.0) {
        let down = buck_voltage(d, v).unwrap();
        // the boost stage sees the buck output on its low side
        let up = boost_voltage(1.0 - d, down).unwrap();
        prop_assert!((up - v).abs() <= 1e-9 * v);
    }

    #[test]
    fn losses_monotone_in_every_parameter(
        i in 0.0f64..8000.0,
        k in 0usize..7,
        bump in 0.0f64..2.0,
    ) {
        let p = LossParams::default();
        let mut q = p.clone();
        match k {
            0 => q.V_ce += bump,
            1 => q.R_ce += bump * 1e-3,
            2 => q.E_on += bump * 0.1,
            3 => q.E_off += bump * 0.1,
            4 => q.f_sw += bump * 1000.0,
            5 => q.n_modules += bump,
            _ => {}
        }
        let cond = |p: &LossParams, i: f64| conduction_loss(i, i, p);
        prop_assert!(switching_loss(&q) >= switching_loss(&p));
        if k == 5 {
            // more modules share the current, so only the ohmic part shrinks
            prop_assert!(cond(&q, i) <= cond(&p, i) + 1e-9);
        } else {
            prop_assert!(cond(&q, i) >= cond(&p, i));
        }
        if k == 6 {
            prop_assert!(cond(&p, i + bump) >= cond(&p, i));
        }
    }
}

// --- fleet -----------------------------------------------------------------

proptest! {
    #[test]
    fn shares_normalised_and_prioritised(socs in prop::collection::vec(0.1f64..0.9, 1..8)) {
        let p = SocParams::default();
        let socs: Vec<f64> = socs.iter().map(|s| s.clamp(p.SOC_min + 1e-6, p.SOC_max - 1e-6)).collect();
        let s = droop_shares(&FleetState::new(&socs, &p).unwrap()).unwrap();
        prop_assert!((s.up.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!((s.down.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 0..socs.len() {
            for j in 0..socs.len() {
                if socs[i] < socs[j] {
                    prop_assert!(s.up[i] >= s.up[j]);
                    prop_assert!(s.down[i] <= s.down[j]);
                }
            }
        }
    }
}

// --- freq-split and vsm ----------------------------------------------------

#[test]
fn band_edge_gains() {
    let p = FilterParams::default();
    let bank = FilterBank::new(&p, 1e-4).unwrap();
    let h = bank.high.analog_magnitude(2.0 * PI * 10.0);
    assert!((h - 1.0 / 2f64.sqrt()).abs() < 1e-3, "{h}");
    let b = bank.mid.analog_magnitude(2.0 * PI * 1.0);
    assert!((b - 1.0).abs() < 1e-12);
    assert!(bank.mid.analog_magnitude(2.0 * PI * 0.7) < 1.0);
    assert!(bank.mid.analog_magnitude(2.0 * PI * 1.4) < 1.0);
    assert_eq!(bank.low.dc_gain(), 1.0);
}

#[test]
fn slow_input_reconstructed_by_the_bank() {
    let dt = 1e-3;
    let mut bank = FilterBank::new(&FilterParams::default(), dt).unwrap();
    // DC dominated; the three sections are not complementary, so ripple
    // near 0.05 Hz is reproduced with a lag
    let p_s = |t: f64| 4e6 + 5e4 * (2.0 * PI * 0.01 * t).sin() + 5e4 * (2.0 * PI * 0.05 * t).sin();
    bank.prime(p_s(0.0));
    let mut worst = 0.0_f64;
    for k in 0..200_000 {
        let t = k as f64 * dt;
        let s = esehe::split::filter_step(&mut bank, p_s(t), dt).unwrap();
        if t > 60.0 {
            worst = worst.max((s.P_h + s.P_m + s.P_L - p_s(t)).abs() / p_s(t));
        }
    }
    assert!(worst <= 0.02, "{worst}");
}

#[test]
fn bilinear_lowpass_keeps_unit_dc_gain() {
    for dt in [1e-5, 1e-4, 1e-3] {
        let q = Biquad::new(BiquadKind::Lowpass, 0.2 * PI, 0.77, dt).unwrap();
        assert!((q.dc_gain() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn wrapped_angle_keeps_sin_and_cos(theta in -1e4f64..1e4) {
        let w = wrap_angle(theta);
        prop_assert!((-PI..PI).contains(&w));
        prop_assert!((w.sin() - theta.sin()).abs() < 1e-9);
        prop_assert!((w.cos() - theta.cos()).abs() < 1e-9);
    }
}

// --- techno ----------------------------------------------------------------

#[test]
fn rainflow_matches_oracle_on_random_series() {
    for seed in 0..100 {
        let x = random_walk(1000 + seed, 500, 0.05);
        assert_eq!(techno::rainflow(&x).unwrap().entries, rainflow_oracle(&x), "seed {seed}");
    }
}

proptest! {
    #[test]
    fn rainflow_matches_oracle(x in prop::collection::vec(0.0f64..1.0, 2..200)) {
        prop_assert_eq!(techno::rainflow(&x).unwrap().entries, rainflow_oracle(&x));
    }

    #[test]
    fn rainflow_counts_are_half_cycles(x in prop::collection::vec(0.0f64..1.0, 2..200)) {
        for (d, n) in techno::rainflow(&x).unwrap().entries {
            prop_assert!(d > 0.0 && d <= 1.0);
            prop_assert_eq!((2.0 * n).fract(), 0.0);
        }
    }

    #[test]
    fn miner_damage_is_linear_in_counts(x in prop::collection::vec(0.0f64..1.0, 3..100)) {
        let p = DegradationParams::default();
        let h = techno::rainflow(&x).unwrap();
        let d1 = techno::miner_damage(&h, &p);
        let d2 = techno::miner_damage(&h.scaled(2.0), &p);
        prop_assert_eq!(d2, 2.0 * d1);
    }

    #[test]
    fn deeper_cycles_fail_sooner(a in 0.001f64..1.0, b in 0.001f64..1.0) {
        let p = DegradationParams::default();
        if a < b {
            prop_assert!(techno::cycles_to_failure(a, &p) > techno::cycles_to_failure(b, &p));
        }
    }

    #[test]
    fn warmer_cells_age_faster(a in -20.0f64..60.0, b in -20.0f64..60.0) {
        let m = TemperatureModel::default();
        if a < b {
            prop_assert!(m.multiplier(a) < m.multiplier(b));
        }
    }

    #[test]
    fn quantile_one_is_the_maximum(x in prop::collection::vec(0.0f64..1e7, 1..500)) {
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(techno::quantile(&x, 1.0).unwrap(), max);
    }
}

#[test]
fn zero_clip_sizes_for_the_peak() {
    let pv = techno::synthetic_pv_year(0).unwrap();
    let peak = pv.values().iter().cloned().fold(0.0, f64::max);
    let sp = SizingParams {
        clip_quantile: 0.0,
        ..SizingParams::default()
    };
    let r = techno::sizing_and_cost(pv.values(), &sp, &Default::default()).unwrap();
    assert_eq!(r.clip_power, peak);
    assert_eq!(r.clipped_fraction, 0.0);
}

#[test]
fn two_cycles_per_day_of_five_percent() {
    let soc = techno::synthetic_soc_year(2, 0.05).unwrap();
    let h: CycleHistogram = techno::rainflow_series(&soc).unwrap();
    assert_eq!(h.total_cycles(), 730.0);
    assert_eq!(h.count_at(0.05, 1e-9), 730.0);
}
