//! Stack branch accounting and whole-engine trajectory properties.

use proptest::prelude::*;

use esehe::config::ScenarioConfig;
use esehe::engine::{run_scenario, Engine};
use esehe::modes::{consistent, ModeLimits, OperatingMode};
use esehe::pv::PvProfile;
use esehe::scenarios;
use esehe::stack::{
    branch_derivatives, edl_derivatives, r_act_total, reversible_voltage, stack_powers, StackParams, StackState,
};

fn channels(cfg: &mut ScenarioConfig, names: &[&str]) {
    cfg.record.channels = names.iter().map(|s| s.to_string()).collect();
}

fn csv(cfg: &ScenarioConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    run_scenario(cfg).unwrap().trajectory.write_csv(&mut buf).unwrap();
    buf
}

// --- stack branch ----------------------------------------------------------

proptest! {
    #[test]
    fn branch_input_power_is_accounted_for(
        v_dl in 0.0f64..150.0,
        i_l in 0.0f64..8000.0,
        dv in -20.0f64..40.0,
        d in 0.5f64..0.98,
        v_dc in 900.0f64..1100.0,
    ) {
        let p = StackParams {
            R_L_stack: 0.0,
            R_1: f64::INFINITY,
            ..StackParams::default()
        };
        let u_if = p.n() * reversible_voltage(&p).unwrap() + v_dl;
        let st = StackState { V_dl: v_dl, i_L: i_l, V_stack: u_if + dv.max(0.0), gamma: 0.0 };
        let b = branch_derivatives(&st, d, v_dc, &p).unwrap();
        let pw = stack_powers(&st, &p);
        let input = d * v_dc * i_l;
        let stored = p.L_stack * i_l * b.di_l + p.C_out * st.V_stack * b.dv_stack + p.c_dl_total() * u_if * b.dv_dl;
        let out = pw.reaction + pw.ohmic + pw.shunt;
        prop_assert!((input - stored - out).abs() <= 1e-9 * input.abs().max(1.0));
    }
}

#[test]
fn double_layer_relaxes_at_the_activation_time_constant() {
    let p = StackParams::default();
    for (i0, i1) in [(1000.0, 1010.0), (3000.0, 3030.0), (6000.0, 6060.0)] {
        let mut st = StackState::equilibrium(i0, &p).unwrap();
        let v_end = StackState::equilibrium(i1, &p).unwrap().V_dl;
        let target = v_end - (v_end - st.V_dl) * (-1.0f64).exp();
        let tau = r_act_total(i1, &p) * p.c_dl_total();
        let h = tau / 20_000.0;
        let mut t = 0.0;
        while st.V_dl < target {
            let f = |v: f64| edl_derivatives(&StackState { V_dl: v, ..st }, i1, &p);
            let k1 = f(st.V_dl);
            let k2 = f(st.V_dl + 0.5 * h * k1);
            let k3 = f(st.V_dl + 0.5 * h * k2);
            let k4 = f(st.V_dl + h * k3);
            st.V_dl += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        assert!((t - tau).abs() <= 0.05 * tau, "I {i0} -> {i1}: {t} s vs tau {tau} s");
    }
}

// --- engine ----------------------------------------------------------------

#[test]
fn reruns_are_bit_identical_and_seeds_matter() {
    let mut cfg = scenarios::high_volatility();
    cfg.duration = 1.0;
    assert_eq!(csv(&cfg), csv(&cfg));
    let other = ScenarioConfig { seed: cfg.seed + 1, ..cfg.clone() };
    assert_ne!(csv(&cfg), csv(&other));
}

#[test]
fn balanced_plant_settles_to_nominal() {
    let mut cfg = scenarios::steady();
    cfg.duration = 10.0;
    channels(&mut cfg, &["u1_omega", "u1_V_dc"]);
    let out = run_scenario(&cfg).unwrap();
    let omega0 = cfg.network.omega_0();
    let w = *out.trajectory.channel("u1_omega").unwrap().last().unwrap();
    let v = *out.trajectory.channel("u1_V_dc").unwrap().last().unwrap();
    assert!((w - omega0).abs() <= 1e-3, "omega {w} vs {omega0}");
    assert!((v / cfg.network.V_dc - 1.0).abs() <= 1e-3, "V_dc {v}");
}

#[test]
fn power_balance_holds_along_trajectories() {
    let rated = StackParams::default().P_rated;
    let mut hv = scenarios::high_volatility();
    hv.duration = 5.0;
    for mut cfg in [scenarios::unit_trip(), scenarios::stack_trip(), hv] {
        channels(&mut cfg, &["power_residual"]);
        let out = run_scenario(&cfg).unwrap();
        let worst = out
            .trajectory
            .channel("power_residual")
            .unwrap()
            .iter()
            .fold(0.0_f64, |m, r| m.max(r.abs()));
        assert!(worst <= 0.01 * rated, "{}: {worst} W", cfg.name);
        assert!(out.summary.max_residual_w >= worst);
    }
}

#[test]
fn recorded_modes_satisfy_their_guards() {
    for mut cfg in [scenarios::steady(), scenarios::generation_trip(), scenarios::unit_trip()] {
        cfg.record.every = 1;
        channels(&mut cfg, &["u1_P_s", "u1_mode", "u1_soc"]);
        let out = run_scenario(&cfg).unwrap();
        let t = &out.trajectory;
        let sp = &cfg.units[0].stack;
        let lim = ModeLimits {
            p_rated: sp.P_rated,
            p_min: sp.p_min(),
            es_charge_max: cfg.units[0].battery.P_max,
            soc_min: cfg.soc.SOC_min,
            soc_max: cfg.soc.SOC_max,
            thresholds: cfg.modes.clone(),
        };
        let (ps, mode, soc) = (t.channel("u1_P_s").unwrap(), t.channel("u1_mode").unwrap(), t.channel("u1_soc").unwrap());
        for i in 0..t.len() {
            let m = OperatingMode::from_index(mode[i] as usize).unwrap();
            // none of these presets takes the stack away from unit 1
            assert!(consistent(m, ps[i], sp.P_rated, soc[i], &lim), "{} at {} s: mode {m}, P_s {}", cfg.name, t.times[i], ps[i]);
        }
    }
}

#[test]
fn stack_reference_respects_slew_and_ramp_limits() {
    let mut cfg = scenarios::high_volatility();
    cfg.duration = 20.0;
    cfg.record.every = 1;
    channels(&mut cfg, &["u1_I_ref", "u1_P_load"]);
    let out = run_scenario(&cfg).unwrap();
    let sp = &cfg.units[0].stack;
    let i_ref = out.trajectory.channel("u1_I_ref").unwrap();
    let slew = i_ref.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    assert!(slew <= sp.slew_per_second() * cfg.step * (1.0 + 1e-9), "{slew} A per step");
    let load = out.trajectory.channel("u1_P_load").unwrap();
    let skip = (5.0 / cfg.step) as usize;
    let ramp = load[skip..].windows(2).map(|w| (w[1] - w[0]).abs() / cfg.step).fold(0.0, f64::max);
    assert!(ramp <= sp.ramp_per_second() * (1.0 + 1e-6), "{} MW/min", ramp * 60.0 / 1e6);
}

#[test]
fn soc_spread_contracts_window_by_window() {
    let mut cfg = scenarios::soc_equalization();
    cfg.duration = 60.0;
    channels(&mut cfg, &["u1_soc", "u2_soc"]);
    let out = run_scenario(&cfg).unwrap();
    let t = &out.trajectory;
    let spread: Vec<f64> = t.channel("u1_soc").unwrap().iter().zip(t.channel("u2_soc").unwrap()).map(|(a, b)| (a - b).abs()).collect();
    // one mid-band period is 1 s
    let per = (1.0 / t.sample_step().unwrap()).round() as usize;
    let ends: Vec<f64> = spread.iter().step_by(per).cloned().collect();
    for w in ends.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    assert!(ends.last().unwrap() < &ends[0]);
}

#[test]
fn frozen_controls_still_integrate_the_plant() {
    let cfg = ScenarioConfig {
        duration: 0.01,
        pv_profile: PvProfile::Constant { power: 3e6 },
        ..ScenarioConfig::default()
    };
    let mut e = Engine::new(&cfg).unwrap();
    e.set_frozen(true);
    e.perturb("u1_V_dc", 10.0).unwrap();
    let before = e.state_vector().to_vec();
    e.advance(10).unwrap();
    assert_ne!(before, e.state_vector());
    assert!(e.perturb("u9_V_dc", 1.0).is_err());
}
