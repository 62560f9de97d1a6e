//! Fixed-step simulation of the PV source, the AC bus and one or more
//! units.
//!
//! Plant states advance with classical RK4; every controller runs once per
//! step and its outputs (duties, references) are held across the step.
//! Angles are kept in a frame rotating at `omega_0`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::config::{EventKind, NetworkKind, ScenarioConfig, UnitConfig};
use crate::error::{Error, Result};
use crate::fleet::{droop_shares, soc_step, soc_voltage_ref, FleetState, SocClamp, UnitSoc};
use crate::modes::{mode_transition, ModeLimits, OperatingMode};
use crate::pv::{synthesize_pv, PvProfile};
use crate::series::TimeSeries;
use crate::split::{
    edl_feedforward, es_current_loop, HighBand, es_current_pi, es_voltage_loop, es_voltage_pi, filter_step, FilterBank, Pi,
    PowerLoopLimits, SplitPowers, StackPowerLoop,
};
use crate::stack::{self, current_for_power, StackState};
use crate::vsm::wrap_angle;

const V_DC: usize = 0;
const XI: usize = 1;
const PHI: usize = 2;
const I_L: usize = 3;
const V_ST: usize = 4;
const V_DL: usize = 5;
const I_B: usize = 6;
/// Battery EMF energy drawn during the current step, J.
const E_BAT: usize = 7;
pub const STATES_PER_UNIT: usize = 8;

/// Continuous states of each unit, in state-vector order.
pub const UNIT_STATE_NAMES: [&str; STATES_PER_UNIT] = ["V_dc", "xi", "phi", "i_stack", "V_stack", "V_dl", "i_b", "e_bat"];

/// Per-unit channels, recorded as `u<k>_<name>`.
pub const UNIT_CHANNELS: [&str; 30] = [
    "V_dc", "dV_dc", "V_oref", "omega", "theta", "P_ref", "P_ac", "P_s", "P_h", "P_m", "P_L", "I_ref", "i_stack",
    "V_stack", "V_dl", "P_stack", "P_load", "P_edl", "P_ohmic", "i_b", "I_b_ref", "P_es", "P_bat", "soc", "D", "D_b",
    "mode", "R_up", "R_down", "residual",
];

pub const GLOBAL_CHANNELS: [&str; 7] = ["pv_avail", "pv_power", "curtail", "delta_bus", "f_bus", "power_residual", "n_active"];

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub time: f64,
    pub kind: String,
    pub detail: String,
}

/// Timestamped records; timestamps are non-decreasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub records: Vec<LogRecord>,
}

impl EventLog {
    pub fn push(&mut self, time: f64, kind: &str, detail: impl Into<String>) {
        self.records.push(LogRecord {
            time,
            kind: kind.to_string(),
            detail: detail.into(),
        });
    }

    pub fn count(&self, kind: &str) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["time_s", "kind", "detail"])?;
        for r in &self.records {
            wr.write_record([r.time.to_string(), r.kind.clone(), r.detail.clone()])?;
        }
        wr.flush().map_err(|e| Error::io("<event log>", e))?;
        Ok(())
    }
}

/// Recorded channels, column-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn sample_step(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["time_s".to_string()];
        header.extend(self.names.iter().cloned());
        wr.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for (k, t) in self.times.iter().enumerate() {
            row.clear();
            row.push(t.to_string());
            for c in &self.columns {
                row.push(c[k].to_string());
            }
            wr.write_record(&row)?;
        }
        wr.flush().map_err(|e| Error::io("<trajectory>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventOutcome {
    pub kind: EventKind,
    pub time: f64,
    pub unit: usize,
    /// Time from the event until every active bus stayed inside +/-2%.
    pub recovery: f64,
    /// Largest bus deviation after the event, fraction of nominal.
    pub max_dv_pu: f64,
    /// Modes of the active units at the end of the event window.
    pub modes: Vec<OperatingMode>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub name: String,
    pub duration: f64,
    pub steps: usize,
    pub max_dv_pu: f64,
    pub max_df_hz: f64,
    pub curtailed_wh: f64,
    pub pv_energy_wh: f64,
    /// Largest instantaneous power-balance residual seen at a recorded
    /// sample, W.
    pub max_residual_w: f64,
    pub final_soc: Vec<f64>,
    pub final_modes: Vec<OperatingMode>,
    pub events: Vec<EventOutcome>,
}

impl RunSummary {
    pub fn soc_spread(&self) -> f64 {
        let hi = self.final_soc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.final_soc.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.final_soc.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut head: Vec<String> = [
            "name",
            "duration_s",
            "steps",
            "max_dv_pu",
            "max_df_hz",
            "curtailed_wh",
            "pv_energy_wh",
            "max_residual_w",
            "soc_spread",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut vals = vec![
            self.name.clone(),
            self.duration.to_string(),
            self.steps.to_string(),
            self.max_dv_pu.to_string(),
            self.max_df_hz.to_string(),
            self.curtailed_wh.to_string(),
            self.pv_energy_wh.to_string(),
            self.max_residual_w.to_string(),
            self.soc_spread().to_string(),
        ];
        for (k, (s, m)) in self.final_soc.iter().zip(&self.final_modes).enumerate() {
            head.push(format!("u{}_soc", k + 1));
            vals.push(s.to_string());
            head.push(format!("u{}_mode", k + 1));
            vals.push(m.to_string());
        }
        for (k, e) in self.events.iter().enumerate() {
            head.push(format!("event{}_recovery_s", k + 1));
            vals.push(e.recovery.to_string());
        }
        wr.write_record(&head)?;
        wr.write_record(&vals)?;
        wr.flush().map_err(|e| Error::io("<summary>", e))?;
        Ok(())
    }
}

/// Public snapshot of one unit's continuous states.
#[derive(Debug, Clone, Copy, PartialEq)]
#[allow(non_snake_case)]
pub struct UnitPlant {
    pub V_dc: f64,
    pub xi: f64,
    /// VSM angle relative to the `omega_0` frame.
    pub phi: f64,
    pub stack: StackState,
    pub i_b: f64,
    pub soc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub time: f64,
    pub units: Vec<UnitPlant>,
    pub curtail: f64,
}

#[derive(Debug, Clone)]
struct Unit {
    cfg: UnitConfig,
    active: bool,
    stack_available: bool,
    limits: ModeLimits,
    // held controls
    d_stack: f64,
    d_es: f64,
    v_ref: f64,
    // controllers
    bank: FilterBank,
    power_loop: StackPowerLoop,
    current_pi: Pi,
    es_v_pi: Pi,
    es_i_pi: Pi,
    mode: OperatingMode,
    soc: f64,
    e_cap_wh: f64,
    split: SplitPowers,
    i_ref: f64,
    i_b_ref: f64,
    p_s: f64,
    r_up: f64,
    r_down: f64,
    force_min_duty: bool,
    stack_clamped: bool,
    es_clamped: bool,
    /// Stack current reference ceiling, A.
    i_max: f64,
    /// Rate-limited high-band command, W.
    p_high: f64,
}

/// Network solution at one instant.
#[derive(Debug, Clone, Copy)]
struct Bus {
    delta: f64,
    omega: f64,
    p_pv: f64,
    p_avail: f64,
    /// `rhs / R` of the angle equation; above one means no solution.
    load_ratio: f64,
}

pub struct Engine {
    cfg: ScenarioConfig,
    pv: TimeSeries,
    pv_scale: f64,
    units: Vec<Unit>,
    x: Vec<f64>,
    t: f64,
    steps_done: usize,
    frozen: bool,
    // rk4 scratch
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    next_event: usize,
    log: EventLog,
    trajectory: Trajectory,
    channel_map: Vec<ChannelRef>,
    summary: RunSummary,
    curtailed_j: f64,
    pv_j: f64,
    event_windows: Vec<EventWindow>,
}

#[derive(Debug, Clone, Copy)]
enum ChannelRef {
    Global(usize),
    Unit(usize, usize),
}

#[derive(Debug, Clone)]
struct EventWindow {
    kind: EventKind,
    unit: usize,
    start: f64,
    last_outside: Option<f64>,
    max_dv: f64,
    closed: bool,
    modes: Vec<OperatingMode>,
}

fn pv_grid_step(cfg: &ScenarioConfig) -> f64 {
    match cfg.pv_profile {
        PvProfile::Stochastic { .. } => cfg.step,
        _ => cfg.step.max(1e-2_f64.min(cfg.duration.max(cfg.step))),
    }
}

impl Engine {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.normalize();
        cfg.validate()?;
        let pv = synthesize_pv(&cfg.pv_profile, cfg.duration, pv_grid_step(&cfg), cfg.seed)?;
        let n = cfg.units.len();
        let p_avail0 = pv.sample(0.0);
        let share0 = p_avail0 / n as f64;
        let v_nom = cfg.network.V_dc;
        let dt = cfg.step;
        let base = cfg.network.base();
        let mut units = Vec::with_capacity(n);
        let mut x = vec![0.0; n * STATES_PER_UNIT + 1];
        for (k, uc) in cfg.units.iter().enumerate() {
            let sp = &uc.stack;
            let limits = ModeLimits {
                p_rated: sp.P_rated,
                p_min: sp.p_min(),
                es_charge_max: if uc.es_enabled { uc.battery.P_max } else { 0.0 },
                soc_min: cfg.soc.SOC_min,
                soc_max: cfg.soc.SOC_max,
                thresholds: cfg.modes.clone(),
            };
            let mode = mode_transition(share0, sp.P_rated, uc.soc0, &limits, None);
            let v_ref = soc_voltage_ref(uc.soc0, v_nom, &cfg.soc)?;
            // stack equilibrium
            let p0 = if mode.stack_on() {
                share0.clamp(sp.p_min(), sp.P_rated)
            } else {
                0.0
            };
            let i_cell = match uc.current_reference {
                Some(i) => (i - stack::stack_voltage(i, sp)? / sp.R_1).max(0.0),
                None => {
                    // the bus share also covers the branch conduction loss
                    let mut p = p0;
                    let mut i = current_for_power(p, sp)?;
                    if p0 > 0.0 {
                        for _ in 0..30 {
                            p = (p0 - sp.R_L_stack * i * i).max(sp.p_min());
                            i = current_for_power(p, sp)?;
                        }
                    }
                    i
                }
            };
            let st = StackState::equilibrium(i_cell, sp)?;
            let d0 = (st.V_stack + sp.R_L_stack * st.i_L) / v_ref;
            if !(uc.dcdc.duty_min..=uc.dcdc.duty_max).contains(&d0) {
                return Err(Error::Precondition(format!(
                    "unit {}: initial stack duty {d0} outside the duty range",
                    k + 1
                )));
            }
            let g = &uc.gains;
            let mut current_pi = Pi::new(g.K_p, g.K_i);
            if g.K_i > 0.0 {
                current_pi.integ = d0 / g.K_i;
            }
            let mut power_loop = StackPowerLoop::new(g, &base);
            // command the power the first control step will ask for
            let p_cmd0 = if p0 > 0.0 {
                (p0 - sp.R_L_stack * st.i_L * st.i_L).clamp(sp.p_min(), sp.P_rated)
            } else {
                0.0
            };
            power_loop.p_cmd = p_cmd0;
            power_loop.i_ref = st.i_L;
            if power_loop.pi.ki > 0.0 && p_cmd0 > 0.0 {
                let e = p_cmd0 - st.V_stack * st.i_L;
                power_loop.pi.integ = (st.i_L - p_cmd0 / st.V_stack - power_loop.pi.kp * e) / power_loop.pi.ki;
            }
            let mut bank = FilterBank::new(&uc.filter, dt)?;
            bank.prime(share0);
            // bus and ES balance
            let p_branch = v_ref * d0 * st.i_L;
            let p_ac0 = match cfg.network.kind {
                NetworkKind::Islanded => share0,
                NetworkKind::InfiniteBus => {
                    if uc.es_enabled {
                        share0
                    } else {
                        p_branch
                    }
                }
            };
            let (i_b0, d_es0) = if uc.es_enabled {
                let i_lim = uc.battery.P_max / v_ref;
                let i_b = ((p_branch - p_ac0) / v_ref).clamp(-i_lim, i_lim);
                let mut d = (v_ref + uc.dcdc.R_b * i_b) / uc.battery.V_bat;
                for _ in 0..20 {
                    d = (v_ref + uc.dcdc.R_b * i_b) / uc.battery.terminal_voltage(d * i_b);
                }
                (i_b, d)
            } else {
                (0.0, 0.0)
            };
            let ratio = p_ac0 / uc.vsm.K_delta;
            if ratio.abs() >= 1.0 {
                return Err(Error::Precondition(format!(
                    "unit {}: initial AC power {p_ac0} W exceeds K_delta",
                    k + 1
                )));
            }
            let o = k * STATES_PER_UNIT;
            x[o + V_DC] = v_ref;
            x[o + PHI] = ratio.asin();
            x[o + I_L] = st.i_L;
            x[o + V_ST] = st.V_stack;
            x[o + V_DL] = st.V_dl;
            x[o + I_B] = i_b0;
            let e_cap_wh = uc.battery.E_cap / cfg.time_compression;
            units.push(Unit {
                cfg: uc.clone(),
                active: true,
                stack_available: true,
                limits,
                d_stack: d0,
                d_es: d_es0,
                v_ref,
                bank,
                power_loop,
                current_pi,
                es_v_pi: es_voltage_pi(g, &base),
                es_i_pi: es_current_pi(g, &base),
                mode,
                soc: uc.soc0,
                e_cap_wh,
                split: SplitPowers {
                    P_h: 0.0,
                    P_m: 0.0,
                    P_L: share0,
                },
                i_ref: st.i_L,
                i_b_ref: i_b0,
                p_s: share0,
                r_up: 1.0 / n as f64,
                r_down: 1.0 / n as f64,
                force_min_duty: false,
                stack_clamped: false,
                es_clamped: false,
                i_max: 1.1 * current_for_power(sp.P_rated, sp)?,
                p_high: 0.0,
            });
        }
        let channel_map = build_channels(&cfg)?;
        let names = channel_names(&cfg, &channel_map);
        let dim = x.len();
        let mut events = cfg.events.clone();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        cfg.events = events;
        let mut eng = Self {
            summary: RunSummary {
                name: cfg.name.clone(),
                duration: cfg.duration,
                ..Default::default()
            },
            cfg,
            pv,
            pv_scale: 1.0,
            units,
            x,
            t: 0.0,
            steps_done: 0,
            frozen: false,
            k: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
            tmp: vec![0.0; dim],
            next_event: 0,
            log: EventLog::default(),
            trajectory: Trajectory {
                columns: vec![Vec::new(); names.len()],
                names,
                times: Vec::new(),
            },
            channel_map,
            curtailed_j: 0.0,
            pv_j: 0.0,
            event_windows: Vec::new(),
        };
        eng.update_shares();
        for (k, u) in eng.units.iter().enumerate() {
            eng.log.push(0.0, "mode", format!("u{} start in mode {}", k + 1, u.mode));
        }
        Ok(eng)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn modes(&self) -> Vec<OperatingMode> {
        self.units.iter().map(|u| u.mode).collect()
    }

    /// Hold every controller output and mode at its current value.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn state_vector(&self) -> &[f64] {
        &self.x
    }

    /// Index of a state such as `u1_V_dc`, `u2_i_b` or `curtail`.
    pub fn state_index(&self, name: &str) -> Option<usize> {
        if name == "curtail" {
            return Some(self.x.len() - 1);
        }
        let rest = name.strip_prefix('u')?;
        let (num, field) = rest.split_once('_')?;
        let k: usize = num.parse().ok()?;
        if k == 0 || k > self.units.len() {
            return None;
        }
        let j = UNIT_STATE_NAMES.iter().position(|s| *s == field)?;
        Some((k - 1) * STATES_PER_UNIT + j)
    }

    pub fn perturb(&mut self, name: &str, delta: f64) -> Result<()> {
        let i = self
            .state_index(name)
            .ok_or_else(|| Error::Invalid(format!("unknown state '{name}'")))?;
        self.x[i] += delta;
        Ok(())
    }

    pub fn plant_state(&self) -> PlantState {
        PlantState {
            time: self.t,
            curtail: self.x[self.x.len() - 1],
            units: self
                .units
                .iter()
                .enumerate()
                .map(|(k, u)| {
                    let o = k * STATES_PER_UNIT;
                    UnitPlant {
                        V_dc: self.x[o + V_DC],
                        xi: self.x[o + XI],
                        phi: self.x[o + PHI],
                        stack: StackState {
                            V_dl: self.x[o + V_DL],
                            i_L: self.x[o + I_L],
                            V_stack: self.x[o + V_ST],
                            gamma: u.current_pi.integ,
                        },
                        i_b: self.x[o + I_B],
                        soc: u.soc,
                    }
                })
                .collect(),
        }
    }

    fn pv_available(&self, t: f64) -> f64 {
        self.pv.sample(t) * self.pv_scale
    }

    fn omega(&self, k: usize, x: &[f64]) -> f64 {
        let u = &self.units[k];
        let o = k * STATES_PER_UNIT;
        u.cfg.vsm.omega_0 + u.cfg.vsm.K_J * x[o + XI] + u.cfg.vsm.K_D * (u.v_ref - x[o + V_DC])
    }

    fn droop_power(&self, k: usize, x: &[f64]) -> f64 {
        let u = &self.units[k];
        u.cfg.vsm.droop_gain() * (u.v_ref - x[k * STATES_PER_UNIT + V_DC])
    }

    fn bus(&self, t: f64, x: &[f64]) -> Bus {
        let omega_0 = self.cfg.network.omega_0();
        let p_avail = self.pv_available(t);
        let curtail = x[x.len() - 1].clamp(0.0, 1.0);
        let p_pv = p_avail * (1.0 - curtail);
        match self.cfg.network.kind {
            NetworkKind::InfiniteBus => Bus {
                delta: 0.0,
                omega: omega_0,
                p_pv,
                p_avail,
                load_ratio: 0.0,
            },
            NetworkKind::Islanded => {
                let (mut s, mut c, mut droop) = (0.0, 0.0, 0.0);
                for (k, u) in self.units.iter().enumerate() {
                    if !u.active {
                        continue;
                    }
                    let phi = x[k * STATES_PER_UNIT + PHI];
                    s += u.cfg.vsm.K_delta * phi.sin();
                    c += u.cfg.vsm.K_delta * phi.cos();
                    droop += self.droop_power(k, x);
                }
                let r = s.hypot(c);
                let ratio = if r > 0.0 { (p_pv - droop) / r } else { f64::INFINITY };
                let delta = s.atan2(c) - ratio.clamp(-1.0, 1.0).asin();
                let (mut num, mut den, mut mean, mut m) = (0.0, 0.0, 0.0, 0.0_f64);
                for (k, u) in self.units.iter().enumerate() {
                    if !u.active {
                        continue;
                    }
                    let w = self.omega(k, x);
                    let cw = u.cfg.vsm.K_delta * (x[k * STATES_PER_UNIT + PHI] - delta).cos();
                    num += cw * w;
                    den += cw;
                    mean += w;
                    m += 1.0;
                }
                let omega = if den > 0.0 { num / den } else { mean / m.max(1.0) };
                Bus {
                    delta,
                    omega,
                    p_pv,
                    p_avail,
                    load_ratio: ratio.abs(),
                }
            }
        }
    }

    fn p_ac(&self, k: usize, x: &[f64], bus: &Bus) -> f64 {
        let u = &self.units[k];
        u.cfg.vsm.K_delta * (x[k * STATES_PER_UNIT + PHI] - bus.delta).sin() + self.droop_power(k, x)
    }

    fn curtail_target(&self, omega: f64) -> f64 {
        let c = &self.cfg.curtailment;
        let df = (omega - self.cfg.network.omega_0()) / (2.0 * PI);
        ((-df - c.deadband_hz) / c.span_hz).clamp(0.0, 1.0)
    }

    fn stack_state(x: &[f64], o: usize) -> StackState {
        StackState {
            V_dl: x[o + V_DL],
            i_L: x[o + I_L],
            V_stack: x[o + V_ST],
            gamma: 0.0,
        }
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let bus = self.bus(t, x);
        let omega_0 = self.cfg.network.omega_0();
        let c_dc = self.cfg.network.C_dc;
        for (k, u) in self.units.iter().enumerate() {
            let o = k * STATES_PER_UNIT;
            if !u.active {
                dx[o..o + STATES_PER_UNIT].fill(0.0);
                continue;
            }
            let v = x[o + V_DC];
            let p_ac = self.p_ac(k, x, &bus);
            let st = Self::stack_state(x, o);
            let bd = stack::branch_derivatives_unchecked(&st, u.d_stack, v, &u.cfg.stack);
            let mut di_l = bd.di_l;
            if st.i_L <= 0.0 && di_l < 0.0 {
                di_l = 0.0;
            }
            let (di_b, p_bat) = if u.cfg.es_enabled {
                let i_b = x[o + I_B];
                let v_bt = u.cfg.battery.terminal_voltage(u.d_es * i_b);
                let di = (u.d_es * v_bt - v - u.cfg.dcdc.R_b * i_b) / u.cfg.dcdc.L_b;
                (di, u.cfg.battery.V_bat * u.d_es * i_b)
            } else {
                (0.0, 0.0)
            };
            dx[o + V_DC] = (p_ac / v + x[o + I_B] - u.d_stack * st.i_L) / c_dc;
            dx[o + XI] = u.v_ref - v;
            dx[o + PHI] = self.omega(k, x) - omega_0;
            dx[o + I_L] = di_l;
            dx[o + V_ST] = bd.dv_stack;
            dx[o + V_DL] = bd.dv_dl;
            dx[o + I_B] = di_b;
            dx[o + E_BAT] = p_bat;
        }
        let last = x.len() - 1;
        dx[last] = (self.curtail_target(bus.omega) - x[last]) / self.cfg.curtailment.lag;
    }

    fn rk4(&mut self, dt: f64) {
        let n = self.x.len();
        let t = self.t;
        let mut k = std::mem::take(&mut self.k);
        let mut tmp = std::mem::take(&mut self.tmp);
        self.rhs(t, &self.x, &mut k[0]);
        for i in 0..n {
            tmp[i] = self.x[i] + 0.5 * dt * k[0][i];
        }
        self.rhs(t + 0.5 * dt, &tmp, &mut k[1]);
        for i in 0..n {
            tmp[i] = self.x[i] + 0.5 * dt * k[1][i];
        }
        self.rhs(t + 0.5 * dt, &tmp, &mut k[2]);
        for i in 0..n {
            tmp[i] = self.x[i] + dt * k[2][i];
        }
        self.rhs(t + dt, &tmp, &mut k[3]);
        for i in 0..n {
            self.x[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        self.k = k;
        self.tmp = tmp;
    }

    fn active_count(&self) -> usize {
        self.units.iter().filter(|u| u.active).count()
    }

    fn update_shares(&mut self) {
        let idx: Vec<usize> = (0..self.units.len()).filter(|&k| self.units[k].active).collect();
        let fleet = FleetState {
            units: idx
                .iter()
                .map(|&k| UnitSoc {
                    soc: self.units[k].soc,
                    soc_min: self.cfg.soc.SOC_min,
                    soc_max: self.cfg.soc.SOC_max,
                })
                .collect(),
        };
        match droop_shares(&fleet) {
            Ok(s) => {
                for (j, &k) in idx.iter().enumerate() {
                    self.units[k].r_up = s.up[j];
                    self.units[k].r_down = s.down[j];
                }
            }
            Err(_) => {
                // every unit pinned at one limit: the SOC clamps stop the ES
                // anyway, share evenly so the feedforward stays defined
                let even = 1.0 / idx.len().max(1) as f64;
                for &k in &idx {
                    self.units[k].r_up = even;
                    self.units[k].r_down = even;
                }
            }
        }
        for u in self.units.iter_mut().filter(|u| !u.active) {
            u.r_up = 0.0;
            u.r_down = 0.0;
        }
    }

    /// Available source power attributed to each unit.
    fn source_shares(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let bus = self.bus(t, x);
        let n = self.active_count().max(1) as f64;
        let p: Vec<f64> = (0..self.units.len())
            .map(|k| if self.units[k].active { self.p_ac(k, x, &bus).max(0.0) } else { 0.0 })
            .collect();
        let total: f64 = p.iter().sum();
        (0..self.units.len())
            .map(|k| {
                if !self.units[k].active {
                    0.0
                } else if total > 1e3 {
                    bus.p_avail * p[k] / total
                } else {
                    bus.p_avail / n
                }
            })
            .collect()
    }

    fn apply_events(&mut self) {
        while let Some(e) = self.cfg.events.get(self.next_event).cloned() {
            if e.time > self.t + 0.5 * self.cfg.step {
                break;
            }
            self.next_event += 1;
            for w in self.event_windows.iter_mut() {
                w.closed = true;
            }
            let k = e.unit.saturating_sub(1);
            match e.kind {
                EventKind::GenerationTrip => {
                    self.pv_scale = 0.0;
                    for u in self.units.iter_mut().filter(|u| u.active) {
                        u.force_min_duty = true;
                    }
                    self.log.push(self.t, "contingency", "generation trip");
                }
                EventKind::StackTrip => {
                    self.units[k].stack_available = false;
                    self.log.push(self.t, "contingency", format!("stack trip on u{}", k + 1));
                }
                EventKind::UnitTrip => {
                    self.units[k].active = false;
                    self.log.push(self.t, "contingency", format!("unit trip on u{}", k + 1));
                }
            }
            self.event_windows.push(EventWindow {
                kind: e.kind,
                unit: e.unit,
                start: self.t,
                last_outside: None,
                max_dv: 0.0,
                closed: false,
                modes: Vec::new(),
            });
            self.update_shares();
            self.update_modes();
        }
    }

    fn update_modes(&mut self) {
        let shares = self.source_shares(self.t, &self.x);
        for k in 0..self.units.len() {
            let u = &self.units[k];
            if !u.active {
                continue;
            }
            let demand = if u.stack_available { u.limits.p_rated } else { 0.0 };
            let next = mode_transition(shares[k], demand, u.soc, &u.limits, Some(u.mode));
            let prev = u.mode;
            self.units[k].p_s = shares[k];
            if next != prev {
                self.units[k].mode = next;
                self.log.push(self.t, "mode", format!("u{} {} -> {}", k + 1, prev, next));
            }
        }
    }

    fn control(&mut self) -> Result<()> {
        let dt = self.cfg.step;
        let bus = self.bus(self.t, &self.x);
        let n = self.units.len();
        let mut p_ac = vec![0.0; n];
        let mut surplus = 0.0;
        for k in 0..n {
            if !self.units[k].active {
                continue;
            }
            let o = k * STATES_PER_UNIT;
            p_ac[k] = self.p_ac(k, &self.x, &bus);
            let p_branch = self.x[o + V_DC] * self.units[k].d_stack * self.x[o + I_L];
            surplus += p_ac[k] - p_branch;
        }
        let v_nom = self.cfg.network.V_dc;
        let soc_params = self.cfg.soc.clone();
        let tol = self.cfg.modes.soc_tolerance;
        for k in 0..n {
            if !self.units[k].active {
                continue;
            }
            let o = k * STATES_PER_UNIT;
            let v = self.x[o + V_DC];
            let st = Self::stack_state(&self.x, o);
            let dv_dl_dt = {
                let u = &self.units[k];
                stack::branch_derivatives_unchecked(&st, u.d_stack, v, &u.cfg.stack).dv_dl
            };
            let i_b = self.x[o + I_B];
            let xi = self.x[o + XI];
            let t = self.t;
            let u = &mut self.units[k];
            let sp = &u.cfg.stack;
            let g = &u.cfg.gains;
            let dc = &u.cfg.dcdc;
            u.v_ref = soc_voltage_ref(u.soc, v_nom, &soc_params)?;
            u.split = filter_step(&mut u.bank, p_ac[k], dt)?;

            // stack branch
            let stack_on = u.mode.stack_on() && u.stack_available;
            u.i_ref = match u.cfg.current_reference {
                Some(i) => i,
                None => {
                    let p_low = if stack_on && u.mode == OperatingMode::H {
                        sp.p_min()
                    } else if stack_on {
                        // the low band is measured at the bus; the branch
                        // conduction loss comes off before the stack sees it
                        (u.split.P_L - sp.R_L_stack * st.i_L * st.i_L).clamp(sp.p_min(), sp.P_rated)
                    } else {
                        0.0
                    };
                    let routed = stack_on && !u.mode.emergency();
                    let p_high = match (routed, u.cfg.filter.high_band) {
                        (false, _) | (_, HighBand::Off) => 0.0,
                        (true, HighBand::Filter) => u.split.P_h,
                        (true, HighBand::Complement) => p_ac[k] - u.split.P_m - u.split.P_L,
                    };
                    let rate = high_band_rate(u.cfg.filter.high_band_reactive_limit, st.V_stack, st.i_L, sp.L_stack);
                    u.p_high = if routed { u.p_high + (p_high - u.p_high).clamp(-rate * dt, rate * dt) } else { 0.0 };
                    let p_high = u.p_high;
                    let lim = PowerLoopLimits {
                        ramp: (!u.mode.emergency()).then(|| sp.ramp_per_second()),
                        slew: sp.slew_per_second().min(branch_slew(dc.duty_max * v - st.V_stack, sp.L_stack)),
                        // falling references stay fast: a duty at its floor
                        // unloads the bus while the inductor current decays
                        slew_down: Some(sp.slew_per_second()),
                        v_floor: g.v_stack_floor,
                        i_max: u.i_max,
                        hold: u.stack_clamped,
                    };
                    u.power_loop.step(p_low, p_high, st.V_stack, st.i_L, dt, &lim).i_ref
                }
            };
            let ff = if g.edl_feedforward {
                edl_feedforward(dv_dl_dt, v, sp.L_stack, g.v_dc_floor).unwrap_or(0.0)
            } else {
                0.0
            };
            let clamped = if u.force_min_duty {
                u.force_min_duty = false;
                if u.current_pi.ki > 0.0 {
                    u.current_pi.integ = dc.duty_min / u.current_pi.ki;
                }
                u.d_stack = dc.duty_min;
                true
            } else {
                let (d, c) = u.current_pi.step(u.i_ref - st.i_L, dt, dc.duty_min - ff, dc.duty_max - ff);
                u.d_stack = (d + ff).clamp(dc.duty_min, dc.duty_max);
                c
            };
            if clamped != u.stack_clamped {
                u.stack_clamped = clamped;
                self.log.push(t, "clamp", format!("u{} stack duty {}", k + 1, if clamped { "saturated" } else { "released" }));
            }

            // ES branch
            let u = &mut self.units[k];
            if u.cfg.es_enabled {
                let bat = &u.cfg.battery;
                let i_lim = bat.P_max / v.max(g_floor(&u.cfg));
                let share = if surplus > 0.0 { u.r_up } else { u.r_down };
                let i_ff = -share * surplus / v.max(g_floor(&u.cfg));
                let lim = u.cfg.gains.xi_restore_limit * v_nom;
                let target = u.v_ref + (u.cfg.gains.xi_restore * xi).clamp(-lim, lim);
                let (i_pi, _) = es_voltage_loop(target, v, &mut u.es_v_pi, dt, u.cfg.gains.es_headroom * i_lim);
                let mut i_ref = (i_ff + i_pi).clamp(-i_lim, i_lim);
                if u.soc >= soc_params.SOC_max - tol {
                    i_ref = i_ref.max(0.0);
                }
                if u.soc <= soc_params.SOC_min + tol {
                    i_ref = i_ref.min(0.0);
                }
                u.i_b_ref = i_ref;
                let v_bt = bat.terminal_voltage(u.d_es * i_b);
                let bias = (v + u.cfg.dcdc.R_b * i_b) / v_bt;
                let (d_b, c) = es_current_loop(
                    i_ref,
                    i_b,
                    bias,
                    &mut u.es_i_pi,
                    dt,
                    u.cfg.dcdc.duty_min,
                    u.cfg.dcdc.duty_max,
                );
                u.d_es = d_b;
                if c != u.es_clamped {
                    u.es_clamped = c;
                    self.log.push(t, "clamp", format!("u{} es duty {}", k + 1, if c { "saturated" } else { "released" }));
                }
            }
        }
        Ok(())
    }

    /// Advance one step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.cfg.step;
        self.apply_events();
        if !self.frozen {
            self.control()?;
        }
        let n = self.units.len();
        for k in 0..n {
            self.x[k * STATES_PER_UNIT + E_BAT] = 0.0;
        }
        let bus0 = self.bus(self.t, &self.x);
        self.rk4(dt);
        self.t = (self.steps_done + 1) as f64 * dt;
        self.steps_done += 1;
        let last = self.x.len() - 1;
        self.x[last] = self.x[last].clamp(0.0, 1.0);
        self.pv_j += bus0.p_avail * dt;
        self.curtailed_j += (bus0.p_avail - bus0.p_pv) * dt;

        // SOC from the energy drawn over the step
        for k in 0..n {
            let o = k * STATES_PER_UNIT;
            if !self.units[k].active || !self.units[k].cfg.es_enabled {
                continue;
            }
            let u = &self.units[k];
            let p_avg = self.x[o + E_BAT] / dt;
            let (soc, clamp) = soc_step(u.soc, p_avg, u.e_cap_wh, dt, u.cfg.battery.efficiency, &self.cfg.soc)?;
            if let Some(c) = clamp {
                if (c == SocClamp::Min && u.soc > self.cfg.soc.SOC_min) || (c == SocClamp::Max && u.soc < self.cfg.soc.SOC_max) {
                    self.log.push(self.t, "soc_clamp", format!("u{} {:?}", k + 1, c));
                }
            }
            self.units[k].soc = soc;
        }
        if self.cfg.network.kind == NetworkKind::Islanded {
            // common rotation only; keep angles near zero
            if let Some(k0) = (0..n).find(|&k| self.units[k].active) {
                let shift = self.x[k0 * STATES_PER_UNIT + PHI] - wrap_angle(self.x[k0 * STATES_PER_UNIT + PHI]);
                if shift != 0.0 {
                    for k in 0..n {
                        self.x[k * STATES_PER_UNIT + PHI] -= shift;
                    }
                }
            }
        } else {
            for k in 0..n {
                let i = k * STATES_PER_UNIT + PHI;
                self.x[i] = wrap_angle(self.x[i]);
            }
        }
        self.check_divergence()?;
        if !self.frozen {
            self.update_shares();
            self.update_modes();
        }
        self.track_stats();
        Ok(())
    }

    fn check_divergence(&self) -> Result<()> {
        let f = self.cfg.divergence_factor;
        let v_bound = f * self.cfg.network.V_dc;
        let i_bound = f * self.cfg.network.base().i_base();
        for (k, u) in self.units.iter().enumerate() {
            if !u.active {
                continue;
            }
            let o = k * STATES_PER_UNIT;
            for (j, bound) in [(V_DC, v_bound), (V_ST, v_bound), (V_DL, v_bound), (I_L, i_bound), (I_B, i_bound), (XI, v_bound)] {
                let val = self.x[o + j];
                if !val.is_finite() || val.abs() > bound {
                    return Err(Error::Divergence {
                        time: self.t,
                        channel: format!("u{}_{}", k + 1, UNIT_STATE_NAMES[j]),
                        value: val,
                    });
                }
            }
            if !(self.x[o + V_DC] > 0.0) {
                return Err(Error::Divergence {
                    time: self.t,
                    channel: format!("u{}_V_dc", k + 1),
                    value: self.x[o + V_DC],
                });
            }
        }
        let bus = self.bus(self.t, &self.x);
        if bus.load_ratio > 1.0 {
            return Err(Error::Divergence {
                time: self.t,
                channel: "ac_sync".into(),
                value: bus.load_ratio,
            });
        }
        Ok(())
    }

    fn track_stats(&mut self) {
        let v_nom = self.cfg.network.V_dc;
        let bus = self.bus(self.t, &self.x);
        let df = ((bus.omega - self.cfg.network.omega_0()) / (2.0 * PI)).abs();
        self.summary.max_df_hz = self.summary.max_df_hz.max(df);
        let mut worst: f64 = 0.0;
        for (k, u) in self.units.iter().enumerate() {
            if u.active {
                worst = worst.max((self.x[k * STATES_PER_UNIT + V_DC] - v_nom).abs() / v_nom);
            }
        }
        self.summary.max_dv_pu = self.summary.max_dv_pu.max(worst);
        let modes: Vec<OperatingMode> = self.units.iter().filter(|u| u.active).map(|u| u.mode).collect();
        if let Some(w) = self.event_windows.iter_mut().rev().find(|w| !w.closed) {
            w.max_dv = w.max_dv.max(worst);
            if worst > 0.02 {
                w.last_outside = Some(self.t);
            }
            w.modes = modes;
        }
    }

    /// Instantaneous power-balance residual (W) and its per-unit parts.
    pub fn power_residual(&self) -> (f64, Vec<f64>) {
        let mut dx = vec![0.0; self.x.len()];
        self.rhs(self.t, &self.x, &mut dx);
        let bus = self.bus(self.t, &self.x);
        let c_dc = self.cfg.network.C_dc;
        let mut parts = vec![0.0; self.units.len()];
        let mut p_ac_sum = 0.0;
        for (k, u) in self.units.iter().enumerate() {
            if !u.active {
                continue;
            }
            let o = k * STATES_PER_UNIT;
            let x = &self.x;
            let sp = &u.cfg.stack;
            let st = Self::stack_state(x, o);
            let p_ac = self.p_ac(k, x, &bus);
            p_ac_sum += p_ac;
            let pw = stack::stack_powers(&st, sp);
            let i_b = x[o + I_B];
            let p_bat = dx[o + E_BAT];
            let mut dissip = pw.ohmic + pw.shunt + sp.R_L_stack * st.i_L * st.i_L;
            if u.cfg.es_enabled {
                dissip += u.cfg.dcdc.R_b * i_b * i_b + u.cfg.battery.R_int * (u.d_es * i_b).powi(2);
            }
            let u_if = sp.n() * stack::reversible_voltage(sp).unwrap_or(sp.U_rev0) + st.V_dl;
            let storage = c_dc * x[o + V_DC] * dx[o + V_DC]
                + sp.L_stack * st.i_L * dx[o + I_L]
                + sp.C_out * st.V_stack * dx[o + V_ST]
                + sp.c_dl_total() * u_if * dx[o + V_DL]
                + u.cfg.dcdc.L_b * i_b * dx[o + I_B];
            parts[k] = p_ac + p_bat - dissip - pw.reaction - storage;
        }
        let mut total: f64 = parts.iter().sum();
        if self.cfg.network.kind == NetworkKind::Islanded {
            total += bus.p_pv - p_ac_sum;
        }
        (total, parts)
    }

    fn unit_channel(&self, k: usize, c: usize, bus: &Bus, residual: &[f64]) -> f64 {
        let u = &self.units[k];
        let o = k * STATES_PER_UNIT;
        let x = &self.x;
        let sp = &u.cfg.stack;
        let st = Self::stack_state(x, o);
        match UNIT_CHANNELS[c] {
            "V_dc" => x[o + V_DC],
            "dV_dc" => x[o + V_DC] - self.cfg.network.V_dc,
            "V_oref" => u.v_ref,
            "omega" => self.omega(k, x),
            "theta" => wrap_angle(x[o + PHI] + self.cfg.network.omega_0() * self.t),
            "P_ref" => u.cfg.vsm.P_0 + self.droop_power(k, x),
            "P_ac" => {
                if u.active {
                    self.p_ac(k, x, bus)
                } else {
                    0.0
                }
            }
            "P_s" => u.p_s,
            "P_h" => u.split.P_h,
            "P_m" => u.split.P_m,
            "P_L" => u.split.P_L,
            "I_ref" => u.i_ref,
            "i_stack" => st.i_L,
            "V_stack" => st.V_stack,
            "V_dl" => st.V_dl,
            "P_stack" => st.V_stack * st.i_L,
            "P_load" => stack::stack_powers(&st, sp).reaction,
            "P_edl" => stack::stack_powers(&st, sp).edl,
            "P_ohmic" => stack::stack_powers(&st, sp).ohmic,
            "i_b" => x[o + I_B],
            "I_b_ref" => u.i_b_ref,
            "P_es" => x[o + V_DC] * x[o + I_B],
            "P_bat" => u.cfg.battery.V_bat * u.d_es * x[o + I_B],
            "soc" => u.soc,
            "D" => u.d_stack,
            "D_b" => u.d_es,
            "mode" => u.mode.index() as f64,
            "R_up" => u.r_up,
            "R_down" => u.r_down,
            "residual" => residual[k],
            _ => f64::NAN,
        }
    }

    fn record(&mut self) {
        let bus = self.bus(self.t, &self.x);
        let (residual, parts) = self.power_residual();
        self.summary.max_residual_w = self.summary.max_residual_w.max(residual.abs());
        let values: Vec<f64> = self
            .channel_map
            .iter()
            .map(|c| match *c {
                ChannelRef::Global(g) => match GLOBAL_CHANNELS[g] {
                    "pv_avail" => bus.p_avail,
                    "pv_power" => bus.p_pv,
                    "curtail" => self.x[self.x.len() - 1],
                    "delta_bus" => bus.delta,
                    "f_bus" => bus.omega / (2.0 * PI),
                    "power_residual" => residual,
                    "n_active" => self.active_count() as f64,
                    _ => f64::NAN,
                },
                ChannelRef::Unit(k, c) => self.unit_channel(k, c, &bus, &parts),
            })
            .collect();
        self.trajectory.times.push(self.t);
        for (col, v) in self.trajectory.columns.iter_mut().zip(values) {
            col.push(v);
        }
    }

    /// Run to the configured duration.
    pub fn run(&mut self) -> Result<()> {
        let total = (self.cfg.duration / self.cfg.step).round() as usize;
        let every = self.cfg.record.every;
        if total > 0 && self.steps_done == 0 {
            self.record();
        }
        while self.steps_done < total {
            self.step()?;
            if self.steps_done % every == 0 {
                self.record();
            }
        }
        Ok(())
    }

    /// Advance `steps` steps without recording.
    pub fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> RunOutput {
        let s = &mut self.summary;
        s.steps = self.steps_done;
        s.curtailed_wh = self.curtailed_j / 3600.0;
        s.pv_energy_wh = self.pv_j / 3600.0;
        s.final_soc = self.units.iter().map(|u| u.soc).collect();
        s.final_modes = self.units.iter().map(|u| u.mode).collect();
        s.events = self
            .event_windows
            .iter()
            .map(|w| EventOutcome {
                kind: w.kind,
                time: w.start,
                unit: w.unit,
                recovery: w.last_outside.map_or(0.0, |t| t - w.start),
                max_dv_pu: w.max_dv,
                modes: w.modes.clone(),
            })
            .collect();
        RunOutput {
            trajectory: self.trajectory,
            log: self.log,
            summary: self.summary,
        }
    }
}

/// Largest rate of the high-band power command, W/s. Moving `i_L` by
/// `dP / V_stack` costs `L i di/dt` of inductor power at the bus.
fn high_band_rate(limit: f64, v_stack: f64, i_l: f64, l: f64) -> f64 {
    limit * v_stack.max(0.0) / (l * i_l.abs().max(1.0))
}

/// Fastest stack current change the branch can follow for an available
/// inductor voltage `headroom`, with a 50% margin, A/s.
fn branch_slew(headroom: f64, l: f64) -> f64 {
    (0.5 * headroom / l).max(0.0)
}

fn g_floor(u: &UnitConfig) -> f64 {
    u.gains.v_dc_floor
}

fn build_channels(cfg: &ScenarioConfig) -> Result<Vec<ChannelRef>> {
    let n = cfg.units.len();
    let all: Vec<(String, ChannelRef)> = GLOBAL_CHANNELS
        .iter()
        .enumerate()
        .map(|(g, name)| (name.to_string(), ChannelRef::Global(g)))
        .chain((0..n).flat_map(|k| {
            UNIT_CHANNELS
                .iter()
                .enumerate()
                .map(move |(c, name)| (format!("u{}_{}", k + 1, name), ChannelRef::Unit(k, c)))
        }))
        .collect();
    if cfg.record.channels.is_empty() {
        return Ok(all.into_iter().map(|(_, c)| c).collect());
    }
    cfg.record
        .channels
        .iter()
        .map(|want| {
            all.iter()
                .find(|(name, _)| name == want)
                .map(|(_, c)| *c)
                .ok_or_else(|| Error::Invalid(format!("unknown channel '{want}'")))
        })
        .collect()
}

fn channel_names(cfg: &ScenarioConfig, map: &[ChannelRef]) -> Vec<String> {
    let _ = cfg;
    map.iter()
        .map(|c| match *c {
            ChannelRef::Global(g) => GLOBAL_CHANNELS[g].to_string(),
            ChannelRef::Unit(k, c) => format!("u{}_{}", k + 1, UNIT_CHANNELS[c]),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub log: EventLog,
    pub summary: RunSummary,
}

/// Build, run and collect one scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let mut eng = Engine::new(cfg)?;
    eng.run()?;
    Ok(eng.finish())
}
