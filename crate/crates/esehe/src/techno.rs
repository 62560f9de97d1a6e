//! Techno-economic post-processing: converter losses, rain-flow cycle
//! counting, Miner damage, replacement scheduling, converter sizing and
//! cost, and sensitivity sweeps of the total life-cycle cost.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::converters::{conduction_loss, switching_loss, LossParams};
use crate::error::{Error, Result};
use crate::series::TimeSeries;
use crate::units::Unit;

pub const HOURS_PER_YEAR: f64 = 8760.0;
pub const SECONDS_PER_YEAR: f64 = HOURS_PER_YEAR * 3600.0;
const GAS_CONSTANT: f64 = 8.314_462_618;

// ---------------------------------------------------------------------------
// parameters

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationParams {
    /// Cycle-life scale, cycles.
    pub alpha: f64,
    /// Cycle-life exponent.
    pub beta: f64,
    /// Capacity fraction at which a battery is replaced.
    pub end_of_life: f64,
    pub lifespan_years: f64,
    /// Annual damage of the conventional plant's battery.
    pub baseline_annual_damage: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            alpha: 4000.0,
            beta: 0.47,
            end_of_life: 0.80,
            lifespan_years: 20.0,
            baseline_annual_damage: 0.056,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Invalid("degradation needs alpha > 0 and 0 < beta < 1".into()));
        }
        if !(self.end_of_life > 0.0 && self.end_of_life < 1.0) {
            return Err(Error::Invalid("end_of_life must lie in (0, 1)".into()));
        }
        if !(self.lifespan_years > 0.0 && self.baseline_annual_damage > 0.0) {
            return Err(Error::Invalid("lifespan and baseline damage must be positive".into()));
        }
        Ok(())
    }

    /// Capacity that may be lost before a replacement is due.
    pub fn capacity_budget(&self) -> f64 {
        1.0 - self.end_of_life
    }
}

/// Prices in CNY.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Per MVA of AC/DC capacity.
    pub acdc_cost: f64,
    /// Per MVA of DC/DC capacity.
    pub dcdc_cost: f64,
    /// Battery replacement, per kWh.
    pub replacement: f64,
    /// Recycling revenue from a retired battery, per kWh.
    pub recycling: f64,
    /// Battery energy, kWh.
    pub es_energy_kwh: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            acdc_cost: 404_000.0,
            dcdc_cost: 443_000.0,
            replacement: 900.0,
            recycling: 150.0,
            es_energy_kwh: 800.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let all = [self.acdc_cost, self.dcdc_cost, self.replacement, self.recycling, self.es_energy_kwh];
        if all.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Invalid("cost model entries must be finite and nonnegative".into()))
        }
    }

    /// Net cost of one battery replacement.
    pub fn replacement_cost(&self) -> f64 {
        (self.replacement - self.recycling) * self.es_energy_kwh
    }
}

// ---------------------------------------------------------------------------
// rain-flow

/// Cycle depths with their equivalent counts, sorted by depth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleHistogram {
    pub entries: Vec<(f64, f64)>,
}

impl CycleHistogram {
    fn from_map(map: BTreeMap<u64, f64>) -> Self {
        Self {
            entries: map.into_iter().map(|(bits, n)| (f64::from_bits(bits), n)).collect(),
        }
    }

    pub fn total_cycles(&self) -> f64 {
        self.entries.iter().map(|(_, n)| n).sum()
    }

    /// Multiply every count by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|&(d, n)| (d, n * k)).collect(),
        }
    }

    pub fn count_at(&self, depth: f64, tol: f64) -> f64 {
        self.entries.iter().filter(|(d, _)| (d - depth).abs() <= tol).map(|(_, n)| n).sum()
    }
}

/// Series reduced to its reversals; the end points are kept and plateaus
/// collapse to one sample.
pub fn turning_points(x: &[f64]) -> Vec<f64> {
    let mut tp: Vec<f64> = Vec::with_capacity(x.len());
    for &v in x {
        match tp.len() {
            0 => tp.push(v),
            1 => {
                if v != tp[0] {
                    tp.push(v);
                }
            }
            n => {
                let (a, b) = (tp[n - 2], tp[n - 1]);
                if v == b {
                    continue;
                }
                if (b - a) * (v - b) > 0.0 {
                    // still moving the same way
                    tp[n - 1] = v;
                } else {
                    tp.push(v);
                }
            }
        }
    }
    tp
}

/// Four-point rain-flow count. Closed cycles count 1; the residue counts
/// 0.5 per adjacent pair.
pub fn rainflow(x: &[f64]) -> Result<CycleHistogram> {
    if x.len() < 2 {
        return Err(Error::Precondition(format!("rain-flow needs at least 2 samples, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("rain-flow input contains non-finite values".into()));
    }
    let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
    let mut add = |d: f64, n: f64| *counts.entry(d.to_bits()).or_insert(0.0) += n;
    let mut stack: Vec<f64> = Vec::new();
    for p in turning_points(x) {
        stack.push(p);
        while stack.len() >= 4 {
            let n = stack.len();
            let (a, b, c, d) = (stack[n - 4], stack[n - 3], stack[n - 2], stack[n - 1]);
            let inner = (b - c).abs();
            if inner <= (a - b).abs() && inner <= (c - d).abs() {
                add(inner, 1.0);
                stack.drain(n - 3..n - 1);
            } else {
                break;
            }
        }
    }
    for w in stack.windows(2) {
        add((w[1] - w[0]).abs(), 0.5);
    }
    Ok(CycleHistogram::from_map(counts))
}

pub fn rainflow_series(soc: &TimeSeries) -> Result<CycleHistogram> {
    rainflow(soc.values())
}

// ---------------------------------------------------------------------------
// Miner damage and replacement

/// `N_f(d) = alpha d^-beta`; infinite for zero depth.
pub fn cycles_to_failure(depth: f64, p: &DegradationParams) -> f64 {
    if depth <= 0.0 {
        f64::INFINITY
    } else {
        p.alpha * depth.powf(-p.beta)
    }
}

/// Linear damage `sum N_k / N_f(d_k)`.
pub fn miner_damage(hist: &CycleHistogram, p: &DegradationParams) -> f64 {
    hist.entries
        .iter()
        .filter(|(d, _)| *d > 0.0)
        .map(|&(d, n)| n / cycles_to_failure(d, p))
        .sum()
}

/// Scale damage accumulated over `duration_s` to one year.
pub fn annualize(damage: f64, duration_s: f64) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(Error::Precondition(format!("duration must be positive, got {duration_s}")));
    }
    Ok(damage * SECONDS_PER_YEAR / duration_s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplacementSchedule {
    pub annual_damage: f64,
    pub interval_years: f64,
    /// Replacements inside the lifespan; none is needed at the very end.
    pub replacements: u32,
}

/// Interval = capacity budget / annual damage.
pub fn replacement_schedule(annual_damage: f64, p: &DegradationParams) -> Result<ReplacementSchedule> {
    if !(annual_damage > 0.0) || !annual_damage.is_finite() {
        return Err(Error::Precondition(format!("annual damage must be positive, got {annual_damage}")));
    }
    let interval = p.capacity_budget() / annual_damage;
    let lives = p.lifespan_years / interval;
    let replacements = ((lives - 1e-9).ceil() - 1.0).max(0.0) as u32;
    Ok(ReplacementSchedule {
        annual_damage,
        interval_years: interval,
        replacements,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifecycleComparison {
    pub esehe: ReplacementSchedule,
    pub conventional: ReplacementSchedule,
    /// `(baseline - esehe) / baseline` of the annual damage.
    pub rate_reduction: f64,
    pub interval_ratio: f64,
    pub first_replacement_delay: f64,
    /// Replacement bill avoided over the lifespan, CNY.
    pub savings: f64,
}

pub fn lifecycle_comparison(annual_damage: f64, p: &DegradationParams, cost: &CostModel) -> Result<LifecycleComparison> {
    let esehe = replacement_schedule(annual_damage, p)?;
    let conventional = replacement_schedule(p.baseline_annual_damage, p)?;
    Ok(LifecycleComparison {
        esehe,
        conventional,
        rate_reduction: (p.baseline_annual_damage - annual_damage) / p.baseline_annual_damage,
        interval_ratio: esehe.interval_years / conventional.interval_years,
        first_replacement_delay: esehe.interval_years - conventional.interval_years,
        savings: (conventional.replacements as f64 - esehe.replacements as f64) * cost.replacement_cost(),
    })
}

/// CSV with columns depth, count, n_f, damage.
pub fn write_degradation_csv<W: Write>(w: W, hist: &CycleHistogram, p: &DegradationParams) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wr.write_record(["depth", "count", "n_f", "damage"])?;
    for &(d, n) in &hist.entries {
        let nf = cycles_to_failure(d, p);
        let dmg = if nf.is_finite() { n / nf } else { 0.0 };
        wr.write_record([d.to_string(), n.to_string(), nf.to_string(), dmg.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<degradation>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// converter losses

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Separate AC/DC interfaces for stack and battery.
    Conventional,
    /// Shared AC/DC interface; battery and stack meet on the DC link.
    Esehe,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub conduction: f64,
    pub switching: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.conduction + self.switching
    }

    fn times(self, k: f64) -> Self {
        Self {
            conduction: self.conduction * k,
            switching: self.switching * k,
        }
    }

    fn plus(self, o: Self) -> Self {
        Self {
            conduction: self.conduction + o.conduction,
            switching: self.switching + o.switching,
        }
    }
}

/// Loss of one converter stage carrying `power` at `v_dc`. An idle stage
/// does not switch.
pub fn stage_loss(power: f64, v_dc: f64, p: &LossParams) -> Result<LossBreakdown> {
    if !(v_dc > 0.0) {
        return Err(Error::Precondition(format!("v_dc must be positive, got {v_dc}")));
    }
    if power == 0.0 {
        return Ok(LossBreakdown::default());
    }
    let i = power.abs() / v_dc;
    Ok(LossBreakdown {
        conduction: conduction_loss(i, i, p),
        switching: switching_loss(p),
    })
}

/// Loss along the battery-to-stack energy path: two AC/DC plus two DC/DC
/// stages conventionally, two DC/DC stages on the shared link.
pub fn path_loss(topology: Topology, power: f64, v_dc: f64, acdc: &LossParams, dcdc: &LossParams) -> Result<LossBreakdown> {
    let dc = stage_loss(power, v_dc, dcdc)?.times(2.0);
    Ok(match topology {
        Topology::Esehe => dc,
        Topology::Conventional => dc.plus(stage_loss(power, v_dc, acdc)?.times(2.0)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyGain {
    pub conventional: LossBreakdown,
    pub esehe: LossBreakdown,
    pub avoided: LossBreakdown,
    /// Avoided conduction loss over rated power.
    pub gain_conduction: f64,
    /// Avoided conduction plus switching loss over rated power.
    pub gain_total: f64,
}

pub fn efficiency_gain(power: f64, v_dc: f64, rated: f64, acdc: &LossParams, dcdc: &LossParams) -> Result<EfficiencyGain> {
    if !(rated > 0.0) {
        return Err(Error::Precondition(format!("rated power must be positive, got {rated}")));
    }
    let conventional = path_loss(Topology::Conventional, power, v_dc, acdc, dcdc)?;
    let esehe = path_loss(Topology::Esehe, power, v_dc, acdc, dcdc)?;
    let avoided = LossBreakdown {
        conduction: conventional.conduction - esehe.conduction,
        switching: conventional.switching - esehe.switching,
    };
    Ok(EfficiencyGain {
        conventional,
        esehe,
        avoided,
        gain_conduction: avoided.conduction / rated,
        gain_total: avoided.total() / rated,
    })
}

// ---------------------------------------------------------------------------
// sizing and cost

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizingParams {
    /// W
    pub stack_rated: f64,
    /// W
    pub es_rated: f64,
    /// Converter loss margin added to the stack-side ratings.
    pub loss_margin: f64,
    /// Fraction of samples allowed above the shared AC/DC rating.
    pub clip_quantile: f64,
}

impl Default for SizingParams {
    fn default() -> Self {
        Self {
            stack_rated: 5e6,
            es_rated: 0.82e6,
            loss_margin: 0.03,
            clip_quantile: 0.01,
        }
    }
}

impl SizingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.stack_rated > 0.0 && self.es_rated >= 0.0 && self.loss_margin >= 0.0) {
            return Err(Error::Invalid("sizing ratings must be positive and the margin nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.clip_quantile) {
            return Err(Error::Invalid(format!("clip_quantile must lie in [0, 1), got {}", self.clip_quantile)));
        }
        Ok(())
    }
}

/// Linear-interpolated quantile of unsorted data, `q` in [0, 1].
pub fn quantile(x: &[f64], q: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Precondition("quantile of an empty series".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Precondition(format!("quantile level must lie in [0, 1], got {q}")));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(s[lo] + (h - lo as f64) * (s[hi] - s[lo]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizingRow {
    pub block: &'static str,
    /// MVA; `None` when the block does not exist.
    pub conventional: Option<f64>,
    pub esehe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizingReport {
    pub rows: Vec<SizingRow>,
    /// PV power the shared interface is sized for, W.
    pub clip_power: f64,
    /// Fraction of samples above `clip_power`.
    pub clipped_fraction: f64,
    pub conventional_acdc: f64,
    pub esehe_acdc: f64,
    pub conventional_total: f64,
    pub esehe_total: f64,
    /// CNY
    pub conventional_cost: f64,
    pub esehe_cost: f64,
}

impl SizingReport {
    pub fn saving(&self) -> f64 {
        self.conventional_cost - self.esehe_cost
    }

    /// CSV with the block table followed by totals and costs.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        wr.write_record(["block", "conventional", "esehe", "unit"])?;
        for r in &self.rows {
            wr.write_record([r.block, &cell(r.conventional), &cell(r.esehe), "MVA"])?;
        }
        wr.write_record(["Total AC/DC capacity", &cell(Some(self.conventional_acdc)), &cell(Some(self.esehe_acdc)), "MVA"])?;
        wr.write_record(["Total capacity", &cell(Some(self.conventional_total)), &cell(Some(self.esehe_total)), "MVA"])?;
        wr.write_record(["Converter cost", &cell(Some(self.conventional_cost / 1e6)), &cell(Some(self.esehe_cost / 1e6)), "M CNY"])?;
        wr.flush().map_err(|e| Error::io("<sizing>", e))?;
        Ok(())
    }
}

impl fmt::Display for SizingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.2} MVA")).unwrap_or_else(|| "--".into());
        writeln!(f, "{:<24} {:>16} {:>16}", "Block", "Conventional", "ESEHE")?;
        for r in &self.rows {
            writeln!(f, "{:<24} {:>16} {:>16}", r.block, cell(r.conventional), cell(r.esehe))?;
        }
        writeln!(f, "{:<24} {:>16} {:>16}", "Total AC/DC capacity", cell(Some(self.conventional_acdc)), cell(Some(self.esehe_acdc)))?;
        writeln!(f, "{:<24} {:>16} {:>16}", "Total capacity", cell(Some(self.conventional_total)), cell(Some(self.esehe_total)))?;
        writeln!(
            f,
            "converter cost: conventional {:.2} M CNY, ESEHE {:.2} M CNY, saving {:.2} M CNY",
            self.conventional_cost / 1e6,
            self.esehe_cost / 1e6,
            self.saving() / 1e6
        )?;
        write!(
            f,
            "shared AC/DC sized for {:.3} MW; {:.2}% of samples clipped",
            self.clip_power / 1e6,
            100.0 * self.clipped_fraction
        )
    }
}

pub fn sizing_and_cost(pv: &[f64], sp: &SizingParams, cost: &CostModel) -> Result<SizingReport> {
    sp.validate()?;
    cost.validate()?;
    let clip_power = quantile(pv, 1.0 - sp.clip_quantile)?;
    let clipped_fraction = pv.iter().filter(|p| **p > clip_power).count() as f64 / pv.len() as f64;
    let m = 1.0 + sp.loss_margin;
    let stack = sp.stack_rated * m / 1e6;
    let es = sp.es_rated / 1e6;
    let shared = clip_power * m / 1e6;
    let rows = vec![
        SizingRow {
            block: "Electrolyzer AC/DC",
            conventional: Some(stack),
            esehe: Some(shared),
        },
        SizingRow {
            block: "ES AC/DC",
            conventional: Some(es),
            esehe: None,
        },
        SizingRow {
            block: "Stack DC/DC",
            conventional: Some(stack),
            esehe: Some(stack),
        },
        SizingRow {
            block: "Battery DC/DC",
            conventional: Some(es),
            esehe: Some(es),
        },
    ];
    let conventional_acdc = stack + es;
    let esehe_acdc = shared;
    let dcdc = stack + es;
    Ok(SizingReport {
        rows,
        clip_power,
        clipped_fraction,
        conventional_acdc,
        esehe_acdc,
        conventional_total: conventional_acdc + dcdc,
        esehe_total: esehe_acdc + dcdc,
        conventional_cost: conventional_acdc * cost.acdc_cost + dcdc * cost.dcdc_cost,
        esehe_cost: esehe_acdc * cost.acdc_cost + dcdc * cost.dcdc_cost,
    })
}

// ---------------------------------------------------------------------------
// synthetic annual series

/// Hourly PV power for one year, W.
///
/// Daily bell curves with random clearness peak below 5 MW; the top 2% of
/// hours are then spread evenly over (5.00, 5.14] MW so the exceedances
/// average 5.07 MW.
pub fn synthetic_pv_year(seed: u64) -> Result<TimeSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = HOURS_PER_YEAR as usize;
    let mut p = vec![0.0; n];
    for day in 0..365 {
        let clear: f64 = rng.gen_range(0.3..1.0);
        // longer days mid-year
        let season = (2.0 * PI * (day as f64 - 172.0) / 365.0).cos();
        let half = 6.0 + 1.5 * season;
        for h in 0..24 {
            let x = (h as f64 + 0.5 - 12.0) / half;
            if x.abs() < 1.0 {
                p[day * 24 + h] = 4.95e6 * clear * (0.5 * PI * x).cos().powf(1.5);
            }
        }
    }
    let n_exc = (0.02 * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    for (k, &i) in order[n - n_exc..].iter().enumerate() {
        p[i] = 5.0e6 + 0.14e6 * (k as f64 + 0.5) / n_exc as f64;
    }
    TimeSeries::uniform("pv_power", Unit::Watt, 3600.0, p)
}

/// Hourly SOC for one year with `per_day` sinusoidal swings of
/// peak-to-peak `depth` around 50%.
pub fn synthetic_soc_year(per_day: usize, depth: f64) -> Result<TimeSeries> {
    if per_day == 0 || 24 % per_day != 0 || !(depth > 0.0 && depth < 1.0) {
        return Err(Error::Precondition(format!(
            "need per_day dividing 24 and depth in (0, 1), got {per_day}, {depth}"
        )));
    }
    let period = 24 / per_day;
    let n = HOURS_PER_YEAR as usize + 1;
    let v = (0..n)
        .map(|h| {
            let phase = (h % period) as f64 / period as f64;
            0.5 - 0.5 * depth * (2.0 * PI * phase).cos()
        })
        .collect();
    TimeSeries::uniform("soc", Unit::PerUnit, 3600.0, v)
}

/// Add a SOC estimation bias, uniform in `+/- amplitude` and redrawn
/// daily, to an hourly series.
pub fn with_soc_error(soc: &[f64], amplitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bias = 0.0;
    soc.iter()
        .enumerate()
        .map(|(h, s)| {
            if h % 24 == 0 {
                bias = amplitude * rng.gen_range(-1.0..=1.0);
            }
            (s + bias).clamp(0.0, 1.0)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// sensitivity

/// Arrhenius acceleration of battery ageing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureModel {
    /// Reference cell temperature, degrees C.
    pub t_ref_c: f64,
    /// J/mol
    pub activation_energy: f64,
}

impl Default for TemperatureModel {
    fn default() -> Self {
        Self {
            t_ref_c: 25.0,
            activation_energy: 40e3,
        }
    }
}

impl TemperatureModel {
    /// Damage multiplier at `t_c` relative to the reference temperature.
    pub fn multiplier(&self, t_c: f64) -> f64 {
        let k = |c: f64| c + 273.15;
        (self.activation_energy / GAS_CONSTANT * (1.0 / k(self.t_ref_c) - 1.0 / k(t_c))).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityParameter {
    CycleLife,
    Temperature,
    SwitchingLoss,
    SocError,
}

impl SensitivityParameter {
    pub const ALL: [SensitivityParameter; 4] = [
        SensitivityParameter::CycleLife,
        SensitivityParameter::Temperature,
        SensitivityParameter::SwitchingLoss,
        SensitivityParameter::SocError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SensitivityParameter::CycleLife => "cycle_life",
            SensitivityParameter::Temperature => "temperature",
            SensitivityParameter::SwitchingLoss => "switching_loss",
            SensitivityParameter::SocError => "soc_error",
        }
    }
}

/// Everything a total life-cycle cost evaluation depends on.
#[derive(Debug, Clone)]
pub struct SensitivityBase {
    /// Hourly SOC over one year.
    pub soc_year: Vec<f64>,
    /// Hourly PV power over one year, W.
    pub pv_year: Vec<f64>,
    pub degradation: DegradationParams,
    pub cost: CostModel,
    pub sizing: SizingParams,
    pub losses: LossParams,
    pub temperature: TemperatureModel,
    /// Base SOC estimation bias amplitude.
    pub soc_error: f64,
    pub v_dc: f64,
    pub seed: u64,
}

impl SensitivityBase {
    /// Two 5% swings a day, the synthetic PV year and default prices.
    pub fn reference(seed: u64) -> Result<Self> {
        Ok(Self {
            soc_year: synthetic_soc_year(2, 0.05)?.values().to_vec(),
            pv_year: synthetic_pv_year(seed)?.values().to_vec(),
            degradation: DegradationParams::default(),
            cost: CostModel::default(),
            sizing: SizingParams::default(),
            losses: LossParams::default(),
            temperature: TemperatureModel::default(),
            soc_error: 0.01,
            v_dc: 1000.0,
            seed,
        })
    }

    /// Converter cost of the conventional plant at the base inputs.
    pub fn benchmark(&self) -> Result<f64> {
        Ok(sizing_and_cost(&self.pv_year, &self.sizing, &self.cost)?.conventional_cost)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifecycleCost {
    pub capex: f64,
    pub annual_damage: f64,
    pub replacements: u32,
    /// Replacement bill relative to the conventional plant.
    pub replacement_delta: f64,
}

impl LifecycleCost {
    pub fn total(&self) -> f64 {
        self.capex + self.replacement_delta
    }
}

/// Life-cycle cost of the shared-link plant with `param` moved by the
/// relative `variation` (0.2 = +20%).
///
/// Costs are counted against the conventional plant's replacement bill,
/// so the conventional plant's own total is its converter cost.
pub fn lifecycle_cost(base: &SensitivityBase, param: Option<(SensitivityParameter, f64)>) -> Result<LifecycleCost> {
    use SensitivityParameter::*;
    let v = |p: SensitivityParameter| match param {
        Some((q, x)) if q == p => x,
        _ => 0.0,
    };
    let degradation = DegradationParams {
        alpha: base.degradation.alpha * (1.0 + v(CycleLife)),
        ..base.degradation.clone()
    };
    let temp = base.temperature.t_ref_c * (1.0 + v(Temperature));

    // switching loss moves the converter loss margin in proportion to its
    // share of the stage loss at rated current
    let i = base.sizing.stack_rated / base.v_dc;
    let cond = conduction_loss(i, i, &base.losses);
    let sw = switching_loss(&base.losses);
    let margin = base.sizing.loss_margin * (cond + sw * (1.0 + v(SwitchingLoss))) / (cond + sw);
    let sizing = SizingParams {
        loss_margin: margin,
        ..base.sizing.clone()
    };
    let capex = sizing_and_cost(&base.pv_year, &sizing, &base.cost)?.esehe_cost;

    let soc = with_soc_error(&base.soc_year, base.soc_error * (1.0 + v(SocError)), base.seed);
    let hist = rainflow(&soc)?;
    let duration = (soc.len() - 1) as f64 * 3600.0;
    let annual = annualize(miner_damage(&hist, &degradation), duration)? * base.temperature.multiplier(temp);
    let esehe = replacement_schedule(annual, &degradation)?;
    let conventional = replacement_schedule(base.degradation.baseline_annual_damage, &base.degradation)?;
    Ok(LifecycleCost {
        capex,
        annual_damage: annual,
        replacements: esehe.replacements,
        replacement_delta: (esehe.replacements as f64 - conventional.replacements as f64) * base.cost.replacement_cost(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCurve {
    pub parameter: SensitivityParameter,
    /// (relative variation, total life-cycle cost in CNY)
    pub points: Vec<(f64, f64)>,
}

impl SensitivityCurve {
    /// Sum of absolute changes between neighbouring points.
    pub fn total_variation(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].1 - w[0].1).abs()).sum()
    }

    pub fn max_cost(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Evenly spaced variations over `[-span, span]`.
pub fn variation_grid(span: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![0.0];
    }
    (0..points)
        .map(|k| -span + 2.0 * span * k as f64 / (points - 1) as f64)
        .collect()
}

pub fn sensitivity_sweep(param: SensitivityParameter, variations: &[f64], base: &SensitivityBase) -> Result<SensitivityCurve> {
    let points = variations
        .par_iter()
        .map(|&v| lifecycle_cost(base, Some((param, v))).map(|c| (v, c.total())))
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityCurve { parameter: param, points })
}

/// CSV with columns parameter, variation, tlc_cny.
pub fn write_sensitivity_csv<W: Write>(w: W, curves: &[SensitivityCurve]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wr.write_record(["parameter", "variation", "tlc_cny"])?;
    for c in curves {
        for (v, cost) in &c.points {
            wr.write_record([c.parameter.name().to_string(), v.to_string(), cost.to_string()])?;
        }
    }
    wr.flush().map_err(|e| Error::io("<sensitivity>", e))?;
    Ok(())
}
