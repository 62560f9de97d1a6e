//! Verb implementations. Every verb computes its results first and only
//! then writes files, so a failure never leaves half a run on disk.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args};
use rayon::prelude::*;

use esehe::config::{load_config, ScenarioConfig};
use esehe::converters::LossParams;
use esehe::engine::{run_scenario, RunOutput};
use esehe::psd;
use esehe::scenarios;
use esehe::series::TimeSeries;
use esehe::smallsignal::{root_locus, write_locus_csv, LinearInputs, Sweep, SweepParam};
use esehe::stack::{rated_current, ui_curve as stack_ui_curve, StackParams};
use esehe::techno::{self, CostModel, DegradationParams, SensitivityBase, SensitivityParameter, SizingParams, Topology};
use esehe::units::Unit;

use crate::plot::{self, Chart, Series, Style};
use crate::OutputArgs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] esehe::Error),
    #[error("{0}")]
    Usage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use esehe::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Model(e) => match e {
                E::Units(_) | E::Parse(_) | E::Invalid(_) | E::Precondition(_) => 2,
                E::Divergence { .. } | E::NoConvergence { .. } | E::Saturated(_) => 3,
                E::Io { .. } | E::Csv(_) => 4,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> esehe::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| match e {
        esehe::Error::Csv(c) => CliError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(c.to_string()),
        },
        other => CliError::Model(other),
    })?;
    w.flush().map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Plot problems are reported but never fail the command.
fn warn_plot(r: std::result::Result<(), String>) {
    if let Err(e) = r {
        eprintln!("esehe: warning: plot skipped: {e}");
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Model(esehe::Error::Parse(format!("{}: {e}", path.display()))))
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["config", "preset"])))]
pub struct SimulateArgs {
    /// TOML scenario file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in scenario: steady, high_volatility, generation_trip,
    /// stack_trip, unit_trip, soc_equalization.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated channel names to record.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<String>>,
    /// Battery time-compression factor.
    #[arg(long)]
    pub compress_time: Option<f64>,
    /// Override the scenario duration, s.
    #[arg(long)]
    pub duration: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn scenario_from(config: Option<&Path>, preset: Option<&str>) -> Result<ScenarioConfig> {
    match (config, preset) {
        (Some(p), _) => Ok(load_config(p)?),
        (None, Some(name)) => Ok(scenarios::preset(name)?),
        (None, None) => Err(CliError::Usage("one of --config or --preset is required".into())),
    }
}

fn apply_overrides(cfg: &mut ScenarioConfig, a: &SimulateArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(ch) = &a.channels {
        cfg.record.channels = ch.iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
    }
    if let Some(c) = a.compress_time {
        cfg.time_compression = c;
    }
    if let Some(d) = a.duration {
        cfg.duration = d;
    }
    cfg.normalize();
    cfg.validate()?;
    Ok(())
}

fn write_run(dir: &Path, run: &RunOutput) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("trajectory.csv"), |w| run.trajectory.write_csv(w))?;
    write_file(&dir.join("summary.csv"), |w| run.summary.write_csv(w))?;
    write_file(&dir.join("events.csv"), |w| run.log.write_csv(w))?;
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = scenario_from(a.config.as_deref(), a.preset.as_deref())?;
    apply_overrides(&mut cfg, a)?;
    let run = run_scenario(&cfg)?;
    let dir = a.output.dir("simulate");
    write_run(&dir, &run)?;

    let psd_ok = write_psd(&dir, &run)?;
    if a.output.plots {
        warn_plot(plot_trajectory(&dir));
        if psd_ok {
            warn_plot(plot_psd(&dir));
        }
    }
    let s = &run.summary;
    println!(
        "{}: {} steps, max |dV_dc| {:.3}%, curtailed {:.1} Wh -> {}",
        s.name,
        s.steps,
        100.0 * s.max_dv_pu,
        s.curtailed_wh,
        dir.display()
    );
    for e in &s.events {
        let modes: String = e.modes.iter().map(|m| m.letter()).collect();
        println!(
            "  {:?} at {:.3} s (unit {}): recovery {:.1} ms, max dev {:.2}%, modes {}",
            e.kind,
            e.time,
            e.unit,
            1e3 * e.recovery,
            100.0 * e.max_dv_pu,
            modes
        );
    }
    Ok(())
}

/// PSD of the first unit's EDL, battery and load power when all three are
/// recorded. Returns whether `psd.csv` was written.
fn write_psd(dir: &Path, run: &RunOutput) -> Result<bool> {
    let t = &run.trajectory;
    let (Some(edl), Some(es), Some(load), Some(dt)) =
        (t.channel("u1_P_edl"), t.channel("u1_P_es"), t.channel("u1_P_load"), t.sample_step())
    else {
        return Ok(false);
    };
    if t.len() < 64 {
        return Ok(false);
    }
    let fs = 1.0 / dt;
    let seg = (10.0 * fs) as usize;
    let bands = [psd::welch(edl, fs, seg)?, psd::welch(es, fs, seg)?, psd::welch(load, fs, seg)?];
    write_file(&dir.join("psd.csv"), |w| {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["freq_hz", "P_edl", "P_es", "P_load"])?;
        for k in 0..bands[0].freqs.len() {
            wr.write_record([
                bands[0].freqs[k].to_string(),
                bands[0].density[k].to_string(),
                bands[1].density[k].to_string(),
                bands[2].density[k].to_string(),
            ])?;
        }
        wr.flush().map_err(|e| esehe::Error::io("psd.csv", e))
    })?;
    let f = psd::split_fractions(edl, es, load, fs, seg)?;
    println!(
        "band fractions: EDL >10 Hz {:.3}, ES 1-10 Hz {:.3}, load <1 Hz {:.4}",
        f.edl_high, f.es_mid, f.load_low
    );
    Ok(true)
}

fn plot_trajectory(dir: &Path) -> std::result::Result<(), String> {
    let t = plot::read_table(&dir.join("trajectory.csv"))?;
    let time = t.column("time_s").ok_or("trajectory has no time_s column")?;
    let pick = |pred: &dyn Fn(&str) -> bool, scale: f64| -> Vec<(String, Vec<f64>)> {
        t.headers
            .iter()
            .zip(&t.columns)
            .filter(|(h, _)| pred(h))
            .map(|(h, c)| (h.clone(), c.iter().map(|v| v * scale).collect()))
            .collect()
    };
    let groups: [(&str, &str, Vec<(String, Vec<f64>)>); 3] = [
        (
            "timeseries",
            "power, MW",
            pick(&|h| h == "pv_power" || h.ends_with("_P_load") || h.ends_with("_P_es") || h.ends_with("_P_edl"), 1e-6),
        ),
        ("vdc", "V_dc, V", pick(&|h| h.ends_with("_V_dc"), 1.0)),
        ("soc", "SOC, %", pick(&|h| h.ends_with("_soc"), 100.0)),
    ];
    for (kind, label, cols) in groups {
        if cols.is_empty() {
            continue;
        }
        let mut c = Chart::new(kind, "time, s", label);
        for (name, y) in &cols {
            c.series.push(Series {
                name: name.clone(),
                x: time,
                y,
                color: None,
            });
        }
        plot::save(&dir.join(format!("{kind}.svg")), &c.render())?;
    }
    Ok(())
}

fn plot_psd(dir: &Path) -> std::result::Result<(), String> {
    let t = plot::read_table(&dir.join("psd.csv"))?;
    let f = t.column("freq_hz").ok_or("psd.csv has no freq_hz column")?;
    let mut c = Chart::new("power spectral density", "frequency, Hz", "W^2/Hz");
    c.log_x = true;
    c.log_y = true;
    for name in ["P_edl", "P_es", "P_load"] {
        if let Some(y) = t.column(name) {
            c.series.push(Series {
                name: name.into(),
                x: f,
                y,
                color: None,
            });
        }
    }
    plot::save(&dir.join("psd.svg"), &c.render())
}

// ---------------------------------------------------------------------------
// linearize

#[derive(Debug, Clone, Args)]
pub struct LinearizeArgs {
    /// TOML file with the linear-model inputs; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// NAME:START:END:COUNT with NAME one of I_stack0, K_droop, K_p3.
    /// Repeatable; defaults to the I_stack0 and K_droop sweeps.
    #[arg(long)]
    pub sweep: Vec<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn parse_sweep(s: &str) -> Result<Sweep> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Usage(format!("sweep '{s}' is not NAME:START:END:COUNT"));
    if parts.len() != 4 {
        return Err(bad());
    }
    let param = SweepParam::parse(parts[0])?;
    let start: f64 = parts[1].parse().map_err(|_| bad())?;
    let end: f64 = parts[2].parse().map_err(|_| bad())?;
    let count: usize = parts[3].parse().map_err(|_| bad())?;
    Ok(Sweep { param, start, end, count })
}

pub fn linearize(a: &LinearizeArgs) -> Result<()> {
    let base: LinearInputs = match &a.config {
        Some(p) => read_toml(p)?,
        None => LinearInputs::default(),
    };
    let sweeps: Vec<Sweep> = if a.sweep.is_empty() {
        [SweepParam::IStack0, SweepParam::KDroop]
            .into_iter()
            .map(|param| {
                let (start, end) = param.default_range();
                Sweep { param, start, end, count: 20 }
            })
            .collect()
    } else {
        a.sweep.iter().map(|s| parse_sweep(s)).collect::<Result<_>>()?
    };
    let loci = sweeps
        .iter()
        .map(|s| root_locus(s, &base).map(|l| (s, l)))
        .collect::<esehe::Result<Vec<_>>>()?;

    let dir = a.output.dir("linearize");
    create_dir(&dir)?;
    for (s, points) in &loci {
        let path = dir.join(format!("rootlocus_{}.csv", s.param.name()));
        write_file(&path, |w| write_locus_csv(s.param, points, w))?;
        let worst = points
            .iter()
            .flat_map(|p| p.eigenvalues.iter().map(|e| e.re))
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{}: {} points on [{}, {}], max Re = {:.6e} ({})",
            s.param.name(),
            points.len(),
            s.start,
            s.end,
            worst,
            if worst < 0.0 { "stable" } else { "UNSTABLE" }
        );
        if a.output.plots {
            warn_plot(plot_locus(&path, s.param));
        }
    }
    Ok(())
}

fn plot_locus(csv_path: &Path, param: SweepParam) -> std::result::Result<(), String> {
    let t = plot::read_table(csv_path)?;
    let n_eig = t.headers.iter().filter(|h| h.starts_with("re")).count();
    let rows = t.rows();
    // one series per sweep point so colour follows the swept value
    let mut xs = vec![Vec::with_capacity(n_eig); rows];
    let mut ys = vec![Vec::with_capacity(n_eig); rows];
    for k in 1..=n_eig {
        let (Some(re), Some(im)) = (t.column(&format!("re{k}")), t.column(&format!("im{k}"))) else {
            continue;
        };
        for r in 0..rows {
            xs[r].push(re[r]);
            ys[r].push(im[r]);
        }
    }
    let mut c = Chart::new(format!("root locus over {}", param.name()), "Re, 1/s", "Im, rad/s");
    c.style = Style::Scatter;
    for r in 0..rows {
        let f = if rows > 1 { r as f64 / (rows - 1) as f64 } else { 0.0 };
        c.series.push(Series {
            name: String::new(),
            x: &xs[r],
            y: &ys[r],
            color: Some(plot::ramp_color(f)),
        });
    }
    plot::save(&csv_path.with_extension("svg"), &c.render())
}

// ---------------------------------------------------------------------------
// econ

#[derive(Debug, Clone, Args)]
pub struct EconArgs {
    /// SOC history CSV (time_s, soc). Defaults to a synthetic year of two
    /// 5% swings a day.
    #[arg(long)]
    pub soc: Option<PathBuf>,
    /// Annual PV power CSV (time_s, W). Defaults to a synthetic year.
    #[arg(long)]
    pub pv: Option<PathBuf>,
    /// Fraction of PV samples allowed above the shared AC/DC rating.
    #[arg(long, default_value_t = 0.01)]
    pub clip_quantile: f64,
    /// Annual damage to assume instead of the rain-flow result.
    #[arg(long)]
    pub annual_damage: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn econ(a: &EconArgs) -> Result<()> {
    let soc = match &a.soc {
        Some(p) => TimeSeries::load(p, Unit::PerUnit)?,
        None => techno::synthetic_soc_year(2, 0.05)?,
    };
    let pv = match &a.pv {
        Some(p) => TimeSeries::load(p, Unit::Watt)?,
        None => techno::synthetic_pv_year(a.seed)?,
    };
    let deg = DegradationParams::default();
    let cost = CostModel::default();
    let sizing = SizingParams {
        clip_quantile: a.clip_quantile,
        ..SizingParams::default()
    };

    let hist = techno::rainflow_series(&soc)?;
    let span = soc.times().last().copied().unwrap_or(0.0) - soc.times()[0];
    let measured = techno::annualize(techno::miner_damage(&hist, &deg), span)?;
    let annual = a.annual_damage.unwrap_or(measured);
    let life = techno::lifecycle_comparison(annual, &deg, &cost)?;
    let report = techno::sizing_and_cost(pv.values(), &sizing, &cost)?;
    let loss = LossParams::default();
    let gain = techno::efficiency_gain(sizing.stack_rated, 1000.0, sizing.stack_rated, &loss, &loss)?;

    let dir = a.output.dir("econ");
    create_dir(&dir)?;
    write_file(&dir.join("degradation.csv"), |w| techno::write_degradation_csv(w, &hist, &deg))?;
    write_file(&dir.join("cost.csv"), |w| report.write_csv(w))?;
    write_text(&dir.join("cost.txt"), &format!("{report}\n"))?;
    write_file(&dir.join("losses.csv"), |w| {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["path", "conduction_w", "switching_w", "total_w"])?;
        for (name, l) in [
            (Topology::Conventional, gain.conventional),
            (Topology::Esehe, gain.esehe),
        ]
        .map(|(t, l)| (format!("{t:?}").to_lowercase(), l))
        .into_iter()
        .chain([("avoided".to_string(), gain.avoided)])
        {
            wr.write_record([name, l.conduction.to_string(), l.switching.to_string(), l.total().to_string()])?;
        }
        wr.flush().map_err(|e| esehe::Error::io("losses.csv", e))
    })?;
    write_file(&dir.join("lifecycle.csv"), |w| {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["metric", "value"])?;
        let rows = [
            ("measured_annual_damage", measured),
            ("annual_damage", annual),
            ("interval_years", life.esehe.interval_years),
            ("replacements", life.esehe.replacements as f64),
            ("baseline_interval_years", life.conventional.interval_years),
            ("baseline_replacements", life.conventional.replacements as f64),
            ("rate_reduction", life.rate_reduction),
            ("interval_ratio", life.interval_ratio),
            ("savings_cny", life.savings),
            ("efficiency_gain_conduction", gain.gain_conduction),
            ("efficiency_gain_total", gain.gain_total),
        ];
        for (k, v) in rows {
            wr.write_record([k.to_string(), v.to_string()])?;
        }
        wr.flush().map_err(|e| esehe::Error::io("lifecycle.csv", e))
    })?;

    println!("{report}");
    println!(
        "cycles {:.1}, annual damage {:.3}% (baseline {:.1}%), interval {:.2} y vs {:.2} y, replacements {} vs {}, savings {:.2} M CNY",
        hist.total_cycles(),
        100.0 * annual,
        100.0 * deg.baseline_annual_damage,
        life.esehe.interval_years,
        life.conventional.interval_years,
        life.esehe.replacements,
        life.conventional.replacements,
        life.savings / 1e6
    );
    println!(
        "avoided loss {:.2} kW conduction + {:.2} kW switching; gain {:.4}% ({:.4}% with switching)",
        gain.avoided.conduction / 1e3,
        gain.avoided.switching / 1e3,
        100.0 * gain.gain_conduction,
        100.0 * gain.gain_total
    );
    if a.output.plots {
        warn_plot(plot_series(&soc, &dir.join("soc.svg"), "SOC history", 100.0, "SOC, %"));
    }
    Ok(())
}

fn plot_series(s: &TimeSeries, path: &Path, title: &str, scale: f64, label: &str) -> std::result::Result<(), String> {
    let hours: Vec<f64> = s.times().iter().map(|t| t / 3600.0).collect();
    let y: Vec<f64> = s.values().iter().map(|v| v * scale).collect();
    let mut c = Chart::new(title, "time, h", label);
    c.series.push(Series {
        name: s.name().to_string(),
        x: &hours,
        y: &y,
        color: None,
    });
    plot::save(path, &c.render())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("what").required(true).multiple(true).args(["config", "preset", "sensitivity"])))]
pub struct SweepArgs {
    /// Scenario files to run; repeatable.
    #[arg(long)]
    pub config: Vec<PathBuf>,
    /// Built-in scenarios to run; repeatable.
    #[arg(long)]
    pub preset: Vec<String>,
    /// Seeds as FIRST:LAST (inclusive) or a single value.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Battery time-compression factor for every run.
    #[arg(long)]
    pub compress_time: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Life-cycle cost sensitivity to cycle life, temperature, switching
    /// loss and SOC error instead of scenario runs.
    #[arg(long)]
    pub sensitivity: bool,
    /// Relative half-width of the sensitivity range.
    #[arg(long, default_value_t = 0.2)]
    pub span: f64,
    /// Points per sensitivity curve.
    #[arg(long, default_value_t = 9)]
    pub points: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Usage(format!("seeds '{s}' is not FIRST:LAST or a number"));
    let (a, b) = match s.split_once(':') {
        Some((a, b)) => (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?),
        None => {
            let v: u64 = s.parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    if b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", a.jobs)))?;
    let dir = a.output.dir("sweep");
    if a.sensitivity {
        pool.install(|| sensitivity(a, &dir))?;
    }
    if a.config.is_empty() && a.preset.is_empty() {
        return Ok(());
    }

    let mut bases: Vec<ScenarioConfig> = Vec::new();
    for p in &a.config {
        bases.push(scenario_from(Some(p), None)?);
    }
    for p in &a.preset {
        bases.push(scenario_from(None, Some(p))?);
    }
    let seeds = parse_seeds(&a.seeds)?;
    let mut jobs: Vec<(String, ScenarioConfig)> = Vec::new();
    for base in &bases {
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            if let Some(c) = a.compress_time {
                cfg.time_compression = c;
            }
            cfg.normalize();
            cfg.validate()?;
            jobs.push((format!("{}_s{seed}", cfg.name), cfg));
        }
    }
    let runs: Vec<RunOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|(_, cfg)| run_scenario(cfg))
            .collect::<esehe::Result<Vec<_>>>()
    })?;

    create_dir(&dir)?;
    for ((tag, _), run) in jobs.iter().zip(&runs) {
        write_run(&dir.join(tag), run)?;
    }
    write_file(&dir.join("summaries.csv"), |w| {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["run", "seed", "max_dv_pu", "max_df_hz", "curtailed_wh", "soc_spread", "max_residual_w"])?;
        for ((tag, cfg), run) in jobs.iter().zip(&runs) {
            let s = &run.summary;
            wr.write_record([
                tag.clone(),
                cfg.seed.to_string(),
                s.max_dv_pu.to_string(),
                s.max_df_hz.to_string(),
                s.curtailed_wh.to_string(),
                s.soc_spread().to_string(),
                s.max_residual_w.to_string(),
            ])?;
        }
        wr.flush().map_err(|e| esehe::Error::io("summaries.csv", e))
    })?;
    println!("{} runs -> {}", runs.len(), dir.display());
    Ok(())
}

fn sensitivity(a: &SweepArgs, dir: &Path) -> Result<()> {
    if !(a.span > 0.0 && a.span < 1.0) || a.points < 2 {
        return Err(CliError::Usage("need 0 < span < 1 and at least 2 points".into()));
    }
    let base = SensitivityBase::reference(0)?;
    let grid = techno::variation_grid(a.span, a.points);
    let curves = SensitivityParameter::ALL
        .iter()
        .map(|p| techno::sensitivity_sweep(*p, &grid, &base))
        .collect::<esehe::Result<Vec<_>>>()?;
    let benchmark = base.benchmark()?;

    create_dir(dir)?;
    let path = dir.join("sensitivity.csv");
    write_file(&path, |w| techno::write_sensitivity_csv(w, &curves))?;
    println!("conventional benchmark {:.3} M CNY", benchmark / 1e6);
    for c in &curves {
        println!(
            "{:<15} max {:.3} M CNY, total variation {:.4} M CNY",
            c.parameter.name(),
            c.max_cost() / 1e6,
            c.total_variation() / 1e6
        );
    }
    if a.output.plots {
        warn_plot(plot_sensitivity(&curves, benchmark, &dir.join("sensitivity.svg")));
    }
    Ok(())
}

fn plot_sensitivity(curves: &[techno::SensitivityCurve], benchmark: f64, path: &Path) -> std::result::Result<(), String> {
    let xs: Vec<Vec<f64>> = curves.iter().map(|c| c.points.iter().map(|p| 100.0 * p.0).collect()).collect();
    let ys: Vec<Vec<f64>> = curves.iter().map(|c| c.points.iter().map(|p| p.1 / 1e6).collect()).collect();
    let bx = [xs.first().and_then(|x| x.first()).copied().unwrap_or(-20.0), xs.first().and_then(|x| x.last()).copied().unwrap_or(20.0)];
    let by = [benchmark / 1e6; 2];
    let mut c = Chart::new("total life-cycle cost", "parameter change, %", "M CNY");
    for (k, curve) in curves.iter().enumerate() {
        c.series.push(Series {
            name: curve.parameter.name().into(),
            x: &xs[k],
            y: &ys[k],
            color: None,
        });
    }
    c.series.push(Series {
        name: "conventional".into(),
        x: &bx,
        y: &by,
        color: Some("#000000".into()),
    });
    plot::save(path, &c.render())
}

// ---------------------------------------------------------------------------
// ui-curve

#[derive(Debug, Clone, Args)]
pub struct UiCurveArgs {
    /// TOML file with stack parameters; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Upper end of the current axis, A; defaults to 1.2x rated current.
    #[arg(long)]
    pub i_max: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn ui_curve(a: &UiCurveArgs) -> Result<()> {
    let p: StackParams = match &a.config {
        Some(path) => read_toml(path)?,
        None => StackParams::default(),
    };
    p.validate()?;
    let i_max = match a.i_max {
        Some(i) if i > 0.0 => i,
        Some(i) => return Err(CliError::Usage(format!("--i-max must be positive, got {i}"))),
        None => 1.2 * rated_current(&p)?,
    };
    let curve = stack_ui_curve(&p, i_max, a.points)?;
    let dir = a.output.dir("ui-curve");
    create_dir(&dir)?;
    let path = dir.join("ui_curve.csv");
    write_file(&path, |w| {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["current_a", "voltage_v", "power_w"])?;
        for (i, u) in &curve {
            wr.write_record([i.to_string(), u.to_string(), (i * u).to_string()])?;
        }
        wr.flush().map_err(|e| esehe::Error::io("ui_curve.csv", e))
    })?;
    println!("{} points up to {:.0} A -> {}", curve.len(), i_max, path.display());
    if a.output.plots {
        warn_plot(plot_ui(&path));
    }
    Ok(())
}

fn plot_ui(path: &Path) -> std::result::Result<(), String> {
    let t = plot::read_table(path)?;
    let (Some(i), Some(u)) = (t.column("current_a"), t.column("voltage_v")) else {
        return Err("ui_curve.csv lacks current_a/voltage_v".into());
    };
    let mut c = Chart::new("stack U-I characteristic", "current, A", "voltage, V");
    c.series.push(Series {
        name: "U_stack".into(),
        x: i,
        y: u,
        color: None,
    });
    plot::save(&path.with_extension("svg"), &c.render())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_spec_parses() {
        let s = parse_sweep("I_stack0:1000:5000:20").unwrap();
        assert_eq!(s.param, SweepParam::IStack0);
        assert_eq!((s.start, s.end, s.count), (1000.0, 5000.0, 20));
        assert!(parse_sweep("I_stack0:1000:5000").is_err());
        assert_eq!(parse_sweep("bogus:0:1:2").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn seeds_parse() {
        assert_eq!(parse_seeds("3").unwrap(), vec![3]);
        assert_eq!(parse_seeds("1:3").unwrap(), vec![1, 2, 3]);
        assert!(parse_seeds("3:1").is_err());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        let div = CliError::Model(esehe::Error::Divergence {
            time: 0.0,
            channel: "x".into(),
            value: 1.0,
        });
        assert_eq!(div.exit_code(), 3);
        assert_eq!(CliError::Model(esehe::Error::Invalid("x".into())).exit_code(), 2);
        assert_eq!(io_err(Path::new("x"), std::io::Error::other("boom")).exit_code(), 4);
    }
}
