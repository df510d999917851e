//! Subcommands of the `muagc` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use muagc_core::config::{ControllerKind, ScenarioConfig, SCHEMA_VERSION};
use muagc_core::simcore::{
    calibrate_microgrid, replay_detection, run_scenario, DetectionTrace, DetectorRow, Scenario,
};
use muagc_core::sysid::{select_order, DiscreteModel, IoRecord};
use muagc_core::watermark::Calibration;
use muagc_core::{presets, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "muagc", version, about = "Microgrid frequency regulation and attack detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Run a scenario and write timeseries.csv, detector.csv and summary.txt.
    Simulate,
    /// Identify prediction models (model_<mg>.toml, orders_<mg>.csv).
    Identify {
        /// Only this microgrid.
        #[arg(long)]
        microgrid: Option<String>,
        /// Identify from a recorded `time,u..,y..` CSV instead of exciting the plant.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Nominal watermarked runs giving baselines and thresholds (calibration_<mg>.toml).
    Calibrate {
        #[arg(long)]
        microgrid: Option<String>,
    },
    /// Replay a recorded trace through the detector.
    Detect {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        /// Attack onset used for the latency metric (s).
        #[arg(long)]
        onset: Option<f64>,
        #[arg(long, default_value = "mg")]
        label: String,
    },
    /// Write gnuplot scripts for the CSVs in the output directory.
    Plot,
    /// Print a complete scenario file holding every default.
    Defaults,
    Version,
}

/// Exit status for an error: 1 configuration/usage, 2 numerical, 3 I/O.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        3
    } else if err.is_numerical() {
        2
    } else {
        1
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate => cmd_simulate(&load_config(g)?, &g.out),
        Command::Identify { microgrid, data } => {
            cmd_identify(&load_config(g)?, &g.out, microgrid.as_deref(), data.as_deref())
        }
        Command::Calibrate { microgrid } => {
            cmd_calibrate(&load_config(g)?, &g.out, microgrid.as_deref())
        }
        Command::Detect {
            trace,
            model,
            calibration,
            onset,
            label,
        } => cmd_detect(trace, model, calibration, *onset, label, &g.out),
        Command::Plot => cmd_plot(&g.out),
        Command::Defaults => defaults_toml(),
        Command::Version => Ok(version()),
    }
}

pub fn version() -> String {
    format!("muagc {} (schema {SCHEMA_VERSION})\n", env!("CARGO_PKG_VERSION"))
}

fn load_config(g: &GlobalArgs) -> Result<ScenarioConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this subcommand".into()))?;
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.simulation.seed = seed;
    }
    Ok(cfg)
}

/// The two-microgrid case with every optional field written out.
pub fn defaults_config() -> ScenarioConfig {
    presets::two_microgrids(ControllerKind::Optimal, ControllerKind::Optimal)
}

pub fn defaults_toml() -> Result<String> {
    defaults_config().to_toml_string()
}

fn targets(cfg: &ScenarioConfig, only: Option<&str>, filter: impl Fn(usize) -> bool) -> Result<Vec<usize>> {
    if let Some(name) = only {
        return Ok(vec![cfg.microgrid_index(name)?]);
    }
    let picked: Vec<usize> = (0..cfg.microgrids.len()).filter(|&i| filter(i)).collect();
    Ok(if picked.is_empty() {
        (0..cfg.microgrids.len()).collect()
    } else {
        picked
    })
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

pub fn cmd_simulate(cfg: &ScenarioConfig, out: &Path) -> Result<String> {
    let mut scenario = Scenario::from_config(cfg)?;
    scenario.prepare()?;
    let res = run_scenario(&scenario)?;
    create_out(out)?;
    res.series.save(&out.join("timeseries.csv"))?;
    DetectorRow::save(&res.detector, &out.join("detector.csv"))?;
    for (i, mg) in cfg.microgrids.iter().enumerate() {
        if let Some(m) = &res.models[i] {
            m.save(&out.join(format!("model_{}.toml", mg.name)))?;
            res.traces[i].save(&out.join(format!("trace_{}.csv", mg.name)))?;
        }
        if let Some(c) = &res.calibrations[i] {
            c.save(&out.join(format!("calibration_{}.toml", mg.name)))?;
        }
    }
    let text = res.summary_text();
    std::fs::write(out.join("summary.txt"), &text)?;
    Ok(text)
}

pub fn cmd_identify(
    cfg: &ScenarioConfig,
    out: &Path,
    only: Option<&str>,
    data: Option<&Path>,
) -> Result<String> {
    let scenario = Scenario::from_config(cfg)?;
    let dt = cfg.simulation.control_period;
    let mut text = String::new();
    if let Some(path) = data {
        let idx = match only {
            Some(name) => cfg.microgrid_index(name)?,
            None if cfg.microgrids.len() == 1 => 0,
            None => {
                return Err(Error::Config(
                    "--data needs --microgrid when the scenario has several microgrids".into(),
                ))
            }
        };
        let record = IoRecord::load(path)?;
        let (model, report) = select_order(&record.u, &record.y, &cfg.identification.candidates, dt)?;
        create_out(out)?;
        let name = &cfg.microgrids[idx].name;
        model.save(&out.join(format!("model_{name}.toml")))?;
        std::fs::write(out.join(format!("orders_{name}.csv")), report.to_csv_string())?;
        writeln!(text, "{name}: order {} eta {:.3e}", report.d_star, report.eta_star()).ok();
        return Ok(text);
    }
    create_out(out)?;
    for idx in targets(cfg, only, |_| true)? {
        let id = scenario.identify(idx)?;
        let name = scenario.microgrids[idx].name();
        id.model.save(&out.join(format!("model_{name}.toml")))?;
        id.record.save(&out.join(format!("record_{name}.csv")))?;
        std::fs::write(out.join(format!("orders_{name}.csv")), id.report.to_csv_string())?;
        writeln!(
            text,
            "{name}: order {} eta {:.3e} (output scale {:.3e})",
            id.report.d_star,
            id.report.eta_star(),
            id.report.output_scale
        )
        .ok();
    }
    Ok(text)
}

pub fn cmd_calibrate(cfg: &ScenarioConfig, out: &Path, only: Option<&str>) -> Result<String> {
    let mut scenario = Scenario::from_config(cfg)?;
    let picked = targets(cfg, only, |i| cfg.microgrids[i].detection.enabled)?;
    let mut text = String::new();
    create_out(out)?;
    for idx in picked {
        let name = cfg.microgrids[idx].name.clone();
        let model = match scenario.models[idx].clone() {
            Some(m) => m,
            None => {
                let id = scenario.identify(idx)?;
                id.model.save(&out.join(format!("model_{name}.toml")))?;
                scenario.models[idx] = Some(id.model.clone());
                id.model
            }
        };
        let cal = calibrate_microgrid(&scenario, idx, &model)?;
        cal.save(&out.join(format!("calibration_{name}.toml")))?;
        writeln!(
            text,
            "{name}: eps1 {:.6e} eps2 {:.6e} (nominal peaks {:.6e}, {:.6e})",
            cal.eps1, cal.eps2, cal.peak_xi1, cal.peak_xi2
        )
        .ok();
    }
    Ok(text)
}

pub fn cmd_detect(
    trace: &Path,
    model: &Path,
    calibration: &Path,
    onset: Option<f64>,
    label: &str,
    out: &Path,
) -> Result<String> {
    let trace = DetectionTrace::load(trace)?;
    let model = DiscreteModel::load(model)?;
    let cal = Calibration::load(calibration)?;
    let rows = replay_detection(&trace, &model, &cal, label)?;
    create_out(out)?;
    DetectorRow::save(&rows, &out.join("detector.csv"))?;

    let flags = rows.iter().filter(|r| r.flag).count();
    let first = rows.iter().find(|r| r.flag).map(|r| r.time);
    let mut text = String::new();
    writeln!(text, "rows = {}", rows.len()).ok();
    writeln!(text, "flags = {flags}").ok();
    match first {
        Some(t) => writeln!(text, "first_flag = {t:.6}").ok(),
        None => writeln!(text, "first_flag = none").ok(),
    };
    if let Some(t0) = onset {
        let latency = rows.iter().find(|r| r.flag && r.time >= t0 - 1e-9).map(|r| r.time - t0);
        let false_alarms = rows.iter().filter(|r| r.flag && r.time < t0 - 1e-9).count();
        match latency {
            Some(l) => writeln!(text, "detection_latency = {l:.6}").ok(),
            None => writeln!(text, "detection_latency = none").ok(),
        };
        writeln!(text, "false_alarms = {false_alarms}").ok();
    }
    if rows.len() < cal.baseline.w {
        writeln!(
            text,
            "note = trace shorter than the {}-sample window, warm-up only",
            cal.baseline.w
        )
        .ok();
    }
    std::fs::write(out.join("detect_summary.txt"), &text)?;
    Ok(text)
}

fn header(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::from)?;
    Ok(r.headers()?.iter().map(str::to_string).collect())
}

fn plot_script(data: &str, ylabel: &str, cols: &[(usize, String)]) -> String {
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").ok();
    writeln!(s, "set xlabel 't (s)'").ok();
    writeln!(s, "set ylabel '{ylabel}'").ok();
    writeln!(s, "set grid").ok();
    let parts: Vec<String> = cols
        .iter()
        .map(|(i, t)| format!("'{data}' using 1:{} every ::1 with lines title '{t}'", i + 1))
        .collect();
    writeln!(s, "plot {}", parts.join(", \\\n     ")).ok();
    s
}

/// Writes `frequency.gp`, `power.gp` and (with detector columns) `detector.gp`
/// next to `timeseries.csv`.
pub fn cmd_plot(out: &Path) -> Result<String> {
    let cols = header(&out.join("timeseries.csv"))?;
    let pick = |prefix: &str| -> Vec<(usize, String)> {
        cols.iter()
            .enumerate()
            .filter_map(|(i, c)| c.strip_prefix(prefix).map(|n| (i, n.to_string())))
            .collect()
    };
    let mut written = Vec::new();
    for (file, prefix, label) in [
        ("frequency.gp", "omega_", "frequency deviation (rad/s)"),
        ("power.gp", "pg_", "power deviation (W)"),
        ("detector.gp", "xi2_", "xi2"),
    ] {
        let sel = pick(prefix);
        if sel.is_empty() {
            continue;
        }
        std::fs::write(out.join(file), plot_script("timeseries.csv", label, &sel))?;
        written.push(file);
    }
    Ok(format!("wrote {}\n", written.join(", ")))
}
