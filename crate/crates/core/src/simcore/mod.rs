//! Scenario engine: plant integration between control instants, sensors,
//! attacks, load signals, tie-line switching and the resilient μAGC loop
//! (detect, then correct through an observer or a neighbouring grid).

pub mod attack;
pub mod integrator;
pub mod load;
pub mod sensors;
pub mod timeseries;
pub mod trace;

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use attack::{apply_attack, AttackKind, AttackSpec, MeasurementHistory};
pub use integrator::{integrate_step, zoh, Discretization};
pub use load::{load_injection, load_signal, LoadKind, LoadSignalSpec};
pub use sensors::{measure_frequency_lagged, measure_power, true_frequency, FrequencySensor};
pub use timeseries::{rms, variance, TimeSeries};
pub use trace::{replay_detection, DetectionTrace, DetectorRow};

use crate::config::{
    AttackConfig, ControllerKind, EventConfig, IdentificationSection, LoadSignalConfig,
    MicrogridConfig, OnDetect, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::lqr::{
    control_decentralized, control_observer, control_optimal, lqr_gain, ControllerGain,
    CostWeights, ObserverState, PiController,
};
use crate::netmodel::{
    assemble_plant, build_h_matrix, droop_dispatch, solve_operating_point, Branch, HMatrix,
    IbrParams, LinearPlant, NetworkSpec, OperatingPoint,
};
use crate::sysid::{generate_excitation, select_order, DiscreteModel, ExcitationSpec, IoRecord, OrderReport};
use crate::transform::{make_transform, z_update_with, Transform, ZAccumulator};
use crate::watermark::{
    dw_step, predict_step_with, BaselineStats, Calibration, DetectorState, Watermark,
    WatermarkConfig, WatermarkPlacement,
};

const TAG_SENSOR: u64 = 1;
const TAG_WATERMARK: u64 = 2;
const TAG_ATTACK: u64 = 3;
const TAG_EXCITATION: u64 = 4;
const TAG_CALIBRATION: u64 = 5;

/// Independent seed for a (purpose, microgrid) pair.
pub fn derive_seed(base: u64, purpose: u64, index: usize) -> u64 {
    let mut z = base
        ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One microgrid resolved from configuration: network, operating point and
/// isolated linear plant.
#[derive(Debug, Clone)]
pub struct MicrogridModel {
    pub config: MicrogridConfig,
    pub network: NetworkSpec,
    pub ibr_params: Vec<IbrParams>,
    /// Nominal consumption per load node (W).
    pub loads: Vec<f64>,
    pub weights: CostWeights,
    pub op: OperatingPoint,
    pub plant: LinearPlant,
}

impl MicrogridModel {
    pub fn build(cfg: &MicrogridConfig, nominal_hz: f64) -> Result<Self> {
        let n_ibr = cfg.ibrs.len();
        if n_ibr == 0 {
            return Err(Error::Config(format!("microgrid '{}' has no inverters", cfg.name)));
        }
        let mut names: Vec<String> = cfg.ibrs.iter().map(|i| i.name.clone()).collect();
        names.extend(cfg.buses.iter().map(|b| b.name.clone()));
        for (k, n) in names.iter().enumerate() {
            if names[..k].contains(n) {
                return Err(Error::Config(format!(
                    "duplicate node name '{n}' in microgrid '{}'",
                    cfg.name
                )));
            }
        }
        let v: Vec<f64> = cfg
            .ibrs
            .iter()
            .map(|i| i.v_star.unwrap_or(cfg.v_star))
            .chain(cfg.buses.iter().map(|b| b.v_star.unwrap_or(cfg.v_star)))
            .collect();
        let mut g = vec![0.0; names.len()];
        let mut branches = Vec::new();
        let lookup = |n: &str| {
            names.iter().position(|x| x == n).ok_or_else(|| {
                Error::Config(format!("unknown node '{n}' in microgrid '{}'", cfg.name))
            })
        };
        for b in &cfg.branches {
            let (from, to) = (lookup(&b.from)?, lookup(&b.to)?);
            let (y, theta, gs) = b.admittance()?;
            g[from] += gs;
            g[to] += gs;
            branches.push(Branch { from, to, y, theta });
        }
        let loads = cfg
            .buses
            .iter()
            .enumerate()
            .map(|(j, b)| b.nominal_load(v[n_ibr + j]))
            .collect::<Result<Vec<_>>>()?;
        let network = NetworkSpec::new(n_ibr, cfg.buses.len(), branches, g, v, Some(names.clone()))?;
        let m_p: Vec<f64> = cfg.ibrs.iter().map(|i| i.m_p).collect();
        let schedule = droop_dispatch(&network, &m_p, &loads)?;
        let op = solve_operating_point(&network, &schedule, None)?;
        let omega_nom = 2.0 * PI * nominal_hz;
        let ibr_params = cfg
            .ibrs
            .iter()
            .enumerate()
            .map(|(i, c)| IbrParams::new(c.omega_c, c.m_p, omega_nom, op.p_i_star[i]))
            .collect::<Result<Vec<_>>>()?;
        let h = build_h_matrix(&network, &op)?;
        let plant = assemble_plant(&ibr_params, &h)?;
        let weights = CostWeights::new(
            cfg.ibrs.iter().map(|i| i.q).collect(),
            cfg.ibrs.iter().map(|i| i.r).collect(),
        )?;
        Ok(Self {
            config: cfg.clone(),
            network,
            ibr_params,
            loads,
            weights,
            op,
            plant,
        })
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn n_ibr(&self) -> usize {
        self.network.n_ibr()
    }

    pub fn n_load(&self) -> usize {
        self.network.n_load()
    }

    pub fn ibr_names(&self) -> &[String] {
        &self.network.names()[..self.n_ibr()]
    }

    pub fn transform(&self) -> Transform {
        make_transform(&self.ibr_params)
    }

    /// LQR design on the isolated plant.
    pub fn design(&self) -> Result<ControllerGain> {
        lqr_gain(&self.plant, &self.weights, &self.transform())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TieSpec {
    pub name: String,
    /// `(microgrid, local node)` endpoints.
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub y: f64,
    pub theta: f64,
    pub conductance: f64,
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventAction {
    EnableController(usize),
    DisableController(usize),
    SetController(usize, ControllerKind),
    CloseTie(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledEvent {
    pub time: f64,
    pub action: EventAction,
}

/// A fully resolved, runnable scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub microgrids: Vec<MicrogridModel>,
    pub ties: Vec<TieSpec>,
    pub events: Vec<ScheduledEvent>,
    /// Load signals indexed by global load node.
    pub load_signals: Vec<LoadSignalSpec>,
    /// Attacks per microgrid.
    pub attacks: Vec<(usize, AttackSpec)>,
    pub models: Vec<Option<DiscreteModel>>,
    pub calibrations: Vec<Option<Calibration>>,
    /// Collect innovations without decisions (used to calibrate thresholds).
    pub calibrating: bool,
}

fn resolve_endpoint(cfg: &ScenarioConfig, mgs: &[MicrogridModel], s: &str) -> Result<(usize, usize)> {
    let (mg, node) = s
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("tie endpoint '{s}' must be 'microgrid.node'")))?;
    let m = cfg.microgrid_index(mg)?;
    let n = mgs[m]
        .network
        .node_index(node)
        .ok_or_else(|| Error::Config(format!("unknown node '{node}' in microgrid '{mg}'")))?;
    Ok((m, n))
}

fn bus_index(mg: &MicrogridModel, bus: &str) -> Result<usize> {
    match mg.network.node_index(bus) {
        Some(i) if i >= mg.n_ibr() => Ok(i - mg.n_ibr()),
        Some(_) => Err(Error::Config(format!(
            "'{bus}' in microgrid '{}' is an inverter, not a load bus",
            mg.name()
        ))),
        None => Err(Error::Config(format!(
            "unknown bus '{bus}' in microgrid '{}'",
            mg.name()
        ))),
    }
}

fn ibr_index(mg: &MicrogridModel, name: &str) -> Result<usize> {
    mg.ibr_names()
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown inverter '{name}' in microgrid '{}'",
                mg.name()
            ))
        })
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let sim = &cfg.simulation;
        if !(sim.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", sim.horizon)));
        }
        if !(sim.integrator_step > 0.0 && sim.control_period > 0.0) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        let ratio = sim.control_period / sim.integrator_step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "control period {} is not an integer multiple of the integrator step {}",
                sim.control_period, sim.integrator_step
            )));
        }
        if cfg.watermark.placement != WatermarkPlacement::Input {
            return Err(Error::Config(
                "the closed-loop simulator injects the watermark at the inverter inputs; \
                 state placement is only available for offline prediction"
                    .into(),
            ));
        }
        if cfg.microgrids.is_empty() {
            return Err(Error::Config("scenario has no microgrids".into()));
        }
        for (k, m) in cfg.microgrids.iter().enumerate() {
            if cfg.microgrids[..k].iter().any(|o| o.name == m.name) {
                return Err(Error::Config(format!("duplicate microgrid name '{}'", m.name)));
            }
        }
        let microgrids = cfg
            .microgrids
            .iter()
            .map(|m| MicrogridModel::build(m, sim.nominal_hz))
            .collect::<Result<Vec<_>>>()?;

        let mut ties = Vec::new();
        for t in &cfg.ties {
            let a = resolve_endpoint(cfg, &microgrids, &t.from)?;
            let b = resolve_endpoint(cfg, &microgrids, &t.to)?;
            if a.0 == b.0 {
                return Err(Error::Config(format!(
                    "tie '{}' must join two different microgrids",
                    t.name
                )));
            }
            let (y, theta, g) = t.as_branch().admittance()?;
            ties.push(TieSpec {
                name: t.name.clone(),
                a,
                b,
                y,
                theta,
                conductance: g,
                closed: t.closed,
            });
        }

        let mut events = Vec::new();
        for e in &cfg.events {
            let action = match e {
                EventConfig::EnableController { microgrid, .. } => {
                    EventAction::EnableController(cfg.microgrid_index(microgrid)?)
                }
                EventConfig::DisableController { microgrid, .. } => {
                    EventAction::DisableController(cfg.microgrid_index(microgrid)?)
                }
                EventConfig::SetController {
                    microgrid, kind, ..
                } => EventAction::SetController(cfg.microgrid_index(microgrid)?, *kind),
                EventConfig::CloseTie { tie, .. } => EventAction::CloseTie(
                    cfg.ties
                        .iter()
                        .position(|t| &t.name == tie)
                        .ok_or_else(|| Error::Config(format!("unknown tie '{tie}'")))?,
                ),
            };
            events.push(ScheduledEvent {
                time: e.time(),
                action,
            });
        }
        events.sort_by(|x, y| x.time.total_cmp(&y.time));

        let mut load_offset = Vec::new();
        let mut acc = 0;
        for m in &microgrids {
            load_offset.push(acc);
            acc += m.n_load();
        }
        let mut load_signals = Vec::new();
        for s in &cfg.load_signals {
            let (mg, bus, kind, amplitude) = match s {
                LoadSignalConfig::Constant {
                    microgrid,
                    bus,
                    amplitude,
                } => (microgrid, bus, LoadKind::Constant, *amplitude),
                LoadSignalConfig::Step {
                    microgrid,
                    bus,
                    amplitude,
                    time,
                } => (microgrid, bus, LoadKind::Step { time: *time }, *amplitude),
                LoadSignalConfig::PeriodicPulse {
                    microgrid,
                    bus,
                    amplitude,
                    period,
                    width,
                    start,
                } => (
                    microgrid,
                    bus,
                    LoadKind::PeriodicPulse {
                        period: *period,
                        width: *width,
                        start: *start,
                    },
                    *amplitude,
                ),
            };
            let m = cfg.microgrid_index(mg)?;
            let node = load_offset[m] + bus_index(&microgrids[m], bus)?;
            load_signals.push(LoadSignalSpec::new(kind, amplitude, node)?);
        }

        let mut attacks = Vec::new();
        for a in &cfg.attacks {
            let (mg, channels, start, end, kind) = match a {
                AttackConfig::NoiseInjection {
                    microgrid,
                    channels,
                    start,
                    end,
                    std,
                } => (microgrid, channels, *start, *end, AttackKind::NoiseInjection { std: *std }),
                AttackConfig::Replay {
                    microgrid,
                    channels,
                    start,
                    end,
                    source_start,
                    source_end,
                } => (
                    microgrid,
                    channels,
                    *start,
                    *end,
                    AttackKind::Replay {
                        source_start: *source_start,
                        source_end: *source_end,
                    },
                ),
            };
            let m = cfg.microgrid_index(mg)?;
            let ch = channels
                .iter()
                .map(|c| ibr_index(&microgrids[m], c))
                .collect::<Result<Vec<_>>>()?;
            attacks.push((m, AttackSpec::new(kind, ch, start, end)?));
        }

        let mut models = Vec::new();
        let mut calibrations = Vec::new();
        for m in &cfg.microgrids {
            models.push(match &m.detection.model {
                Some(p) => Some(DiscreteModel::load(p)?),
                None => None,
            });
            calibrations.push(match &m.detection.calibration {
                Some(p) => Some(Calibration::load(p)?),
                None => None,
            });
        }
        Ok(Self {
            config: cfg.clone(),
            microgrids,
            ties,
            events,
            load_signals,
            attacks,
            models,
            calibrations,
            calibrating: false,
        })
    }

    pub fn n_ibr(&self) -> usize {
        self.microgrids.iter().map(|m| m.n_ibr()).sum()
    }

    fn needs_model(&self, mg: usize) -> bool {
        let m = &self.microgrids[mg].config;
        m.detection.enabled
            || m.control.kind == ControllerKind::Observer
            || self.events.iter().any(|e| {
                matches!(e.action, EventAction::SetController(k, ControllerKind::Observer) if k == mg)
            })
    }

    /// Excites microgrid `mg` alone and fits its prediction model.
    pub fn identify(&self, mg: usize) -> Result<Identified> {
        identify_microgrid(
            &self.microgrids[mg],
            &self.config.identification,
            self.config.simulation.control_period,
            derive_seed(self.config.simulation.seed, TAG_EXCITATION, mg),
        )
    }

    /// Identifies and calibrates whatever the scenario needs but does not
    /// carry yet.
    pub fn prepare(&mut self) -> Result<()> {
        for mg in 0..self.microgrids.len() {
            if self.models[mg].is_none() && self.needs_model(mg) {
                let id = self.identify(mg)?;
                log::info!(
                    "identified '{}' model of order {} (eta {:.3e})",
                    self.microgrids[mg].name(),
                    id.report.d_star,
                    id.report.eta_star()
                );
                self.models[mg] = Some(id.model);
            }
            if !self.calibrating
                && self.calibrations[mg].is_none()
                && self.microgrids[mg].config.detection.enabled
            {
                let model = self.models[mg].clone().expect("model prepared above");
                let cal = calibrate_microgrid(self, mg, &model)?;
                log::info!(
                    "calibrated '{}': eps1 = {:.4e}, eps2 = {:.4e}",
                    self.microgrids[mg].name(),
                    cal.eps1,
                    cal.eps2
                );
                self.calibrations[mg] = Some(cal);
            }
        }
        Ok(())
    }
}

/// Result of identifying one microgrid.
#[derive(Debug, Clone)]
pub struct Identified {
    pub model: DiscreteModel,
    pub report: OrderReport,
    pub record: IoRecord,
}

/// Drives the isolated plant with the excitation (as setpoint deviations)
/// and samples the inverter powers every `spec.dt`.
pub fn identification_record(mg: &MicrogridModel, spec: &ExcitationSpec) -> Result<IoRecord> {
    let n = mg.n_ibr();
    let u = generate_excitation(spec, n)?;
    let disc = Discretization::new(&mg.plant, spec.dt)?;
    let pl = Vector::zeros(mg.n_load());
    let mut x = Vector::zeros(mg.plant.n_states());
    let mut y = Mat::zeros(u.nrows(), n);
    for k in 0..u.nrows() {
        let p = measure_power(&mg.plant, &x, &pl)?;
        y.set_row(k, &p.transpose());
        x = disc.step(&x, &u.row(k).transpose(), &pl);
    }
    Ok(IoRecord {
        time: (0..u.nrows()).map(|k| k as f64 * spec.dt).collect(),
        u,
        y,
    })
}

pub fn identify_microgrid(
    mg: &MicrogridModel,
    section: &IdentificationSection,
    dt: f64,
    seed: u64,
) -> Result<Identified> {
    let spec = ExcitationSpec {
        dt,
        dt_prime: section.dt_prime,
        beta: section.beta,
        k0: section.k0,
        seed,
    };
    let record = identification_record(mg, &spec)?;
    let (model, report) = select_order(&record.u, &record.y, &section.candidates, dt)?;
    Ok(Identified {
        model,
        report,
        record,
    })
}

/// Runs the microgrid alone under nominal conditions with the watermark on
/// and derives the baseline and thresholds from its innovations.
pub fn calibrate_microgrid(scenario: &Scenario, mg: usize, model: &DiscreteModel) -> Result<Calibration> {
    let base = &scenario.config;
    let seconds = base.detector.calibration_seconds;
    if !(seconds > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "calibration run length must be positive, got {seconds}"
        )));
    }
    let mut cfg = base.clone();
    let mut mcfg = base.microgrids[mg].clone();
    mcfg.detection.enabled = true;
    mcfg.detection.on_detect = OnDetect::Log;
    mcfg.detection.model = None;
    mcfg.detection.calibration = None;
    mcfg.control.enabled = true;
    cfg.microgrids = vec![mcfg];
    cfg.ties.clear();
    cfg.events.clear();
    cfg.load_signals.clear();
    cfg.attacks.clear();
    cfg.simulation.horizon = seconds;
    cfg.simulation.seed = derive_seed(base.simulation.seed, TAG_CALIBRATION, mg);
    let mut sub = Scenario::from_config(&cfg)?;
    sub.models = vec![Some(model.clone())];
    sub.calibrating = true;
    let out = run_scenario(&sub)?;
    Calibration::from_nominal(
        &out.innovations[0],
        base.detector.window,
        base.detector.threshold_factor,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Normal,
    Observer,
    Collaborative,
}

struct MgRuntime {
    ibr0: usize,
    n: usize,
    kind: ControllerKind,
    enabled: bool,
    mode: Mode,
    gain: Option<ControllerGain>,
    pi: PiController,
    slow_last: Option<f64>,
    slow_hold: Vector,
    z: ZAccumulator,
    model: Option<DiscreteModel>,
    observer: Option<ObserverState>,
    zhat: ZAccumulator,
    detector: Option<(Calibration, DetectorState)>,
    watermark: Option<Watermark>,
    u_cmd: Vector,
    e: Vector,
    sensor_rng: ChaCha8Rng,
    attack_rng: ChaCha8Rng,
    history: MeasurementHistory,
    innovations: Vec<Vector>,
    first_flag: Option<f64>,
    flag_count: usize,
    trace: DetectionTrace,
}

impl MgRuntime {
    fn applied(&self) -> Vector {
        &self.u_cmd + &self.e
    }

    fn ctrl_code(&self) -> u8 {
        if !self.enabled {
            return 0;
        }
        match self.mode {
            Mode::Normal => self.kind.code(),
            Mode::Observer => ControllerKind::Observer.code(),
            Mode::Collaborative => 6,
        }
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: TimeSeries,
    pub detector: Vec<DetectorRow>,
    /// Innovation sequence per microgrid (empty without a model).
    pub innovations: Vec<Vec<Vector>>,
    /// Received-measurement traces per microgrid, replayable offline.
    pub traces: Vec<DetectionTrace>,
    pub models: Vec<Option<DiscreteModel>>,
    pub calibrations: Vec<Option<Calibration>>,
    pub summary: Vec<(String, String)>,
}

impl SimOutput {
    pub fn summary_text(&self) -> String {
        self.summary
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn first_flag(&self, mg: &str) -> Option<f64> {
        self.detector
            .iter()
            .find(|r| r.microgrid == mg && r.flag)
            .map(|r| r.time)
    }
}

struct Grid {
    net: NetworkSpec,
    op: OperatingPoint,
    h: HMatrix,
    ibrs: Vec<IbrParams>,
    plant: LinearPlant,
    disc: Discretization,
    maps: Vec<Vec<usize>>,
}

impl Grid {
    fn build(scn: &Scenario, h_step: f64) -> Result<Self> {
        let parts: Vec<&NetworkSpec> = scn.microgrids.iter().map(|m| &m.network).collect();
        let (mut net, maps) = NetworkSpec::union(&parts)?;
        for t in scn.ties.iter().filter(|t| t.closed) {
            net = net.with_branch(
                Branch {
                    from: maps[t.a.0][t.a.1],
                    to: maps[t.b.0][t.b.1],
                    y: t.y,
                    theta: t.theta,
                },
                t.conductance,
            )?;
        }
        let m_p: Vec<f64> = scn
            .microgrids
            .iter()
            .flat_map(|m| m.ibr_params.iter().map(|p| p.m_p))
            .collect();
        let loads: Vec<f64> = scn.microgrids.iter().flat_map(|m| m.loads.clone()).collect();
        let schedule = droop_dispatch(&net, &m_p, &loads)?;
        let op = solve_operating_point(&net, &schedule, None)?;
        Self::assemble(scn, net, op, maps, h_step)
    }

    fn assemble(
        scn: &Scenario,
        net: NetworkSpec,
        op: OperatingPoint,
        maps: Vec<Vec<usize>>,
        h_step: f64,
    ) -> Result<Self> {
        let mut ibrs = Vec::new();
        for m in &scn.microgrids {
            ibrs.extend(m.ibr_params.iter().cloned());
        }
        for (i, p) in ibrs.iter_mut().enumerate() {
            *p = p.with_operating_power(op.p_i_star[i]);
        }
        let h = build_h_matrix(&net, &op)?;
        let plant = assemble_plant(&ibrs, &h)?;
        let disc = Discretization::new(&plant, h_step)?;
        Ok(Self {
            net,
            op,
            h,
            ibrs,
            plant,
            disc,
            maps,
        })
    }

    /// Angle deviations of every node for the current state and loads.
    fn node_angles(&self, x: &Vector, pl: &Vector) -> Result<Vector> {
        let n = self.h.n_ibr();
        let dg = Vector::from_fn(n, |i, _| x[2 * i]);
        let mut all = Vector::zeros(self.net.n_nodes());
        all.rows_mut(0, n).copy_from(&dg);
        if self.h.n_load() > 0 {
            let rhs = pl - self.h.hlg() * &dg;
            let dl = self.h.hll().lu().solve(&rhs).ok_or(Error::ReductionFailure {
                smallest_singular_value: 0.0,
            })?;
            all.rows_mut(n, self.h.n_load()).copy_from(&dl);
        }
        Ok(all)
    }

    /// Synchronized closing: the far island is re-referenced so both tie
    /// ends share the same angle, so the tie carries no flow at the instant
    /// of closing.
    fn close_tie(
        &mut self,
        scn: &Scenario,
        tie: &TieSpec,
        x: &mut Vector,
        pl: &Vector,
        h_step: f64,
    ) -> Result<()> {
        let a = self.maps[tie.a.0][tie.a.1];
        let b = self.maps[tie.b.0][tie.b.1];
        let islands = self.net.islands();
        let island_b = islands
            .iter()
            .find(|i| i.contains(&b))
            .expect("every node is in an island")
            .clone();
        if island_b.contains(&a) {
            return Err(Error::InvalidParameter(format!(
                "tie '{}' joins nodes that are already connected",
                tie.name
            )));
        }
        let angles = self.node_angles(x, pl)?;
        let shift_state = angles[a] - angles[b];
        let shift_op = self.op.delta_star[a] - self.op.delta_star[b];
        let mut delta0 = self.op.delta_star.clone();
        for &i in &island_b {
            delta0[i] += shift_op;
            if i < self.net.n_ibr() {
                x[2 * i] += shift_state;
            }
        }
        let net = self.net.with_branch(
            Branch {
                from: a,
                to: b,
                y: tie.y,
                theta: tie.theta,
            },
            tie.conductance,
        )?;
        let op = solve_operating_point(&net, &self.op.p_i_star, Some(&delta0))?;
        *self = Self::assemble(scn, net, op, std::mem::take(&mut self.maps), h_step)?;
        Ok(())
    }
}

fn placeholder_calibration(n: usize, w: usize) -> Calibration {
    Calibration {
        baseline: BaselineStats {
            mu_star: Vector::zeros(n),
            sigma_star: Mat::zeros(n, n),
            w,
        },
        eps1: f64::INFINITY,
        eps2: f64::INFINITY,
        peak_xi1: 0.0,
        peak_xi2: 0.0,
    }
}

/// Runs a scenario, identifying and calibrating detectors first when the
/// scenario does not carry them.
pub fn run_scenario(scenario: &Scenario) -> Result<SimOutput> {
    if scenario.calibrating
        || (0..scenario.microgrids.len()).all(|m| {
            (scenario.models[m].is_some() || !scenario.needs_model(m))
                && (scenario.calibrations[m].is_some()
                    || !scenario.microgrids[m].config.detection.enabled)
        })
    {
        return simulate(scenario);
    }
    let mut prepared = scenario.clone();
    prepared.prepare()?;
    simulate(&prepared)
}

fn simulate(scn: &Scenario) -> Result<SimOutput> {
    let cfg = &scn.config;
    let sim = &cfg.simulation;
    let tc = sim.control_period;
    let substeps = (tc / sim.integrator_step).round() as usize;
    let h_step = tc / substeps as f64;
    let steps = (sim.horizon / tc + 1e-9).floor() as usize;

    let mut grid = Grid::build(scn, h_step)?;
    let n_total = scn.n_ibr();
    let n_load_total = grid.net.n_load();
    let mut x = Vector::zeros(2 * n_total);
    let mut sensor = FrequencySensor::new(n_total, sim.sensor_tau);
    let mut ties_closed: Vec<bool> = scn.ties.iter().map(|t| t.closed).collect();

    let mut mgs = Vec::new();
    let mut ibr0 = 0;
    for (k, m) in scn.microgrids.iter().enumerate() {
        let n = m.n_ibr();
        let mc = &m.config;
        let gain = match mc.control.kind {
            ControllerKind::None | ControllerKind::Pi | ControllerKind::Decentralized
                if !scn.needs_model(k)
                    && !scn.events.iter().any(|e| matches!(e.action, EventAction::SetController(j, _) if j == k)) =>
            {
                None
            }
            _ => Some(m.design()?),
        };
        let model = scn.models[k].clone();
        let detector = if mc.detection.enabled {
            let model = model.as_ref().ok_or_else(|| {
                Error::Config(format!("microgrid '{}' has detection but no model", m.name()))
            })?;
            let cal = match (&scn.calibrations[k], scn.calibrating) {
                (Some(c), _) => c.clone(),
                (None, true) => placeholder_calibration(n, cfg.detector.window),
                (None, false) => {
                    return Err(Error::Config(format!(
                        "microgrid '{}' has detection but no calibration",
                        m.name()
                    )))
                }
            };
            if cal.baseline.mu_star.len() != n {
                return Err(Error::dim("calibration channels", n, cal.baseline.mu_star.len()));
            }
            let mut st = DetectorState::new(model.order, cal.baseline.w, cal.eps1, cal.eps2);
            st.placement = cfg.watermark.placement;
            Some((cal, st))
        } else {
            None
        };
        let watermark = if mc.detection.enabled && cfg.watermark.sigma > 0.0 {
            Some(Watermark::new(&WatermarkConfig::isotropic(
                n,
                cfg.watermark.sigma,
                derive_seed(sim.seed, TAG_WATERMARK, k),
            ))?)
        } else {
            None
        };
        if let Some(md) = &model {
            if md.n_inputs() != n || md.n_outputs() != n {
                return Err(Error::dim("prediction model channels", n, md.n_inputs()));
            }
        }
        let observer = model.as_ref().map(|md| ObserverState {
            x_hat: Vector::zeros(md.order),
            z_hat: Vector::zeros(n),
        });
        mgs.push(MgRuntime {
            ibr0,
            n,
            kind: mc.control.kind,
            enabled: mc.control.enabled,
            mode: Mode::Normal,
            gain,
            pi: PiController::new(mc.control.pi_kp, mc.control.pi_ki, n, mc.control.pi_clamp),
            slow_last: None,
            slow_hold: Vector::zeros(n),
            z: ZAccumulator::new(n),
            model,
            observer,
            zhat: ZAccumulator::new(n),
            detector,
            watermark,
            u_cmd: Vector::zeros(n),
            e: Vector::zeros(n),
            sensor_rng: ChaCha8Rng::seed_from_u64(derive_seed(sim.seed, TAG_SENSOR, k)),
            attack_rng: ChaCha8Rng::seed_from_u64(derive_seed(sim.seed, TAG_ATTACK, k)),
            history: MeasurementHistory::new(tc),
            innovations: Vec::new(),
            first_flag: None,
            flag_count: 0,
            trace: DetectionTrace::new(n),
        });
        ibr0 += n;
    }

    let ibr_names: Vec<String> = scn
        .microgrids
        .iter()
        .flat_map(|m| m.ibr_names().to_vec())
        .collect();
    let mut columns = vec!["time".to_string()];
    for n in &ibr_names {
        for p in [
            "delta", "omega", "omegameas", "pg", "pgrecv", "dws", "e", "z", "zhat",
        ] {
            columns.push(format!("{p}_{n}"));
        }
    }
    for m in &scn.microgrids {
        for p in ["xi1", "xi2", "flag", "ctrl"] {
            columns.push(format!("{p}_{}", m.name()));
        }
    }
    let mut series = TimeSeries::new(columns);
    let mut det_rows = Vec::new();
    let noise = if sim.sensor_noise_std > 0.0 {
        Some(
            Normal::new(0.0, sim.sensor_noise_std)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?,
        )
    } else {
        None
    };

    let mut next_event = 0;
    for k in 0..=steps {
        let t = k as f64 * tc;
        let wrap = |e: Error, idx: usize| Error::Scenario {
            time: t,
            event_index: idx,
            source: Box::new(e),
        };

        let pl = load_injection(&scn.load_signals, n_load_total, t);
        while next_event < scn.events.len() && scn.events[next_event].time <= t + 1e-9 {
            let ev = scn.events[next_event];
            match ev.action {
                EventAction::EnableController(m) => mgs[m].enabled = true,
                EventAction::DisableController(m) => mgs[m].enabled = false,
                EventAction::SetController(m, kind) => {
                    let rt = &mut mgs[m];
                    rt.kind = kind;
                    rt.slow_last = None;
                    if kind == ControllerKind::Observer {
                        rt.mode = Mode::Normal;
                    }
                }
                EventAction::CloseTie(ti) => {
                    if !ties_closed[ti] {
                        grid.close_tie(scn, &scn.ties[ti], &mut x, &pl, h_step)
                            .map_err(|e| wrap(e, next_event))?;
                        ties_closed[ti] = true;
                    }
                }
            }
            next_event += 1;
        }

        let p_true = measure_power(&grid.plant, &x, &pl).map_err(|e| wrap(e, next_event))?;
        let mut received_all = Vector::zeros(n_total);
        let mut tie_request: Option<usize> = None;
        for (mi, rt) in mgs.iter_mut().enumerate() {
            let mut recv = p_true.rows(rt.ibr0, rt.n).into_owned();
            if let Some(nd) = &noise {
                for v in recv.iter_mut() {
                    *v += nd.sample(&mut rt.sensor_rng);
                }
            }
            for (am, spec) in &scn.attacks {
                if *am == mi {
                    recv = apply_attack(&recv, spec, t, &rt.history, &mut rt.attack_rng)
                        .map_err(|e| wrap(e, next_event))?;
                }
            }
            rt.history.samples.push(recv.clone());
            received_all.rows_mut(rt.ibr0, rt.n).copy_from(&recv);
            let ibrs = &grid.ibrs[rt.ibr0..rt.ibr0 + rt.n];

            if k > 0 {
                let applied = rt.applied();
                rt.z = z_update_with(&rt.z, &applied, &recv, tc, ibrs, sim.quadrature)
                    .map_err(|e| wrap(e, next_event))?;
                if let (Some(md), Some(obs)) = (&rt.model, &mut rt.observer) {
                    let (xh, p_hat) =
                        predict_step_with(md, &obs.x_hat, &rt.u_cmd, &rt.e, cfg.watermark.placement)
                            .map_err(|e| wrap(e, next_event))?;
                    obs.x_hat = xh;
                    rt.zhat = z_update_with(&rt.zhat, &applied, &p_hat, tc, ibrs, sim.quadrature)
                        .map_err(|e| wrap(e, next_event))?;
                    obs.z_hat = rt.zhat.z.clone();
                }
                if let (Some(md), Some((cal, st))) = (&rt.model, &mut rt.detector) {
                    let flag = dw_step(st, &cal.baseline, md, &recv, &rt.u_cmd, &rt.e)
                        .map_err(|e| wrap(e, next_event))?;
                    if let Some(nu) = st.last_innovation() {
                        rt.innovations.push(nu);
                    }
                    det_rows.push(DetectorRow {
                        time: t,
                        microgrid: scn.microgrids[mi].name().to_string(),
                        xi1: st.xi1,
                        xi2: st.xi2,
                        eps1: st.eps1,
                        eps2: st.eps2,
                        flag,
                    });
                    if flag {
                        rt.flag_count += 1;
                        rt.first_flag.get_or_insert(t);
                        let correct = !scn.calibrating
                            && scn.microgrids[mi].config.detection.on_detect == OnDetect::Correct;
                        if correct && rt.enabled && rt.mode == Mode::Normal {
                            let neighbour = scn.ties.iter().enumerate().position(|(ti, tie)| {
                                !ties_closed[ti] && (tie.a.0 == mi || tie.b.0 == mi)
                            });
                            match neighbour {
                                Some(ti) => {
                                    rt.mode = Mode::Collaborative;
                                    tie_request = Some(ti);
                                    log::info!(
                                        "t = {t:.3}: attack on '{}' flagged, networking through '{}'",
                                        scn.microgrids[mi].name(),
                                        scn.ties[ti].name
                                    );
                                }
                                None => {
                                    rt.mode = Mode::Observer;
                                    log::info!(
                                        "t = {t:.3}: attack on '{}' flagged, switching to observer law",
                                        scn.microgrids[mi].name()
                                    );
                                }
                            }
                        }
                    }
                }
            }

            let n = rt.n;
            let active = if !rt.enabled {
                None
            } else {
                match rt.mode {
                    Mode::Collaborative => None,
                    Mode::Observer => Some(ControllerKind::Observer),
                    Mode::Normal => Some(rt.kind),
                }
            };
            let u = match active {
                None | Some(ControllerKind::None) => Vector::zeros(n),
                Some(ControllerKind::Optimal) => control_optimal(rt.gain.as_ref().expect("designed"), &rt.z.z),
                Some(ControllerKind::Decentralized) => control_decentralized(ibrs, &recv),
                Some(ControllerKind::Observer) => {
                    let obs = rt.observer.as_ref().ok_or_else(|| {
                        wrap(
                            Error::Config(format!(
                                "observer law in '{}' needs a prediction model",
                                scn.microgrids[mi].name()
                            )),
                            next_event,
                        )
                    })?;
                    control_observer(rt.gain.as_ref().expect("designed"), obs)
                }
                Some(ControllerKind::Pi) => {
                    let err = -sensor.y.rows(rt.ibr0, n).into_owned();
                    rt.pi.step(&err, tc)
                }
                Some(ControllerKind::SlowLqr) => {
                    let period = scn.microgrids[mi].config.control.slow_period;
                    if rt.slow_last.is_none_or(|t0| t - t0 >= period - 1e-9) {
                        rt.slow_hold = control_optimal(rt.gain.as_ref().expect("designed"), &rt.z.z);
                        rt.slow_last = Some(t);
                    }
                    rt.slow_hold.clone()
                }
            };
            let inject = rt.enabled && rt.mode == Mode::Normal && active.is_some();
            let e = match (&mut rt.watermark, inject) {
                (Some(w), true) => w.draw(),
                _ => Vector::zeros(n),
            };
            rt.u_cmd = u;
            rt.e = e;
            rt.trace.push(t, &rt.u_cmd, &rt.e, &recv);
        }
        if let Some(ti) = tie_request {
            if !ties_closed[ti] {
                grid.close_tie(scn, &scn.ties[ti], &mut x, &pl, h_step)
                    .map_err(|e| wrap(e, next_event))?;
                ties_closed[ti] = true;
            }
        }

        let mut row = Vec::with_capacity(series.columns.len());
        row.push(t);
        let mut applied = Vector::zeros(n_total);
        for rt in &mgs {
            applied.rows_mut(rt.ibr0, rt.n).copy_from(&rt.applied());
        }
        for rt in &mgs {
            for j in 0..rt.n {
                let i = rt.ibr0 + j;
                row.extend([
                    x[2 * i],
                    x[2 * i + 1],
                    sensor.y[i],
                    p_true[i],
                    received_all[i],
                    applied[i],
                    rt.e[j],
                    rt.z.z[j],
                    rt.zhat.z[j],
                ]);
            }
        }
        for rt in &mgs {
            let (xi1, xi2, flag) = rt
                .detector
                .as_ref()
                .map(|(_, s)| (s.xi1, s.xi2, f64::from(u8::from(s.flag))))
                .unwrap_or((0.0, 0.0, 0.0));
            row.extend([xi1, xi2, flag, f64::from(rt.ctrl_code())]);
        }
        series.push(row);

        if k == steps {
            break;
        }
        for s in 0..substeps {
            let ts = t + s as f64 * h_step;
            let pl_s = load_injection(&scn.load_signals, n_load_total, ts);
            x = grid.disc.step(&x, &applied, &pl_s);
            sensor.update(&true_frequency(&x), h_step);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(wrap(
                Error::InvalidParameter("plant state diverged to non-finite values".into()),
                next_event,
            ));
        }
    }

    let mut summary = vec![
        ("rows".to_string(), series.len().to_string()),
        ("horizon".to_string(), format!("{}", sim.horizon)),
        ("seed".to_string(), sim.seed.to_string()),
    ];
    for name in &ibr_names {
        let w = series.column(&format!("omega_{name}"))?;
        let p = series.column(&format!("pg_{name}"))?;
        summary.push((format!("rms_omega_{name}"), timeseries::fmt9(rms(&w))));
        summary.push((
            format!("max_abs_omega_{name}"),
            timeseries::fmt9(w.iter().fold(0.0f64, |a, v| a.max(v.abs()))),
        ));
        summary.push((format!("final_omega_{name}"), timeseries::fmt9(*w.last().unwrap_or(&0.0))));
        summary.push((format!("final_pg_{name}"), timeseries::fmt9(*p.last().unwrap_or(&0.0))));
    }
    for (mi, rt) in mgs.iter().enumerate() {
        let name = scn.microgrids[mi].name();
        summary.push((format!("flags_{name}"), rt.flag_count.to_string()));
        summary.push((
            format!("first_flag_{name}"),
            rt.first_flag.map(timeseries::fmt9).unwrap_or_else(|| "none".into()),
        ));
        let onset = scn
            .attacks
            .iter()
            .filter(|(m, _)| *m == mi)
            .map(|(_, a)| a.start)
            .fold(f64::INFINITY, f64::min);
        if onset.is_finite() {
            let latency = rt
                .first_flag
                .filter(|t| *t >= onset - 1e-9)
                .map(|t| timeseries::fmt9(t - onset))
                .unwrap_or_else(|| "none".into());
            summary.push((format!("detection_latency_{name}"), latency));
        }
        if let Some((cal, _)) = &rt.detector {
            summary.push((format!("eps1_{name}"), timeseries::fmt9(cal.eps1)));
            summary.push((format!("eps2_{name}"), timeseries::fmt9(cal.eps2)));
        }
    }
    for (ti, t) in scn.ties.iter().enumerate() {
        summary.push((format!("tie_closed_{}", t.name), u8::from(ties_closed[ti]).to_string()));
    }

    Ok(SimOutput {
        series,
        detector: det_rows,
        innovations: mgs.iter().map(|m| m.innovations.clone()).collect(),
        traces: mgs.iter().map(|m| m.trace.clone()).collect(),
        models: scn.models.clone(),
        calibrations: mgs
            .iter()
            .zip(&scn.calibrations)
            .map(|(m, c)| if scn.calibrating { None } else { m.detector.as_ref().map(|d| d.0.clone()).or(c.clone()) })
            .collect(),
        summary,
    })
}
