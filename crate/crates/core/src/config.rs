//! Scenario configuration file (TOML, versioned by `schema_version`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{DEFAULT_M_P, DEFAULT_NOMINAL_HZ, DEFAULT_OMEGA_C};
use crate::transform::Quadrature;
use crate::watermark::{
    WatermarkPlacement, DEFAULT_CALIBRATION_SECONDS, DEFAULT_SIGMA, DEFAULT_THRESHOLD_FACTOR,
    DEFAULT_WINDOW,
};

pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_HORIZON: f64 = 5.0;
pub const DEFAULT_INTEGRATOR_STEP: f64 = 0.0005;
pub const DEFAULT_CONTROL_PERIOD: f64 = 0.005;
pub const DEFAULT_SENSOR_TAU: f64 = 0.1;
pub const DEFAULT_SLOW_PERIOD: f64 = 0.1;
pub const DEFAULT_PI_KP: f64 = 0.2;
pub const DEFAULT_PI_KI: f64 = 10.0;
pub const DEFAULT_PI_CLAMP: f64 = 1.0;
pub const DEFAULT_V_STAR: f64 = 380.0;
/// Default z-space LQR state weight per inverter.
pub const DEFAULT_Q: f64 = 100.0;
pub const DEFAULT_SEED: u64 = 2024;

fn d_schema() -> u32 {
    SCHEMA_VERSION
}
fn d_horizon() -> f64 {
    DEFAULT_HORIZON
}
fn d_h() -> f64 {
    DEFAULT_INTEGRATOR_STEP
}
fn d_tc() -> f64 {
    DEFAULT_CONTROL_PERIOD
}
fn d_tau() -> f64 {
    DEFAULT_SENSOR_TAU
}
fn d_seed() -> u64 {
    DEFAULT_SEED
}
fn d_hz() -> f64 {
    DEFAULT_NOMINAL_HZ
}
fn d_true() -> bool {
    true
}
fn d_omega_c() -> f64 {
    DEFAULT_OMEGA_C
}
fn d_m_p() -> f64 {
    DEFAULT_M_P
}
fn d_q() -> f64 {
    DEFAULT_Q
}
fn d_one() -> f64 {
    1.0
}
fn d_v() -> f64 {
    DEFAULT_V_STAR
}
fn d_slow() -> f64 {
    DEFAULT_SLOW_PERIOD
}
fn d_kp() -> f64 {
    DEFAULT_PI_KP
}
fn d_ki() -> f64 {
    DEFAULT_PI_KI
}
fn d_clamp() -> Option<f64> {
    Some(DEFAULT_PI_CLAMP)
}
fn d_window() -> usize {
    DEFAULT_WINDOW
}
fn d_factor() -> f64 {
    DEFAULT_THRESHOLD_FACTOR
}
fn d_cal_seconds() -> f64 {
    DEFAULT_CALIBRATION_SECONDS
}
fn d_sigma() -> f64 {
    DEFAULT_SIGMA
}
fn d_beta() -> f64 {
    crate::sysid::DEFAULT_BETA
}
fn d_dt_prime() -> f64 {
    crate::sysid::DEFAULT_DT_PRIME
}
fn d_k0() -> usize {
    crate::sysid::DEFAULT_K0
}
fn d_candidates() -> Vec<usize> {
    crate::sysid::DEFAULT_CANDIDATES.collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    #[serde(default = "d_h")]
    pub integrator_step: f64,
    #[serde(default = "d_tc")]
    pub control_period: f64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_hz")]
    pub nominal_hz: f64,
    /// Time constant of the lagged frequency sensor (s).
    #[serde(default = "d_tau")]
    pub sensor_tau: f64,
    /// Standard deviation of the power-measurement noise (W).
    #[serde(default)]
    pub sensor_noise_std: f64,
    #[serde(default)]
    pub quadrature: Quadrature,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            integrator_step: DEFAULT_INTEGRATOR_STEP,
            control_period: DEFAULT_CONTROL_PERIOD,
            seed: DEFAULT_SEED,
            nominal_hz: DEFAULT_NOMINAL_HZ,
            sensor_tau: DEFAULT_SENSOR_TAU,
            sensor_noise_std: 0.0,
            quadrature: Quadrature::Euler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbrConfig {
    pub name: String,
    #[serde(default = "d_omega_c")]
    pub omega_c: f64,
    #[serde(default = "d_m_p")]
    pub m_p: f64,
    /// LQR state weight.
    #[serde(default = "d_q")]
    pub q: f64,
    /// LQR input weight.
    #[serde(default = "d_one")]
    pub r: f64,
    #[serde(default)]
    pub v_star: Option<f64>,
}

impl IbrConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            omega_c: DEFAULT_OMEGA_C,
            m_p: DEFAULT_M_P,
            q: DEFAULT_Q,
            r: 1.0,
            v_star: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusConfig {
    pub name: String,
    /// Nominal consumption (W).
    #[serde(default)]
    pub load: Option<f64>,
    /// Resistive load per phase (Ω), converted to `V*²/R`.
    #[serde(default)]
    pub load_resistance: Option<f64>,
    #[serde(default)]
    pub v_star: Option<f64>,
}

impl BusConfig {
    pub fn nominal_load(&self, v_star: f64) -> Result<f64> {
        match (self.load, self.load_resistance) {
            (Some(_), Some(_)) => Err(Error::Config(format!(
                "bus '{}' sets both load and load_resistance",
                self.name
            ))),
            (Some(p), None) => Ok(p),
            (None, Some(r)) if r > 0.0 => Ok(v_star * v_star / r),
            (None, Some(r)) => Err(Error::Config(format!(
                "bus '{}' has non-positive load resistance {r}",
                self.name
            ))),
            (None, None) => Ok(0.0),
        }
    }
}

/// Branch given either as a bus-admittance entry (`y`, `theta`) or as a
/// series impedance (`r`, `x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub x: Option<f64>,
}

impl BranchConfig {
    pub fn reactive(from: &str, to: &str, y: f64) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            y: Some(y),
            theta: None,
            r: None,
            x: None,
        }
    }

    /// `(Y, θ, series conductance)`
    pub fn admittance(&self) -> Result<(f64, f64, f64)> {
        match (self.y, self.r, self.x) {
            (Some(y), None, None) => Ok((y, self.theta.unwrap_or(std::f64::consts::FRAC_PI_2), 0.0)),
            (None, r, Some(x)) if self.theta.is_none() => {
                let (b, g) = crate::netmodel::Branch::from_impedance(0, 1, r.unwrap_or(0.0), x)?;
                Ok((b.y, b.theta, g))
            }
            _ => Err(Error::Config(format!(
                "branch {}-{} must give either y (and optional theta) or x (and optional r)",
                self.from, self.to
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Optimal,
    Decentralized,
    Observer,
    Pi,
    SlowLqr,
    None,
}

impl ControllerKind {
    pub fn code(self) -> u8 {
        match self {
            ControllerKind::None => 0,
            ControllerKind::Optimal => 1,
            ControllerKind::Decentralized => 2,
            ControllerKind::Observer => 3,
            ControllerKind::Pi => 4,
            ControllerKind::SlowLqr => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnDetect {
    /// Run the correction procedure (observer or collaborative).
    #[default]
    Correct,
    /// Log detector output only.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub kind: ControllerKind,
    #[serde(default = "d_true")]
    pub enabled: bool,
    #[serde(default = "d_slow")]
    pub slow_period: f64,
    #[serde(default = "d_kp")]
    pub pi_kp: f64,
    #[serde(default = "d_ki")]
    pub pi_ki: f64,
    #[serde(default = "d_clamp")]
    pub pi_clamp: Option<f64>,
}

impl ControlConfig {
    pub fn of(kind: ControllerKind) -> Self {
        Self {
            kind,
            enabled: true,
            slow_period: DEFAULT_SLOW_PERIOD,
            pi_kp: DEFAULT_PI_KP,
            pi_ki: DEFAULT_PI_KI,
            pi_clamp: Some(DEFAULT_PI_CLAMP),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub on_detect: OnDetect,
    /// Persisted prediction model; identified automatically when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Persisted baseline and thresholds; calibrated automatically when absent.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            on_detect: OnDetect::Correct,
            model: None,
            calibration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridConfig {
    pub name: String,
    #[serde(default = "d_v")]
    pub v_star: f64,
    pub ibrs: Vec<IbrConfig>,
    #[serde(default)]
    pub buses: Vec<BusConfig>,
    #[serde(default)]
    pub branches: Vec<BranchConfig>,
    pub control: ControlConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieConfig {
    pub name: String,
    /// Endpoints as `"microgrid.node"`.
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub closed: bool,
}

impl TieConfig {
    pub fn as_branch(&self) -> BranchConfig {
        BranchConfig {
            from: self.from.clone(),
            to: self.to.clone(),
            y: self.y,
            theta: self.theta,
            r: self.r,
            x: self.x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventConfig {
    EnableController { time: f64, microgrid: String },
    DisableController { time: f64, microgrid: String },
    SetController {
        time: f64,
        microgrid: String,
        kind: ControllerKind,
    },
    CloseTie { time: f64, tie: String },
}

impl EventConfig {
    pub fn time(&self) -> f64 {
        match self {
            EventConfig::EnableController { time, .. }
            | EventConfig::DisableController { time, .. }
            | EventConfig::SetController { time, .. }
            | EventConfig::CloseTie { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadSignalConfig {
    Constant {
        microgrid: String,
        bus: String,
        amplitude: f64,
    },
    Step {
        microgrid: String,
        bus: String,
        amplitude: f64,
        time: f64,
    },
    PeriodicPulse {
        microgrid: String,
        bus: String,
        amplitude: f64,
        period: f64,
        width: f64,
        #[serde(default)]
        start: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackConfig {
    NoiseInjection {
        microgrid: String,
        channels: Vec<String>,
        start: f64,
        end: f64,
        std: f64,
    },
    Replay {
        microgrid: String,
        channels: Vec<String>,
        start: f64,
        end: f64,
        source_start: f64,
        source_end: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSection {
    /// Standard deviation of each watermark channel (rad/s).
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub placement: WatermarkPlacement,
}

impl Default for WatermarkSection {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            placement: WatermarkPlacement::Input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default = "d_window")]
    pub window: usize,
    #[serde(default = "d_factor")]
    pub threshold_factor: f64,
    #[serde(default = "d_cal_seconds")]
    pub calibration_seconds: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            threshold_factor: DEFAULT_THRESHOLD_FACTOR,
            calibration_seconds: DEFAULT_CALIBRATION_SECONDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationSection {
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_dt_prime")]
    pub dt_prime: f64,
    #[serde(default = "d_k0")]
    pub k0: usize,
    #[serde(default = "d_candidates")]
    pub candidates: Vec<usize>,
}

impl Default for IdentificationSection {
    fn default() -> Self {
        Self {
            beta: crate::sysid::DEFAULT_BETA,
            dt_prime: crate::sysid::DEFAULT_DT_PRIME,
            k0: crate::sysid::DEFAULT_K0,
            candidates: d_candidates(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "d_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub microgrids: Vec<MicrogridConfig>,
    #[serde(default)]
    pub ties: Vec<TieConfig>,
    #[serde(default)]
    pub events: Vec<EventConfig>,
    #[serde(default)]
    pub load_signals: Vec<LoadSignalConfig>,
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    #[serde(default)]
    pub watermark: WatermarkSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub identification: IdentificationSection,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Reads a scenario and resolves relative file references against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for mg in &mut cfg.microgrids {
            for p in [&mut mg.detection.model, &mut mg.detection.calibration]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot encode scenario: {e}")))
    }

    pub fn microgrid_index(&self, name: &str) -> Result<usize> {
        self.microgrids
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("unknown microgrid '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ScenarioConfig::from_toml_str(
            r#"
            schema_version = 1
            [[microgrids]]
            name = "a"
            ibrs = [{ name = "g1" }]
            buses = [{ name = "b1", load = 100.0 }]
            branches = [{ from = "g1", to = "b1", y = 5.0 }]
            control = { kind = "optimal" }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.simulation, SimulationConfig::default());
        assert_eq!(cfg.microgrids[0].ibrs[0], IbrConfig::named("g1"));
        assert_eq!(cfg.detector, DetectorSection::default());
        assert_eq!(cfg.identification, IdentificationSection::default());
        assert_eq!(cfg.watermark, WatermarkSection::default());
    }

    #[test]
    fn rejects_other_schema_versions() {
        let err = ScenarioConfig::from_toml_str(
            "schema_version = 7\nmicrogrids = []\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = ScenarioConfig::from_toml_str(
            "schema_version = 1\nmicrogrids = []\n[simulation]\nhorizn = 3.0\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("horizn")));
    }

    #[test]
    fn resistive_load_conversion() {
        let b = BusConfig {
            name: "b".into(),
            load: None,
            load_resistance: Some(25.0),
            v_star: None,
        };
        assert_eq!(b.nominal_load(380.0).unwrap(), 5776.0);
    }

    #[test]
    fn impedance_branch() {
        let b = BranchConfig {
            from: "a".into(),
            to: "b".into(),
            y: None,
            theta: None,
            r: None,
            x: Some(0.25),
        };
        let (y, theta, g) = b.admittance().unwrap();
        assert!((y - 4.0).abs() < 1e-12);
        assert!((theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(g, 0.0);
    }
}
