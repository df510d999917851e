//! Default case study: a three-inverter microgrid with two resistive loads
//! and a two-inverter neighbour, joined through a switchable tie line.

use crate::config::{
    BranchConfig, BusConfig, ControlConfig, ControllerKind, DetectionConfig, IbrConfig,
    MicrogridConfig, ScenarioConfig, TieConfig, SCHEMA_VERSION,
};

/// Inverter coupling admittance (S), about 0.11 Ω of reactance.
pub const COUPLING_Y: f64 = 9.09;
pub const FEEDER_12_Y: f64 = 4.0;
pub const FEEDER_23_Y: f64 = 1.47;
pub const FEEDER_45_Y: f64 = 4.0;
pub const TIE_Y: f64 = 0.3;

pub const LOAD1_OHMS: f64 = 25.0;
pub const LOAD2_OHMS: f64 = 20.0;
pub const LOAD3_OHMS: f64 = 33.0;

/// Relative amplitude of the default Load-1 pulses.
pub const PULSE_FRACTION: f64 = 0.3;
pub const PULSE_PERIOD: f64 = 0.4;
pub const PULSE_WIDTH: f64 = 0.2;

fn bus(name: &str, ohms: Option<f64>) -> BusConfig {
    BusConfig {
        name: name.into(),
        load: None,
        load_resistance: ohms,
        v_star: None,
    }
}

pub fn microgrid1(kind: ControllerKind) -> MicrogridConfig {
    MicrogridConfig {
        name: "mg1".into(),
        v_star: crate::config::DEFAULT_V_STAR,
        ibrs: ["ibr1", "ibr2", "ibr3"].map(IbrConfig::named).to_vec(),
        buses: vec![
            bus("bus1", Some(LOAD1_OHMS)),
            bus("bus2", None),
            bus("bus3", Some(LOAD2_OHMS)),
        ],
        branches: vec![
            BranchConfig::reactive("ibr1", "bus1", COUPLING_Y),
            BranchConfig::reactive("ibr2", "bus2", COUPLING_Y),
            BranchConfig::reactive("ibr3", "bus3", COUPLING_Y),
            BranchConfig::reactive("bus1", "bus2", FEEDER_12_Y),
            BranchConfig::reactive("bus2", "bus3", FEEDER_23_Y),
        ],
        control: ControlConfig::of(kind),
        detection: DetectionConfig::default(),
    }
}

pub fn microgrid2(kind: ControllerKind) -> MicrogridConfig {
    MicrogridConfig {
        name: "mg2".into(),
        v_star: crate::config::DEFAULT_V_STAR,
        ibrs: ["ibr4", "ibr5"].map(IbrConfig::named).to_vec(),
        buses: vec![bus("bus4", None), bus("bus5", Some(LOAD3_OHMS))],
        branches: vec![
            BranchConfig::reactive("ibr4", "bus4", COUPLING_Y),
            BranchConfig::reactive("ibr5", "bus5", COUPLING_Y),
            BranchConfig::reactive("bus4", "bus5", FEEDER_45_Y),
        ],
        control: ControlConfig::of(kind),
        detection: DetectionConfig::default(),
    }
}

pub fn tie() -> TieConfig {
    TieConfig {
        name: "tie12".into(),
        from: "mg1.bus2".into(),
        to: "mg2.bus4".into(),
        y: Some(TIE_Y),
        theta: None,
        r: None,
        x: None,
        closed: false,
    }
}

/// Nominal Load-1 consumption (W).
pub fn load1_power() -> f64 {
    crate::config::DEFAULT_V_STAR.powi(2) / LOAD1_OHMS
}

/// Microgrid 1 alone, no disturbances.
pub fn single_microgrid(kind: ControllerKind) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        simulation: Default::default(),
        microgrids: vec![microgrid1(kind)],
        ties: vec![],
        events: vec![],
        load_signals: vec![],
        attacks: vec![],
        watermark: Default::default(),
        detector: Default::default(),
        identification: Default::default(),
    }
}

/// Both microgrids with the tie open, no disturbances.
pub fn two_microgrids(kind1: ControllerKind, kind2: ControllerKind) -> ScenarioConfig {
    let mut cfg = single_microgrid(kind1);
    cfg.microgrids.push(microgrid2(kind2));
    cfg.ties.push(tie());
    cfg
}
