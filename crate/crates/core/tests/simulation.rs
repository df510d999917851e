use muagc_core::config::{ControllerKind, EventConfig, LoadSignalConfig, ScenarioConfig, TieConfig};
use muagc_core::error::Error;
use muagc_core::linalg::Vector;
use muagc_core::netmodel::LinearPlant;
use muagc_core::presets;
use muagc_core::simcore::{run_scenario, Discretization, MicrogridModel, Scenario, SimOutput};
use proptest::prelude::*;

fn run(cfg: &ScenarioConfig) -> SimOutput {
    run_scenario(&Scenario::from_config(cfg).unwrap()).unwrap()
}

fn rk4(plant: &LinearPlant, x: &Vector, u: &Vector, pl: &Vector, h: f64, n: usize) -> Vector {
    let f = |x: &Vector| &plant.a * x + &plant.b1 * u + &plant.f * pl;
    let dt = h / n as f64;
    let mut x = x.clone();
    for _ in 0..n {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (dt / 2.0)));
        let k3 = f(&(&x + &k2 * (dt / 2.0)));
        let k4 = f(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    x
}

fn tie_scenario() -> ScenarioConfig {
    let mut cfg = presets::two_microgrids(ControllerKind::Optimal, ControllerKind::Optimal);
    cfg.simulation.horizon = 1.5;
    cfg.events.push(EventConfig::DisableController {
        time: 0.5,
        microgrid: "mg1".into(),
    });
    cfg.events.push(EventConfig::CloseTie {
        time: 0.7,
        tie: "tie12".into(),
    });
    cfg.load_signals.push(LoadSignalConfig::Step {
        microgrid: "mg1".into(),
        bus: "bus1".into(),
        amplitude: 0.3 * presets::load1_power(),
        time: 0.5,
    });
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zoh_step_matches_fine_rk4(
        x0 in prop::collection::vec(-0.05f64..0.05, 6),
        u in prop::array::uniform3(-0.1f64..0.1),
        pl in prop::array::uniform3(-200.0f64..200.0),
    ) {
        let mg = MicrogridModel::build(&presets::microgrid1(ControllerKind::Optimal), 50.0).unwrap();
        let h = 0.005;
        let disc = Discretization::new(&mg.plant, h).unwrap();
        let x0 = Vector::from_vec(x0);
        let u = Vector::from_row_slice(&u);
        let pl = Vector::from_row_slice(&pl[..mg.n_load()]);
        let exact = disc.step(&x0, &u, &pl);
        let oracle = rk4(&mg.plant, &x0, &u, &pl, h, 64);
        prop_assert!((&exact - &oracle).amax() <= 1e-9 * oracle.amax().max(1e-6), "{exact} vs {oracle}");
    }
}

#[test]
fn rejects_non_positive_step() {
    let mg = MicrogridModel::build(&presets::microgrid1(ControllerKind::Optimal), 50.0).unwrap();
    for h in [0.0, -0.005, f64::NAN] {
        assert!(Discretization::new(&mg.plant, h).is_err());
    }
}

#[test]
fn tie_closes_without_a_power_jump() {
    let out = run(&tie_scenario());
    let t = out.series.column("time").unwrap();
    let k = t.iter().position(|&v| (v - 0.7).abs() < 1e-9).unwrap();
    let step = 0.3 * presets::load1_power();
    for n in ["ibr4", "ibr5"] {
        let p = out.series.column(&format!("pg_{n}")).unwrap();
        assert!(p[k - 1].abs() <= 1e-9 * step, "{n} before: {}", p[k - 1]);
        assert!(p[k].abs() <= 1e-3 * step, "{n} at closing: {}", p[k]);
    }
    assert!(out.summary.iter().any(|(k, v)| k == "tie_closed_tie12" && v == "1"));
}

#[test]
fn closing_a_second_tie_between_joined_microgrids_fails() {
    let mut cfg = tie_scenario();
    cfg.ties.push(TieConfig {
        name: "tie12b".into(),
        from: "mg1.bus3".into(),
        to: "mg2.bus5".into(),
        ..presets::tie()
    });
    cfg.events.push(EventConfig::CloseTie {
        time: 0.9,
        tie: "tie12b".into(),
    });
    match run_scenario(&Scenario::from_config(&cfg).unwrap()) {
        Err(Error::Scenario {
            time, event_index, ..
        }) => {
            assert!((time - 0.9).abs() < 1e-9);
            assert_eq!(event_index, 2);
        }
        other => panic!("expected scenario error, got {:?}", other.map(|o| o.summary)),
    }
}

#[test]
fn runs_are_deterministic_and_seeded() {
    let mut cfg = presets::single_microgrid(ControllerKind::Optimal);
    cfg.simulation.horizon = 0.5;
    cfg.simulation.sensor_noise_std = 1.0;
    let csv = |cfg: &ScenarioConfig| {
        let mut buf = Vec::new();
        run(cfg).series.write_csv(&mut buf).unwrap();
        buf
    };
    let a = csv(&cfg);
    assert_eq!(a, csv(&cfg));
    cfg.simulation.seed += 1;
    assert_ne!(a, csv(&cfg));
}

#[test]
fn unregulated_step_settles_at_the_droop_deviation() {
    let mut cfg = presets::single_microgrid(ControllerKind::None);
    cfg.simulation.horizon = 3.0;
    let step = 0.1 * presets::load1_power();
    cfg.load_signals.push(LoadSignalConfig::Step {
        microgrid: "mg1".into(),
        bus: "bus1".into(),
        amplitude: step,
        time: 0.0,
    });
    let out = run(&cfg);
    let mg = MicrogridModel::build(&cfg.microgrids[0], cfg.simulation.nominal_hz).unwrap();
    let inv_m: f64 = mg.ibr_params.iter().map(|p| 1.0 / p.m_p).sum();
    let expected = -step / inv_m;
    for n in ["ibr1", "ibr2", "ibr3"] {
        let w = *out.series.column(&format!("omega_{n}")).unwrap().last().unwrap();
        assert!((w - expected).abs() <= 1e-3 * expected.abs(), "{n}: {w} vs {expected}");
    }
}
