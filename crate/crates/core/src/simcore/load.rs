//! Deterministic load disturbance signals.

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadKind {
    Constant,
    Step { time: f64 },
    PeriodicPulse { period: f64, width: f64, start: f64 },
}

/// Consumption change at one load node (W); positive means more demand.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSignalSpec {
    pub kind: LoadKind,
    pub amplitude: f64,
    /// Load-node index in the simulated network's load ordering.
    pub node: usize,
}

impl LoadSignalSpec {
    pub fn new(kind: LoadKind, amplitude: f64, node: usize) -> Result<Self> {
        if let LoadKind::PeriodicPulse { period, width, .. } = kind {
            if !(period > width && width > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "pulse period {period} must exceed a positive width {width}"
                )));
            }
        }
        Ok(Self {
            kind,
            amplitude,
            node,
        })
    }
}

pub fn load_signal(spec: &LoadSignalSpec, t: f64) -> f64 {
    match spec.kind {
        LoadKind::Constant => spec.amplitude,
        LoadKind::Step { time } => {
            if t >= time {
                spec.amplitude
            } else {
                0.0
            }
        }
        LoadKind::PeriodicPulse {
            period,
            width,
            start,
        } => {
            if t < start {
                return 0.0;
            }
            let phase = (t - start).rem_euclid(period);
            if phase < width {
                spec.amplitude
            } else {
                0.0
            }
        }
    }
}

/// Net injection deviations `ΔP_L` (consumption enters with a minus sign).
pub fn load_injection(specs: &[LoadSignalSpec], n_load: usize, t: f64) -> Vector {
    let mut v = Vector::zeros(n_load);
    for s in specs {
        v[s.node] -= load_signal(s, t);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds() {
        let c = LoadSignalSpec::new(LoadKind::Constant, 5.0, 0).unwrap();
        assert_eq!(load_signal(&c, 123.0), 5.0);
        let s = LoadSignalSpec::new(LoadKind::Step { time: 0.5 }, 5.0, 0).unwrap();
        assert_eq!(load_signal(&s, 0.49), 0.0);
        assert_eq!(load_signal(&s, 0.5), 5.0);
        let p = LoadSignalSpec::new(
            LoadKind::PeriodicPulse {
                period: 0.4,
                width: 0.2,
                start: 0.0,
            },
            5.0,
            1,
        )
        .unwrap();
        assert_eq!(load_signal(&p, 0.1), 5.0);
        assert_eq!(load_signal(&p, 0.3), 0.0);
        assert_eq!(load_injection(&[p], 2, 0.1)[1], -5.0);
    }

    #[test]
    fn pulse_width_must_fit() {
        assert!(LoadSignalSpec::new(
            LoadKind::PeriodicPulse {
                period: 0.2,
                width: 0.2,
                start: 0.0
            },
            1.0,
            0
        )
        .is_err());
    }
}
