//! False data injection on the received power measurements.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackKind {
    NoiseInjection { std: f64 },
    Replay { source_start: f64, source_end: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Targeted measurement channels (inverter indices within the microgrid).
    pub channels: Vec<usize>,
    pub start: f64,
    pub end: f64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, channels: Vec<usize>, start: f64, end: f64) -> Result<Self> {
        if !(start < end) {
            return Err(Error::InvalidParameter(format!(
                "attack window [{start}, {end}) is empty"
            )));
        }
        match kind {
            AttackKind::NoiseInjection { std } if !(std >= 0.0) => {
                return Err(Error::InvalidParameter(format!(
                    "attack noise std must be non-negative, got {std}"
                )))
            }
            AttackKind::Replay {
                source_start,
                source_end,
            } if !(source_start >= 0.0 && source_start < source_end && source_end <= start) => {
                return Err(Error::InvalidParameter(format!(
                    "replay source [{source_start}, {source_end}) must be non-empty and precede the attack start {start}"
                )))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            channels,
            start,
            end,
        })
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.start - 1e-12 && t < self.end - 1e-12
    }
}

/// Received measurements sampled every `dt` from time zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementHistory {
    pub dt: f64,
    pub samples: Vec<Vector>,
}

impl MeasurementHistory {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            samples: Vec::new(),
        }
    }

    fn index(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

pub fn apply_attack<R: Rng>(
    true_meas: &Vector,
    spec: &AttackSpec,
    t: f64,
    history: &MeasurementHistory,
    rng: &mut R,
) -> Result<Vector> {
    let mut out = true_meas.clone();
    if !spec.active(t) {
        return Ok(out);
    }
    for &c in &spec.channels {
        if c >= out.len() {
            return Err(Error::dim("apply_attack channel", out.len(), c));
        }
    }
    match spec.kind {
        AttackKind::NoiseInjection { std } => {
            if std > 0.0 {
                let normal = Normal::new(0.0, std)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                for &c in &spec.channels {
                    out[c] += normal.sample(rng);
                }
            }
        }
        AttackKind::Replay {
            source_start,
            source_end,
        } => {
            let first = history.index(source_start);
            let len = history.index(source_end) - first;
            let k = history.index(t - spec.start) % len.max(1);
            let src = history.samples.get(first + k).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "replay source sample at t = {:.4} s has not been recorded",
                    (first + k) as f64 * history.dt
                ))
            })?;
            for &c in &spec.channels {
                out[c] = src[c];
            }
        }
    }
    Ok(out)
}
