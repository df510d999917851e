//! Power and frequency measurement models.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::netmodel::LinearPlant;

/// Instantaneous `ΔP_G = h_red Δδ_G + f_map ΔP_L`.
pub fn measure_power(plant: &LinearPlant, x: &Vector, d_p_l: &Vector) -> Result<Vector> {
    if x.len() != plant.n_states() {
        return Err(Error::dim("measure_power x", plant.n_states(), x.len()));
    }
    if d_p_l.len() != plant.n_load() {
        return Err(Error::dim("measure_power d_p_l", plant.n_load(), d_p_l.len()));
    }
    let delta = Vector::from_fn(plant.n_ibr(), |i, _| x[2 * i]);
    let mut p = &plant.h_red * delta;
    if !d_p_l.is_empty() {
        p += &plant.f_map * d_p_l;
    }
    Ok(p)
}

/// Frequency deviations `Δω_i` read from the plant state.
pub fn true_frequency(x: &Vector) -> Vector {
    Vector::from_fn(x.len() / 2, |i, _| x[2 * i + 1])
}

/// One exact update of the first-order lag `ẏ = (ω − y)/τ` with ω held
/// over the step.
pub fn measure_frequency_lagged(true_omega: f64, sensor_state: f64, tau: f64, h: f64) -> f64 {
    if tau <= 0.0 {
        return true_omega;
    }
    sensor_state + (1.0 - (-h / tau).exp()) * (true_omega - sensor_state)
}

/// Lagged frequency sensors, one per inverter.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySensor {
    pub y: Vector,
    pub tau: f64,
}

impl FrequencySensor {
    pub fn new(n: usize, tau: f64) -> Self {
        Self {
            y: Vector::zeros(n),
            tau,
        }
    }

    pub fn update(&mut self, omega: &Vector, h: f64) {
        for i in 0..self.y.len() {
            self.y[i] = measure_frequency_lagged(omega[i], self.y[i], self.tau, h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matched_constant_stays_constant() {
        assert_eq!(measure_frequency_lagged(0.4, 0.4, 0.1, 0.001), 0.4);
    }

    #[test]
    fn step_response_at_tau() {
        let (tau, h) = (0.1, 0.0005);
        let mut y = 0.0;
        for _ in 0..200 {
            y = measure_frequency_lagged(1.0, y, tau, h);
        }
        assert!((y - (1.0 - (-1f64).exp())).abs() < 1e-12);
        assert!((y - 0.632).abs() < 1e-3);
    }

    #[test]
    fn fast_square_wave_is_not_tracked() {
        let (tau, h) = (0.1, 0.0005);
        let period = 0.01;
        let mut y = 0.0;
        let mut worst: f64 = 0.0;
        for k in 0..4000 {
            let t = k as f64 * h;
            let u = if (t % period) < period / 2.0 { 1.0 } else { -1.0 };
            y = measure_frequency_lagged(u, y, tau, h);
            if t > 0.5 {
                worst = worst.max((u - y).abs());
            }
        }
        assert!(worst >= 0.5 * 2.0);
    }
}
