//! The experimental pulse protocol: Ω ramp-on at fixed Δ0, a linear detuning
//! sweep at rate s, and Ω ramp-off at Δf, plus the Δ0 adiabaticity
//! calibration.
//!
//! This module owns the time-sampling convention (midpoint of each step) so
//! the exact and MPS backends cannot disagree on how a schedule is
//! discretized.

use crate::error::{KzqError, Result};
use serde::{Deserialize, Serialize};

/// A control waveform (Ω(t), Δ(t)) over a finite duration.
pub trait Waveform {
    fn omega(&self, t: f64) -> f64;
    fn delta(&self, t: f64) -> f64;
    fn duration(&self) -> f64;

    /// Schedule values at the midpoint of the step `[t, t + dt]`; both
    /// backends evolve with these piecewise-constant values.
    fn midpoint(&self, t: f64, dt: f64) -> (f64, f64) {
        let tm = t + 0.5 * dt;
        (self.omega(tm), self.delta(tm))
    }
}

/// Three-phase Kibble-Zurek sweep: linear Ω ramp-on at Δ0, linear detuning
/// sweep Δ0 → Δf at rate `rate`, linear Ω ramp-off at Δf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub ramp_on: f64,
    pub delta0: f64,
    pub delta_f: f64,
    /// Detuning sweep rate in rad/µs².
    pub rate: f64,
    pub omega_max: f64,
    pub ramp_off: f64,
}

impl PulseSchedule {
    pub fn sweep_duration(&self) -> f64 {
        (self.delta_f - self.delta0) / self.rate
    }

    /// Time at which the sweep crosses detuning `delta`, if it does.
    pub fn delta_crossing_time(&self, delta: f64) -> Option<f64> {
        if delta < self.delta0 || delta > self.delta_f {
            return None;
        }
        Some(self.ramp_on + (delta - self.delta0) / self.rate)
    }
}

impl Waveform for PulseSchedule {
    fn omega(&self, t: f64) -> f64 {
        let t_sweep_end = self.ramp_on + self.sweep_duration();
        if t <= 0.0 {
            0.0
        } else if t < self.ramp_on {
            self.omega_max * t / self.ramp_on
        } else if t <= t_sweep_end {
            self.omega_max
        } else if t < t_sweep_end + self.ramp_off {
            self.omega_max * (1.0 - (t - t_sweep_end) / self.ramp_off)
        } else {
            0.0
        }
    }

    fn delta(&self, t: f64) -> f64 {
        if t <= self.ramp_on {
            self.delta0
        } else {
            (self.delta0 + self.rate * (t - self.ramp_on)).min(self.delta_f)
        }
    }

    fn duration(&self) -> f64 {
        self.ramp_on + self.sweep_duration() + self.ramp_off
    }
}

/// Builds the three-phase sweep schedule. `ramp_on` defaults to 1 µs and
/// `ramp_off` to 0.1 µs when `None`.
pub fn build_kzm_schedule(
    delta0: f64,
    delta_f: f64,
    rate: f64,
    omega_max: f64,
    ramp_on: Option<f64>,
    ramp_off: Option<f64>,
) -> Result<PulseSchedule> {
    if delta0 >= delta_f {
        return Err(KzqError::Schedule(format!(
            "initial detuning {delta0} must lie below final detuning {delta_f}"
        )));
    }
    if !(rate > 0.0) {
        return Err(KzqError::Schedule(format!("sweep rate must be positive, got {rate}")));
    }
    if !(omega_max > 0.0) {
        return Err(KzqError::Schedule(format!(
            "omega_max must be positive, got {omega_max}"
        )));
    }
    let ramp_on = ramp_on.unwrap_or(1.0);
    let ramp_off = ramp_off.unwrap_or(0.1);
    if ramp_on <= 0.0 || ramp_off <= 0.0 {
        return Err(KzqError::Schedule("ramp durations must be positive".into()));
    }
    Ok(PulseSchedule {
        ramp_on,
        delta0,
        delta_f,
        rate,
        omega_max,
        ramp_off,
    })
}

/// Calibration pulse: Ω ramped linearly on and back off at a fixed detuning.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationPulse {
    pub delta: f64,
    pub omega_max: f64,
    pub ramp: f64,
}

impl Waveform for CalibrationPulse {
    fn omega(&self, t: f64) -> f64 {
        if t <= 0.0 || t >= 2.0 * self.ramp {
            0.0
        } else if t < self.ramp {
            self.omega_max * t / self.ramp
        } else {
            self.omega_max * (2.0 - t / self.ramp)
        }
    }

    fn delta(&self, _t: f64) -> f64 {
        self.delta
    }

    fn duration(&self) -> f64 {
        2.0 * self.ramp
    }
}

/// Ordered grid of sweep rates for a rate scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateGrid {
    rates: Vec<f64>,
}

impl RateGrid {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(KzqError::Schedule("rate grid is empty".into()));
        }
        if rates.iter().any(|&r| !(r > 0.0)) {
            return Err(KzqError::Schedule("all rates must be positive".into()));
        }
        // Duplicates are allowed (useful for determinism checks); the order
        // must still be nondecreasing.
        if rates.windows(2).any(|w| w[0] > w[1]) {
            return Err(KzqError::Schedule("rates must be nondecreasing".into()));
        }
        Ok(Self { rates })
    }

    /// Logarithmically spaced grid over `[s_min, s_max]`.
    pub fn log_spaced(s_min: f64, s_max: f64, count: usize) -> Result<Self> {
        if count < 2 || !(s_min > 0.0) || s_max <= s_min {
            return Err(KzqError::Schedule(format!(
                "invalid log grid: [{s_min}, {s_max}] with {count} points"
            )));
        }
        let rates = (0..count)
            .map(|k| {
                let f = k as f64 / (count - 1) as f64;
                s_min * (s_max / s_min).powf(f)
            })
            .collect();
        Self::new(rates)
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.rates[0], *self.rates.last().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn boundary_values() {
        let s = build_kzm_schedule(-10.0, 20.0, 15.0, 12.0, None, None).unwrap();
        assert_eq!(s.omega(0.0), 0.0);
        assert_eq!(s.delta(0.0), -10.0);
        assert_relative_eq!(s.duration(), 1.0 + 2.0 + 0.1, max_relative = 1e-15);
        // End of the pulse: Ω off, Δ at Δf.
        assert_eq!(s.omega(s.duration()), 0.0);
        assert_eq!(s.delta(s.duration()), 20.0);
    }

    #[test]
    fn mid_sweep_linearity() {
        let s = build_kzm_schedule(-5.0, 5.0, 4.0, 10.0, Some(1.0), Some(0.1)).unwrap();
        for tp in [0.0, 0.5, 1.3, 2.4] {
            assert_relative_eq!(s.delta(1.0 + tp), -5.0 + 4.0 * tp, max_relative = 1e-12);
        }
        assert_eq!(s.omega(1.7), 10.0);
    }

    #[test]
    fn omega_is_continuous() {
        let s = build_kzm_schedule(-8.0, 12.0, 10.0, 7.0, Some(0.5), Some(0.2)).unwrap();
        let eps = 1e-9;
        for t in [0.0, 0.5, 0.5 + 2.0, s.duration()] {
            let lo = s.omega((t - eps).max(0.0));
            let hi = s.omega(t + eps);
            assert!((lo - hi).abs() < 1e-6, "discontinuity at t = {t}");
        }
    }

    #[test]
    fn ordering_error() {
        assert!(build_kzm_schedule(5.0, -5.0, 1.0, 1.0, None, None).is_err());
        assert!(build_kzm_schedule(0.0, 1.0, -1.0, 1.0, None, None).is_err());
    }

    #[test]
    fn crossing_times() {
        let s = build_kzm_schedule(-6.0, 6.0, 3.0, 1.0, Some(1.0), Some(0.1)).unwrap();
        assert_relative_eq!(s.delta_crossing_time(0.0).unwrap(), 3.0, max_relative = 1e-12);
        assert!(s.delta_crossing_time(7.0).is_none());
    }

    #[test]
    fn rate_grid_validation() {
        assert!(RateGrid::new(vec![1.0, 1.0]).is_err());
        assert!(RateGrid::new(vec![2.0, 1.0]).is_err());
        let g = RateGrid::log_spaced(1.0, 10.0, 6).unwrap();
        assert_eq!(g.rates().len(), 6);
        assert_relative_eq!(g.bounds().1, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn midpoint_sampling_convention() {
        let s = build_kzm_schedule(-4.0, 4.0, 8.0, 2.0, Some(1.0), Some(0.1)).unwrap();
        let (_, d) = s.midpoint(1.0, 0.5);
        assert_relative_eq!(d, -4.0 + 8.0 * 0.25, max_relative = 1e-12);
    }
}
