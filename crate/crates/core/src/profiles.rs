//! Synthetic current schedules for validation experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{simulate_at, CurrentProfile, SimState, TheveninParams};

/// A current profile together with the times at which it is logged.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub profile: CurrentProfile,
    pub times: Vec<f64>,
}

impl Schedule {
    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Logged currents, one per output time.
    pub fn currents(&self) -> Vec<f64> {
        self.times.iter().map(|&t| self.profile.current_at(t)).collect()
    }

    /// Drops every sample after the first one whose simulated voltage falls
    /// below `cutoff`.
    pub fn truncate_at_cutoff(self, params: &TheveninParams, cutoff: f64) -> Result<Self> {
        let sim = simulate_at(params, &self.profile, &self.times, SimState::rested())?;
        let keep = sim
            .samples
            .iter()
            .position(|s| s.voltage < cutoff)
            .map_or(self.times.len(), |k| k + 1);
        let mut times = self.times;
        times.truncate(keep);
        Ok(Schedule {
            profile: self.profile,
            times,
        })
    }
}

/// Constant current logged every `dt` seconds on `[0, duration]`.
pub fn constant_discharge(current: f64, duration: f64, dt: f64) -> Result<Schedule> {
    check_step(dt)?;
    let n = (duration / dt + 1e-9).floor() as usize;
    Ok(Schedule {
        profile: CurrentProfile::constant(current),
        times: (0..=n).map(|k| k as f64 * dt).collect(),
    })
}

fn check_step(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("sampling step must be positive, got {dt}")))
    }
}

/// Pulse-and-rest discharge used to probe OCV and lumped resistance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntermittentSpec {
    /// Discharge current during a pulse, amperes (negative).
    pub pulse_current: f64,
    pub pulse_s: f64,
    pub rest_s: f64,
    pub pulses: usize,
    pub pulse_dt: f64,
    pub rest_dt: f64,
}

impl Default for IntermittentSpec {
    fn default() -> Self {
        IntermittentSpec {
            pulse_current: -1.0,
            pulse_s: 600.0,
            rest_s: 7200.0,
            pulses: 14,
            pulse_dt: 1.0,
            rest_dt: 10.0,
        }
    }
}

/// Starts with a rest window at full charge, then alternates pulses and
/// rests. Rest windows are sampled more coarsely than pulses.
pub fn intermittent(spec: &IntermittentSpec) -> Result<Schedule> {
    check_step(spec.pulse_dt)?;
    check_step(spec.rest_dt)?;
    if !(spec.pulse_s > 0.0 && spec.rest_s > 0.0) {
        return Err(Error::InvalidParameter("pulse and rest durations must be positive".into()));
    }
    let mut samples = Vec::new();
    let mut times = Vec::new();
    let mut t0 = 0.0;
    let push_grid = |times: &mut Vec<f64>, start: f64, len: f64, dt: f64| {
        let n = (len / dt - 1e-9).ceil() as usize;
        times.extend((0..n).map(|k| start + k as f64 * dt));
    };
    // initial rest gives the fully charged OCV point
    samples.push((0.0, 0.0));
    push_grid(&mut times, 0.0, spec.rest_s, spec.rest_dt);
    t0 += spec.rest_s;
    for _ in 0..spec.pulses {
        samples.push((t0, spec.pulse_current));
        push_grid(&mut times, t0, spec.pulse_s, spec.pulse_dt);
        t0 += spec.pulse_s;
        samples.push((t0, 0.0));
        push_grid(&mut times, t0, spec.rest_s, spec.rest_dt);
        t0 += spec.rest_s;
    }
    times.push(t0);
    Ok(Schedule {
        profile: CurrentProfile::piecewise(samples)?,
        times,
    })
}

/// Drive-cycle-like variable current, sampled at 1 s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveCycleSpec {
    pub cycles: usize,
    /// Largest discharge current, amperes (positive magnitude).
    pub peak_discharge: f64,
    /// Largest regenerative charging current, amperes.
    pub peak_regen: f64,
}

impl Default for DriveCycleSpec {
    fn default() -> Self {
        DriveCycleSpec {
            cycles: 3,
            peak_discharge: 4.0,
            peak_regen: 1.5,
        }
    }
}

// (accelerate s, cruise s, brake s, idle s, top speed m/s), loosely
// following the stop-and-go structure of an urban drive schedule
const MICRO_TRIPS: [(f64, f64, f64, f64, f64); 12] = [
    (20.0, 12.0, 15.0, 20.0, 8.0),
    (25.0, 60.0, 20.0, 15.0, 14.0),
    (30.0, 110.0, 25.0, 30.0, 25.0),
    (15.0, 20.0, 12.0, 10.0, 7.0),
    (20.0, 45.0, 18.0, 22.0, 11.0),
    (18.0, 35.0, 15.0, 12.0, 10.0),
    (25.0, 70.0, 20.0, 18.0, 15.0),
    (12.0, 15.0, 10.0, 25.0, 6.0),
    (22.0, 55.0, 18.0, 16.0, 13.0),
    (28.0, 80.0, 22.0, 20.0, 17.0),
    (16.0, 25.0, 14.0, 14.0, 9.0),
    (20.0, 40.0, 16.0, 35.0, 12.0),
];

fn speed_and_accel(t: f64) -> (f64, f64) {
    let mut start = 0.0;
    for &(acc, cruise, brake, idle, top) in &MICRO_TRIPS {
        let tau = t - start;
        if tau < acc {
            return (top * tau / acc, top / acc);
        }
        if tau < acc + cruise {
            // gentle speed ripple while cruising
            let ripple = 0.05 * top * (2.0 * std::f64::consts::PI * (tau - acc) / 30.0).sin();
            return (top + ripple, 0.0);
        }
        if tau < acc + cruise + brake {
            let rem = acc + cruise + brake - tau;
            return (top * rem / brake, -top / brake);
        }
        if tau < acc + cruise + brake + idle {
            return (0.0, 0.0);
        }
        start += acc + cruise + brake + idle;
    }
    (0.0, 0.0)
}

pub fn drive_cycle_period() -> f64 {
    MICRO_TRIPS.iter().map(|(a, c, b, i, _)| a + c + b + i).sum()
}

/// Traction-power-shaped current: positive when braking (regeneration),
/// negative when accelerating or cruising.
pub fn drive_cycle(spec: &DriveCycleSpec) -> Result<Schedule> {
    let period = drive_cycle_period();
    let n = (period * spec.cycles as f64).round() as usize;
    if n == 0 {
        return Err(Error::InvalidParameter("drive cycle needs at least one cycle".into()));
    }
    // raw power proxy: inertia, rolling and aerodynamic terms
    let raw = |t: f64| {
        let (v, a) = speed_and_accel(t % period);
        v * (1.2 * a + 0.15 + 0.0012 * v * v)
    };
    let max_pos = (0..period as usize).map(|k| raw(k as f64)).fold(0.0, f64::max);
    let max_neg = (0..period as usize).map(|k| -raw(k as f64)).fold(0.0, f64::max);
    let samples: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let t = k as f64;
            let p = raw(t);
            let current = if p >= 0.0 {
                -spec.peak_discharge * p / max_pos
            } else {
                spec.peak_regen * (-p) / max_neg.max(f64::MIN_POSITIVE)
            };
            (t, current)
        })
        .collect();
    let times = samples.iter().map(|s| s.0).collect();
    Ok(Schedule {
        profile: CurrentProfile::piecewise(samples)?,
        times,
    })
}
