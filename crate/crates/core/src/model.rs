//! One-RC Thevenin equivalent-circuit model.
//!
//! The parameter vector is ordered as
//! `[alpha1, alpha2, alpha3, alpha4, beta0, beta1, beta2, R, 1/(RC)]`.
//! The OCV polynomial coefficients `alpha0` and `alpha5` are not free: they
//! are pinned by the rested-voltage endpoints `v_oc_min = OCV(0)` and
//! `v_oc_max = OCV(1)`.
//!
//! Current sign convention: negative current discharges the cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of identified parameters.
pub const N_PARAMS: usize = 9;

/// Short names of the identified parameters, in vector order.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "alpha1", "alpha2", "alpha3", "alpha4", "beta0", "beta1", "beta2", "r", "rc_inv",
];

/// Fixed cell constants that are known before identification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConstants {
    /// Capacity in ampere-hours.
    pub capacity_ah: f64,
    /// OCV at SoC = 0, volts.
    pub v_oc_min: f64,
    /// OCV at SoC = 1, volts.
    pub v_oc_max: f64,
}

impl CellConstants {
    /// Samsung INR18650-25R style cell used throughout the examples.
    pub const fn nominal() -> Self {
        CellConstants {
            capacity_ah: 2.17,
            v_oc_min: 3.3,
            v_oc_max: 4.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_ah > 0.0 && self.capacity_ah.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "capacity must be positive, got {}",
                self.capacity_ah
            )));
        }
        if !(self.v_oc_min < self.v_oc_max) {
            return Err(Error::InvalidParameter(format!(
                "v_oc_min ({}) must be below v_oc_max ({})",
                self.v_oc_min, self.v_oc_max
            )));
        }
        Ok(())
    }

    /// SoC change per ampere-second.
    #[inline]
    pub fn soc_per_coulomb(&self) -> f64 {
        1.0 / (3600.0 * self.capacity_ah)
    }
}

impl Default for CellConstants {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Thevenin model parameters plus the fixed cell constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheveninParams {
    pub alpha: [f64; 4],
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub r: f64,
    pub rc_inv: f64,
    pub cell: CellConstants,
}

impl TheveninParams {
    /// Checked constructor; rejects physically invalid values.
    pub fn new(theta: [f64; N_PARAMS], cell: CellConstants) -> Result<Self> {
        let params = Self::from_theta_raw(theta, cell);
        params.validate()?;
        Ok(params)
    }

    /// Unchecked constructor. Solvers may visit non-physical points, so this
    /// path accepts anything finite or not.
    pub fn from_theta_raw(theta: [f64; N_PARAMS], cell: CellConstants) -> Self {
        TheveninParams {
            alpha: [theta[0], theta[1], theta[2], theta[3]],
            beta0: theta[4],
            beta1: theta[5],
            beta2: theta[6],
            r: theta[7],
            rc_inv: theta[8],
            cell,
        }
    }

    pub fn from_slice_raw(theta: &[f64], cell: CellConstants) -> Self {
        let mut buf = [0.0; N_PARAMS];
        buf.copy_from_slice(&theta[..N_PARAMS]);
        Self::from_theta_raw(buf, cell)
    }

    /// Model used to generate the synthetic discharge data.
    pub fn nominal() -> Self {
        Self::from_theta_raw(
            [2.61, -9.36, 19.7, -19.0, 0.0313, 0.0678, 13.2, 0.0313, 0.0172],
            CellConstants::nominal(),
        )
    }

    pub fn theta(&self) -> [f64; N_PARAMS] {
        [
            self.alpha[0],
            self.alpha[1],
            self.alpha[2],
            self.alpha[3],
            self.beta0,
            self.beta1,
            self.beta2,
            self.r,
            self.rc_inv,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        let theta = self.theta();
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{} is not finite",
                PARAM_NAMES[i]
            )));
        }
        let checks = [
            (self.beta0 > 0.0, "beta0 > 0"),
            (self.beta1 >= 0.0, "beta1 >= 0"),
            (self.beta2 >= 0.0, "beta2 >= 0"),
            (self.r > 0.0, "r > 0"),
            (self.rc_inv > 0.0, "rc_inv > 0"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::InvalidParameter(format!("expected {what}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn alpha0(&self) -> f64 {
        self.cell.v_oc_min
    }

    #[inline]
    pub fn alpha5(&self) -> f64 {
        self.cell.v_oc_max - self.cell.v_oc_min - self.alpha.iter().sum::<f64>()
    }

    /// All six OCV polynomial coefficients, lowest order first.
    pub fn ocv_coefficients(&self) -> [f64; 6] {
        [
            self.alpha0(),
            self.alpha[0],
            self.alpha[1],
            self.alpha[2],
            self.alpha[3],
            self.alpha5(),
        ]
    }

    /// RC-pair capacitance in farads.
    pub fn capacitance(&self) -> f64 {
        1.0 / (self.r * self.rc_inv)
    }

    /// Open-circuit voltage. SoC outside [0, 1] is extrapolated.
    pub fn ocv(&self, soc: f64) -> f64 {
        self.ocv_coefficients()
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * soc + c)
    }

    /// SoC-dependent ohmic resistance.
    pub fn r0(&self, soc: f64) -> f64 {
        self.beta0 + self.beta1 * (-self.beta2 * soc).exp()
    }

    /// SoC after `t` seconds of constant current starting from full charge.
    #[inline]
    pub fn soc_constant_current(&self, current: f64, t: f64) -> f64 {
        1.0 + current * t * self.cell.soc_per_coulomb()
    }

    /// Closed-form terminal voltage for a constant-current discharge from a
    /// rested, fully charged cell.
    pub fn voltage_constant_current(&self, current: f64, t: f64) -> f64 {
        let soc = self.soc_constant_current(current, t);
        self.ocv(soc)
            + current * self.r0(soc)
            + current * self.r * (1.0 - (-self.rc_inv * t).exp())
    }
}

/// Shape of a current profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Constant,
    PiecewiseConstant,
}

/// Current as a right-continuous step function of time.
///
/// Each sample `(t_i, I_i)` holds on `[t_i, t_{i+1})`; the last one holds
/// forever.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentProfile {
    samples: Vec<(f64, f64)>,
    kind: ProfileKind,
}

impl CurrentProfile {
    pub fn constant(current: f64) -> Self {
        CurrentProfile {
            samples: vec![(0.0, current)],
            kind: ProfileKind::Constant,
        }
    }

    pub fn piecewise(samples: Vec<(f64, f64)>) -> Result<Self> {
        match samples.first() {
            None => return Err(Error::EmptyDataset),
            Some(&(t0, _)) if t0 != 0.0 => {
                return Err(Error::InvalidParameter(format!(
                    "current profile must start at t = 0, got {t0}"
                )))
            }
            _ => {}
        }
        for (row, w) in samples.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::NonMonotoneTime {
                    row: row + 1,
                    t: w[1].0,
                });
            }
        }
        if let Some(&(t, i)) = samples.iter().find(|(t, i)| !t.is_finite() || !i.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite profile sample ({t}, {i})"
            )));
        }
        Ok(CurrentProfile {
            samples,
            kind: ProfileKind::PiecewiseConstant,
        })
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    fn segment_index(&self, t: f64) -> usize {
        // index of the last sample with t_i <= t
        self.samples
            .partition_point(|&(ti, _)| ti <= t)
            .saturating_sub(1)
    }

    pub fn current_at(&self, t: f64) -> f64 {
        self.samples[self.segment_index(t)].1
    }

    /// Integral of current over `[t0, t1]`, ampere-seconds.
    pub fn charge_between(&self, t0: f64, t1: f64) -> f64 {
        let mut total = 0.0;
        self.for_each_segment(t0, t1, |_, dt, current| total += current * dt);
        total
    }

    /// Visits the constant-current pieces of `[t0, t1]` in order as
    /// `(start, duration, current)`.
    pub fn for_each_segment(&self, t0: f64, t1: f64, mut f: impl FnMut(f64, f64, f64)) {
        if t1 <= t0 {
            return;
        }
        let mut idx = self.segment_index(t0);
        let mut start = t0;
        loop {
            let end = self
                .samples
                .get(idx + 1)
                .map_or(t1, |&(tn, _)| tn.min(t1));
            if end > start {
                f(start, end - start, self.samples[idx].1);
            }
            if end >= t1 {
                break;
            }
            start = end;
            idx += 1;
        }
    }
}

/// SoC at time `t` under `profile`, coulomb-counted from `soc0` at t = 0.
pub fn soc_trajectory(cell: &CellConstants, profile: &CurrentProfile, t: f64, soc0: f64) -> f64 {
    soc0 + profile.charge_between(0.0, t) * cell.soc_per_coulomb()
}

/// Dynamic state of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub soc: f64,
    pub v_rc: f64,
    pub t: f64,
}

impl SimState {
    /// Fully charged and rested.
    pub const fn rested() -> Self {
        SimState {
            soc: 1.0,
            v_rc: 0.0,
            t: 0.0,
        }
    }

    pub fn at_soc(soc: f64) -> Self {
        SimState {
            soc,
            ..Self::rested()
        }
    }
}

impl Default for SimState {
    fn default() -> Self {
        Self::rested()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSample {
    pub t: f64,
    pub soc: f64,
    pub v_rc: f64,
    pub current: f64,
    pub voltage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub samples: Vec<SimSample>,
    /// Set when SoC left [0, 1] at any output sample.
    pub soc_out_of_range: bool,
}

impl Simulation {
    pub fn voltages(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.voltage).collect()
    }
}

const SOC_RANGE_SLACK: f64 = 1e-12;

/// Simulates on the uniform grid `0, dt, 2 dt, ...` up to `t_end`, starting
/// from a rested, fully charged cell.
pub fn simulate(
    params: &TheveninParams,
    profile: &CurrentProfile,
    dt: f64,
    t_end: f64,
) -> Result<Simulation> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid t_end {t_end}")));
    }
    let steps = (t_end / dt + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    simulate_at(params, profile, &times, SimState::rested())
}

/// Simulates at arbitrary increasing output times starting from `init`.
///
/// The RC voltage is advanced with the exact zero-order-hold solution over
/// every constant-current piece, so piecewise-constant profiles are
/// integrated without discretization error.
pub fn simulate_at(
    params: &TheveninParams,
    profile: &CurrentProfile,
    times: &[f64],
    init: SimState,
) -> Result<Simulation> {
    for (row, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotoneTime { row: row + 1, t: w[1] });
        }
    }
    if let Some(&t0) = times.first() {
        if t0 < init.t {
            return Err(Error::InvalidParameter(format!(
                "first output time {t0} precedes initial state time {}",
                init.t
            )));
        }
    }

    let k_soc = params.cell.soc_per_coulomb();
    let mut state = init;
    let mut out_of_range = false;
    let mut samples = Vec::with_capacity(times.len());
    for &t in times {
        profile.for_each_segment(state.t, t, |_, dt, current| {
            let decay = (-params.rc_inv * dt).exp();
            state.soc += current * dt * k_soc;
            state.v_rc = state.v_rc * decay - current * params.r * (1.0 - decay);
        });
        state.t = t;
        let current = profile.current_at(t);
        let voltage = params.ocv(state.soc) - state.v_rc + params.r0(state.soc) * current;
        if !(-SOC_RANGE_SLACK..=1.0 + SOC_RANGE_SLACK).contains(&state.soc) {
            out_of_range = true;
        }
        samples.push(SimSample {
            t,
            soc: state.soc,
            v_rc: state.v_rc,
            current,
            voltage,
        });
    }
    if out_of_range {
        log::warn!("SoC left [0, 1] during simulation; OCV and R0 were extrapolated");
    }
    Ok(Simulation {
        samples,
        soc_out_of_range: out_of_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn horner_reference(s: f64) -> f64 {
        // 3.3 + 2.61s - 9.36s^2 + 19.7s^3 - 19.0s^4 + 6.9s^5, evaluated term by term
        3.3 + 2.61 * s - 9.36 * s.powi(2) + 19.7 * s.powi(3) - 19.0 * s.powi(4) + 6.9 * s.powi(5)
    }

    #[test]
    fn ocv_endpoints_and_midpoint() {
        let p = TheveninParams::nominal();
        assert_relative_eq!(p.ocv(0.0), 3.3, epsilon = 1e-12);
        assert_relative_eq!(p.ocv(1.0), 4.15, epsilon = 1e-12);
        assert_relative_eq!(p.ocv(0.5), horner_reference(0.5), epsilon = 1e-12);
        // derived alpha5 of the nominal model
        assert_relative_eq!(p.alpha5(), 6.9, epsilon = 1e-12);
    }

    #[test]
    fn r0_values() {
        let p = TheveninParams::nominal();
        assert_relative_eq!(p.r0(0.0), 0.0991, epsilon = 1e-15);
        assert_relative_eq!(p.r0(1.0), 0.0313 + 0.0678 * (-13.2f64).exp(), epsilon = 1e-15);
        let flat = TheveninParams { beta1: 0.0, ..p };
        for soc in [0.0, 0.3, 1.0, 1.7] {
            assert_eq!(flat.r0(soc), flat.beta0);
        }
    }

    #[test]
    fn soc_closed_form() {
        let p = TheveninParams::nominal();
        assert_relative_eq!(p.soc_constant_current(-3.0, 1302.0), 0.5, epsilon = 1e-12);
        assert_eq!(p.soc_constant_current(0.0, 5000.0), 1.0);
    }

    #[test]
    fn soc_piecewise_matches_riemann_sum() {
        let cell = CellConstants::nominal();
        let profile = CurrentProfile::piecewise(vec![(0.0, -3.0), (600.0, 0.0)]).unwrap();
        let at_600 = soc_trajectory(&cell, &profile, 600.0, 1.0);
        let at_1200 = soc_trajectory(&cell, &profile, 1200.0, 1.0);
        assert_eq!(at_600, at_1200);

        // left Riemann sum at 0.01 s
        let h = 0.01;
        let n = (1200.0 / h) as usize;
        let q: f64 = (0..n).map(|k| profile.current_at(k as f64 * h) * h).sum();
        let riemann = 1.0 + q / (3600.0 * cell.capacity_ah);
        assert_relative_eq!(at_1200, riemann, epsilon = 1e-9);
    }

    #[test]
    fn voltage_at_start_of_discharge() {
        let p = TheveninParams::nominal();
        let expected = 4.15 + (-3.0) * (0.0313 + 0.0678 * (-13.2f64).exp());
        assert_relative_eq!(p.voltage_constant_current(-3.0, 0.0), expected, epsilon = 1e-14);
        assert_relative_eq!(p.voltage_constant_current(0.0, 1234.0), 4.15, epsilon = 1e-12);
    }

    #[test]
    fn nominal_discharge_reaches_cutoff_region() {
        let p = TheveninParams::nominal();
        let v0 = p.voltage_constant_current(-3.0, 0.0);
        let v_end = p.voltage_constant_current(-3.0, 2400.0);
        assert!((4.0..4.1).contains(&v0), "v0 = {v0}");
        assert!((3.1..3.3).contains(&v_end), "v_end = {v_end}");
    }

    #[test]
    fn simulate_constant_matches_closed_form() {
        let p = TheveninParams::nominal();
        let sim = simulate(&p, &CurrentProfile::constant(-3.0), 1.0, 2400.0).unwrap();
        assert_eq!(sim.samples.len(), 2401);
        for s in &sim.samples {
            let closed = p.voltage_constant_current(-3.0, s.t);
            assert!((s.voltage - closed).abs() <= 1e-12, "t = {}", s.t);
        }
        assert!(!sim.soc_out_of_range);
    }

    #[test]
    fn simulate_rest_is_equilibrium() {
        let p = TheveninParams::nominal();
        let sim = simulate(&p, &CurrentProfile::constant(0.0), 10.0, 1000.0).unwrap();
        assert!(sim.samples.iter().all(|s| (s.voltage - 4.15).abs() < 1e-12));
    }

    fn rk4_two_segment(p: &TheveninParams, profile: &CurrentProfile, t_end: f64, h: f64) -> f64 {
        // state (soc, v_rc); current is constant inside each step because
        // breakpoints fall on the grid
        let f = |i: f64, v_rc: f64| -> (f64, f64) {
            (
                i * p.cell.soc_per_coulomb(),
                -p.rc_inv * v_rc - p.rc_inv * p.r * i,
            )
        };
        let n = (t_end / h).round() as usize;
        let (mut soc, mut v) = (1.0, 0.0);
        for k in 0..n {
            let i = profile.current_at(k as f64 * h);
            let (a1, b1) = f(i, v);
            let (a2, b2) = f(i, v + 0.5 * h * b1);
            let (a3, b3) = f(i, v + 0.5 * h * b2);
            let (a4, b4) = f(i, v + h * b3);
            soc += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            v += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        let i = profile.current_at(t_end);
        p.ocv(soc) - v + p.r0(soc) * i
    }

    #[test]
    fn simulate_two_segment_matches_rk4() {
        let p = TheveninParams::nominal();
        let profile = CurrentProfile::piecewise(vec![(0.0, -3.0), (100.0, 1.5)]).unwrap();
        let sim = simulate(&p, &profile, 10.0, 200.0).unwrap();
        for t_check in [50.0, 100.0, 150.0, 200.0] {
            let s = sim.samples.iter().find(|s| s.t == t_check).unwrap();
            let oracle = rk4_two_segment(&p, &profile, t_check, 1e-3);
            assert!((s.voltage - oracle).abs() <= 1e-6, "t = {t_check}: {} vs {oracle}", s.voltage);
        }
    }

    #[test]
    fn profile_validation() {
        assert!(CurrentProfile::piecewise(vec![]).is_err());
        assert!(CurrentProfile::piecewise(vec![(1.0, 0.0)]).is_err());
        assert!(matches!(
            CurrentProfile::piecewise(vec![(0.0, 0.0), (5.0, 1.0), (5.0, 2.0)]),
            Err(Error::NonMonotoneTime { row: 2, .. })
        ));
    }

    #[test]
    fn checked_constructor_rejects_nonphysical() {
        let mut theta = TheveninParams::nominal().theta();
        assert!(TheveninParams::new(theta, CellConstants::nominal()).is_ok());
        theta[8] = -0.1;
        assert!(TheveninParams::new(theta, CellConstants::nominal()).is_err());
        let raw = TheveninParams::from_theta_raw(theta, CellConstants::nominal());
        assert_eq!(raw.rc_inv, -0.1);
    }

    #[test]
    fn capacitance_derived() {
        let p = TheveninParams::nominal();
        // 1 / (0.0313 * 0.0172) ~ 1858 F
        assert!((p.capacitance() - 1858.0).abs() < 1.0);
    }
}
