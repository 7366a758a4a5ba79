//! Trust-region nonlinear least squares.
//!
//! One iteration loop serves three problem variants:
//!
//! * unconstrained: `min 1/2 |r(x)|^2`;
//! * box-constrained: the same cost subject to `lower <= x <= upper`,
//!   handled with Coleman–Li affine scaling and reflective steps that keep
//!   every iterate strictly feasible;
//! * ridge-regularized: `1/2 |r(x)|^2 + 1/2 (x - x0)^T P0^-1 (x - x0)`,
//!   solved as an unconstrained problem on an augmented residual.
//!
//! The quadratic model uses the Gauss–Newton Hessian `J^T J`. The
//! trust-region subproblem is solved with Powell's dogleg in scaled
//! variables.

mod step;
mod trust_region;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

pub use trust_region::minimize;

/// A residual vector with its analytic Jacobian.
pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.residuals(x).norm_squared()
    }
}

/// Closure-backed problem, handy for tests and small examples.
pub struct FnProblem<R, J> {
    n_params: usize,
    n_residuals: usize,
    residuals: R,
    jacobian: J,
}

impl<R, J> FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    pub fn new(n_params: usize, n_residuals: usize, residuals: R, jacobian: J) -> Self {
        FnProblem {
            n_params,
            n_residuals,
            residuals,
            jacobian,
        }
    }
}

impl<R, J> LeastSquaresProblem for FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    fn n_params(&self) -> usize {
        self.n_params
    }
    fn n_residuals(&self) -> usize {
        self.n_residuals
    }
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.residuals)(x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(x)
    }
}

/// Elementwise bounds; entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxConstraint {
    pub fn new(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidParameter(format!(
                "bound lengths differ: {} vs {}",
                lower.len(),
                upper.len()
            )));
        }
        for (index, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY
            {
                return Err(Error::InfeasibleBounds {
                    index,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(BoxConstraint {
            lower: DVector::from_column_slice(lower),
            upper: DVector::from_column_slice(upper),
        })
    }

    pub fn unbounded(n: usize) -> Self {
        BoxConstraint {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|v| *v == f64::NEG_INFINITY)
            && self.upper.iter().all(|v| *v == f64::INFINITY)
    }

    /// Distance kept from each finite bound.
    fn margin(&self, i: usize, rel: f64) -> f64 {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        if lo.is_finite() && hi.is_finite() {
            rel * (hi - lo)
        } else if lo.is_finite() {
            rel * lo.abs().max(1.0)
        } else if hi.is_finite() {
            rel * hi.abs().max(1.0)
        } else {
            0.0
        }
    }

    /// Moves `x` to at least the feasibility margin inside every finite bound.
    pub fn make_strictly_feasible(&self, x: &mut DVector<f64>, rel: f64) {
        for i in 0..x.len() {
            let m = self.margin(i, rel);
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if lo == hi {
                x[i] = lo;
                continue;
            }
            if lo.is_finite() && x[i] < lo + m {
                x[i] = lo + m;
            }
            if hi.is_finite() && x[i] > hi - m {
                x[i] = hi - m;
            }
        }
    }
}

/// Solver knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionConfig {
    /// Initial radius as a multiple of the scaled norm of the start point.
    pub delta0: f64,
    pub delta_max: f64,
    /// Minimum gain ratio for accepting a step.
    pub eta_accept: f64,
    /// Gain ratio below which the radius shrinks.
    pub shrink_below: f64,
    /// Gain ratio above which the radius may grow.
    pub grow_above: f64,
    pub shrink_factor: f64,
    pub grow_factor: f64,
    pub gtol: f64,
    pub xtol: f64,
    pub ftol: f64,
    pub max_iter: usize,
    /// Scale variables by running Jacobian column norms.
    pub jacobian_scaling: bool,
    /// Relative distance kept from finite bounds.
    pub feasibility_margin: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        TrustRegionConfig {
            delta0: 1.0,
            delta_max: 1e10,
            eta_accept: 1e-4,
            shrink_below: 0.25,
            grow_above: 0.75,
            shrink_factor: 0.25,
            grow_factor: 2.0,
            gtol: 1e-8,
            xtol: 1e-10,
            ftol: 1e-10,
            max_iter: 400,
            jacobian_scaling: true,
            feasibility_margin: 1e-10,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("solver: {what}")));
        if !(self.delta0 > 0.0) || !(self.delta_max > 0.0) {
            return bad("delta0 and delta_max must be positive");
        }
        if !(self.eta_accept > 0.0 && self.eta_accept < 1.0) {
            return bad("eta_accept must lie in (0, 1)");
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return bad("shrink_factor must lie in (0, 1)");
        }
        if !(self.grow_factor > 1.0) {
            return bad("grow_factor must exceed 1");
        }
        if !(self.shrink_below < self.grow_above) {
            return bad("shrink_below must be below grow_above");
        }
        if !(self.gtol >= 0.0 && self.xtol >= 0.0 && self.ftol >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        if !(self.feasibility_margin >= 0.0 && self.feasibility_margin < 0.5) {
            return bad("feasibility_margin must lie in [0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GradientTolerance,
    CostTolerance,
    StepTolerance,
    MaxIterations,
}

fn duration_ms<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub theta_hat: Vec<f64>,
    pub cost: f64,
    /// Trial steps taken, accepted or not.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub evaluations: usize,
    pub termination_reason: TerminationReason,
    /// Cost at the start point followed by the cost after every accepted step.
    pub cost_trace: Vec<f64>,
    /// Infinity norm of the (bound-scaled) gradient at `theta_hat`.
    pub gradient_norm: f64,
    #[serde(rename = "wall_time_ms", serialize_with = "duration_ms")]
    pub wall_time: Duration,
}

/// Unconstrained trust-region solve.
pub fn solve_unconstrained<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    theta_init: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<SolveReport> {
    let bounds = BoxConstraint::unbounded(problem.n_params());
    minimize(problem, &bounds, theta_init, cfg)
}

/// Box-constrained solve with strictly feasible iterates.
pub fn solve_box_constrained<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    bounds: &BoxConstraint,
    theta_init: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<SolveReport> {
    minimize(problem, bounds, theta_init, cfg)
}

/// Wraps a problem with the ridge penalty rows `P0^{-1/2} (x - x0)`.
pub struct Regularized<'a, P: ?Sized> {
    inner: &'a P,
    theta0: DVector<f64>,
    inv_sqrt_p0: DVector<f64>,
}

impl<'a, P: LeastSquaresProblem + ?Sized> Regularized<'a, P> {
    pub fn new(inner: &'a P, theta0: &[f64], p0_diag: &[f64]) -> Result<Self> {
        let n = inner.n_params();
        if theta0.len() != n || p0_diag.len() != n {
            return Err(Error::InvalidParameter(format!(
                "prior has {} / {} entries, expected {n}",
                theta0.len(),
                p0_diag.len()
            )));
        }
        if let Some((index, &value)) = p0_diag
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || v.is_nan())
        {
            return Err(Error::NonPositivePrior { index, value });
        }
        Ok(Regularized {
            inner,
            theta0: DVector::from_column_slice(theta0),
            inv_sqrt_p0: DVector::from_iterator(n, p0_diag.iter().map(|p| 1.0 / p.sqrt())),
        })
    }

    /// `1/2 (x - x0)^T P0^-1 (x - x0)`.
    pub fn penalty(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x - &self.theta0).component_mul(&self.inv_sqrt_p0).norm_squared()
    }

    /// Gradient of the regularized cost.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let j = self.jacobian(x);
        j.transpose() * self.residuals(x)
    }
}

impl<P: LeastSquaresProblem + ?Sized> LeastSquaresProblem for Regularized<'_, P> {
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn n_residuals(&self) -> usize {
        self.inner.n_residuals() + self.inner.n_params()
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let base = self.inner.residuals(x);
        let m = base.len();
        let n = self.n_params();
        let mut out = DVector::zeros(m + n);
        out.rows_mut(0, m).copy_from(&base);
        out.rows_mut(m, n)
            .copy_from(&(x - &self.theta0).component_mul(&self.inv_sqrt_p0));
        out
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let base = self.inner.jacobian(x);
        let m = base.nrows();
        let n = self.n_params();
        let mut out = DMatrix::zeros(m + n, n);
        out.rows_mut(0, m).copy_from(&base);
        for i in 0..n {
            out[(m + i, i)] = self.inv_sqrt_p0[i];
        }
        out
    }
}

/// Ridge-regularized solve. The reported cost includes the penalty.
pub fn solve_regularized<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    theta0: &[f64],
    p0_diag: &[f64],
    theta_init: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<SolveReport> {
    let augmented = Regularized::new(problem, theta0, p0_diag)?;
    solve_unconstrained(&augmented, theta_init, cfg)
}
