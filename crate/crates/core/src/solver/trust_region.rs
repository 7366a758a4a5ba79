use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::step::{select_step, ScaledModel};
use super::{BoxConstraint, LeastSquaresProblem, SolveReport, TerminationReason, TrustRegionConfig};
use crate::error::{Error, Result};

/// Coleman–Li scaling vector `v` and its derivative sign `dv`.
fn cl_scaling(
    x: &DVector<f64>,
    g: &DVector<f64>,
    bounds: &BoxConstraint,
) -> (DVector<f64>, DVector<f64>) {
    let n = x.len();
    let mut v = DVector::from_element(n, 1.0);
    let mut dv = DVector::zeros(n);
    for i in 0..n {
        if g[i] < 0.0 && bounds.upper[i].is_finite() {
            v[i] = bounds.upper[i] - x[i];
            dv[i] = -1.0;
        } else if g[i] > 0.0 && bounds.lower[i].is_finite() {
            v[i] = x[i] - bounds.lower[i];
            dv[i] = 1.0;
        }
    }
    (v, dv)
}

fn column_norms(j: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(j.ncols(), j.column_iter().map(|c| c.norm()))
}

fn all_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    it.all(|v| v.is_finite())
}

/// Core trust-region loop shared by every solver variant.
///
/// With infinite bounds the Coleman–Li terms vanish and this reduces to a
/// plain scaled dogleg trust-region method.
pub fn minimize<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    bounds: &BoxConstraint,
    theta_init: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let start = Instant::now();
    let n = problem.n_params();
    if theta_init.len() != n || bounds.dim() != n {
        return Err(Error::InvalidParameter(format!(
            "dimension mismatch: problem has {n} parameters, start point {}, bounds {}",
            theta_init.len(),
            bounds.dim()
        )));
    }
    // re-check in case the bounds were built by hand
    BoxConstraint::new(bounds.lower.as_slice(), bounds.upper.as_slice())?;

    let mut x = DVector::from_column_slice(theta_init);
    if !all_finite(x.iter()) {
        return Err(Error::InvalidParameter("non-finite start point".into()));
    }
    bounds.make_strictly_feasible(&mut x, cfg.feasibility_margin);

    let mut f = problem.residuals(&x);
    let mut evaluations = 1;
    if !all_finite(f.iter()) {
        return Err(Error::EvaluationFailure("residual at the start point".into()));
    }
    let mut jac = problem.jacobian(&x);
    if !all_finite(jac.iter()) {
        return Err(Error::EvaluationFailure("Jacobian at the start point".into()));
    }
    let mut cost = 0.5 * f.norm_squared();
    let mut cost_trace = vec![cost];

    let mut scale_inv = DVector::from_element(n, 1.0);
    if cfg.jacobian_scaling {
        scale_inv = column_norms(&jac).map(|c| if c > 0.0 { c } else { 1.0 });
    }

    let mut g = jac.transpose() * &f;
    let (v, dv) = cl_scaling(&x, &g, bounds);
    let mut delta = {
        let d0: f64 = (0..n)
            .map(|i| {
                let vi = if dv[i] != 0.0 { v[i] * scale_inv[i] } else { v[i] };
                (x[i] * scale_inv[i] / vi.sqrt()).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        cfg.delta0 * if d0 > 0.0 && d0.is_finite() { d0 } else { 1.0 }
    }
    .min(cfg.delta_max);

    let mut iterations = 0usize;
    let mut accepted_steps = 0usize;
    let termination;
    let mut g_norm;

    'outer: loop {
        let (v, dv) = cl_scaling(&x, &g, bounds);
        g_norm = g.component_mul(&v).amax();
        if g_norm < cfg.gtol {
            termination = TerminationReason::GradientTolerance;
            break;
        }

        if cfg.jacobian_scaling {
            for (s, c) in scale_inv.iter_mut().zip(column_norms(&jac).iter()) {
                *s = s.max(*c);
            }
        }
        let mut d = DVector::zeros(n);
        let mut h = DVector::zeros(n);
        for i in 0..n {
            let scale = 1.0 / scale_inv[i];
            let vi = if dv[i] != 0.0 { v[i] * scale_inv[i] } else { v[i] };
            d[i] = vi.sqrt() * scale;
            h[i] = g[i] * dv[i] * scale;
        }
        let g_hat = g.component_mul(&d);
        let mut j_hat = jac.clone();
        for (i, mut col) in j_hat.column_iter_mut().enumerate() {
            col *= d[i];
        }

        let (r, qtf) = if j_hat.nrows() > n {
            let qr = j_hat.qr();
            let mut qtf = f.clone();
            qr.q_tr_mul(&mut qtf);
            (qr.r(), qtf.rows(0, n).into_owned())
        } else {
            (j_hat, f.clone())
        };

        // Gauss-Newton step of the bound-augmented model
        let rows = r.nrows();
        let mut aug = DMatrix::zeros(rows + n, n);
        aug.rows_mut(0, rows).copy_from(&r);
        let mut rhs = DVector::zeros(rows + n);
        rhs.rows_mut(0, qtf.len()).copy_from(&qtf);
        for i in 0..n {
            aug[(rows + i, i)] = h[i].sqrt();
        }
        let svd = aug.svd(true, true);
        let rcond = f64::EPSILON * (rows + n) as f64 * svd.singular_values.max();
        let p_gn = match svd.solve(&rhs, rcond) {
            Ok(sol) => -sol,
            Err(e) => return Err(Error::EvaluationFailure(e.to_string())),
        };

        let model = ScaledModel {
            r: &r,
            g: &g_hat,
            h: &h,
        };
        let theta = (1.0 - g_norm).max(0.995);

        loop {
            if iterations >= cfg.max_iter {
                termination = TerminationReason::MaxIterations;
                break 'outer;
            }
            iterations += 1;

            let p_hat = model.dogleg(&p_gn, delta);
            let sel = select_step(&model, &x, p_hat, &d, delta, &bounds.lower, &bounds.upper, theta);
            let mut x_new = &x + &sel.step;
            bounds.make_strictly_feasible(&mut x_new, cfg.feasibility_margin);
            let step = &x_new - &x;
            let step_hat_norm = sel.step_hat.norm();

            let f_new = problem.residuals(&x_new);
            evaluations += 1;
            let finite = all_finite(f_new.iter());
            let cost_new = if finite { 0.5 * f_new.norm_squared() } else { f64::INFINITY };
            let actual = cost - cost_new;
            let predicted = sel.predicted_reduction;
            let ratio = if !finite {
                f64::NEG_INFINITY
            } else if predicted > 0.0 {
                actual / predicted
            } else if predicted == 0.0 && actual == 0.0 {
                1.0
            } else {
                0.0
            };

            if ratio < cfg.shrink_below {
                delta = cfg.shrink_factor * step_hat_norm;
            } else if ratio > cfg.grow_above && step_hat_norm > 0.95 * delta {
                delta = (delta * cfg.grow_factor).min(cfg.delta_max);
            }

            let step_small = step.norm() < cfg.xtol * (cfg.xtol + x.norm());
            let cost_small = finite && actual.abs() < cfg.ftol * cost && ratio > cfg.shrink_below;

            if ratio > cfg.eta_accept && actual > 0.0 {
                let jac_new = problem.jacobian(&x_new);
                if !all_finite(jac_new.iter()) {
                    return Err(Error::EvaluationFailure(format!(
                        "Jacobian at accepted iterate {}",
                        accepted_steps + 1
                    )));
                }
                x = x_new;
                f = f_new;
                cost = cost_new;
                jac = jac_new;
                g = jac.transpose() * &f;
                accepted_steps += 1;
                cost_trace.push(cost);
                if cost_small {
                    termination = TerminationReason::CostTolerance;
                    break 'outer;
                }
                if step_small {
                    termination = TerminationReason::StepTolerance;
                    break 'outer;
                }
                continue 'outer;
            }
            if step_small || delta == 0.0 {
                termination = TerminationReason::StepTolerance;
                break 'outer;
            }
        }
    }

    let (v, _) = cl_scaling(&x, &g, bounds);
    g_norm = g.component_mul(&v).amax();
    Ok(SolveReport {
        theta_hat: x.iter().copied().collect(),
        cost,
        iterations,
        accepted_steps,
        evaluations,
        termination_reason: termination,
        cost_trace,
        gradient_norm: g_norm,
        wall_time: start.elapsed(),
    })
}
