//! Step computation in scaled ("hat") variables.
//!
//! The local model is `m(p) = g^T p + 1/2 |R p|^2 + 1/2 p^T diag(h) p`
//! where `R` is the triangular factor of the scaled Jacobian and `h` is the
//! non-negative diagonal contributed by active bounds (zero when
//! unconstrained).

use nalgebra::{DMatrix, DVector};

pub(super) struct ScaledModel<'a> {
    pub r: &'a DMatrix<f64>,
    pub g: &'a DVector<f64>,
    pub h: &'a DVector<f64>,
}

impl ScaledModel<'_> {
    pub fn value(&self, p: &DVector<f64>) -> f64 {
        self.g.dot(p) + 0.5 * (self.r * p).norm_squared() + 0.5 * weighted_sq(self.h, p, p)
    }

    /// Coefficients `(a, b, c)` of `m(s0 + t s) = a t^2 + b t + c`.
    fn along(&self, s: &DVector<f64>, s0: Option<&DVector<f64>>) -> (f64, f64, f64) {
        let rs = self.r * s;
        let a = 0.5 * (rs.norm_squared() + weighted_sq(self.h, s, s));
        let mut b = self.g.dot(s);
        let mut c = 0.0;
        if let Some(s0) = s0 {
            let rs0 = self.r * s0;
            b += rs0.dot(&rs) + weighted_sq(self.h, s0, s);
            c = 0.5 * (rs0.norm_squared() + weighted_sq(self.h, s0, s0)) + self.g.dot(s0);
        }
        (a, b, c)
    }

    /// Powell dogleg between the Cauchy point and `p_gn`.
    pub fn dogleg(&self, p_gn: &DVector<f64>, delta: f64) -> DVector<f64> {
        let gn_norm = p_gn.norm();
        if gn_norm <= delta {
            return p_gn.clone();
        }
        let g_norm = self.g.norm();
        if g_norm == 0.0 {
            return p_gn * (delta / gn_norm);
        }
        let curvature = (self.r * self.g).norm_squared() + weighted_sq(self.h, self.g, self.g);
        if curvature <= 0.0 {
            return self.g * (-delta / g_norm);
        }
        let tau = g_norm * g_norm / curvature;
        let p_c = self.g * (-tau);
        let c_norm = p_c.norm();
        if c_norm >= delta {
            return self.g * (-delta / g_norm);
        }
        let diff = p_gn - &p_c;
        match intersect_sphere(&p_c, &diff, delta) {
            Some((_, t)) => p_c + diff * t.clamp(0.0, 1.0),
            None => p_c,
        }
    }
}

fn weighted_sq(h: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    h.iter().zip(a.iter().zip(b.iter())).map(|(h, (a, b))| h * a * b).sum()
}

/// Roots `t_lo <= t_hi` of `|x + t s| = delta`, for `|x| <= delta`.
pub(super) fn intersect_sphere(x: &DVector<f64>, s: &DVector<f64>, delta: f64) -> Option<(f64, f64)> {
    let a = s.norm_squared();
    if a == 0.0 {
        return None;
    }
    let b = x.dot(s);
    let c = x.norm_squared() - delta * delta;
    let disc = (b * b - a * c).max(0.0).sqrt();
    // numerically stable pair of roots
    let q = -(b + disc.copysign(b));
    if q == 0.0 {
        return Some((0.0, 0.0));
    }
    let (t1, t2) = (q / a, c / q);
    Some((t1.min(t2), t1.max(t2)))
}

/// Minimizes `a t^2 + b t + c` on `[lo, hi]`.
fn minimize_1d(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> (f64, f64) {
    let eval = |t: f64| t * (a * t + b) + c;
    let mut best = (lo, eval(lo));
    let mut consider = |t: f64| {
        let y = eval(t);
        if y < best.1 {
            best = (t, y);
        }
    };
    consider(hi);
    if a != 0.0 {
        let t = -0.5 * b / a;
        if lo < t && t < hi {
            consider(t);
        }
    }
    best
}

/// Largest `t` keeping `x + t s` inside the box, with the coordinates that
/// hit first (`-1` lower, `+1` upper, `0` otherwise).
pub(super) fn step_to_bound(
    x: &DVector<f64>,
    s: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> (f64, Vec<i8>) {
    let n = x.len();
    let mut steps = vec![f64::INFINITY; n];
    for i in 0..n {
        if s[i] != 0.0 {
            let to_lo = (lower[i] - x[i]) / s[i];
            let to_hi = (upper[i] - x[i]) / s[i];
            steps[i] = to_lo.max(to_hi);
        }
    }
    let min = steps.iter().cloned().fold(f64::INFINITY, f64::min);
    let hits = (0..n)
        .map(|i| {
            if steps[i] == min && min.is_finite() {
                if s[i] > 0.0 {
                    1
                } else {
                    -1
                }
            } else {
                0
            }
        })
        .collect();
    (min, hits)
}

pub(super) struct SelectedStep {
    pub step: DVector<f64>,
    pub step_hat: DVector<f64>,
    pub predicted_reduction: f64,
}

/// Turns a trust-region step into a strictly feasible one.
///
/// If the full step leaves the box, three candidates compete on model value:
/// the step truncated just short of the bound, its reflection off the bound,
/// and a truncated steepest-descent step.
#[allow(clippy::too_many_arguments)]
pub(super) fn select_step(
    model: &ScaledModel<'_>,
    x: &DVector<f64>,
    p_hat: DVector<f64>,
    d: &DVector<f64>,
    delta: f64,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    theta: f64,
) -> SelectedStep {
    let mut p_hat = p_hat;
    let mut p = p_hat.component_mul(d);
    let trial = x + &p;
    let inside = trial
        .iter()
        .zip(lower.iter().zip(upper.iter()))
        .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
    if inside {
        let value = model.value(&p_hat);
        return SelectedStep {
            step: p,
            step_hat: p_hat,
            predicted_reduction: -value,
        };
    }

    let (p_stride, hits) = step_to_bound(x, &p, lower, upper);

    // reflect the components that hit a bound
    let mut r_hat = p_hat.clone();
    for (i, h) in hits.iter().enumerate() {
        if *h != 0 {
            r_hat[i] = -r_hat[i];
        }
    }
    let mut r = r_hat.component_mul(d);

    p *= p_stride;
    p_hat *= p_stride;
    let x_on_bound = x + &p;

    let to_tr = intersect_sphere(&p_hat, &r_hat, delta).map_or(0.0, |(_, t)| t);
    let (to_bound, _) = step_to_bound(&x_on_bound, &r, lower, upper);
    let r_stride = to_bound.min(to_tr);
    let (r_lo, r_hi) = if r_stride > 0.0 {
        let lo = (1.0 - theta) * p_stride / r_stride;
        let hi = if r_stride == to_bound { theta * to_bound } else { to_tr };
        (lo, hi)
    } else {
        (0.0, -1.0)
    };
    let r_value = if r_lo <= r_hi {
        let (a, b, c) = model.along(&r_hat, Some(&p_hat));
        let (t, value) = minimize_1d(a, b, c, r_lo, r_hi);
        r_hat = &p_hat + r_hat * t;
        r = r_hat.component_mul(d);
        value
    } else {
        f64::INFINITY
    };

    // pull the truncated step strictly inside
    p *= theta;
    p_hat *= theta;
    let p_value = model.value(&p_hat);

    let ag_hat = -model.g;
    let ag = ag_hat.component_mul(d);
    let ag_norm = ag_hat.norm();
    let to_tr = if ag_norm > 0.0 { delta / ag_norm } else { 0.0 };
    let (to_bound, _) = step_to_bound(x, &ag, lower, upper);
    let ag_max = if to_bound < to_tr { theta * to_bound } else { to_tr };
    let (a, b, _) = model.along(&ag_hat, None);
    let (t, ag_value) = minimize_1d(a, b, 0.0, 0.0, ag_max);

    if p_value < r_value && p_value < ag_value {
        SelectedStep {
            step: p,
            step_hat: p_hat,
            predicted_reduction: -p_value,
        }
    } else if r_value < p_value && r_value < ag_value {
        SelectedStep {
            step: r,
            step_hat: r_hat,
            predicted_reduction: -r_value,
        }
    } else {
        SelectedStep {
            step: ag * t,
            step_hat: ag_hat * t,
            predicted_reduction: -ag_value,
        }
    }
}
