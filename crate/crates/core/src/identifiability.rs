//! Local identifiability and theoretical estimation accuracy.
//!
//! Everything here works on the sensitivity matrix `S = d phi / d theta` of
//! the constant-current voltage response. Noise enters through its
//! covariance `Q`; all products `S^T Q^-1 S` are formed from a whitened
//! factor rather than from an explicit inverse.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{TheveninParams, N_PARAMS};

#[derive(Debug, Clone)]
pub struct SensitivityMatrix {
    pub s: DMatrix<f64>,
    pub times: Vec<f64>,
    pub theta_ref: TheveninParams,
    pub current: f64,
}

impl SensitivityMatrix {
    pub fn n_rows(&self) -> usize {
        self.s.nrows()
    }

    /// Copy with column `j` removed.
    pub fn without_column(&self, j: usize) -> DMatrix<f64> {
        self.s.clone().remove_column(j)
    }
}

/// Fills one row of the analytic sensitivity at time `t`.
pub(crate) fn sensitivity_row(p: &TheveninParams, current: f64, t: f64, row: &mut [f64]) {
    let soc = p.soc_constant_current(current, t);
    let soc5 = soc.powi(5);
    let mut pow = 1.0;
    for slot in row.iter_mut().take(4) {
        pow *= soc;
        *slot = pow - soc5;
    }
    let e_r0 = (-p.beta2 * soc).exp();
    let e_rc = (-p.rc_inv * t).exp();
    row[4] = current;
    row[5] = current * e_r0;
    row[6] = -current * soc * p.beta1 * e_r0;
    row[7] = current * (1.0 - e_rc);
    row[8] = current * p.r * t * e_rc;
}

/// Analytic sensitivity matrix of the constant-current voltage response.
pub fn sensitivity(theta: &TheveninParams, times: &[f64], current: f64) -> SensitivityMatrix {
    let n = times.len();
    let mut s = DMatrix::zeros(n, N_PARAMS);
    let mut row = [0.0; N_PARAMS];
    for (k, &t) in times.iter().enumerate() {
        sensitivity_row(theta, current, t, &mut row);
        for (j, v) in row.iter().enumerate() {
            s[(k, j)] = *v;
        }
    }
    SensitivityMatrix {
        s,
        times: times.to_vec(),
        theta_ref: *theta,
        current,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub rank: usize,
    pub condition_number: f64,
    pub smallest_singular_value: f64,
    pub singular_values: Vec<f64>,
}

fn rank_of_singular_values(sv: &[f64], rows: usize, cols: usize) -> usize {
    let s_max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * f64::EPSILON * s_max;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Numerical rank and conditioning of an arbitrary design matrix.
pub fn rank_of(m: &DMatrix<f64>) -> RankReport {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let rank = rank_of_singular_values(&sv, m.nrows(), m.ncols());
    let s_max = sv.first().copied().unwrap_or(0.0);
    let s_min = sv.last().copied().unwrap_or(0.0);
    RankReport {
        rank,
        condition_number: if s_min > 0.0 { s_max / s_min } else { f64::INFINITY },
        smallest_singular_value: s_min,
        singular_values: sv,
    }
}

pub fn rank_check(s: &SensitivityMatrix) -> Result<RankReport> {
    if s.n_rows() < N_PARAMS {
        return Err(Error::DegenerateDesign {
            rows: s.n_rows(),
            required: N_PARAMS,
        });
    }
    Ok(rank_of(&s.s))
}

/// Measurement-noise covariance.
#[derive(Debug, Clone)]
pub enum NoiseCovariance {
    /// `sigma^2 I`, never materialized.
    Scalar(f64),
    Full(DMatrix<f64>),
}

impl NoiseCovariance {
    /// Returns `Q^{-1/2} S` for a lower Cholesky factor of `Q`.
    fn whiten(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            NoiseCovariance::Scalar(var) => {
                if !(*var > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "noise variance must be positive, got {var}"
                    )));
                }
                Ok(s / var.sqrt())
            }
            NoiseCovariance::Full(q) => {
                if q.nrows() != s.nrows() || q.ncols() != s.nrows() {
                    return Err(Error::InvalidParameter(format!(
                        "noise covariance is {}x{}, expected {n}x{n}",
                        q.nrows(),
                        q.ncols(),
                        n = s.nrows()
                    )));
                }
                let chol = q.clone().cholesky().ok_or_else(|| {
                    Error::InvalidParameter("noise covariance is not positive definite".into())
                })?;
                chol.l()
                    .solve_lower_triangular(s)
                    .ok_or(Error::SingularInformation { rank: 0, dim: N_PARAMS })
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            NoiseCovariance::Scalar(v) => NoiseCovariance::Scalar(v * factor),
            NoiseCovariance::Full(q) => NoiseCovariance::Full(q * factor),
        }
    }
}

/// Square-root information factor `R` with `R^T R = S^T Q^-1 S`.
fn information_factor(s: &SensitivityMatrix, q: &NoiseCovariance) -> Result<DMatrix<f64>> {
    let w = q.whiten(&s.s)?;
    if w.nrows() >= w.ncols() {
        Ok(w.qr().r())
    } else {
        Ok(w)
    }
}

/// `S^T Q^-1 S`.
pub fn information_matrix(s: &SensitivityMatrix, q: &NoiseCovariance) -> Result<DMatrix<f64>> {
    let r = information_factor(s, q)?;
    Ok(r.transpose() * r)
}

/// Inverse of `F^T F` through the SVD of `F`; errors when rank deficient.
fn inverse_gram(f: &DMatrix<f64>, rows_for_tol: usize) -> Result<DMatrix<f64>> {
    let svd = f.clone().svd(false, true);
    let sv = svd.singular_values.as_slice();
    let rank = rank_of_singular_values(sv, rows_for_tol, f.ncols());
    if rank < f.ncols() {
        return Err(Error::SingularInformation {
            rank,
            dim: f.ncols(),
        });
    }
    let v_t = svd.v_t.expect("requested V^T");
    let mut scaled = v_t.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row /= sv[i] * sv[i];
    }
    let out = v_t.transpose() * scaled;
    Ok(symmetrize(out))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Cramér–Rao covariance `[S^T Q^-1 S]^-1`.
pub fn covariance(s: &SensitivityMatrix, q: &NoiseCovariance) -> Result<DMatrix<f64>> {
    let r = information_factor(s, q)?;
    inverse_gram(&r, s.n_rows())
}

/// Theoretical accuracy of an estimator, split into variance and bias parts.
#[derive(Debug, Clone)]
pub struct AccuracyReport {
    /// Covariance part.
    pub cov: DMatrix<f64>,
    /// Mean-square error matrix `cov + b b^T`.
    pub sigma: DMatrix<f64>,
    /// `E[theta_hat] - theta`.
    pub bias: DVector<f64>,
    pub expected_estimate: DVector<f64>,
    pub variance_term: f64,
    pub bias_term: f64,
    pub per_param_nrmse_theoretical: [f64; N_PARAMS],
}

impl AccuracyReport {
    fn assemble(cov: DMatrix<f64>, bias: DVector<f64>, theta: &DVector<f64>) -> Self {
        let sigma = &cov + &bias * bias.transpose();
        let mut nrmse = [0.0; N_PARAMS];
        for (i, slot) in nrmse.iter_mut().enumerate() {
            *slot = (sigma[(i, i)] / (theta[i] * theta[i])).sqrt();
        }
        AccuracyReport {
            variance_term: cov.trace(),
            bias_term: bias.norm_squared(),
            expected_estimate: theta + &bias,
            cov,
            sigma,
            bias,
            per_param_nrmse_theoretical: nrmse,
        }
    }

    pub fn total(&self) -> f64 {
        self.sigma.trace()
    }
}

/// Accuracy of the box-constrained estimator with ideally chosen bounds:
/// unbiased, covariance at the Cramér–Rao level.
pub fn theoretical_accuracy_cnls(
    s: &SensitivityMatrix,
    q: &NoiseCovariance,
) -> Result<AccuracyReport> {
    let cov = covariance(s, q)?;
    let theta = DVector::from_column_slice(&s.theta_ref.theta());
    Ok(AccuracyReport::assemble(
        cov,
        DVector::zeros(N_PARAMS),
        &theta,
    ))
}

fn check_prior(p0_diag: &[f64]) -> Result<()> {
    if p0_diag.len() != N_PARAMS {
        return Err(Error::InvalidParameter(format!(
            "prior variance has {} entries, expected {N_PARAMS}",
            p0_diag.len()
        )));
    }
    if let Some((index, &value)) = p0_diag
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
    {
        return Err(Error::NonPositivePrior { index, value });
    }
    Ok(())
}

/// Accuracy of the ridge-regularized estimator with prior `N(theta0, P0)`.
///
/// The covariance part is `[S^T Q^-1 S + P0^-1]^-1`; the bias is
/// `E[theta_hat] - theta = (I + P0 S^T Q^-1 S)^-1 (theta0 - theta)`.
pub fn theoretical_accuracy_rnls(
    s: &SensitivityMatrix,
    q: &NoiseCovariance,
    theta_true: &[f64],
    theta0: &[f64],
    p0_diag: &[f64],
) -> Result<AccuracyReport> {
    check_prior(p0_diag)?;
    let r = information_factor(s, q)?;
    rnls_from_factor(&r, theta_true, theta0, p0_diag)
}

fn rnls_from_factor(
    r: &DMatrix<f64>,
    theta_true: &[f64],
    theta0: &[f64],
    p0_diag: &[f64],
) -> Result<AccuracyReport> {
    let n = N_PARAMS;
    let mut stacked = DMatrix::zeros(r.nrows() + n, n);
    stacked.rows_mut(0, r.nrows()).copy_from(r);
    for i in 0..n {
        stacked[(r.nrows() + i, i)] = 1.0 / p0_diag[i].sqrt();
    }
    let cov = inverse_gram(&stacked, stacked.nrows())?;
    // (I + P0 A)^-1 = (A + P0^-1)^-1 P0^-1
    let mut m = cov.clone();
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col /= p0_diag[j];
    }
    let theta = DVector::from_column_slice(theta_true);
    let offset = DVector::from_column_slice(theta0) - &theta;
    let bias = m * offset;
    Ok(AccuracyReport::assemble(cov, bias, &theta))
}

/// Ridge accuracy for each `lambda * P0`.
pub fn lambda_sweep(
    s: &SensitivityMatrix,
    q: &NoiseCovariance,
    theta_true: &[f64],
    theta0: &[f64],
    p0_diag: &[f64],
    lambdas: &[f64],
) -> Result<Vec<AccuracyReport>> {
    check_prior(p0_diag)?;
    if let Some(&bad) = lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be strictly positive, got {bad}"
        )));
    }
    let r = information_factor(s, q)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let scaled: Vec<f64> = p0_diag.iter().map(|p| p * lambda).collect();
            rnls_from_factor(&r, theta_true, theta0, &scaled)
        })
        .collect()
}

/// Log-spaced grid on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}
