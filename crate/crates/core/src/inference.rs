//! Tuning-parameter calibration reports and significance tests: the global
//! null `beta* = 0` via `T = 2 ||X^T Y||_inf / n`, and the partial null
//! `beta*_B = 0` via the projected model `(P Y, P X_B)` with `P` the
//! orthogonal projector annihilating the columns of `X_A`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, RngSpec};
use crate::effective_noise::{estimate_lambda_hat, EffectiveNoiseEstimate};
use crate::error::{Error, Result};
use crate::lasso::{fit, lambda_bar};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub lambda_hat: f64,
    pub delta: f64,
    pub beta_hat: Vec<f64>,
    /// `kappa * (1 + delta) * lambda_hat` with `kappa = 2 / phi`, present
    /// only when the user supplies the restricted-eigenvalue constant `phi`.
    pub ell_infty_bound: Option<f64>,
    /// `2 * lambda_hat * ||beta_hat||_1`: a plug-in for the prediction bound,
    /// not a guarantee (the true bound involves the unobservable beta*).
    pub prediction_bound: f64,
    pub prediction_bound_note: String,
    pub estimate: EffectiveNoiseEstimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalTestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub estimate: EffectiveNoiseEstimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialTestResult {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub statistic: f64,
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub projection_rank: usize,
    pub estimate: EffectiveNoiseEstimate,
}

/// The projected model `(P X_B, P Y)`.
#[derive(Debug, Clone)]
pub struct ProjectedModel {
    pub px_b: Array2<f64>,
    pub py: Array1<f64>,
    pub rank_a: usize,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0,1), got {alpha}"
        )));
    }
    if !(0.01..=0.1).contains(&alpha) {
        eprintln!("warning: alpha = {alpha} is outside the recommended range [0.01, 0.1]");
    }
    Ok(())
}

/// Orthonormal basis of the column space of `x_a` by modified Gram-Schmidt
/// with reorthogonalization. Errors on a column that is linearly dependent on
/// its predecessors (threshold 1e-10 relative to the largest column norm).
fn orthonormal_basis(x_a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, k) = x_a.dim();
    let scale = x_a
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .fold(0.0f64, f64::max);
    let mut q = Array2::zeros((n, k));
    for j in 0..k {
        let mut v = x_a.column(j).to_owned();
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&v);
                v.scaled_add(-proj, &qi);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm <= 1e-10 * scale {
            return Err(Error::RankDeficient { column: j });
        }
        v /= norm;
        q.column_mut(j).assign(&v);
    }
    Ok(q)
}

/// Apply `P = I - X_A (X_A^T X_A)^{-1} X_A^T` to a vector without ever
/// forming the n x n projector.
pub fn residualize(x_a: ArrayView2<f64>, v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let q = orthonormal_basis(x_a)?;
    Ok(residualize_with_basis(&q, v))
}

fn residualize_with_basis(q: &Array2<f64>, v: ArrayView1<f64>) -> Array1<f64> {
    let coeffs = q.t().dot(&v);
    let mut out = v.to_owned();
    out.scaled_add(-1.0, &q.dot(&coeffs));
    out
}

/// Build the projected model for the partition (A, B = complement of A).
pub fn project_model(data: &Dataset, a: &[usize]) -> Result<(ProjectedModel, Vec<usize>)> {
    let p = data.p();
    let n = data.n();
    let mut seen = vec![false; p];
    for &j in a {
        if j >= p {
            return Err(Error::InvalidArgument(format!(
                "index {j} in A is out of range for p = {p}"
            )));
        }
        if seen[j] {
            return Err(Error::InvalidArgument(format!("duplicate index {j} in A")));
        }
        seen[j] = true;
    }
    if a.len() >= n {
        return Err(Error::InvalidArgument(format!(
            "|A| = {} must be smaller than n = {n}",
            a.len()
        )));
    }
    let b: Vec<usize> = (0..p).filter(|j| !seen[*j]).collect();
    if b.is_empty() {
        return Err(Error::InvalidArgument(
            "A covers all columns; B is empty".into(),
        ));
    }

    if a.is_empty() {
        // P = I: pass the data through untouched so the global test is
        // nested bit-for-bit.
        return Ok((
            ProjectedModel {
                px_b: data.x().clone(),
                py: data.y().clone(),
                rank_a: 0,
            },
            b,
        ));
    }

    let mut x_a = Array2::zeros((n, a.len()));
    for (col, &j) in a.iter().enumerate() {
        x_a.column_mut(col).assign(&data.x().column(j));
    }
    let q = orthonormal_basis(x_a.view())?;

    let mut px_b = Array2::zeros((n, b.len()));
    for (col, &j) in b.iter().enumerate() {
        px_b.column_mut(col)
            .assign(&residualize_with_basis(&q, data.x().column(j)));
    }
    let py = residualize_with_basis(&q, data.y().view());
    Ok((
        ProjectedModel {
            px_b,
            py,
            rank_a: a.len(),
        },
        b,
    ))
}

/// Estimate `lambda_hat`, refit at `(1 + delta) * lambda_hat`, and report the
/// oracle-inequality quantities.
pub fn calibrate(
    data: &Dataset,
    alpha: f64,
    delta: f64,
    phi: Option<f64>,
    l: usize,
    m: usize,
    rng: &RngSpec,
) -> Result<CalibrationReport> {
    check_alpha(alpha)?;
    if delta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "delta must be nonnegative, got {delta}"
        )));
    }
    if let Some(phi) = phi {
        if phi <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "phi must be positive, got {phi}"
            )));
        }
    }
    let estimate = estimate_lambda_hat(data, alpha, l, m, rng)?;
    let tuning = (1.0 + delta) * estimate.lambda_hat;
    let fit = fit(data, tuning, None)?;
    let l1: f64 = fit.beta.iter().map(|b| b.abs()).sum();
    Ok(CalibrationReport {
        lambda_hat: estimate.lambda_hat,
        delta,
        beta_hat: fit.beta.to_vec(),
        ell_infty_bound: phi.map(|phi| (2.0 / phi) * tuning),
        prediction_bound: 2.0 * estimate.lambda_hat * l1,
        prediction_bound_note: "plug-in, not a guarantee".to_string(),
        estimate,
    })
}

/// Test of `H0: beta* = 0`; rejects when `T = 2 ||X^T Y||_inf / n` exceeds
/// the estimated effective-noise quantile.
pub fn global_test(
    data: &Dataset,
    alpha: f64,
    l: usize,
    m: usize,
    rng: &RngSpec,
) -> Result<GlobalTestResult> {
    check_alpha(alpha)?;
    let estimate = estimate_lambda_hat(data, alpha, l, m, rng)?;
    let statistic = lambda_bar(data);
    Ok(GlobalTestResult {
        statistic,
        critical_value: estimate.lambda_hat,
        alpha,
        reject: statistic > estimate.lambda_hat,
        estimate,
    })
}

/// Test of `H0,B: beta*_B = 0` on the projected model; with `A` empty this is
/// exactly `global_test`.
pub fn partial_test(
    data: &Dataset,
    a: &[usize],
    alpha: f64,
    l: usize,
    m: usize,
    rng: &RngSpec,
) -> Result<PartialTestResult> {
    check_alpha(alpha)?;
    let (projected, b) = project_model(data, a)?;
    let proj_names: Vec<String> = b.iter().map(|j| format!("px{}", j + 1)).collect();
    let proj_data = Dataset::new(projected.px_b, projected.py, Some(proj_names))?;
    let estimate = estimate_lambda_hat(&proj_data, alpha, l, m, rng)?;
    let statistic = lambda_bar(&proj_data);
    Ok(PartialTestResult {
        a: a.to_vec(),
        b,
        statistic,
        critical_value: estimate.lambda_hat,
        alpha,
        reject: statistic > estimate.lambda_hat,
        projection_rank: projected.rank_a,
        estimate,
    })
}
