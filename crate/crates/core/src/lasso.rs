//! Lasso solver (cyclic coordinate descent) and warm-started path
//! computation over a tuning grid.
//!
//! The objective is `(1/n) ||Y - X beta||_2^2 + lambda ||beta||_1`, with the
//! 1/n scaling (not 1/(2n)) so that lambda quantities are directly comparable
//! to the effective noise `2 ||X^T eps||_inf / n`.

use ndarray::{Array1, ArrayView1};

use crate::data_model::{Dataset, GridSpec};
use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 10_000;

/// One lasso solution at a fixed tuning parameter.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub lambda: f64,
    pub beta: Array1<f64>,
    pub residuals: Array1<f64>,
    pub sweeps: usize,
    pub kkt_gap: f64,
}

/// Warm-started fits index-aligned with `grid.lambdas`.
#[derive(Debug, Clone)]
pub struct LassoPath {
    pub grid: GridSpec,
    pub fits: Vec<LassoFit>,
}

/// `sign(z) * max(|z| - t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `2 ||X^T Y||_inf / n`, the smallest lambda whose lasso solution is zero.
pub fn lambda_bar(data: &Dataset) -> f64 {
    let correlations = data.x().t().dot(data.y());
    let max_abs = correlations.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    2.0 * max_abs / data.n() as f64
}

#[cfg(debug_assertions)]
fn objective(residuals: &Array1<f64>, beta: &Array1<f64>, lambda: f64, n: f64) -> f64 {
    residuals.iter().map(|r| r * r).sum::<f64>() / n
        + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Max violation of the zero-subgradient condition
/// `2 X^T (X beta - Y) / n + lambda z = 0` over coordinates.
pub fn kkt_check(data: &Dataset, fit: &LassoFit) -> f64 {
    kkt_gap_from_residuals(data, &fit.beta, &fit.residuals, fit.lambda)
}

fn kkt_gap_from_residuals(
    data: &Dataset,
    beta: &Array1<f64>,
    residuals: &Array1<f64>,
    lambda: f64,
) -> f64 {
    let n = data.n() as f64;
    let grad = data.x().t().dot(residuals);
    let mut gap = 0.0f64;
    for (j, &g) in grad.iter().enumerate() {
        let score = 2.0 * g / n;
        let violation = if beta[j] != 0.0 {
            (score - lambda * beta[j].signum()).abs()
        } else {
            (score.abs() - lambda).max(0.0)
        };
        gap = gap.max(violation);
    }
    gap
}

/// Precomputed Gram quantities shared by every fit on one dataset. The
/// solver works in covariance form: the gradient `X^T r` is maintained
/// incrementally, so a coordinate update and a full KKT scan both cost O(p)
/// rather than O(n).
pub struct GramCache {
    gram: ndarray::Array2<f64>,
    xty: Array1<f64>,
    order: Vec<usize>,
    tol_cd: f64,
}

impl GramCache {
    pub fn new(data: &Dataset) -> Self {
        let gram = data.x().t().dot(data.x());
        let xty = data.x().t().dot(data.y());
        // Cycle through coordinates in a content-canonical order so that the
        // arithmetic (and hence the gradient stream) is invariant under
        // column permutations of X.
        let mut order: Vec<usize> = (0..data.p()).collect();
        order.sort_by(|&a, &b| {
            let ca = data.x().column(a);
            let cb = data.x().column(b);
            ca.iter()
                .zip(cb.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let tol_cd = 1e-8 * (1.0 + data.y().iter().fold(0.0f64, |a, v| a.max(v.abs())));
        Self {
            gram,
            xty,
            order,
            tol_cd,
        }
    }

    /// `Y - X beta`, accumulating columns in the canonical cycling order so
    /// the result (not just its value up to rounding) is invariant under
    /// column permutations of X.
    fn residuals(&self, data: &Dataset, beta: &Array1<f64>) -> Array1<f64> {
        let mut residuals = data.y().to_owned();
        for &j in &self.order {
            if beta[j] != 0.0 {
                residuals.scaled_add(-beta[j], &data.x().column(j));
            }
        }
        residuals
    }
}

fn kkt_gap_from_gradient(gradient: &Array1<f64>, beta: &Array1<f64>, lambda: f64, n: f64) -> f64 {
    let mut gap = 0.0f64;
    for (j, &g) in gradient.iter().enumerate() {
        let score = 2.0 * g / n;
        let violation = if beta[j] != 0.0 {
            (score - lambda * beta[j].signum()).abs()
        } else {
            (score.abs() - lambda).max(0.0)
        };
        gap = gap.max(violation);
    }
    gap
}

/// In-place SPD solve of `A x = b` by Cholesky; `false` when A is not
/// numerically positive definite.
fn cholesky_solve(a: &mut ndarray::Array2<f64>, b: &mut [f64]) -> bool {
    let k = b.len();
    let max_diag = (0..k).fold(0.0f64, |m, j| m.max(a[[j, j]]));
    for j in 0..k {
        let mut d = a[[j, j]];
        for l in 0..j {
            d -= a[[j, l]] * a[[j, l]];
        }
        if d <= 1e-12 * max_diag.max(1e-300) {
            return false;
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..k {
            let mut v = a[[i, j]];
            for l in 0..j {
                v -= a[[i, l]] * a[[j, l]];
            }
            a[[i, j]] = v / d;
        }
    }
    for i in 0..k {
        let mut v = b[i];
        for l in 0..i {
            v -= a[[i, l]] * b[l];
        }
        b[i] = v / a[[i, i]];
    }
    for i in (0..k).rev() {
        let mut v = b[i];
        for l in i + 1..k {
            v -= a[[l, i]] * b[l];
        }
        b[i] = v / a[[i, i]];
    }
    true
}

/// Exact minimization over the current support and sign pattern: solve the
/// stationarity system `G_SS beta_S = X_S^T Y - (n lambda / 2) sign(beta_S)`
/// and move toward it, truncating the step at the first sign flip (the
/// objective is a convex quadratic along the segment, so it only decreases).
/// Returns true when the step made progress. This rescues coordinate descent
/// in the near-saturated regime (`p > n`, small lambda) where cyclic sweeps
/// stall on ill-conditioned active sets.
fn newton_step(
    cache: &GramCache,
    data: &Dataset,
    beta: &mut Array1<f64>,
    gradient: &mut Array1<f64>,
    lambda: f64,
    n: f64,
) -> bool {
    let support: Vec<usize> = cache
        .order
        .iter()
        .copied()
        .filter(|&j| beta[j] != 0.0)
        .collect();
    let k = support.len();
    if k == 0 || k > data.n() {
        return false;
    }
    let mut a = ndarray::Array2::zeros((k, k));
    let mut target = vec![0.0; k];
    for (row, &j) in support.iter().enumerate() {
        for (col, &l) in support.iter().enumerate() {
            a[[row, col]] = cache.gram[[j, l]];
        }
        target[row] = cache.xty[j] - n * lambda / 2.0 * beta[j].signum();
    }
    if !cholesky_solve(&mut a, &mut target) {
        return false;
    }

    // largest t in (0, 1] keeping every support sign fixed
    let mut t = 1.0f64;
    for (i, &j) in support.iter().enumerate() {
        if target[i] * beta[j].signum() <= 0.0 {
            // crosses zero at beta_j / (beta_j - target_i), inside (0, 1]
            t = t.min(beta[j] / (beta[j] - target[i]));
        }
    }
    if !(t > 0.0) {
        return false;
    }
    let mut moved = false;
    for (i, &j) in support.iter().enumerate() {
        let updated = if t < 1.0 {
            let v = beta[j] + t * (target[i] - beta[j]);
            // snap the crossing coordinate(s) exactly to zero
            if v.signum() != beta[j].signum() || v == 0.0 {
                0.0
            } else {
                v
            }
        } else {
            target[i]
        };
        if updated != beta[j] {
            beta[j] = updated;
            moved = true;
        }
    }
    if moved {
        *gradient = cache.xty.clone();
        for &j in &cache.order {
            if beta[j] != 0.0 {
                gradient.scaled_add(-beta[j], &cache.gram.row(j));
            }
        }
    }
    moved
}

/// Cyclic coordinate descent from `warm_start` (or zero). Converged when the
/// KKT gap, verified against freshly recomputed residuals, is below
/// `1e-6 * (1 + lambda)`; sweeps also terminate once the max coordinate
/// change falls below `1e-8 * (1 + ||Y||_inf)`.
pub fn fit(data: &Dataset, lambda: f64, warm_start: Option<ArrayView1<f64>>) -> Result<LassoFit> {
    let cache = GramCache::new(data);
    fit_with_cache(data, &cache, lambda, warm_start)
}

pub fn fit_with_cache(
    data: &Dataset,
    cache: &GramCache,
    lambda: f64,
    warm_start: Option<ArrayView1<f64>>,
) -> Result<LassoFit> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let n = data.n() as f64;
    let p = data.p();
    if let Some(ws) = &warm_start {
        if ws.len() != p {
            return Err(Error::InvalidArgument(format!(
                "warm start has length {}, expected {p}",
                ws.len()
            )));
        }
    }
    for &j in &cache.order {
        if cache.gram[[j, j]] == 0.0 {
            eprintln!(
                "warning: column {j} of X is identically zero; its coefficient is pinned to 0"
            );
        }
    }

    let mut beta: Array1<f64> = match warm_start {
        Some(ws) => ws.to_owned(),
        None => Array1::zeros(p),
    };
    for j in 0..p {
        if cache.gram[[j, j]] == 0.0 {
            beta[j] = 0.0;
        }
    }
    // gradient = X^T (Y - X beta), maintained incrementally; built up in
    // canonical coordinate order for permutation invariance
    let mut gradient = cache.xty.clone();
    for &j in &cache.order {
        if beta[j] != 0.0 {
            gradient.scaled_add(-beta[j], &cache.gram.row(j));
        }
    }

    let tol_kkt = 1e-6 * (1.0 + lambda);

    #[cfg(debug_assertions)]
    let mut prev_objective = {
        let residuals = data.y() - &data.x().dot(&beta);
        objective(&residuals, &beta, lambda, n)
    };

    // One cyclic pass over `coords`; returns the max coordinate change.
    let sweep_over = |coords: &[usize], beta: &mut Array1<f64>, gradient: &mut Array1<f64>| {
        let mut max_change = 0.0f64;
        for &j in coords {
            let diag = cache.gram[[j, j]];
            if diag == 0.0 {
                continue;
            }
            let denom = 2.0 * diag / n;
            let partial = 2.0 * gradient[j] / n + denom * beta[j];
            let updated = soft_threshold(partial, lambda) / denom;
            let change = updated - beta[j];
            if change != 0.0 {
                gradient.scaled_add(-change, &cache.gram.row(j));
                beta[j] = updated;
                max_change = max_change.max(change.abs());
            }
        }
        max_change
    };

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let max_change = sweep_over(&cache.order, &mut beta, &mut gradient);

        #[cfg(debug_assertions)]
        {
            let residuals = data.y() - &data.x().dot(&beta);
            let obj = objective(&residuals, &beta, lambda, n);
            debug_assert!(
                obj <= prev_objective + 1e-12 * (1.0 + prev_objective.abs()),
                "objective increased across sweep: {prev_objective} -> {obj}"
            );
            prev_objective = obj;
        }

        let gap = kkt_gap_from_gradient(&gradient, &beta, lambda, n);
        if gap <= tol_kkt || max_change <= cache.tol_cd {
            // Verify against freshly recomputed residuals; refresh the
            // maintained gradient from them if the drift was too large.
            let residuals = cache.residuals(data, &beta);
            let verified = kkt_gap_from_residuals(data, &beta, &residuals, lambda);
            if verified <= tol_kkt {
                return Ok(LassoFit {
                    lambda,
                    beta,
                    residuals,
                    sweeps,
                    kkt_gap: verified,
                });
            }
            gradient = data.x().t().dot(&residuals);
            continue;
        }

        // Iterate on the current active set until it stabilizes, then verify
        // with another full sweep.
        let active: Vec<usize> = cache
            .order
            .iter()
            .copied()
            .filter(|&j| beta[j] != 0.0)
            .collect();
        let mut inner = 0;
        while sweeps < MAX_SWEEPS {
            sweeps += 1;
            inner += 1;
            let inner_change = sweep_over(&active, &mut beta, &mut gradient);
            // ill-conditioned active sets make plain sweeps stall; finish
            // the subproblem with an exact solve on the support instead
            if inner_change <= cache.tol_cd || inner >= 20 {
                sweeps += 1;
                newton_step(cache, data, &mut beta, &mut gradient, lambda, n);
                break;
            }
        }
    }

    let residuals = cache.residuals(data, &beta);
    let gap = kkt_gap_from_residuals(data, &beta, &residuals, lambda);
    if gap <= tol_kkt {
        return Ok(LassoFit {
            lambda,
            beta,
            residuals,
            sweeps,
            kkt_gap: gap,
        });
    }
    Err(Error::NonConvergence {
        sweeps,
        kkt_gap: gap,
        lambda,
        best: Box::new(LassoFit {
            lambda,
            beta,
            residuals,
            sweeps,
            kkt_gap: gap,
        }),
    })
}

/// Fits from largest to smallest lambda, each warm-started from the previous
/// solution. The returned fits are index-aligned with `grid.lambdas`.
pub fn fit_path(data: &Dataset, grid: &GridSpec) -> Result<LassoPath> {
    let cache = GramCache::new(data);
    let m = grid.m();
    let mut fits: Vec<Option<LassoFit>> = vec![None; m];
    let mut warm: Option<Array1<f64>> = None;
    for idx in (0..m).rev() {
        let fit = fit_with_cache(data, &cache, grid.lambdas[idx], warm.as_ref().map(|w| w.view()))
            .map_err(|e| Error::PathFit {
                grid_index: idx,
                source: Box::new(e),
            })?;
        warm = Some(fit.beta.clone());
        fits[idx] = Some(fit);
    }
    Ok(LassoPath {
        grid: grid.clone(),
        fits: fits.into_iter().map(|f| f.unwrap()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{make_grid, Dataset, RngSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn toy() -> Dataset {
        Dataset::new(array![[1.0], [1.0]], array![2.0, 2.0], None).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
    }

    #[test]
    fn lambda_bar_examples() {
        let zero = Dataset::new(array![[1.0], [2.0]], array![0.0, 0.0], None).unwrap();
        assert_eq!(lambda_bar(&zero), 0.0);

        assert_eq!(lambda_bar(&toy()), 4.0);

        let a = Dataset::new(
            array![[1.0, 3.0], [2.0, -1.0]],
            array![1.5, -0.5],
            None,
        )
        .unwrap();
        let b = Dataset::new(
            array![[3.0, 1.0], [-1.0, 2.0]],
            array![1.5, -0.5],
            None,
        )
        .unwrap();
        assert_eq!(lambda_bar(&a), lambda_bar(&b));
    }

    #[test]
    fn univariate_closed_form() {
        // beta = soft_threshold((2/n) X^T Y, lambda) / ((2/n)||X||^2)
        //      = soft_threshold(4, 2) / 2 = 1
        let fit = fit(&toy(), 2.0, None).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 1.0, epsilon = 1e-10);
        assert!(fit.kkt_gap <= 1e-12);
    }

    #[test]
    fn zero_fit_at_lambda_bar_is_exact() {
        let data = toy();
        let fit = fit(&data, lambda_bar(&data), None).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));

        let larger = super::fit(&data, lambda_bar(&data) + 1.0, None).unwrap();
        assert!(larger.beta.iter().all(|&b| b == 0.0));
    }

    /// Exhaustive grid search over beta in [-3,3]^2, step 1e-3.
    fn brute_force_2d(data: &Dataset, lambda: f64) -> [f64; 2] {
        let n = data.n() as f64;
        let mut best = [0.0, 0.0];
        let mut best_obj = f64::INFINITY;
        let steps = 6001;
        for a in 0..steps {
            let b0 = -3.0 + a as f64 * 1e-3;
            for b in 0..steps {
                let b1 = -3.0 + b as f64 * 1e-3;
                let mut rss = 0.0;
                for i in 0..data.n() {
                    let r = data.y()[i] - data.x()[[i, 0]] * b0 - data.x()[[i, 1]] * b1;
                    rss += r * r;
                }
                let obj = rss / n + lambda * (b0.abs() + b1.abs());
                if obj < best_obj {
                    best_obj = obj;
                    best = [b0, b1];
                }
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_on_orthogonal_instance() {
        let data = Dataset::new(
            array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]],
            array![2.0, 0.5, -0.5, -2.0],
            None,
        )
        .unwrap();
        let fit = fit(&data, 0.5, None).unwrap();
        let oracle = brute_force_2d(&data, 0.5);
        for j in 0..2 {
            assert!(
                (fit.beta[j] - oracle[j]).abs() <= 2e-3,
                "coord {j}: {} vs {}",
                fit.beta[j],
                oracle[j]
            );
        }
    }

    #[test]
    fn kkt_check_examples() {
        let data = toy();
        let zero_fit = fit(&data, lambda_bar(&data), None).unwrap();
        assert_eq!(kkt_check(&data, &zero_fit), 0.0);

        let exact = fit(&data, 2.0, None).unwrap();
        assert!(kkt_check(&data, &exact) <= 1e-12);

        let mut perturbed = exact.clone();
        perturbed.beta[0] += 0.1;
        perturbed.residuals = data.y() - &data.x().dot(&perturbed.beta);
        assert!(kkt_check(&data, &perturbed) > 0.0);
    }

    #[test]
    fn zero_column_is_pinned() {
        let data = Dataset::new(
            array![[1.0, 0.0], [1.0, 0.0]],
            array![2.0, 2.0],
            None,
        )
        .unwrap();
        let fit = fit(&data, 2.0, None).unwrap();
        assert_eq!(fit.beta[1], 0.0);
        assert_abs_diff_eq!(fit.beta[0], 1.0, epsilon = 1e-10);
    }

    fn random_dataset(seed: u64, n: usize, p: usize) -> Dataset {
        let spec = RngSpec::new(seed);
        let mut rng = spec.substream("lasso-test", 0);
        let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |_| rng.gen_range(-2.0..2.0));
        Dataset::new(x, y, None).unwrap()
    }

    #[test]
    fn path_matches_cold_start_and_l1_monotone() {
        let data = random_dataset(11, 30, 8);
        let grid = make_grid(lambda_bar(&data), 20).unwrap();
        let path = fit_path(&data, &grid).unwrap();

        assert!(path.fits[grid.m() - 1].beta.iter().all(|&b| b == 0.0));

        let mut prev_l1 = f64::INFINITY;
        for (idx, warm_fit) in path.fits.iter().enumerate() {
            let cold = fit(&data, grid.lambdas[idx], None).unwrap();
            for j in 0..data.p() {
                assert!(
                    (warm_fit.beta[j] - cold.beta[j]).abs() <= 1e-6,
                    "grid {idx} coord {j}"
                );
            }
            let l1: f64 = warm_fit.beta.iter().map(|b| b.abs()).sum();
            // ascending grid index means descending ||beta||_1
            assert!(l1 <= prev_l1 + 1e-8, "l1 not monotone at {idx}");
            prev_l1 = l1;
        }
    }

    #[test]
    fn path_single_point_is_zero_fit() {
        let data = toy();
        let grid = make_grid(lambda_bar(&data), 1).unwrap();
        let path = fit_path(&data, &grid).unwrap();
        assert_eq!(path.fits.len(), 1);
        assert!(path.fits[0].beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn scale_equivariance() {
        let data = random_dataset(5, 25, 6);
        let c = 3.7;
        let scaled = Dataset::new(data.x().clone(), data.y() * c, None).unwrap();
        let base = fit(&data, 0.3, None).unwrap();
        let scaled_fit = fit(&scaled, 0.3 * c, None).unwrap();
        for j in 0..data.p() {
            let expect = c * base.beta[j];
            let tol = 1e-9 * (1.0 + expect.abs());
            assert!((scaled_fit.beta[j] - expect).abs() <= tol);
        }
    }

    #[test]
    fn residuals_recomputable() {
        let data = random_dataset(9, 40, 12);
        let fit = fit(&data, 0.2, None).unwrap();
        let recomputed = data.y() - &data.x().dot(&fit.beta);
        for i in 0..data.n() {
            let tol = 1e-10 * (1.0 + recomputed[i].abs());
            assert!((fit.residuals[i] - recomputed[i]).abs() <= tol);
        }
    }

    #[test]
    fn kkt_certificate_on_random_fits() {
        for seed in 0..10 {
            let data = random_dataset(seed, 20, 10);
            let lb = lambda_bar(&data);
            for frac in [0.1, 0.3, 0.6, 1.0] {
                let lambda = frac * lb;
                let f = fit(&data, lambda, None).unwrap();
                assert!(f.kkt_gap <= 1e-6 * (1.0 + lambda));
            }
        }
    }

    #[test]
    fn converges_near_saturation_when_p_exceeds_n() {
        // tiny lambda with p > n: the active set is nearly size n and badly
        // conditioned, the regime plain cyclic sweeps stall in
        for seed in 0..5 {
            let data = random_dataset(100 + seed, 60, 90);
            let lambda = lambda_bar(&data) / 100.0;
            let f = fit(&data, lambda, None).unwrap();
            assert!(f.kkt_gap <= 1e-6 * (1.0 + lambda), "seed {seed}");
            assert!(f.sweeps < 2000, "seed {seed}: {} sweeps", f.sweeps);
        }
    }
}
