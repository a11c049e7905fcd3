//! Data-generating processes, Monte Carlo oracle quantiles, a
//! cross-validation comparator, loss metrics, and seeded experiment runners.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{make_grid, Dataset, GridSpec, RngSpec};
use crate::effective_noise::{empirical_quantile, estimate_lambda_hat_multi};
use crate::error::{Error, Result};
use crate::lasso::{fit, fit_path, lambda_bar};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum DesignLaw {
    Gaussian,
    /// Multivariate t with `df` degrees of freedom, coordinate variances
    /// normalized to 1.
    T { df: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum NoiseLaw {
    Gaussian { sigma: f64 },
    /// t with `df` degrees of freedom, variance normalized to 1.
    T { df: f64 },
}

impl NoiseLaw {
    pub fn sigma(&self) -> f64 {
        match self {
            NoiseLaw::Gaussian { sigma } => *sigma,
            NoiseLaw::T { .. } => 1.0,
        }
    }
}

fn default_support_size() -> usize {
    5
}
fn default_oracle_draws() -> usize {
    1000
}
fn default_cv_folds() -> usize {
    10
}

/// One simulation scenario: DGP description plus estimator and run settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    pub kappa: f64,
    pub design_law: DesignLaw,
    pub noise_law: NoiseLaw,
    pub snr: f64,
    #[serde(default = "default_support_size")]
    pub support_size: usize,
    pub alpha: f64,
    pub l: usize,
    pub m: usize,
    pub n_runs: usize,
    #[serde(default)]
    pub delta: f64,
    pub seed: u64,
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 1 {
            return Err(Error::InvalidArgument("n and p must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::InvalidArgument(format!(
                "kappa must lie in [0,1), got {}",
                self.kappa
            )));
        }
        if self.support_size > self.p {
            return Err(Error::InvalidArgument(format!(
                "support_size {} exceeds p = {}",
                self.support_size, self.p
            )));
        }
        // t laws need more than 4 moments for the model conditions.
        let check_df = |df: f64| -> Result<()> {
            if df < 5.0 {
                return Err(Error::InvalidArgument(format!(
                    "t degrees of freedom must be >= 5, got {df}"
                )));
            }
            Ok(())
        };
        if let DesignLaw::T { df } = self.design_law {
            check_df(df)?;
        }
        if let NoiseLaw::T { df } = self.noise_law {
            check_df(df)?;
        }
        if self.snr < 0.0 {
            return Err(Error::InvalidArgument("snr must be nonnegative".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must be in (0,1)".into()));
        }
        if self.l == 0 || self.m == 0 || self.n_runs == 0 || self.oracle_draws == 0 {
            return Err(Error::InvalidArgument(
                "L, M, n_runs, and oracle_draws must be >= 1".into(),
            ));
        }
        if self.cv_folds < 2 || self.cv_folds > self.n {
            return Err(Error::InvalidArgument(format!(
                "cv_folds must lie in [2, n], got {}",
                self.cv_folds
            )));
        }
        Ok(())
    }
}

/// Unobserved ground truth for one simulated replicate.
#[derive(Debug, Clone)]
pub struct SimulatedTruth {
    pub beta_star: Array1<f64>,
    pub epsilon: Array1<f64>,
    pub x: Array2<f64>,
    pub c: f64,
}

/// Per-replicate loss values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossValues {
    pub hamming: usize,
    pub ell1: f64,
    pub ell_infty: f64,
    pub prediction: f64,
}

/// Draw an n x p design with covariance `(1-kappa) I + kappa E` via the
/// one-factor representation `sqrt(1-kappa) xi + sqrt(kappa) g 1`; for the t
/// law the Gaussian row is divided by `sqrt(chi2_df / df)` and rescaled to
/// unit coordinate variance.
pub fn sample_design(config: &ScenarioConfig, rng: &RngSpec, replicate: u64) -> Array2<f64> {
    let mut stream = rng.substream("design", replicate);
    let (n, p) = (config.n, config.p);
    let sq_ind = (1.0 - config.kappa).sqrt();
    let sq_common = config.kappa.sqrt();
    let mut x = Array2::zeros((n, p));
    for mut row in x.rows_mut() {
        let g: f64 = StandardNormal.sample(&mut stream);
        for v in row.iter_mut() {
            let xi: f64 = StandardNormal.sample(&mut stream);
            *v = sq_ind * xi + sq_common * g;
        }
        if let DesignLaw::T { df } = config.design_law {
            let chi = ChiSquared::new(df).unwrap().sample(&mut stream);
            let scale = (chi / df).sqrt() * (df / (df - 2.0)).sqrt();
            for v in row.iter_mut() {
                *v /= scale;
            }
        }
    }
    x
}

/// Draw the n noise variables, variance `sigma^2` (Gaussian) or 1
/// (normalized t).
pub fn sample_noise(config: &ScenarioConfig, rng: &RngSpec, replicate: u64) -> Array1<f64> {
    let mut stream = rng.substream("noise", replicate);
    match config.noise_law {
        NoiseLaw::Gaussian { sigma } => {
            Array1::from_iter((0..config.n).map(|_| {
                let z: f64 = StandardNormal.sample(&mut stream);
                sigma * z
            }))
        }
        NoiseLaw::T { df } => {
            let norm = (df / (df - 2.0)).sqrt();
            Array1::from_iter((0..config.n).map(|_| {
                let z: f64 = StandardNormal.sample(&mut stream);
                let chi = ChiSquared::new(df).unwrap().sample(&mut stream);
                z / (chi / df).sqrt() / norm
            }))
        }
    }
}

/// Signal magnitude `c` so that `sqrt(||X beta*||^2 / n) / sigma` matches the
/// configured SNR, with the first `support_size` coordinates equal to `c`.
pub fn calibrate_beta_star(x: &Array2<f64>, config: &ScenarioConfig) -> Result<(Array1<f64>, f64)> {
    let p = config.p;
    let mut indicator = Array1::zeros(p);
    for j in 0..config.support_size {
        indicator[j] = 1.0;
    }
    if config.snr == 0.0 {
        return Ok((Array1::zeros(p), 0.0));
    }
    let xv = x.dot(&indicator);
    let norm = xv.dot(&xv).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroSignalDirection);
    }
    let c = config.snr * config.noise_law.sigma() * (config.n as f64).sqrt() / norm;
    Ok((indicator * c, c))
}

/// Draw one full replicate of the DGP.
pub fn sample_truth(config: &ScenarioConfig, rng: &RngSpec, replicate: u64) -> Result<SimulatedTruth> {
    let x = sample_design(config, rng, replicate);
    let (beta_star, c) = calibrate_beta_star(&x, config)?;
    let epsilon = sample_noise(config, rng, replicate);
    Ok(SimulatedTruth {
        beta_star,
        epsilon,
        x,
        c,
    })
}

pub fn response(truth: &SimulatedTruth) -> Array1<f64> {
    truth.x.dot(&truth.beta_star) + &truth.epsilon
}

/// R simulated values of the effective noise `2 ||X^T eps||_inf / n`,
/// redrawing both X and eps each time.
pub fn oracle_effective_noise_draws(config: &ScenarioConfig, r: usize, rng: &RngSpec) -> Vec<f64> {
    let oracle_rng = rng.derive("oracle", 0);
    (0..r)
        .into_par_iter()
        .map(|draw| {
            let x = sample_design(config, &oracle_rng, draw as u64);
            let eps = sample_noise(config, &oracle_rng, draw as u64);
            let correlations = x.t().dot(&eps);
            let max_abs = correlations.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            2.0 * max_abs / config.n as f64
        })
        .collect()
}

/// Empirical (1-alpha)-quantile of R freshly simulated effective-noise
/// values.
pub fn oracle_lambda_star(config: &ScenarioConfig, alpha: f64, r: usize, rng: &RngSpec) -> Result<f64> {
    let draws = oracle_effective_noise_draws(config, r, rng);
    empirical_quantile(&draws, alpha)
}

/// 10-fold (or k-fold) cross-validation on the shared grid; ties broken
/// toward the larger lambda.
pub fn cross_validate(
    data: &Dataset,
    grid: &GridSpec,
    folds: usize,
    rng: &RngSpec,
    replicate: u64,
) -> Result<f64> {
    let n = data.n();
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!(
            "folds must lie in [2, n], got {folds}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut stream = rng.substream("cv-folds", replicate);
    order.shuffle(&mut stream);

    let m = grid.m();
    let mut sse = vec![0.0f64; m];
    for fold in 0..folds {
        // near-equal contiguous blocks of the shuffled order
        let start = fold * n / folds;
        let end = (fold + 1) * n / folds;
        if start == end {
            return Err(Error::InvalidArgument(format!(
                "fold {fold} has zero rows (n = {n}, folds = {folds})"
            )));
        }
        let held: &[usize] = &order[start..end];
        let train: Vec<usize> = order[..start]
            .iter()
            .chain(order[end..].iter())
            .copied()
            .collect();

        let mut x_train = Array2::zeros((train.len(), data.p()));
        let mut y_train = Array1::zeros(train.len());
        for (row, &i) in train.iter().enumerate() {
            x_train.row_mut(row).assign(&data.x().row(i));
            y_train[row] = data.y()[i];
        }
        let train_data = Dataset::new(x_train, y_train, None)?;
        let path = fit_path(&train_data, grid)?;
        for (idx, fit) in path.fits.iter().enumerate() {
            for &i in held {
                let pred = data.x().row(i).dot(&fit.beta);
                let err = data.y()[i] - pred;
                sse[idx] += err * err;
            }
        }
    }

    let mut best_idx = m - 1;
    let mut best = sse[m - 1] / n as f64;
    for idx in (0..m - 1).rev() {
        let mse = sse[idx] / n as f64;
        // strict improvement required: ties go to the larger lambda
        if mse < best {
            best = mse;
            best_idx = idx;
        }
    }
    Ok(grid.lambdas[best_idx])
}

/// Hamming, l1, l_infty, and prediction losses of `beta` against the truth.
pub fn losses(beta: &Array1<f64>, truth: &SimulatedTruth) -> LossValues {
    let hamming = beta
        .iter()
        .zip(truth.beta_star.iter())
        .filter(|(b, t)| (**b == 0.0) != (**t == 0.0))
        .count();
    let diff = beta - &truth.beta_star;
    let ell1 = diff.iter().map(|v| v.abs()).sum();
    let ell_infty = diff.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let fitted_diff = truth.x.dot(&diff);
    let prediction = fitted_diff.dot(&fitted_diff) / truth.x.nrows() as f64;
    LossValues {
        hamming,
        ell1,
        ell_infty,
        prediction,
    }
}

/// One replicate's row in a calibration experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReplicate {
    pub replicate: usize,
    pub lambda_bar: f64,
    pub lambda_hat: f64,
    pub lambda_star: f64,
    pub lambda_cv: f64,
    pub ours: LossValues,
    pub oracle: LossValues,
    pub cv: LossValues,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean_hamming: f64,
    pub mean_ell1: f64,
    pub mean_ell_infty: f64,
    pub mean_prediction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationExperimentReport {
    pub config: ScenarioConfig,
    pub lambda_star: f64,
    pub replicates: Vec<CalibrationReplicate>,
    pub failed: Vec<(usize, String)>,
    pub ours: MethodSummary,
    pub oracle: MethodSummary,
    pub cv: MethodSummary,
}

fn summarize(values: impl Iterator<Item = LossValues> + Clone) -> MethodSummary {
    let count = values.clone().count().max(1) as f64;
    MethodSummary {
        mean_hamming: values.clone().map(|v| v.hamming as f64).sum::<f64>() / count,
        mean_ell1: values.clone().map(|v| v.ell1).sum::<f64>() / count,
        mean_ell_infty: values.clone().map(|v| v.ell_infty).sum::<f64>() / count,
        mean_prediction: values.map(|v| v.prediction).sum::<f64>() / count,
    }
}

/// Per-replicate: draw truth, estimate `lambda_hat`, compare against the
/// shared Monte Carlo oracle `lambda_star` and 10-fold CV, and fit all three
/// lassos. Failed replicates are excluded and counted.
pub fn run_calibration_experiment(config: &ScenarioConfig) -> Result<CalibrationExperimentReport> {
    config.validate()?;
    let rng = RngSpec::new(config.seed);
    let lambda_star = oracle_lambda_star(config, config.alpha, config.oracle_draws, &rng)?;

    let outcomes: Vec<std::result::Result<CalibrationReplicate, (usize, String)>> = (0..config
        .n_runs)
        .into_par_iter()
        .map(|rep| {
            run_calibration_replicate(config, &rng, rep, lambda_star)
                .map_err(|e| (rep, e.to_string()))
        })
        .collect();

    let mut replicates = Vec::new();
    let mut failed = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(row) => replicates.push(row),
            Err(info) => failed.push(info),
        }
    }

    let ours = summarize(replicates.iter().map(|r| r.ours));
    let oracle = summarize(replicates.iter().map(|r| r.oracle));
    let cv = summarize(replicates.iter().map(|r| r.cv));
    Ok(CalibrationExperimentReport {
        config: config.clone(),
        lambda_star,
        replicates,
        failed,
        ours,
        oracle,
        cv,
    })
}

fn run_calibration_replicate(
    config: &ScenarioConfig,
    rng: &RngSpec,
    rep: usize,
    lambda_star: f64,
) -> Result<CalibrationReplicate> {
    let truth = sample_truth(config, rng, rep as u64)?;
    let y = response(&truth);
    let data = Dataset::new(truth.x.clone(), y, None)?;

    let estimate = estimate_lambda_hat_multi(
        &data,
        &[config.alpha],
        config.l,
        config.m,
        &rng.derive("estimate", rep as u64),
    )?
    .pop()
    .unwrap();
    let lb = estimate.lambda_bar;

    let grid = make_grid(lambda_bar(&data), config.m)?;
    let lambda_cv = cross_validate(&data, &grid, config.cv_folds, rng, rep as u64)?;

    let tuning_ours = (1.0 + config.delta) * estimate.lambda_hat;
    let fit_ours = fit(&data, tuning_ours, None)?;
    let fit_oracle = fit(&data, lambda_star, None)?;
    let fit_cv = fit(&data, lambda_cv, None)?;

    Ok(CalibrationReplicate {
        replicate: rep,
        lambda_bar: lb,
        lambda_hat: estimate.lambda_hat,
        lambda_star,
        lambda_cv,
        ours: losses(&fit_ours.beta, &truth),
        oracle: losses(&fit_oracle.beta, &truth),
        cv: losses(&fit_cv.beta, &truth),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerEntry {
    pub alpha: f64,
    pub snr: f64,
    pub n_runs: usize,
    pub feasible_rejections: usize,
    pub oracle_rejections: usize,
    pub feasible_rate: f64,
    pub oracle_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestPowerReport {
    pub config: ScenarioConfig,
    pub entries: Vec<PowerEntry>,
    pub failed: Vec<(usize, String)>,
}

/// Size/power experiment over a grid of (alpha, SNR) cells: per replicate,
/// the feasible test `T > lambda_hat_alpha` and the oracle test
/// `T > lambda_star_alpha`. All cells of one SNR share replicate seeds.
pub fn run_test_experiment(
    config: &ScenarioConfig,
    snrs: &[f64],
    alphas: &[f64],
) -> Result<TestPowerReport> {
    config.validate()?;
    let rng = RngSpec::new(config.seed);

    // One shared oracle sample per config: the effective noise does not
    // depend on beta*, so all (alpha, snr) cells reuse it.
    let oracle_draws = oracle_effective_noise_draws(config, config.oracle_draws, &rng);
    let lambda_star: Vec<f64> = alphas
        .iter()
        .map(|&a| empirical_quantile(&oracle_draws, a))
        .collect::<Result<_>>()?;

    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for &snr in snrs {
        let cell_config = ScenarioConfig {
            snr,
            ..config.clone()
        };
        let outcomes: Vec<std::result::Result<(f64, Vec<f64>), (usize, String)>> = (0..config
            .n_runs)
            .into_par_iter()
            .map(|rep| {
                let run = || -> Result<(f64, Vec<f64>)> {
                    let truth = sample_truth(&cell_config, &rng, rep as u64)?;
                    let y = response(&truth);
                    let data = Dataset::new(truth.x.clone(), y, None)?;
                    let statistic = lambda_bar(&data);
                    let estimates = estimate_lambda_hat_multi(
                        &data,
                        alphas,
                        config.l,
                        config.m,
                        &rng.derive("estimate", rep as u64),
                    )?;
                    Ok((statistic, estimates.into_iter().map(|e| e.lambda_hat).collect()))
                };
                run().map_err(|e| (rep, e.to_string()))
            })
            .collect();

        let mut rows = Vec::new();
        for outcome in outcomes {
            match outcome {
                Ok(row) => rows.push(row),
                Err(info) => failed.push(info),
            }
        }
        for (a_idx, &alpha) in alphas.iter().enumerate() {
            let feasible = rows
                .iter()
                .filter(|(t, crits)| *t > crits[a_idx])
                .count();
            let oracle = rows.iter().filter(|(t, _)| *t > lambda_star[a_idx]).count();
            let n_ok = rows.len();
            entries.push(PowerEntry {
                alpha,
                snr,
                n_runs: n_ok,
                feasible_rejections: feasible,
                oracle_rejections: oracle,
                feasible_rate: feasible as f64 / n_ok.max(1) as f64,
                oracle_rate: oracle as f64 / n_ok.max(1) as f64,
            });
        }
    }
    Ok(TestPowerReport {
        config: config.clone(),
        entries,
        failed,
    })
}
