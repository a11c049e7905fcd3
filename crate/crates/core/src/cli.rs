//! Command-line surface: estimation, calibration, testing, simulation, and
//! plot emission, with stable serialized outputs.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data_model::{format_float, load_csv, Dataset, ResponseColumn, RngSpec};
use crate::effective_noise::estimate_lambda_hat;
use crate::error::{Error, Result};
use crate::inference::{calibrate, global_test, partial_test};
use crate::simulation::{run_calibration_experiment, run_test_experiment, ScenarioConfig};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Parser, Debug)]
#[command(name = "effnoise", version, about = "Effective-noise quantile estimation for the lasso")]
struct CliArgs {
    /// Worker threads (default: available cores). Outputs are
    /// schedule-independent.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV with one observation per row.
    #[arg(long)]
    data: PathBuf,

    /// Response column (header name, or zero-based index without a header).
    #[arg(long)]
    response: String,

    /// Treat the first row as data, not a header.
    #[arg(long)]
    no_header: bool,

    /// Center columns to mean 0 and scale to unit sample second moment
    /// before the analysis.
    #[arg(long)]
    standardize: bool,
}

#[derive(Args, Debug)]
struct EstimatorArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Bootstrap replicates.
    #[arg(long, default_value_t = 100)]
    l: usize,

    /// Grid points.
    #[arg(long, default_value_t = 100)]
    m: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the effective-noise quantile lambda_hat_alpha.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Estimate lambda_hat_alpha and fit the lasso at (1+delta) times it.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// Restricted-eigenvalue constant; enables the l_infty bound.
        #[arg(long)]
        phi: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Test the global null beta* = 0.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Test beta*_B = 0 on the model projected off the columns in A.
    TestPartial {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        estimator: EstimatorArgs,
        /// Comma-separated one-based column indices forming A.
        #[arg(long, value_delimiter = ',')]
        set_a: Vec<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the Monte Carlo experiments described by a scenario config.
    Simulate {
        /// JSON file mirroring the scenario schema.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Skip the size/power experiment.
        #[arg(long)]
        no_tests: bool,
        /// Skip the loss/calibration experiment.
        #[arg(long)]
        no_losses: bool,
    },
}

/// Bin edges plus per-series counts; the CSV twin and the SVG are emitted
/// together.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramTable {
    pub bin_edges: Vec<f64>,
    pub series: Vec<(String, Vec<usize>)>,
}

impl HistogramTable {
    /// Bin `samples` into `bins` equal-width bins over `[0, max_edge]`,
    /// clamping outliers into the boundary bins so every value is counted.
    pub fn build(
        labels_and_samples: &[(String, &[f64])],
        bins: usize,
        max_edge: f64,
    ) -> Result<Self> {
        if labels_and_samples.is_empty() || bins == 0 {
            return Err(Error::InvalidArgument(
                "histogram needs at least one series and one bin".into(),
            ));
        }
        let max_edge = if max_edge > 0.0 { max_edge } else { 1.0 };
        let bin_edges: Vec<f64> = (0..=bins)
            .map(|i| i as f64 * max_edge / bins as f64)
            .collect();
        let width = max_edge / bins as f64;
        let series = labels_and_samples
            .iter()
            .map(|(label, samples)| {
                let mut counts = vec![0usize; bins];
                for &v in samples.iter() {
                    let idx = ((v / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
                    counts[idx] += 1;
                }
                (label.clone(), counts)
            })
            .collect();
        Ok(Self { bin_edges, series })
    }
}

/// Self-contained SVG with overlaid series and optional vertical marker
/// lines; the same table is written next to it as CSV.
pub fn emit_histogram(
    table: &HistogramTable,
    path: &Path,
    markers: &[(String, f64)],
) -> Result<()> {
    if table.series.is_empty() {
        return Err(Error::InvalidArgument("empty histogram table".into()));
    }
    let width = 640.0;
    let height = 400.0;
    let margin = 50.0;
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin;
    let max_edge = *table.bin_edges.last().unwrap();
    let max_count = table
        .series
        .iter()
        .flat_map(|(_, counts)| counts.iter())
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let colors = ["#000000", "#999999", "#4477aa", "#cc6677", "#228833"];

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    for (s_idx, (label, counts)) in table.series.iter().enumerate() {
        let color = colors[s_idx % colors.len()];
        for (b_idx, &count) in counts.iter().enumerate() {
            let x0 = margin + plot_w * table.bin_edges[b_idx] / max_edge;
            let x1 = margin + plot_w * table.bin_edges[b_idx + 1] / max_edge;
            let bar_h = plot_h * count as f64 / max_count;
            svg.push_str(&format!(
                "  <rect class=\"bar series-{s_idx}\" data-series=\"{label}\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.45\" stroke=\"{color}\"/>\n",
                x0,
                margin + plot_h - bar_h,
                x1 - x0,
                bar_h
            ));
        }
    }
    for (label, value) in markers {
        let x = margin + plot_w * (value / max_edge).clamp(0.0, 1.0);
        svg.push_str(&format!(
            "  <line class=\"marker\" data-label=\"{label}\" x1=\"{x:.2}\" y1=\"{margin}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"red\" stroke-width=\"1.5\"/>\n",
            margin + plot_h
        ));
    }
    svg.push_str(&format!(
        "  <line x1=\"{margin}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        margin + plot_h,
        margin + plot_w,
        margin + plot_h
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;

    let csv_path = path.with_extension("csv");
    let mut file = std::fs::File::create(csv_path)?;
    let labels: Vec<String> = table.series.iter().map(|(l, _)| l.clone()).collect();
    writeln!(file, "bin_left,bin_right,{}", labels.join(","))?;
    for b_idx in 0..table.bin_edges.len() - 1 {
        let counts: Vec<String> = table
            .series
            .iter()
            .map(|(_, c)| c[b_idx].to_string())
            .collect();
        writeln!(
            file,
            "{},{},{}",
            format_float(table.bin_edges[b_idx]),
            format_float(table.bin_edges[b_idx + 1]),
            counts.join(",")
        )?;
    }
    Ok(())
}

/// Parse a histogram CSV twin back into a table.
pub fn read_histogram_csv(path: &Path) -> Result<HistogramTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let labels = headers[2..].to_vec();
    let mut bin_edges: Vec<f64> = Vec::new();
    let mut counts: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for record in reader.records() {
        let record = record?;
        let left: f64 = record[0].parse().map_err(|_| {
            Error::InvalidArgument(format!("bad bin edge {:?}", &record[0]))
        })?;
        let right: f64 = record[1].parse().map_err(|_| {
            Error::InvalidArgument(format!("bad bin edge {:?}", &record[1]))
        })?;
        if bin_edges.is_empty() {
            bin_edges.push(left);
        }
        bin_edges.push(right);
        for (s_idx, slot) in counts.iter_mut().enumerate() {
            let c: usize = record[2 + s_idx].parse().map_err(|_| {
                Error::InvalidArgument(format!("bad count {:?}", &record[2 + s_idx]))
            })?;
            slot.push(c);
        }
    }
    Ok(HistogramTable {
        bin_edges,
        series: labels.into_iter().zip(counts).collect(),
    })
}

#[derive(Serialize)]
struct Versioned<T: Serialize> {
    schema_version: &'static str,
    #[serde(flatten)]
    payload: T,
}

/// Serialize a report as JSON with a schema version and stable field order.
pub fn emit_results<T: Serialize>(payload: T, path: &Path) -> Result<()> {
    let wrapped = Versioned {
        schema_version: SCHEMA_VERSION,
        payload,
    };
    let json = serde_json::to_string_pretty(&wrapped)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    let has_header = !args.no_header;
    let response = if has_header {
        ResponseColumn::Name(args.response.clone())
    } else {
        args.response
            .parse::<usize>()
            .map(ResponseColumn::Index)
            .map_err(|_| {
                Error::InvalidArgument(
                    "without a header, --response must be a zero-based column index".into(),
                )
            })?
    };
    let data = load_csv(&args.data, has_header, &response)?;
    if args.standardize {
        data.standardized()
    } else {
        Ok(data)
    }
}

#[derive(Serialize)]
struct TestJson<T: Serialize> {
    test: &'static str,
    alpha: f64,
    statistic: f64,
    critical_value: f64,
    reject: bool,
    a: Vec<usize>,
    settings: crate::effective_noise::EstimateSettings,
    seed: u64,
    detail: T,
}

fn run(cli: CliArgs) -> Result<()> {
    if let Some(threads) = cli.threads {
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::Estimate {
            data,
            estimator,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let rng = RngSpec::new(estimator.seed);
            let estimate =
                estimate_lambda_hat(&dataset, estimator.alpha, estimator.l, estimator.m, &rng)?;
            std::fs::create_dir_all(&out)?;
            emit_results(&estimate, &out.join("estimate.json"))?;
        }
        Command::Calibrate {
            data,
            estimator,
            delta,
            phi,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let rng = RngSpec::new(estimator.seed);
            let report = calibrate(
                &dataset,
                estimator.alpha,
                delta,
                phi,
                estimator.l,
                estimator.m,
                &rng,
            )?;
            std::fs::create_dir_all(&out)?;
            emit_results(&report, &out.join("calibrate.json"))?;
        }
        Command::Test {
            data,
            estimator,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let rng = RngSpec::new(estimator.seed);
            let result = global_test(&dataset, estimator.alpha, estimator.l, estimator.m, &rng)?;
            std::fs::create_dir_all(&out)?;
            emit_results(
                TestJson {
                    test: "global",
                    alpha: result.alpha,
                    statistic: result.statistic,
                    critical_value: result.critical_value,
                    reject: result.reject,
                    a: Vec::new(),
                    settings: result.estimate.settings.clone(),
                    seed: estimator.seed,
                    detail: &result,
                },
                &out.join("test.json"),
            )?;
        }
        Command::TestPartial {
            data,
            estimator,
            set_a,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            for &j in &set_a {
                if j == 0 {
                    return Err(Error::InvalidArgument(
                        "--set-a uses one-based column indices".into(),
                    ));
                }
            }
            let a: Vec<usize> = set_a.iter().map(|&j| j - 1).collect();
            let rng = RngSpec::new(estimator.seed);
            let result = partial_test(
                &dataset,
                &a,
                estimator.alpha,
                estimator.l,
                estimator.m,
                &rng,
            )?;
            std::fs::create_dir_all(&out)?;
            emit_results(
                TestJson {
                    test: "partial",
                    alpha: result.alpha,
                    statistic: result.statistic,
                    critical_value: result.critical_value,
                    reject: result.reject,
                    a: set_a,
                    settings: result.estimate.settings.clone(),
                    seed: estimator.seed,
                    detail: &result,
                },
                &out.join("test.json"),
            )?;
        }
        Command::Simulate {
            config,
            out,
            no_tests,
            no_losses,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let scenario: ScenarioConfig = serde_json::from_str(&text)?;
            scenario.validate()?;
            std::fs::create_dir_all(&out)?;

            let mut summary = serde_json::Map::new();
            summary.insert(
                "config".to_string(),
                serde_json::to_value(&scenario)?,
            );

            if !no_losses {
                let report = run_calibration_experiment(&scenario)?;
                write_losses_csv(&report, &out.join("losses.csv"))?;

                let mean_lambda_bar = report
                    .replicates
                    .iter()
                    .map(|r| r.lambda_bar)
                    .sum::<f64>()
                    / report.replicates.len().max(1) as f64;
                let lambda_hats: Vec<f64> =
                    report.replicates.iter().map(|r| r.lambda_hat).collect();
                let table = HistogramTable::build(
                    &[("lambda_hat".to_string(), lambda_hats.as_slice())],
                    30,
                    mean_lambda_bar,
                )?;
                emit_histogram(
                    &table,
                    &out.join("lambda_hist.svg"),
                    &[("lambda_star".to_string(), report.lambda_star)],
                )?;

                let h_ours: Vec<f64> = report
                    .replicates
                    .iter()
                    .map(|r| r.ours.hamming as f64)
                    .collect();
                let h_oracle: Vec<f64> = report
                    .replicates
                    .iter()
                    .map(|r| r.oracle.hamming as f64)
                    .collect();
                let h_cv: Vec<f64> = report
                    .replicates
                    .iter()
                    .map(|r| r.cv.hamming as f64)
                    .collect();
                let max_h = h_ours
                    .iter()
                    .chain(&h_oracle)
                    .chain(&h_cv)
                    .fold(1.0f64, |a, &v| a.max(v + 1.0));
                let hamming_table = HistogramTable::build(
                    &[
                        ("ours".to_string(), h_ours.as_slice()),
                        ("oracle".to_string(), h_oracle.as_slice()),
                        ("cv".to_string(), h_cv.as_slice()),
                    ],
                    max_h as usize,
                    max_h,
                )?;
                emit_histogram(&hamming_table, &out.join("hamming_hist.svg"), &[])?;

                summary.insert(
                    "lambda_star".to_string(),
                    serde_json::to_value(report.lambda_star)?,
                );
                summary.insert("losses_ours".to_string(), serde_json::to_value(&report.ours)?);
                summary.insert(
                    "losses_oracle".to_string(),
                    serde_json::to_value(&report.oracle)?,
                );
                summary.insert("losses_cv".to_string(), serde_json::to_value(&report.cv)?);
                summary.insert(
                    "losses_failed".to_string(),
                    serde_json::to_value(report.failed.len())?,
                );
            }

            if !no_tests {
                let report =
                    run_test_experiment(&scenario, &[0.0, 0.1, 0.2], &[0.01, 0.05, 0.1])?;
                write_tests_csv(&report, &out.join("tests.csv"))?;
                summary.insert(
                    "power".to_string(),
                    serde_json::to_value(&report.entries)?,
                );
                summary.insert(
                    "tests_failed".to_string(),
                    serde_json::to_value(report.failed.len())?,
                );
            }

            emit_results(serde_json::Value::Object(summary), &out.join("summary.json"))?;
        }
    }
    Ok(())
}

fn write_losses_csv(
    report: &crate::simulation::CalibrationExperimentReport,
    path: &Path,
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(
        file,
        "replicate,method,lambda,hamming,ell1,ell_infty,prediction"
    )?;
    for row in &report.replicates {
        for (method, lambda, loss) in [
            ("ours", row.lambda_hat, &row.ours),
            ("oracle", row.lambda_star, &row.oracle),
            ("cv", row.lambda_cv, &row.cv),
        ] {
            writeln!(
                file,
                "{},{},{},{},{},{},{}",
                row.replicate,
                method,
                format_float(lambda),
                loss.hamming,
                format_float(loss.ell1),
                format_float(loss.ell_infty),
                format_float(loss.prediction)
            )?;
        }
    }
    Ok(())
}

fn write_tests_csv(report: &crate::simulation::TestPowerReport, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(
        file,
        "n,p,alpha,snr,n_runs,feasible_rejections,feasible_rate,oracle_rejections,oracle_rate"
    )?;
    for entry in &report.entries {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{}",
            report.config.n,
            report.config.p,
            format_float(entry.alpha),
            format_float(entry.snr),
            entry.n_runs,
            entry.feasible_rejections,
            format_float(entry.feasible_rate),
            entry.oracle_rejections,
            format_float(entry.oracle_rate)
        )?;
    }
    Ok(())
}

/// Route argv to the module operations. Exit 0 on success, 1 on usage
/// errors, 2 on numeric/runtime failures.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match CliArgs::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders --help/--version through the error path too
            let is_help = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if is_help { 0 } else { 1 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                // bad invocation or unusable input: usage error
                Error::InvalidArgument(_)
                | Error::ResponseColumnNotFound(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::EmptyFile { .. }
                | Error::UnparseableCell { .. }
                | Error::DimensionMismatch { .. } => 1,
                // numeric failure
                _ => 2,
            }
        }
    }
}
