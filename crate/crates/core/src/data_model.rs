//! Core numeric containers, CSV ingestion, tuning grids, and the seeded
//! randomness contract shared by all modules.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed data: design matrix `X` (n rows, p columns) and response `Y`.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, column_names: Option<Vec<String>>) -> Result<Self> {
        let (n, p) = x.dim();
        if n < 1 || p < 1 {
            return Err(Error::InvalidArgument(format!(
                "dataset must have n >= 1 and p >= 1, got n = {n}, p = {p}"
            )));
        }
        if y.len() != n {
            return Err(Error::InvalidArgument(format!(
                "Y has length {}, expected {n}",
                y.len()
            )));
        }
        if let Some(names) = &column_names {
            if names.len() != p {
                return Err(Error::InvalidArgument(format!(
                    "{} column names for {p} columns",
                    names.len()
                )));
            }
        }
        for ((i, j), v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, column: j });
            }
        }
        for (i, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, column: p });
            }
        }
        Ok(Self { x, y, column_names })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Center each column of X (and Y) to mean 0 and scale X columns to unit
    /// sample second moment. Off by default everywhere; rescaling changes the
    /// units of every lambda quantity.
    pub fn standardized(&self) -> Result<Dataset> {
        let n = self.n() as f64;
        let mut x = self.x.clone();
        for mut col in x.columns_mut() {
            let mean = col.sum() / n;
            col.mapv_inplace(|v| v - mean);
            let second_moment = col.iter().map(|v| v * v).sum::<f64>() / n;
            if second_moment > 0.0 {
                let scale = second_moment.sqrt();
                col.mapv_inplace(|v| v / scale);
            }
        }
        let y_mean = self.y.sum() / n;
        let y = self.y.mapv(|v| v - y_mean);
        Dataset::new(x, y, self.column_names.clone())
    }
}

/// Which column of the CSV holds the response.
#[derive(Debug, Clone)]
pub enum ResponseColumn {
    Name(String),
    Index(usize),
}

/// Read a comma-separated file into a `Dataset`, removing the response column
/// from `X`. Without a header, columns are named `x1..xp` and the response
/// must be given by index.
pub fn load_csv(path: &Path, has_header: bool, response: &ResponseColumn) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)?;

    let header: Option<Vec<String>> = if has_header {
        Some(reader.headers()?.iter().map(|s| s.to_string()).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(|h| h.len());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::DimensionMismatch {
                row: i + 1,
                found: record.len(),
                expected,
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::UnparseableCell {
                row: i + 1,
                column: j + 1,
                name: header
                    .as_ref()
                    .map(|h| h[j].clone())
                    .unwrap_or_else(|| format!("x{}", j + 1)),
                value: cell.to_string(),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile {
            path: path.display().to_string(),
        });
    }

    let total_cols = width.unwrap();
    let names: Vec<String> = match &header {
        Some(h) => h.clone(),
        None => (1..=total_cols).map(|j| format!("x{j}")).collect(),
    };
    let response_idx = match response {
        ResponseColumn::Index(idx) => {
            if *idx >= total_cols {
                return Err(Error::ResponseColumnNotFound(idx.to_string()));
            }
            *idx
        }
        ResponseColumn::Name(name) => names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::ResponseColumnNotFound(name.clone()))?,
    };
    if total_cols < 2 {
        return Err(Error::InvalidArgument(
            "file must have at least one predictor column besides the response".into(),
        ));
    }

    let n = rows.len();
    let p = total_cols - 1;
    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let mut k = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == response_idx {
                y[i] = v;
            } else {
                x[[i, k]] = v;
                k += 1;
            }
        }
    }
    let predictor_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != response_idx)
        .map(|(_, s)| s.clone())
        .collect();
    Dataset::new(x, y, Some(predictor_names))
}

/// Format a float with 17 significant digits, enough to round-trip f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a `Dataset` back to CSV with the response in a column named `y`.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let names: Vec<String> = match data.column_names() {
        Some(names) => names.to_vec(),
        None => (1..=data.p()).map(|j| format!("x{j}")).collect(),
    };
    writeln!(file, "{},y", names.join(","))?;
    for i in 0..data.n() {
        let mut cells: Vec<String> = (0..data.p())
            .map(|j| format_float(data.x()[[i, j]]))
            .collect();
        cells.push(format_float(data.y()[i]));
        writeln!(file, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Equidistant tuning grid `lambdas[m] = (m+1) * lambda_bar / M`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda_bar: f64,
    pub lambdas: Vec<f64>,
}

impl GridSpec {
    pub fn m(&self) -> usize {
        self.lambdas.len()
    }
}

pub fn make_grid(lambda_bar: f64, m: usize) -> Result<GridSpec> {
    if m == 0 {
        return Err(Error::InvalidArgument("grid size M must be >= 1".into()));
    }
    if !(lambda_bar >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda_bar must be nonnegative, got {lambda_bar}"
        )));
    }
    // k/m first so that the largest point is exactly lambda_bar
    let lambdas = (1..=m)
        .map(|k| lambda_bar * (k as f64 / m as f64))
        .collect();
    Ok(GridSpec { lambda_bar, lambdas })
}

/// Seeded randomness with counter-based substreams keyed by (purpose,
/// replicate). Identical key always reproduces identical draws regardless of
/// evaluation order or parallelism.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// A derived spec with an independent seed, for nested pipelines that
    /// take their own `RngSpec` (e.g. one estimator run per simulation
    /// replicate).
    pub fn derive(&self, label: &str, index: u64) -> RngSpec {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self
            .seed
            .to_le_bytes()
            .into_iter()
            .chain(label.as_bytes().iter().copied())
            .chain(index.to_le_bytes())
        {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
        RngSpec { seed: hash }
    }

    /// Independent stream for a (purpose, replicate) pair. The stream id is a
    /// stable FNV-1a hash of the key, so no draw order is shared between
    /// purposes or replicates.
    pub fn substream(&self, purpose: &str, replicate: u64) -> ChaCha12Rng {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in purpose
            .as_bytes()
            .iter()
            .copied()
            .chain(replicate.to_le_bytes())
        {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(hash);
        rng
    }
}

/// `count` i.i.d. N(0,1) draws from the identified substream.
pub fn draw_standard_normal(
    rng: &RngSpec,
    purpose: &str,
    replicate: u64,
    count: usize,
) -> Array1<f64> {
    let mut stream = rng.substream(purpose, replicate);
    Array1::from_iter((0..count).map(|_| StandardNormal.sample(&mut stream)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write as _;

    fn temp_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    #[test]
    fn load_csv_basic() {
        let file = temp_csv("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let data = load_csv(
            file.path(),
            true,
            &ResponseColumn::Name("y".to_string()),
        )
        .unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.p(), 2);
        assert_eq!(data.y(), &array![3.0, 6.0, 9.0]);
        assert_eq!(data.column_names().unwrap(), &["a", "b"]);
    }

    #[test]
    fn load_csv_bad_cell_names_position() {
        let file = temp_csv("a,b,y\n1,2,3\nabc,5,6\n");
        let err = load_csv(file.path(), true, &ResponseColumn::Name("y".into())).unwrap_err();
        match err {
            Error::UnparseableCell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_csv_headerless_names_columns() {
        let file = temp_csv("1,2,3\n4,5,6\n");
        let data = load_csv(file.path(), false, &ResponseColumn::Index(2)).unwrap();
        assert_eq!(data.column_names().unwrap(), &["x1", "x2"]);
        assert_eq!(data.y(), &array![3.0, 6.0]);
    }

    #[test]
    fn load_csv_empty_file_errors() {
        let file = temp_csv("");
        let err = load_csv(file.path(), false, &ResponseColumn::Index(0)).unwrap_err();
        assert!(matches!(err, Error::EmptyFile { .. }));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let data = Dataset::new(
            array![[0.1, 2.0 / 3.0], [1e-17, 12345.6789], [-3.25, 0.0]],
            array![1.0 / 7.0, -2.5, 9.9e300],
            None,
        )
        .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_csv(&data, file.path()).unwrap();
        let reread = load_csv(file.path(), true, &ResponseColumn::Name("y".into())).unwrap();
        assert_eq!(reread.x(), data.x());
        assert_eq!(reread.y(), data.y());
    }

    #[test]
    fn dataset_rejects_nan() {
        let err = Dataset::new(array![[1.0, f64::NAN]], array![1.0], None).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, column: 1 }));
    }

    #[test]
    fn make_grid_examples() {
        let grid = make_grid(4.0, 4).unwrap();
        assert_eq!(grid.lambdas, vec![1.0, 2.0, 3.0, 4.0]);

        let grid = make_grid(0.0, 100).unwrap();
        assert!(grid.lambdas.iter().all(|&l| l == 0.0));

        assert!(make_grid(4.0, 0).is_err());
    }

    #[test]
    fn grid_equidistance() {
        let grid = make_grid(7.3, 100).unwrap();
        let step = grid.lambda_bar / 100.0;
        for w in grid.lambdas.windows(2) {
            assert!(((w[1] - w[0]) - step).abs() <= 1e-12 * step.max(1.0));
        }
        assert_eq!(*grid.lambdas.last().unwrap(), grid.lambda_bar);
    }

    #[test]
    fn rng_determinism_and_stream_independence() {
        let spec = RngSpec::new(42);
        let a = draw_standard_normal(&spec, "multiplier", 0, 16);
        let b = draw_standard_normal(&spec, "multiplier", 0, 16);
        assert_eq!(a, b);

        let c = draw_standard_normal(&spec, "multiplier", 1, 16);
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x != y));

        let d = draw_standard_normal(&spec, "design", 0, 16);
        assert!(a.iter().zip(d.iter()).any(|(x, y)| x != y));
    }

    #[test]
    fn standard_normal_mean_is_centered() {
        let spec = RngSpec::new(7);
        let draws = draw_standard_normal(&spec, "mc-check", 0, 1_000_000);
        let mean = draws.sum() / draws.len() as f64;
        assert!(mean.abs() < 0.005, "mean = {mean}");
    }

    #[test]
    fn standardize_centers_and_scales() {
        let data = Dataset::new(
            array![[1.0, 10.0], [2.0, 20.0], [3.0, 60.0]],
            array![1.0, 2.0, 3.0],
            None,
        )
        .unwrap();
        let std = data.standardized().unwrap();
        for col in std.x().columns() {
            let mean = col.sum() / 3.0;
            let m2 = col.iter().map(|v| v * v).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((m2 - 1.0).abs() < 1e-12);
        }
        assert!(std.y().sum().abs() < 1e-12);
    }
}
