//! Dense feature matrices with interval targets, CSV ingestion, feature
//! standardization and fold assignment.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalTarget;

pub const LOWER_COLUMN: &str = "y_low";
pub const UPPER_COLUMN: &str = "y_high";

/// Records which original rows were read through a [`Dataset`]'s accessors.
#[derive(Debug)]
pub struct AccessProbe {
    touched: Vec<AtomicBool>,
}

impl AccessProbe {
    pub fn new(n_rows: usize) -> Self {
        Self {
            touched: (0..n_rows).map(|_| AtomicBool::new(false)).collect(),
        }
    }

    #[inline]
    fn mark(&self, row: usize) {
        if let Some(flag) = self.touched.get(row) {
            flag.store(true, Ordering::Relaxed);
        }
    }

    pub fn touched_rows(&self) -> Vec<usize> {
        self.touched
            .iter()
            .enumerate()
            .filter(|(_, f)| f.load(Ordering::Relaxed))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Immutable feature matrix (row-major) plus one interval target per row.
///
/// Every row remembers its index in the dataset it was originally loaded as
/// (`origin`), so that subsets can be traced back through an [`AccessProbe`].
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    feature_names: Vec<String>,
    features: Vec<f64>,
    n_cols: usize,
    targets: Vec<IntervalTarget>,
    origin: Arc<[usize]>,
    probe: Option<Arc<AccessProbe>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        feature_names: Vec<String>,
        features: Vec<f64>,
        targets: Vec<IntervalTarget>,
    ) -> Result<Self> {
        let n_cols = feature_names.len();
        if n_cols == 0 {
            return Err(Error::Empty("feature columns"));
        }
        if targets.is_empty() {
            return Err(Error::Empty("rows"));
        }
        if features.len() != targets.len() * n_cols {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: targets.len() * n_cols,
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite feature value at row {}, column {}",
                pos / n_cols,
                pos % n_cols
            )));
        }
        let origin: Arc<[usize]> = (0..targets.len()).collect();
        Ok(Self {
            name: name.into(),
            feature_names,
            features,
            n_cols,
            targets,
            origin,
            probe: None,
        })
    }

    /// Build from row vectors; convenient in tests.
    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f64>], targets: Vec<IntervalTarget>) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(Error::LengthMismatch {
                left: bad.len(),
                right: n_cols,
            });
        }
        if rows.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: targets.len(),
            });
        }
        let names = (1..=n_cols).map(|j| format!("x{j}")).collect();
        Self::new(name, names, rows.concat(), targets)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    #[inline]
    fn touch(&self, i: usize) {
        if let Some(probe) = &self.probe {
            probe.mark(self.origin[i]);
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.touch(i);
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn feature(&self, i: usize, j: usize) -> f64 {
        self.touch(i);
        self.features[i * self.n_cols + j]
    }

    #[inline]
    pub fn target(&self, i: usize) -> &IntervalTarget {
        self.touch(i);
        &self.targets[i]
    }

    pub fn targets(&self) -> &[IntervalTarget] {
        for i in 0..self.n_rows() {
            self.touch(i);
        }
        &self.targets
    }

    /// Original row index of row `i`.
    pub fn origin(&self, i: usize) -> usize {
        self.origin[i]
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Attach an access probe; subsequent subsets inherit it.
    pub fn with_probe(mut self, probe: Arc<AccessProbe>) -> Self {
        self.probe = Some(probe);
        self
    }

    pub fn without_probe(mut self) -> Self {
        self.probe = None;
        self
    }

    /// Rows `rows` (in the given order) as a new dataset.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            features.extend_from_slice(&self.features[r * self.n_cols..(r + 1) * self.n_cols]);
        }
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            features,
            n_cols: self.n_cols,
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            origin: rows.iter().map(|&r| self.origin[r]).collect(),
            probe: self.probe.clone(),
        }
    }

    /// Same rows and targets with replaced features (e.g. standardized).
    fn with_features(&self, features: Vec<f64>) -> Dataset {
        Dataset {
            features,
            ..self.clone()
        }
    }

    /// Same rows and features with replaced targets.
    pub fn with_targets(&self, targets: Vec<IntervalTarget>) -> Result<Dataset> {
        if targets.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                left: targets.len(),
                right: self.n_rows(),
            });
        }
        Ok(Dataset {
            targets,
            ..self.clone()
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());
        let file = std::fs::File::open(path)?;
        Self::read_csv(name, file)
    }

    /// Parse the CSV format: a header of feature names followed by
    /// `y_low,y_high`, one instance per line.
    pub fn read_csv(name: impl Into<String>, reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Csv { line: 1, message: e.to_string() })?
            .clone();
        let width = header.len();
        if width < 3 {
            return Err(Error::Csv {
                line: 1,
                message: format!("expected at least one feature column plus `{LOWER_COLUMN},{UPPER_COLUMN}`"),
            });
        }
        if &header[width - 2] != LOWER_COLUMN || &header[width - 1] != UPPER_COLUMN {
            return Err(Error::Csv {
                line: 1,
                message: format!("last two columns must be `{LOWER_COLUMN},{UPPER_COLUMN}`"),
            });
        }
        let n_cols = width - 2;
        let feature_names: Vec<String> = header.iter().take(n_cols).map(str::to_string).collect();

        let mut features = Vec::new();
        let mut targets = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let line = idx + 2;
            let record = record.map_err(|e| Error::Csv { line, message: e.to_string() })?;
            if record.len() != width {
                return Err(Error::Csv {
                    line,
                    message: format!("expected {width} cells, found {}", record.len()),
                });
            }
            for (j, cell) in record.iter().take(n_cols).enumerate() {
                let v = parse_feature(cell).ok_or_else(|| Error::Csv {
                    line,
                    message: format!("column `{}`: cannot parse `{cell}` as a finite number", feature_names[j]),
                })?;
                features.push(v);
            }
            let lower = parse_bound(&record[n_cols], f64::NEG_INFINITY).ok_or_else(|| Error::Csv {
                line,
                message: format!("cannot parse lower bound `{}`", &record[n_cols]),
            })?;
            let upper = parse_bound(&record[n_cols + 1], f64::INFINITY).ok_or_else(|| Error::Csv {
                line,
                message: format!("cannot parse upper bound `{}`", &record[n_cols + 1]),
            })?;
            let target = IntervalTarget::new(lower, upper).map_err(|e| Error::Csv { line, message: e.to_string() })?;
            targets.push(target);
        }
        if targets.is_empty() {
            return Err(Error::Csv {
                line: 2,
                message: "no data rows".to_string(),
            });
        }
        Self::new(name, feature_names, features, targets)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Write in the format read by [`Dataset::read_csv`]. Floats use the
    /// shortest round-tripping representation.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut line = self.feature_names.join(",");
        line.push(',');
        line.push_str(LOWER_COLUMN);
        line.push(',');
        line.push_str(UPPER_COLUMN);
        writeln!(w, "{line}")?;
        for i in 0..self.n_rows() {
            line.clear();
            for v in &self.features[i * self.n_cols..(i + 1) * self.n_cols] {
                line.push_str(&format_float(*v));
                line.push(',');
            }
            let t = &self.targets[i];
            line.push_str(&format_float(t.lower()));
            line.push(',');
            line.push_str(&format_float(t.upper()));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

fn format_float(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_feature(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bound(cell: &str, empty: f64) -> Option<f64> {
    if cell.is_empty() {
        return Some(empty);
    }
    match cell.to_ascii_lowercase().as_str() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => parse_feature(cell),
    }
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let n = data.n_rows() as f64;
        let m = data.n_cols();
        let mut means = vec![0.0; m];
        for i in 0..data.n_rows() {
            for (acc, v) in means.iter_mut().zip(data.row(i)) {
                *acc += v;
            }
        }
        for v in &mut means {
            *v /= n;
        }
        let mut vars = vec![0.0; m];
        for i in 0..data.n_rows() {
            for ((acc, v), mu) in vars.iter_mut().zip(data.row(i)).zip(&means) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let stds = vars.into_iter().map(|v| (v / n).sqrt()).collect();
        Self { means, stds }
    }

    /// Zero-variance columns map to 0.
    #[inline]
    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        let sd = self.stds[j];
        if sd > 0.0 {
            (v - self.means[j]) / sd
        } else {
            0.0
        }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.transform_value(j, v)).collect()
    }

    pub fn transform_into(&self, row: &[f64], out: &mut [f64]) {
        for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
            *o = self.transform_value(j, v);
        }
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        let mut features = Vec::with_capacity(data.n_rows() * data.n_cols());
        for i in 0..data.n_rows() {
            features.extend(data.row(i).iter().enumerate().map(|(j, &v)| self.transform_value(j, v)));
        }
        data.with_features(features)
    }
}

/// Standardize `train` with its own statistics and `test` with the same
/// statistics.
pub fn normalize_train_test(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    if train.n_cols() != test.n_cols() {
        return Err(Error::LengthMismatch {
            left: train.n_cols(),
            right: test.n_cols(),
        });
    }
    let stats = Standardizer::fit(train);
    Ok((stats.transform(train), stats.transform(test), stats))
}

/// Assignment of each of `n` rows to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    /// `(train_rows, test_rows)` for every fold.
    pub fn splits(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        (0..self.k).map(|f| (self.train_rows(f), self.test_rows(f))).collect()
    }
}

/// Seeded shuffle of `0..n` dealt round-robin into `k` folds.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("fold count must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidParameter(format!("cannot split {n} rows into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}
