//! The cross-validated benchmark: every model is trained on four folds of
//! each dataset and scored on the fifth, then cells are summarized and
//! ranked per dataset.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_folds, AccessProbe, Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::loss::mean_squared_hinge_error;
use crate::model::Hyperparams;
use crate::models::{ModelKind, Profile};
use crate::seed::{derive_seed, hash_str};

pub const REPORT_SCHEMA: u32 = 1;
pub const BENCH_FOLDS: usize = 5;
pub const MIN_BENCH_ROWS: usize = 10;
/// Errors are floored at this before taking logs for display.
pub const LOG_FLOOR: f64 = 1e-12;

/// Outcome of one (dataset, model, fold) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub schema: u32,
    pub dataset: String,
    pub model: String,
    pub fold: usize,
    /// Mean squared hinge error on the held-out fold; absent if the cell
    /// failed.
    pub test_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_seconds: Option<f64>,
    pub selected_hyperparams: Hyperparams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FoldReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.test_error.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub models: Vec<ModelKind>,
    pub profile: Profile,
    pub seed: u64,
    /// Record wall-clock training time (makes reports non-reproducible).
    pub record_timing: bool,
    /// Attach access probes to every cell's training data.
    pub audit: bool,
}

impl BenchConfig {
    pub fn new(models: Vec<ModelKind>, profile: Profile, seed: u64) -> Self {
        Self {
            models,
            profile,
            seed,
            record_timing: false,
            audit: false,
        }
    }
}

/// Rows of the original dataset read while training one cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellAudit {
    pub dataset: String,
    pub model: String,
    pub fold: usize,
    pub train_rows_touched: usize,
    pub test_rows_touched: usize,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub reports: Vec<FoldReport>,
    pub audits: Vec<CellAudit>,
}

impl BenchRun {
    pub fn failures(&self) -> Vec<&FoldReport> {
        self.reports.iter().filter(|r| !r.is_ok()).collect()
    }
}

/// The fold split used for a dataset: fixed per dataset so that every
/// model sees the same partition.
pub fn dataset_folds(data: &Dataset, seed: u64) -> Result<FoldAssignment> {
    make_folds(data.n_rows(), BENCH_FOLDS, derive_seed(seed, &[hash_str(data.name())]))
}

fn cell_seed(seed: u64, dataset: &str, model: ModelKind, fold: usize) -> u64 {
    derive_seed(seed, &[hash_str(dataset), hash_str(model.name()), fold as u64])
}

pub fn run_benchmark(datasets: &[Dataset], config: &BenchConfig) -> Result<BenchRun> {
    let mut names = std::collections::BTreeSet::new();
    for d in datasets {
        if d.n_rows() < MIN_BENCH_ROWS {
            return Err(Error::InvalidParameter(format!(
                "dataset '{}' has {} rows; the benchmark needs at least {MIN_BENCH_ROWS}",
                d.name(),
                d.n_rows()
            )));
        }
        if !names.insert(d.name()) {
            return Err(Error::InvalidParameter(format!("duplicate dataset name '{}'", d.name())));
        }
    }
    let folds = datasets
        .iter()
        .map(|d| dataset_folds(d, config.seed))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for (d, data) in datasets.iter().enumerate() {
        for &model in &config.models {
            for fold in 0..BENCH_FOLDS {
                cells.push((d, data, model, fold));
            }
        }
    }
    let results: Vec<(FoldReport, Option<CellAudit>)> = cells
        .par_iter()
        .map(|&(d, data, model, fold)| run_cell(data, &folds[d], model, fold, config))
        .collect();
    let (reports, audits): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(BenchRun {
        reports,
        audits: audits.into_iter().flatten().collect(),
    })
}

fn run_cell(
    data: &Dataset,
    folds: &FoldAssignment,
    model: ModelKind,
    fold: usize,
    config: &BenchConfig,
) -> (FoldReport, Option<CellAudit>) {
    let train_rows = folds.train_rows(fold);
    let test_rows = folds.test_rows(fold);
    // probes record original row indices, which may differ from positions
    // in `data` when it is itself a subset
    let origin_span = (0..data.n_rows()).map(|i| data.origin(i) + 1).max().unwrap_or(0);
    let probe = config.audit.then(|| Arc::new(AccessProbe::new(origin_span)));
    let base = data.clone().without_probe();
    let mut train = base.subset(&train_rows);
    if let Some(p) = &probe {
        train = train.with_probe(p.clone());
    }
    let test = base.subset(&test_rows);
    let seed = cell_seed(config.seed, data.name(), model, fold);

    let start = Instant::now();
    let trained = catch_unwind(AssertUnwindSafe(|| model.train(&train, &config.profile, seed)));
    let elapsed = start.elapsed().as_secs_f64();
    let audit = probe.map(|p| {
        let touched = p.touched_rows();
        let test_origins: std::collections::HashSet<usize> = test_rows.iter().map(|&r| data.origin(r)).collect();
        let in_test = touched.iter().filter(|r| test_origins.contains(r)).count();
        CellAudit {
            dataset: data.name().to_string(),
            model: model.name().to_string(),
            fold,
            train_rows_touched: touched.len() - in_test,
            test_rows_touched: in_test,
        }
    });

    let mut report = FoldReport {
        schema: REPORT_SCHEMA,
        dataset: data.name().to_string(),
        model: model.name().to_string(),
        fold,
        test_error: None,
        train_seconds: config.record_timing.then_some(elapsed),
        selected_hyperparams: Hyperparams::new(),
        error: None,
    };
    match trained {
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            report.error = Some(format!("panic: {msg}"));
        }
        Ok(Err(e)) => report.error = Some(e.to_string()),
        Ok(Ok(t)) => {
            report.selected_hyperparams = t.hyperparams;
            let preds = t.model.predict_dataset(&test);
            match mean_squared_hinge_error(&preds, test.targets()) {
                Ok(e) if e.is_finite() => report.test_error = Some(e),
                Ok(e) => report.error = Some(format!("non-finite test error {e}")),
                Err(e) => report.error = Some(e.to_string()),
            }
        }
    }
    (report, audit)
}

pub fn write_reports_jsonl(reports: &[FoldReport], mut w: impl Write) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_reports_jsonl(r: impl BufRead) -> Result<Vec<FoldReport>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let report: FoldReport = serde_json::from_str(&line).map_err(|e| Error::Csv {
            line: i + 1,
            message: format!("invalid report: {e}"),
        })?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::Csv {
                line: i + 1,
                message: format!("unsupported report schema {} (expected {REPORT_SCHEMA})", report.schema),
            });
        }
        out.push(report);
    }
    Ok(out)
}

/// Mean and spread of one (dataset, model) pair with its two ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub model: String,
    /// NaN when any fold failed.
    pub mean: f64,
    /// Sample standard deviation; NaN when any fold failed or with fewer
    /// than two folds.
    pub std: f64,
    pub n_folds: usize,
    pub perf_rank: usize,
    pub cons_rank: usize,
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// 1-based ranks ascending by `score`; NaN ranks last; ties go to the
/// lexicographically smaller name.
fn rank_by(rows: &[&SummaryRow], score: impl Fn(&SummaryRow) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (score(rows[a]), score(rows[b]));
        sa.is_nan()
            .cmp(&sb.is_nan())
            .then(if sa.is_nan() { std::cmp::Ordering::Equal } else { sa.total_cmp(&sb) })
            .then(rows[a].model.cmp(&rows[b].model))
    });
    let mut ranks = vec![0; rows.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Per (dataset, model) summaries, datasets in first-appearance order and
/// models sorted by name within each dataset.
pub fn aggregate_and_rank(reports: &[FoldReport]) -> Vec<SummaryRow> {
    let mut dataset_order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(&str, &str), Vec<&FoldReport>> = BTreeMap::new();
    for r in reports {
        if !dataset_order.contains(&r.dataset.as_str()) {
            dataset_order.push(&r.dataset);
        }
        groups.entry((&r.dataset, &r.model)).or_default().push(r);
    }
    let mut out = Vec::new();
    for dataset in dataset_order {
        let mut rows: Vec<SummaryRow> = groups
            .range((dataset, "")..)
            .take_while(|((d, _), _)| *d == dataset)
            .map(|((_, model), cell)| {
                let errors: Vec<f64> = cell.iter().filter_map(|r| r.test_error).collect();
                let (mean, std) = if errors.len() == cell.len() && !errors.is_empty() {
                    mean_and_sample_std(&errors)
                } else {
                    (f64::NAN, f64::NAN)
                };
                SummaryRow {
                    dataset: dataset.to_string(),
                    model: model.to_string(),
                    mean,
                    std,
                    n_folds: cell.len(),
                    perf_rank: 0,
                    cons_rank: 0,
                }
            })
            .collect();
        let refs: Vec<&SummaryRow> = rows.iter().collect();
        let perf = rank_by(&refs, |r| r.mean);
        let cons = rank_by(&refs, |r| r.std);
        for (i, row) in rows.iter_mut().enumerate() {
            row.perf_rank = perf[i];
            row.cons_rank = cons[i];
        }
        out.extend(rows);
    }
    out
}

pub fn write_summary_csv(rows: &[SummaryRow], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["dataset", "model", "mean", "std", "perf_rank", "cons_rank"])
        .map_err(csv_error)?;
    for r in rows {
        csv.write_record([
            r.dataset.clone(),
            r.model.clone(),
            r.mean.to_string(),
            r.std.to_string(),
            r.perf_rank.to_string(),
            r.cons_rank.to_string(),
        ])
        .map_err(csv_error)?;
    }
    csv.flush()?;
    Ok(())
}

/// How many datasets put each model at each rank, for both axes.
pub fn write_rank_counts_csv(rows: &[SummaryRow], w: impl Write) -> Result<()> {
    let n_ranks = rows.iter().map(|r| r.perf_rank.max(r.cons_rank)).max().unwrap_or(0);
    let mut counts: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for r in rows {
        for (axis, rank) in [("performance", r.perf_rank), ("consistency", r.cons_rank)] {
            counts.entry((&r.model, axis)).or_insert_with(|| vec![0; n_ranks])[rank - 1] += 1;
        }
    }
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["model".to_string(), "axis".to_string()];
    header.extend((1..=n_ranks).map(|k| format!("rank_{k}")));
    csv.write_record(&header).map_err(csv_error)?;
    for ((model, axis), c) in &counts {
        let mut record = vec![model.to_string(), axis.to_string()];
        record.extend(c.iter().map(|v| v.to_string()));
        csv.write_record(&record).map_err(csv_error)?;
    }
    csv.flush()?;
    Ok(())
}

/// Tidy mean/std per cell for plotting. With `log_scale` the statistics are
/// taken over `ln(max(error, LOG_FLOOR))` of each fold.
pub fn write_plot_data_csv(reports: &[FoldReport], log_scale: bool, w: impl Write) -> Result<()> {
    let transformed: Vec<FoldReport> = reports
        .iter()
        .map(|r| FoldReport {
            test_error: r.test_error.map(|e| if log_scale { e.max(LOG_FLOOR).ln() } else { e }),
            ..r.clone()
        })
        .collect();
    let scale = if log_scale { "log" } else { "raw" };
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["dataset", "model", "scale", "mean", "std", "lower", "upper"])
        .map_err(csv_error)?;
    for r in aggregate_and_rank(&transformed) {
        csv.write_record([
            r.dataset.clone(),
            r.model.clone(),
            scale.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            (r.mean - r.std).to_string(),
            (r.mean + r.std).to_string(),
        ])
        .map_err(csv_error)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Csv {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(dataset: &str, model: &str, fold: usize, err: f64) -> FoldReport {
        FoldReport {
            schema: REPORT_SCHEMA,
            dataset: dataset.into(),
            model: model.into(),
            fold,
            test_error: Some(err),
            train_seconds: None,
            selected_hyperparams: Hyperparams::new(),
            error: None,
        }
    }

    #[test]
    fn sample_std_convention() {
        let (m, s) = mean_and_sample_std(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        assert!((s - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_model_name() {
        let mut reports = Vec::new();
        for model in ["b", "a", "c"] {
            for f in 0..5 {
                reports.push(report("d", model, f, 1.0));
            }
        }
        let rows = aggregate_and_rank(&reports);
        let ranks: Vec<(&str, usize)> = rows.iter().map(|r| (r.model.as_str(), r.perf_rank)).collect();
        assert_eq!(ranks, vec![("a", 1), ("b", 2), ("c", 3)]);
    }

    #[test]
    fn failed_cells_rank_last() {
        let mut reports = Vec::new();
        for f in 0..5 {
            reports.push(report("d", "a", f, 5.0));
            reports.push(report("d", "b", f, 1.0 + f as f64));
        }
        reports[0].test_error = None;
        reports[0].error = Some("boom".into());
        let rows = aggregate_and_rank(&reports);
        assert!(rows[0].mean.is_nan());
        assert_eq!((rows[0].perf_rank, rows[1].perf_rank), (2, 1));
    }

    #[test]
    fn jsonl_roundtrip_omits_timing() {
        let reports = vec![report("d", "m", 0, 0.25)];
        let mut buf = Vec::new();
        write_reports_jsonl(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains("train_seconds"));
        assert_eq!(read_reports_jsonl(buf.as_slice()).unwrap(), reports);
        assert!(read_reports_jsonl("{\"schema\":9}".as_bytes()).is_err());
    }
}
