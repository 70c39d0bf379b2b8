use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zoo::CompressionRatio;

pub const REPORT_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 11] =
    ["dataset", "cr", "seed", "accuracy", "params", "train_s", "test_s", "acc_norm", "params_norm", "train_norm", "test_norm"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub dataset: String,
    pub cr: CompressionRatio,
    pub seed: u64,
    pub accuracy: f64,
    pub params: u64,
    /// Classifier training wall time.
    pub train_s: f64,
    /// Test-split evaluation wall time.
    pub test_s: f64,
    #[serde(default)]
    pub acc_norm: Option<f64>,
    #[serde(default)]
    pub params_norm: Option<f64>,
    #[serde(default)]
    pub train_norm: Option<f64>,
    #[serde(default)]
    pub test_norm: Option<f64>,
    /// Served test accuracy per device (not part of the CSV schema).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub device_accuracy: BTreeMap<u32, f64>,
    /// Fingerprint of the trained classifier weights (not part of the CSV schema).
    #[serde(default)]
    pub classifier_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub dataset: String,
    pub cr: CompressionRatio,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub rows: Vec<ExperimentRow>,
    #[serde(default)]
    pub failures: Vec<CellFailure>,
}

impl Default for ExperimentReport {
    fn default() -> Self {
        Self { version: REPORT_VERSION, rows: Vec::new(), failures: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    #[default]
    Csv,
    /// Pretty-printed JSON with the same fields plus failures.
    Json,
}

impl ReportFormat {
    /// Guess from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::Json,
            _ => Self::Csv,
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Parse(format!("unknown report format `{s}`"))),
        }
    }
}

/// Divide every metric by its cr=1 counterpart in the same (dataset, seed) group.
pub fn normalize_metrics(mut report: ExperimentReport) -> Result<ExperimentReport> {
    let baselines: HashMap<(String, u64), (f64, f64, f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.cr.is_baseline())
        .map(|r| ((r.dataset.clone(), r.seed), (r.accuracy, r.params as f64, r.train_s, r.test_s)))
        .collect();
    for row in &mut report.rows {
        let &(acc, params, train, test) = baselines
            .get(&(row.dataset.clone(), row.seed))
            .ok_or_else(|| Error::MissingBaseline { dataset: row.dataset.clone(), seed: row.seed })?;
        if row.cr.is_baseline() {
            // Exactly one by definition, even for a zero-valued metric.
            row.acc_norm = Some(1.0);
            row.params_norm = Some(1.0);
            row.train_norm = Some(1.0);
            row.test_norm = Some(1.0);
        } else {
            row.acc_norm = Some(row.accuracy / acc);
            row.params_norm = Some(row.params as f64 / params);
            row.train_norm = Some(row.train_s / train);
            row.test_norm = Some(row.test_s / test);
        }
    }
    Ok(report)
}

fn fixed(v: f64, places: usize) -> String {
    format!("{v:.places$}")
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| fixed(v, 6)).unwrap_or_default()
}

fn round_to(v: f64, places: i32) -> f64 {
    fixed(v, places as usize).parse().expect("formatted float")
}

impl ExperimentRow {
    /// The row as the CSV carries it: rounded numbers, no extras.
    pub fn csv_view(&self) -> Self {
        let r = |v: Option<f64>| v.map(|v| round_to(v, 6));
        Self {
            dataset: self.dataset.clone(),
            cr: self.cr,
            seed: self.seed,
            accuracy: round_to(self.accuracy, 4),
            params: self.params,
            train_s: round_to(self.train_s, 3),
            test_s: round_to(self.test_s, 3),
            acc_norm: r(self.acc_norm),
            params_norm: r(self.params_norm),
            train_norm: r(self.train_norm),
            test_norm: r(self.test_norm),
            device_accuracy: BTreeMap::new(),
            classifier_hash: 0,
        }
    }
}

impl ExperimentReport {
    pub fn csv_view(&self) -> Self {
        Self { version: self.version, rows: self.rows.iter().map(ExperimentRow::csv_view).collect(), failures: Vec::new() }
    }
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report).map_err(|e| Error::Parse(e.to_string()))? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| Error::Parse(e.to_string());
            w.write_record(CSV_HEADER).map_err(io)?;
            for row in &report.rows {
                w.write_record([
                    row.dataset.clone(),
                    row.cr.to_string(),
                    row.seed.to_string(),
                    fixed(row.accuracy, 4),
                    row.params.to_string(),
                    fixed(row.train_s, 3),
                    fixed(row.test_s, 3),
                    opt(row.acc_norm),
                    opt(row.params_norm),
                    opt(row.train_norm),
                    opt(row.test_norm),
                ])
                .map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
        }
    }
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<ExperimentReport> {
    match format {
        ReportFormat::Json => serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string())),
        ReportFormat::Csv => {
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let header = reader.headers().map_err(|e| Error::Parse(e.to_string()))?;
            if header.iter().ne(CSV_HEADER) {
                return Err(Error::Parse(format!("unexpected csv header {header:?}")));
            }
            let mut rows = Vec::new();
            for (line, record) in reader.records().enumerate() {
                let record = record.map_err(|e| Error::Parse(e.to_string()))?;
                let field = |i: usize| record.get(i).unwrap_or_default();
                let bad = |i: usize| Error::Parse(format!("row {}: bad `{}` value `{}`", line + 1, CSV_HEADER[i], field(i)));
                let num = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i));
                let norm = |i: usize| match field(i) {
                    "" => Ok(None),
                    v => v.parse::<f64>().map(Some).map_err(|_| bad(i)),
                };
                rows.push(ExperimentRow {
                    dataset: field(0).to_string(),
                    cr: field(1).parse().map_err(|_| bad(1))?,
                    seed: field(2).parse().map_err(|_| bad(2))?,
                    accuracy: num(3)?,
                    params: field(4).parse().map_err(|_| bad(4))?,
                    train_s: num(5)?,
                    test_s: num(6)?,
                    acc_norm: norm(7)?,
                    params_norm: norm(8)?,
                    train_norm: norm(9)?,
                    test_norm: norm(10)?,
                    device_accuracy: BTreeMap::new(),
                    classifier_hash: 0,
                });
            }
            Ok(ExperimentReport { rows, ..Default::default() })
        }
    }
}

pub fn emit_report(report: &ExperimentReport, path: &Path, format: ReportFormat) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, render_report(report, format)?)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    parse_report(&fs::read_to_string(path)?, ReportFormat::from_path(path))
}

/// Aggregate of one (dataset, cr) column over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub cr: CompressionRatio,
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub median_params_norm: Option<f64>,
    pub median_train_norm: Option<f64>,
    pub median_test_norm: Option<f64>,
    pub median_train_s: f64,
    pub median_test_s: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[mid] } else { (values[mid - 1] + values[mid]) / 2.0 })
}

/// Mean accuracy and median timings per (dataset, cr), ordered by dataset then cr.
pub fn summarize(report: &ExperimentReport) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, CompressionRatio), Vec<&ExperimentRow>> = BTreeMap::new();
    for row in &report.rows {
        groups.entry((row.dataset.clone(), row.cr)).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|((dataset, cr), rows)| {
            let col = |f: fn(&ExperimentRow) -> Option<f64>| {
                let mut v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
                median(&mut v)
            };
            SummaryRow {
                dataset,
                cr,
                seeds: rows.len(),
                mean_accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64,
                median_params_norm: col(|r| r.params_norm),
                median_train_norm: col(|r| r.train_norm),
                median_test_norm: col(|r| r.test_norm),
                median_train_s: col(|r| Some(r.train_s)).unwrap_or_default(),
                median_test_s: col(|r| Some(r.test_s)).unwrap_or_default(),
            }
        })
        .collect()
}

/// Plain-text table of `summarize` for terminals.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<18} {:>6} {:>5} {:>9} {:>11} {:>10} {:>9}\n",
        "dataset", "cr", "seeds", "mean_acc", "params_norm", "train_norm", "test_norm"
    );
    let o = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    for r in rows {
        out.push_str(&format!(
            "{:<18} {:>6} {:>5} {:>9.4} {:>11} {:>10} {:>9}\n",
            r.dataset,
            r.cr.to_string(),
            r.seeds,
            r.mean_accuracy,
            o(r.median_params_norm),
            o(r.median_train_norm),
            o(r.median_test_norm)
        ));
    }
    out
}
