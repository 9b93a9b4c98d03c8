use std::collections::BTreeMap;
use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, MetricsReport};
use crate::trainer::{FoldOutcome, TrainMode};

pub const CSV_HEADER: [&str; 11] = [
    "mode", "fold", "epoch", "split", "loss_l1", "loss_cls", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "auroc",
];

pub const AGGREGATE_HEADER: [&str; 10] = [
    "mode", "n_folds", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "auroc_mean", "auroc_std", "test_auroc_folds",
    "eval_auroc_mean",
];

/// One line of a metrics log. Unmeasured values are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub mode: String,
    pub fold: usize,
    pub epoch: usize,
    pub split: String,
    pub loss_l1: f64,
    pub loss_cls: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub auroc: f64,
}

fn fmt6(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn parse_f(s: &str) -> Option<f64> {
    if s == "nan" {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

impl CsvRow {
    fn fields(&self) -> [String; 11] {
        [
            self.mode.clone(),
            self.fold.to_string(),
            self.epoch.to_string(),
            self.split.clone(),
            fmt6(self.loss_l1),
            fmt6(self.loss_cls),
            fmt6(self.psnr_mean),
            fmt6(self.psnr_std),
            fmt6(self.ssim_mean),
            fmt6(self.ssim_std),
            fmt6(self.auroc),
        ]
    }

    fn parse(rec: &csv::StringRecord) -> Option<Self> {
        if rec.len() != CSV_HEADER.len() {
            return None;
        }
        Some(CsvRow {
            mode: rec[0].to_string(),
            fold: rec[1].parse().ok()?,
            epoch: rec[2].parse().ok()?,
            split: rec[3].to_string(),
            loss_l1: parse_f(&rec[4])?,
            loss_cls: parse_f(&rec[5])?,
            psnr_mean: parse_f(&rec[6])?,
            psnr_std: parse_f(&rec[7])?,
            ssim_mean: parse_f(&rec[8])?,
            ssim_std: parse_f(&rec[9])?,
            auroc: parse_f(&rec[10])?,
        })
    }
}

/// Row for an evaluation report; losses are NaN.
pub fn report_row(mode: TrainMode, split: &str, r: &MetricsReport) -> CsvRow {
    CsvRow {
        mode: mode.to_string(),
        fold: r.fold_id,
        epoch: r.epoch,
        split: split.to_string(),
        loss_l1: f64::NAN,
        loss_cls: f64::NAN,
        psnr_mean: r.psnr_mean,
        psnr_std: r.psnr_std,
        ssim_mean: r.ssim_mean,
        ssim_std: r.ssim_std,
        auroc: r.auroc_or_nan(),
    }
}

/// Per-epoch `train` and `val` rows, then `test` and `eval` rows for the
/// selected epoch.
pub fn rows_for_fold(mode: TrainMode, out: &FoldOutcome) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for log in &out.epochs {
        let nan_if_absent = |v: f64, n: usize| if n == 0 { f64::NAN } else { v };
        rows.push(CsvRow {
            mode: mode.to_string(),
            fold: out.fold,
            epoch: log.epoch,
            split: "train".into(),
            loss_l1: nan_if_absent(log.train.l1, log.train.n_paired),
            loss_cls: nan_if_absent(log.train.cls, log.train.n_labeled),
            psnr_mean: f64::NAN,
            psnr_std: f64::NAN,
            ssim_mean: f64::NAN,
            ssim_std: f64::NAN,
            auroc: f64::NAN,
        });
        if let Some(v) = &log.val {
            rows.push(report_row(mode, "val", v));
        }
    }
    rows.push(report_row(mode, "test", &out.test));
    if let Some(e) = &out.eval {
        rows.push(report_row(mode, "eval", e));
    }
    rows
}

fn encode(header: &[&str], rows: impl Iterator<Item = Vec<String>>, with_header: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::contract(format!("csv encoding: {e}"));
    if with_header {
        w.write_record(header).map_err(to_err)?;
    }
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::contract(format!("csv encoding: {e}")))
}

/// Writes `rows`; with `append` the rows go after an existing file's content.
pub fn write_csv(path: &Path, rows: &[CsvRow], append: bool) -> Result<()> {
    let existing = if append && path.exists() { read_file(path)? } else { Vec::new() };
    if !existing.is_empty() {
        read_csv(path)?;
    }
    let mut bytes = existing.clone();
    bytes.extend(encode(&CSV_HEADER, rows.iter().map(|r| r.fields().to_vec()), existing.is_empty())?);
    write_atomic(path, &bytes)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let bytes = read_file(path)?;
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            CsvRow::parse(&rec).ok_or_else(|| bad(format!("row {} does not fit the schema", i + 2)))
        })
        .collect()
}

/// Cross-fold summary for one mode.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub mode: String,
    pub n_folds: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub test_aurocs: Vec<f64>,
    pub eval_auroc_mean: f64,
}

fn stats(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    aggregate(&finite).unwrap_or((f64::NAN, f64::NAN))
}

/// Best-epoch test AuROC and eval row, keyed by fold.
type FoldRows<'a> = (BTreeMap<usize, f64>, BTreeMap<usize, &'a CsvRow>);

/// Per mode: mean and population std across folds of the eval-split PSNR
/// and SSIM means and of the best-epoch test AuROC.
pub fn aggregate_rows(rows: &[CsvRow]) -> Result<Vec<AggregateRow>> {
    let mut by_mode: BTreeMap<&str, FoldRows<'_>> = BTreeMap::new();
    for r in rows {
        let entry = by_mode.entry(r.mode.as_str()).or_default();
        match r.split.as_str() {
            "test" => {
                entry.0.insert(r.fold, r.auroc);
            }
            "eval" => {
                entry.1.insert(r.fold, r);
            }
            _ => {}
        }
    }
    if by_mode.values().all(|(t, _)| t.is_empty()) {
        return Err(Error::Degenerate("no test rows to aggregate".into()));
    }
    Ok(by_mode
        .into_iter()
        .filter(|(_, (t, _))| !t.is_empty())
        .map(|(mode, (tests, evals))| {
            let test_aurocs: Vec<f64> = tests.values().copied().collect();
            let psnr: Vec<f64> = evals.values().map(|r| r.psnr_mean).collect();
            let ssim: Vec<f64> = evals.values().map(|r| r.ssim_mean).collect();
            let eval_auroc: Vec<f64> = evals.values().map(|r| r.auroc).collect();
            let (psnr_mean, psnr_std) = stats(&psnr);
            let (ssim_mean, ssim_std) = stats(&ssim);
            let (auroc_mean, auroc_std) = stats(&test_aurocs);
            AggregateRow {
                mode: mode.to_string(),
                n_folds: tests.len(),
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                auroc_mean,
                auroc_std,
                eval_auroc_mean: stats(&eval_auroc).0,
                test_aurocs,
            }
        })
        .collect())
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let lines = rows.iter().map(|r| {
        vec![
            r.mode.clone(),
            r.n_folds.to_string(),
            fmt6(r.psnr_mean),
            fmt6(r.psnr_std),
            fmt6(r.ssim_mean),
            fmt6(r.ssim_std),
            fmt6(r.auroc_mean),
            fmt6(r.auroc_std),
            r.test_aurocs.iter().map(|v| fmt6(*v)).collect::<Vec<_>>().join(";"),
            fmt6(r.eval_auroc_mean),
        ]
    });
    write_atomic(path, &encode(&AGGREGATE_HEADER, lines, true)?)
}
