//! Batch evaluation: every prediction directory against one ground truth.
//!
//! Files are paired by stem (`img01.png` with `img01.png`); a rename table
//! can map prediction stems to ground-truth stems when a method used its
//! own naming. Three files are written to the output directory:
//!
//! * `per_image.csv`: one row per method and image, one column per metric.
//! * `summary.csv`: the unweighted mean per method, headed `F1 ↑`,
//!   `PHD-3 ↓`, and so on.
//! * `report.json`: the effective configuration, every per-image entry
//!   (including failures) and the summary.
//!
//! Work is spread over a pool of `workers` threads but results are gathered
//! in a fixed order, so the output bytes do not depend on the pool size. The
//! worker count is left out of the report for the same reason.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use phd_eval::{evaluate_pair, load_mask, BinarizationPolicy, MetricDescriptor, MetricEntry, MetricOutcome, Polarity};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} is not a readable directory")]
    NotADirectory(PathBuf),
    #[error("{0} contains no PNG masks")]
    EmptyDirectory(PathBuf),
    #[error("prediction method {0:?} is given twice")]
    DuplicateMethod(String),
    #[error("{dir} holds more than one mask with stem {stem:?}")]
    DuplicateStem { dir: PathBuf, stem: String },
    #[error("files do not pair up: {}", .0.join("; "))]
    ManifestMismatch(Vec<String>),
    #[error("no metrics requested")]
    NoMetrics,
    #[error("cannot start {0} workers: {1}")]
    Pool(usize, String),
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("writing {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

#[derive(Debug, Clone)]
pub struct EvalJob {
    pub gt_dir: PathBuf,
    /// `(method name, directory)` in the order the columns should appear.
    pub preds: Vec<(String, PathBuf)>,
    pub metrics: Vec<MetricDescriptor>,
    pub policy: BinarizationPolicy,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Per method, prediction stem to ground-truth stem.
    pub renames: BTreeMap<String, BTreeMap<String, String>>,
}

/// Adds the `-SK` variant of every pixel metric not already present.
pub fn with_skeleton_variants(metrics: &[MetricDescriptor]) -> Vec<MetricDescriptor> {
    let mut out = metrics.to_vec();
    for d in metrics {
        if let Some(sk) = d.skeletonized() {
            if !out.iter().any(|m| m.name == sk.name) {
                out.push(sk);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalConfig {
    pub tool: String,
    pub gt_dir: String,
    pub predictions: Vec<MethodConfig>,
    pub metrics: Vec<String>,
    pub polarity: &'static str,
    pub threshold: u8,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub renames: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodConfig {
    pub name: String,
    pub dir: String,
}

pub fn polarity_name(p: Polarity) -> &'static str {
    match p {
        Polarity::DarkIsForeground => "dark",
        Polarity::LightIsForeground => "light",
    }
}

impl EvalConfig {
    fn of(job: &EvalJob) -> Self {
        Self {
            tool: concat!("phd ", env!("CARGO_PKG_VERSION")).to_string(),
            gt_dir: job.gt_dir.display().to_string(),
            predictions: job
                .preds
                .iter()
                .map(|(name, dir)| MethodConfig {
                    name: name.clone(),
                    dir: dir.display().to_string(),
                })
                .collect(),
            metrics: job.metrics.iter().map(|m| m.name.clone()).collect(),
            polarity: polarity_name(job.policy.polarity),
            threshold: job.policy.threshold,
            renames: job.renames.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageResult {
    pub image: String,
    pub gt: String,
    pub prediction: String,
    pub metrics: Vec<MetricEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryCell {
    pub metric: String,
    pub orientation: phd_eval::Orientation,
    pub mean: Option<f64>,
    pub images: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodResult {
    pub name: String,
    pub images: Vec<ImageResult>,
    pub summary: Vec<SummaryCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub method: String,
    pub image: String,
    pub metric: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub methods: Vec<MethodResult>,
    pub failures: Vec<Failure>,
}

/// Stem to file name for every `.png` in `dir`, sorted by stem.
fn list_masks(dir: &Path) -> Result<BTreeMap<String, String>, EvalError> {
    let entries = fs::read_dir(dir).map_err(|_| EvalError::NotADirectory(dir.to_path_buf()))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|_| EvalError::NotADirectory(dir.to_path_buf()))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png || !path.is_file() {
            continue;
        }
        let (Some(stem), Some(name)) = (path.file_stem(), path.file_name()) else {
            continue;
        };
        let stem = stem.to_string_lossy().into_owned();
        if out.insert(stem.clone(), name.to_string_lossy().into_owned()).is_some() {
            return Err(EvalError::DuplicateStem {
                dir: dir.to_path_buf(),
                stem,
            });
        }
    }
    if out.is_empty() {
        return Err(EvalError::EmptyDirectory(dir.to_path_buf()));
    }
    Ok(out)
}

struct PairJob {
    method: usize,
    image: String,
    gt: PathBuf,
    pred: PathBuf,
}

fn pair_files(job: &EvalJob) -> Result<Vec<PairJob>, EvalError> {
    let gt_files = list_masks(&job.gt_dir)?;
    let mut problems = Vec::new();
    let mut pairs = Vec::new();
    for (m, (name, dir)) in job.preds.iter().enumerate() {
        if job.preds[..m].iter().any(|(n, _)| n == name) {
            return Err(EvalError::DuplicateMethod(name.clone()));
        }
        let renames = job.renames.get(name);
        let mut matched: BTreeMap<&str, PairJob> = BTreeMap::new();
        for (stem, file) in list_masks(dir)? {
            let gt_stem = renames.and_then(|r| r.get(&stem)).unwrap_or(&stem);
            match gt_files.get_key_value(gt_stem.as_str()) {
                Some((gt_stem, gt_file)) => {
                    matched.insert(
                        gt_stem,
                        PairJob {
                            method: m,
                            image: gt_stem.clone(),
                            gt: job.gt_dir.join(gt_file),
                            pred: dir.join(&file),
                        },
                    );
                }
                None => problems.push(format!("{name}: {file} has no ground truth")),
            }
        }
        for (stem, file) in &gt_files {
            if !matched.contains_key(stem.as_str()) {
                problems.push(format!("{name}: no prediction for {file}"));
            }
        }
        pairs.extend(matched.into_values());
    }
    if !problems.is_empty() {
        return Err(EvalError::ManifestMismatch(problems));
    }
    Ok(pairs)
}

fn score(job: &EvalJob, pair: &PairJob) -> Vec<MetricEntry> {
    let failed_all = |msg: String| {
        job.metrics
            .iter()
            .map(|d| MetricEntry {
                name: d.name.clone(),
                orientation: d.orientation,
                outcome: MetricOutcome::Failed(msg.clone()),
            })
            .collect()
    };
    let gt = match load_mask(&pair.gt, job.policy) {
        Ok(m) => m,
        Err(e) => return failed_all(e.to_string()),
    };
    let pred = match load_mask(&pair.pred, job.policy) {
        Ok(m) => m,
        Err(e) => return failed_all(e.to_string()),
    };
    match evaluate_pair(&pred, &gt, &job.metrics) {
        Ok(report) => report.entries,
        Err(e) => failed_all(e.to_string()),
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Scores every pair and returns the report without writing anything.
pub fn run_evaluation(job: &EvalJob) -> Result<EvalReport, EvalError> {
    if job.metrics.is_empty() {
        return Err(EvalError::NoMetrics);
    }
    let pairs = pair_files(job)?;
    let workers = job.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvalError::Pool(workers, e.to_string()))?;
    let scored: Vec<Vec<MetricEntry>> = pool.install(|| pairs.par_iter().map(|p| score(job, p)).collect());

    let mut methods: Vec<MethodResult> = job
        .preds
        .iter()
        .map(|(name, _)| MethodResult {
            name: name.clone(),
            images: Vec::new(),
            summary: Vec::new(),
        })
        .collect();
    let mut failures = Vec::new();
    for (pair, metrics) in pairs.iter().zip(scored) {
        let method = &mut methods[pair.method];
        for e in &metrics {
            if let MetricOutcome::Failed(msg) = &e.outcome {
                failures.push(Failure {
                    method: method.name.clone(),
                    image: pair.image.clone(),
                    metric: e.name.clone(),
                    message: msg.clone(),
                });
            }
        }
        method.images.push(ImageResult {
            image: pair.image.clone(),
            gt: file_name(&pair.gt),
            prediction: file_name(&pair.pred),
            metrics,
        });
    }
    for method in &mut methods {
        method.summary = job
            .metrics
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let values: Vec<f64> = method.images.iter().filter_map(|img| img.metrics[k].outcome.value()).collect();
                SummaryCell {
                    metric: d.name.clone(),
                    orientation: d.orientation,
                    mean: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
                    images: values.len(),
                    failed: method.images.len() - values.len(),
                }
            })
            .collect();
    }
    Ok(EvalReport {
        config: EvalConfig::of(job),
        methods,
        failures,
    })
}

pub struct EvalOutputs {
    pub per_image: PathBuf,
    pub summary: PathBuf,
    pub report: PathBuf,
}

/// Writes the three report files into `out_dir`, creating it if needed.
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<EvalOutputs, EvalError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Write { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let names = &report.config.metrics;

    let per_image = out_dir.join("per_image.csv");
    let mut rows = vec![["method", "image"].iter().map(|s| s.to_string()).chain(names.iter().cloned()).collect()];
    for m in &report.methods {
        for img in &m.images {
            let mut row = vec![m.name.clone(), img.image.clone()];
            row.extend(img.metrics.iter().map(|e| e.outcome.value().map(|v| v.to_string()).unwrap_or_default()));
            rows.push(row);
        }
    }
    write_csv(&per_image, &rows)?;

    let summary = out_dir.join("summary.csv");
    let mut header = vec!["Method".to_string()];
    if let Some(first) = report.methods.first() {
        header.extend(first.summary.iter().map(|c| format!("{} {}", c.metric, c.orientation.arrow())));
    }
    let mut rows = vec![header];
    for m in &report.methods {
        let mut row = vec![m.name.clone()];
        row.extend(m.summary.iter().map(|c| c.mean.map(|v| format!("{v:.4}")).unwrap_or_default()));
        rows.push(row);
    }
    write_csv(&summary, &rows)?;

    let json = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    fs::write(&json, text).map_err(io_err(&json))?;

    Ok(EvalOutputs {
        per_image,
        summary,
        report: json,
    })
}

pub(crate) fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<(), EvalError> {
    let csv_err = |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| EvalError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs the job and writes its files. The report is returned so callers can
/// inspect failures; any failure means exit status 2.
pub fn cmd_evaluate(job: &EvalJob) -> Result<EvalReport, EvalError> {
    let report = run_evaluation(job)?;
    write_report(&report, &job.out_dir)?;
    Ok(report)
}
