//! The consistency command: votes plus a triplet manifest in, agreement
//! report out.
//!
//! Scores come from the manifest when a group carries them under the
//! metric's name; otherwise both candidates are loaded and scored against
//! the ground truth. Only valid groups are scored. Manifest paths are
//! resolved against the manifest's own directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use phd_eval::consistency::{
    consistency_with, parse_manifest, read_vote_log, sweep_tolerance, ConsistencyError, ConsistencyReport,
    GroupProfiles, ScorePair, TripletGroup, VoteLedger, VoteRecord,
};
use phd_eval::{evaluate_pair, load_mask, thin, BinarizationPolicy, MaskError, MetricDescriptor, MetricOutcome, PhdProfile, Tolerance};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::evaluate::{polarity_name, write_csv, EvalError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ConsistencyError },
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
    #[error("vote by {subject_id:?} names group {group_id:?}, which is not in the manifest")]
    UnknownGroup { group_id: String, subject_id: String },
    #[error("group {group_id:?}: {source}")]
    Mask { group_id: String, source: MaskError },
    #[error("group {group_id:?}: {metric} failed: {message}")]
    Metric {
        group_id: String,
        metric: String,
        message: String,
    },
    #[error(transparent)]
    Output(#[from] EvalError),
}

#[derive(Debug, Clone)]
pub struct ConsistencyJob {
    pub manifest: PathBuf,
    pub votes: PathBuf,
    pub metrics: Vec<MetricDescriptor>,
    pub sweep: Option<Vec<Tolerance>>,
    pub tie_epsilon: f64,
    pub validity_threshold: u32,
    pub policy: BinarizationPolicy,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyConfig {
    pub tool: String,
    pub manifest: String,
    pub votes: String,
    pub metrics: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<f64>>,
    pub tie_epsilon: f64,
    pub validity_threshold: u32,
    pub polarity: &'static str,
    pub threshold: u8,
}

/// The report plus the configuration that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyOutput {
    pub config: ConsistencyConfig,
    #[serde(flatten)]
    pub report: ConsistencyReport,
}

/// Reads a manifest file and makes its paths absolute relative to it.
pub fn load_manifest(path: &Path) -> Result<Vec<TripletGroup>, AnalysisError> {
    let text = fs::read_to_string(path).map_err(|source| AnalysisError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut groups = parse_manifest(&text).map_err(|source| AnalysisError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    for g in &mut groups {
        for p in [&mut g.gt, &mut g.pred_a, &mut g.pred_b] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(groups)
}

/// Reads the vote log and rejects votes for groups outside the manifest.
pub fn load_votes(path: &Path, groups: &[TripletGroup]) -> Result<Vec<VoteRecord>, AnalysisError> {
    let file = File::open(path).map_err(|source| AnalysisError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let votes = read_vote_log(BufReader::new(file)).map_err(|source| AnalysisError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(v) = votes.iter().find(|v| !groups.iter().any(|g| g.group_id == v.group_id)) {
        return Err(AnalysisError::UnknownGroup {
            group_id: v.group_id.clone(),
            subject_id: v.subject_id.clone(),
        });
    }
    Ok(votes)
}

#[derive(Default)]
struct GroupScores {
    pairs: BTreeMap<String, ScorePair>,
    profiles: Option<GroupProfiles>,
}

fn score_group(group: &TripletGroup, job: &ConsistencyJob) -> Result<GroupScores, AnalysisError> {
    let mut out = GroupScores::default();
    let missing: Vec<MetricDescriptor> = job
        .metrics
        .iter()
        .filter(|d| match group.scores.get(&d.name) {
            Some(pair) => {
                out.pairs.insert(d.name.clone(), *pair);
                false
            }
            None => true,
        })
        .cloned()
        .collect();
    if missing.is_empty() && job.sweep.is_none() {
        return Ok(out);
    }

    let load = |p: &Path| {
        load_mask(p, job.policy).map_err(|source| AnalysisError::Mask {
            group_id: group.group_id.clone(),
            source,
        })
    };
    let (gt, a, b) = (load(&group.gt)?, load(&group.pred_a)?, load(&group.pred_b)?);
    let shape_error = |e: phd_eval::MetricError| AnalysisError::Metric {
        group_id: group.group_id.clone(),
        metric: "shape check".into(),
        message: e.to_string(),
    };
    if !missing.is_empty() {
        let ra = evaluate_pair(&a, &gt, &missing).map_err(shape_error)?;
        let rb = evaluate_pair(&b, &gt, &missing).map_err(shape_error)?;
        for ((d, ea), eb) in missing.iter().zip(&ra.entries).zip(&rb.entries) {
            let value = |o: &MetricOutcome| match o {
                MetricOutcome::Ok(s) => Ok(s.value),
                MetricOutcome::Failed(message) => Err(AnalysisError::Metric {
                    group_id: group.group_id.clone(),
                    metric: d.name.clone(),
                    message: message.clone(),
                }),
            };
            out.pairs.insert(
                d.name.clone(),
                ScorePair {
                    a: value(&ea.outcome)?,
                    b: value(&eb.outcome)?,
                },
            );
        }
    }
    if job.sweep.is_some() {
        let (sk_gt, sk_a, sk_b) = (thin(&gt), thin(&a), thin(&b));
        let profile = |p| {
            PhdProfile::new(p, &sk_gt).map_err(|e| AnalysisError::Metric {
                group_id: group.group_id.clone(),
                metric: "PHD sweep".into(),
                message: e.to_string(),
            })
        };
        out.profiles = Some(GroupProfiles {
            a: profile(&sk_a)?,
            b: profile(&sk_b)?,
        });
    }
    Ok(out)
}

fn config(job: &ConsistencyJob) -> ConsistencyConfig {
    ConsistencyConfig {
        tool: concat!("phd ", env!("CARGO_PKG_VERSION")).to_string(),
        manifest: job.manifest.display().to_string(),
        votes: job.votes.display().to_string(),
        metrics: job.metrics.iter().map(|d| d.name.clone()).collect(),
        sweep: job.sweep.as_ref().map(|ts| ts.iter().map(Tolerance::get).collect()),
        tie_epsilon: job.tie_epsilon,
        validity_threshold: job.validity_threshold,
        polarity: polarity_name(job.policy.polarity),
        threshold: job.policy.threshold,
    }
}

/// Builds the report from already-parsed inputs.
pub fn analyse(
    groups: &[TripletGroup],
    votes: &[VoteRecord],
    job: &ConsistencyJob,
) -> Result<ConsistencyReport, AnalysisError> {
    let ledger = VoteLedger::replay(votes)?;
    let verdicts = ledger.verdicts(groups, job.validity_threshold);
    let valid: Vec<&TripletGroup> = groups
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.valid)
        .map(|(g, _)| g)
        .collect();
    let scored: Vec<GroupScores> = valid
        .par_iter()
        .map(|g| score_group(g, job))
        .collect::<Result<_, _>>()?;
    let by_id: BTreeMap<&str, GroupScores> = valid.iter().map(|g| g.group_id.as_str()).zip(scored).collect();

    let metrics = job
        .metrics
        .iter()
        .map(|d| {
            consistency_with(&verdicts, d, job.tie_epsilon, |id| {
                by_id.get(id).and_then(|s| s.pairs.get(&d.name)).copied()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sweep = match &job.sweep {
        Some(tolerances) => {
            let profiles: BTreeMap<String, GroupProfiles> = by_id
                .iter()
                .filter_map(|(id, s)| s.profiles.clone().map(|p| (id.to_string(), p)))
                .collect();
            Some(sweep_tolerance(&profiles, &verdicts, tolerances, job.tie_epsilon)?)
        }
        None => None,
    };
    Ok(ConsistencyReport::new(
        job.validity_threshold,
        job.tie_epsilon,
        verdicts,
        metrics,
        sweep,
    ))
}

/// Reads the manifest and vote log named by the job and analyses them.
pub fn run_consistency(job: &ConsistencyJob) -> Result<ConsistencyOutput, AnalysisError> {
    let groups = load_manifest(&job.manifest)?;
    let votes = load_votes(&job.votes, &groups)?;
    let report = analyse(&groups, &votes, job)?;
    Ok(ConsistencyOutput {
        config: config(job),
        report,
    })
}

fn decimal(v: Option<f64>) -> String {
    v.map(|c| format!("{c:.6}")).unwrap_or_default()
}

/// Writes `consistency.json`, `consistency.csv`, `groups.csv` and, when a
/// sweep was run, `sweep.csv`.
pub fn write_consistency(out: &ConsistencyOutput, dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    let write_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AnalysisError::Output(EvalError::Write { path, source })
    };
    fs::create_dir_all(dir).map_err(write_err(dir))?;
    let mut written = Vec::new();

    let json = dir.join("consistency.json");
    let mut text = serde_json::to_string_pretty(out).expect("report serializes");
    text.push('\n');
    fs::write(&json, text).map_err(write_err(&json))?;
    written.push(json);

    let header = |cols: &[&str]| cols.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let metrics = dir.join("consistency.csv");
    let mut rows = vec![header(&["metric", "matched", "valid", "ratio", "consistency", "percent"])];
    for e in &out.report.metrics {
        rows.push(vec![
            e.metric.clone(),
            e.matched.to_string(),
            e.valid.to_string(),
            e.ratio.clone(),
            decimal(e.consistency),
            e.percent.clone().unwrap_or_default(),
        ]);
    }
    write_csv(&metrics, &rows)?;
    written.push(metrics);

    let groups = dir.join("groups.csv");
    let mut rows = vec![header(&["group_id", "A", "B", "difficult", "valid", "majority"])];
    for v in &out.report.verdicts {
        rows.push(vec![
            v.group_id.clone(),
            v.tally.a.to_string(),
            v.tally.b.to_string(),
            v.tally.difficult.to_string(),
            v.valid.to_string(),
            v.majority.map(|c| c.to_string()).unwrap_or_default(),
        ]);
    }
    write_csv(&groups, &rows)?;
    written.push(groups);

    if let Some(sweep) = &out.report.sweep {
        let path = dir.join("sweep.csv");
        let mut rows = vec![header(&["tolerance", "matched", "valid", "ratio", "consistency", "percent"])];
        for p in sweep {
            rows.push(vec![
                p.tolerance.to_string(),
                p.entry.matched.to_string(),
                p.entry.valid.to_string(),
                p.entry.ratio.clone(),
                decimal(p.entry.consistency),
                p.entry.percent.clone().unwrap_or_default(),
            ]);
        }
        write_csv(&path, &rows)?;
        written.push(path);
    }
    Ok(written)
}
