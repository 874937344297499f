//! Agreement between metrics and human preference votes.
//!
//! Each triplet group shows a ground truth and two candidate segmentations;
//! every subject picks candidate A, candidate B, or "difficult to choose".
//! A group is valid when one choice collects at least `validity_threshold`
//! votes (11 of 20 by default, i.e. more than ten) and no other choice ties
//! it. A metric matches a valid group when the candidate it prefers is the
//! human majority; a "difficult" majority matches only a metric tie.
//!
//! Votes live in an append-only JSON-lines log. Verdicts are never stored:
//! they are rebuilt by replaying the log through a [`VoteLedger`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricDescriptor, Orientation, PhdProfile, Tolerance};

pub const DEFAULT_VALIDITY_THRESHOLD: u32 = 11;

#[derive(Debug, Error, PartialEq)]
pub enum ConsistencyError {
    #[error("subject {subject_id:?} already voted on group {group_id:?}")]
    DuplicateSubjectVote { group_id: String, subject_id: String },
    #[error("vote for group {found:?} passed to the tally of group {expected:?}")]
    ForeignVote { expected: String, found: String },
    #[error("non-finite score ({0}, {1})")]
    NonFiniteScore(f64, f64),
    #[error("tie epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error("no {metric} scores for group {group_id:?}")]
    MissingScores { group_id: String, metric: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("group {0:?} uses the same file twice")]
    RepeatedPath(String),
    #[error("group {0:?} appears twice in the manifest")]
    DuplicateGroup(String),
    #[error("reading vote log: {0}")]
    Io(String),
}

/// A subject's answer, in canonical candidate terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Choice {
    #[serde(rename = "A")]
    PredA,
    #[serde(rename = "B")]
    PredB,
    #[serde(rename = "difficult")]
    DifficultToChoose,
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Choice::PredA => "A",
            Choice::PredB => "B",
            Choice::DifficultToChoose => "difficult",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub group_id: String,
    pub subject_id: String,
    pub choice: Choice,
    pub ts: DateTime<Utc>,
}

/// Metric values of both candidates against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub a: f64,
    pub b: f64,
}

/// One manifest entry: a ground truth and the two candidates shown with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletGroup {
    pub group_id: String,
    pub gt: PathBuf,
    pub pred_a: PathBuf,
    pub pred_b: PathBuf,
    /// Precomputed scores keyed by metric name (`F1`, `PHD-3`, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, ScorePair>,
}

impl TripletGroup {
    pub fn validate(&self) -> Result<(), ConsistencyError> {
        if self.gt == self.pred_a || self.gt == self.pred_b || self.pred_a == self.pred_b {
            return Err(ConsistencyError::RepeatedPath(self.group_id.clone()));
        }
        Ok(())
    }
}

/// Parses a manifest: a JSON array of `{group_id, gt, pred_a, pred_b}`.
/// Relative paths are left as written.
pub fn parse_manifest(json: &str) -> Result<Vec<TripletGroup>, ConsistencyError> {
    let groups: Vec<TripletGroup> = serde_json::from_str(json).map_err(|e| ConsistencyError::Schema {
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    for g in &groups {
        g.validate()?;
        if !seen.insert(g.group_id.as_str()) {
            return Err(ConsistencyError::DuplicateGroup(g.group_id.clone()));
        }
    }
    Ok(groups)
}

/// Reads a JSON-lines vote log. Blank lines are skipped; any malformed line
/// is reported with its 1-based number. Duplicate votes are not checked
/// here, see [`VoteLedger`].
pub fn read_vote_log(reader: impl BufRead) -> Result<Vec<VoteRecord>, ConsistencyError> {
    let mut votes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ConsistencyError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let vote: VoteRecord = serde_json::from_str(&line).map_err(|e| ConsistencyError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        votes.push(vote);
    }
    Ok(votes)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    #[serde(rename = "A")]
    pub a: u32,
    #[serde(rename = "B")]
    pub b: u32,
    pub difficult: u32,
}

impl Tally {
    pub fn add(&mut self, choice: Choice) {
        match choice {
            Choice::PredA => self.a += 1,
            Choice::PredB => self.b += 1,
            Choice::DifficultToChoose => self.difficult += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.a + self.b + self.difficult
    }

    /// Validity and majority under `threshold`.
    pub fn verdict(&self, group_id: &str, threshold: u32) -> GroupVerdict {
        let counts = [
            (Choice::PredA, self.a),
            (Choice::PredB, self.b),
            (Choice::DifficultToChoose, self.difficult),
        ];
        let top = counts.iter().map(|c| c.1).max().unwrap_or(0);
        let leaders: Vec<Choice> = counts.iter().filter(|c| c.1 == top).map(|c| c.0).collect();
        let majority = (top >= threshold && leaders.len() == 1).then(|| leaders[0]);
        GroupVerdict {
            group_id: group_id.to_string(),
            tally: *self,
            valid: majority.is_some(),
            majority,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupVerdict {
    pub group_id: String,
    pub tally: Tally,
    pub valid: bool,
    pub majority: Option<Choice>,
}

/// Tallies the votes of a single group.
pub fn tally_group(
    group_id: &str,
    votes: &[VoteRecord],
    validity_threshold: u32,
) -> Result<GroupVerdict, ConsistencyError> {
    let mut subjects = HashSet::new();
    let mut tally = Tally::default();
    for v in votes {
        if v.group_id != group_id {
            return Err(ConsistencyError::ForeignVote {
                expected: group_id.to_string(),
                found: v.group_id.clone(),
            });
        }
        if !subjects.insert(v.subject_id.as_str()) {
            return Err(ConsistencyError::DuplicateSubjectVote {
                group_id: group_id.to_string(),
                subject_id: v.subject_id.clone(),
            });
        }
        tally.add(v.choice);
    }
    Ok(tally.verdict(group_id, validity_threshold))
}

/// Incrementally maintained tallies with one-vote-per-subject enforcement.
#[derive(Debug, Default, Clone)]
pub struct VoteLedger {
    tallies: BTreeMap<String, Tally>,
    seen: HashSet<(String, String)>,
}

impl VoteLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn replay<'a>(votes: impl IntoIterator<Item = &'a VoteRecord>) -> Result<Self, ConsistencyError> {
        let mut ledger = Self::new();
        for v in votes {
            ledger.record(v)?;
        }
        Ok(ledger)
    }

    pub fn has_voted(&self, group_id: &str, subject_id: &str) -> bool {
        self.seen.contains(&(group_id.to_string(), subject_id.to_string()))
    }

    pub fn record(&mut self, vote: &VoteRecord) -> Result<(), ConsistencyError> {
        if !self.seen.insert((vote.group_id.clone(), vote.subject_id.clone())) {
            return Err(ConsistencyError::DuplicateSubjectVote {
                group_id: vote.group_id.clone(),
                subject_id: vote.subject_id.clone(),
            });
        }
        self.tallies.entry(vote.group_id.clone()).or_default().add(vote.choice);
        Ok(())
    }

    pub fn tally(&self, group_id: &str) -> Tally {
        self.tallies.get(group_id).copied().unwrap_or_default()
    }

    /// Verdicts for `groups` in manifest order; groups without votes come
    /// out invalid with an empty tally.
    pub fn verdicts(&self, groups: &[TripletGroup], validity_threshold: u32) -> Vec<GroupVerdict> {
        groups
            .iter()
            .map(|g| self.tally(&g.group_id).verdict(&g.group_id, validity_threshold))
            .collect()
    }

    /// Groups that received votes, sorted by id.
    pub fn group_ids(&self) -> impl Iterator<Item = &str> {
        self.tallies.keys().map(String::as_str)
    }
}

/// Which candidate a metric ranks higher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    PredA,
    PredB,
    Tie,
}

pub fn metric_preference(
    score_a: f64,
    score_b: f64,
    orientation: Orientation,
    tie_epsilon: f64,
) -> Result<Preference, ConsistencyError> {
    if !score_a.is_finite() || !score_b.is_finite() {
        return Err(ConsistencyError::NonFiniteScore(score_a, score_b));
    }
    if !(tie_epsilon.is_finite() && tie_epsilon >= 0.0) {
        return Err(ConsistencyError::InvalidEpsilon(tie_epsilon));
    }
    if (score_a - score_b).abs() <= tie_epsilon {
        return Ok(Preference::Tie);
    }
    let a_better = match orientation {
        Orientation::HigherIsBetter => score_a > score_b,
        Orientation::LowerIsBetter => score_a < score_b,
    };
    Ok(if a_better { Preference::PredA } else { Preference::PredB })
}

fn matches(majority: Choice, pref: Preference) -> bool {
    matches!(
        (majority, pref),
        (Choice::PredA, Preference::PredA)
            | (Choice::PredB, Preference::PredB)
            | (Choice::DifficultToChoose, Preference::Tie)
    )
}

/// One metric's agreement with the human majorities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    pub metric: String,
    pub matched: u32,
    pub valid: u32,
    /// Unreduced `matched/valid`, e.g. `"39/113"`.
    pub ratio: String,
    /// `matched / valid`, absent when there are no valid groups.
    pub consistency: Option<f64>,
    /// Two-decimal percentage, e.g. `"34.51%"`.
    pub percent: Option<String>,
    /// Valid groups the metric agreed with.
    pub matched_groups: Vec<String>,
}

impl ConsistencyEntry {
    pub fn new(metric: &str, matched_groups: Vec<String>, valid: u32) -> Self {
        let matched = matched_groups.len() as u32;
        let consistency = (valid > 0).then(|| matched as f64 / valid as f64);
        Self {
            metric: metric.to_string(),
            matched,
            valid,
            ratio: format!("{matched}/{valid}"),
            consistency,
            percent: consistency.map(|_| format_percent(matched, valid)),
            matched_groups,
        }
    }
}

/// `100 * num / den` with two decimals and a percent sign.
pub fn format_percent(num: u32, den: u32) -> String {
    format!("{:.2}%", 100.0 * num as f64 / den as f64)
}

/// Consistency of `desc` over the valid verdicts, reading each group's
/// candidate scores through `scores`.
pub fn consistency_with(
    verdicts: &[GroupVerdict],
    desc: &MetricDescriptor,
    tie_epsilon: f64,
    mut scores: impl FnMut(&str) -> Option<ScorePair>,
) -> Result<ConsistencyEntry, ConsistencyError> {
    let mut matched = Vec::new();
    let mut valid = 0;
    for v in verdicts {
        let Some(majority) = v.majority else { continue };
        valid += 1;
        let pair = scores(&v.group_id).ok_or_else(|| ConsistencyError::MissingScores {
            group_id: v.group_id.clone(),
            metric: desc.name.clone(),
        })?;
        let pref = metric_preference(pair.a, pair.b, desc.orientation, tie_epsilon)?;
        if matches(majority, pref) {
            matched.push(v.group_id.clone());
        }
    }
    Ok(ConsistencyEntry::new(&desc.name, matched, valid))
}

/// Consistency of `desc` using the scores stored on each group.
pub fn consistency(
    groups: &[TripletGroup],
    verdicts: &[GroupVerdict],
    desc: &MetricDescriptor,
    tie_epsilon: f64,
) -> Result<ConsistencyEntry, ConsistencyError> {
    let by_id: BTreeMap<&str, &TripletGroup> = groups.iter().map(|g| (g.group_id.as_str(), g)).collect();
    consistency_with(verdicts, desc, tie_epsilon, |id| {
        by_id.get(id).and_then(|g| g.scores.get(&desc.name)).copied()
    })
}

/// Distance profiles of both candidates of a group against its ground
/// truth. `None` stands for two empty skeletons (PHD 0 at every tolerance).
#[derive(Debug, Clone)]
pub struct GroupProfiles {
    pub a: Option<PhdProfile>,
    pub b: Option<PhdProfile>,
}

impl GroupProfiles {
    pub fn at(&self, t: Tolerance) -> ScorePair {
        let phd = |p: &Option<PhdProfile>| p.as_ref().map_or(0.0, |p| p.phd(t));
        ScorePair {
            a: phd(&self.a),
            b: phd(&self.b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tolerance: f64,
    #[serde(flatten)]
    pub entry: ConsistencyEntry,
}

/// PHD consistency at each tolerance, reusing per-group distance profiles.
pub fn sweep_tolerance(
    profiles: &BTreeMap<String, GroupProfiles>,
    verdicts: &[GroupVerdict],
    tolerances: &[Tolerance],
    tie_epsilon: f64,
) -> Result<Vec<SweepPoint>, ConsistencyError> {
    tolerances
        .iter()
        .map(|&t| {
            let desc = MetricDescriptor::phd(t);
            let entry = consistency_with(verdicts, &desc, tie_epsilon, |id| profiles.get(id).map(|p| p.at(t)))?;
            Ok(SweepPoint {
                tolerance: t.get(),
                entry,
            })
        })
        .collect()
}

/// Tolerances `start, start+step, ...` up to and including `end` (within
/// a 1e-9 slack for floating-point steps).
pub fn tolerance_range(start: f64, end: f64, step: f64) -> Result<Vec<Tolerance>, String> {
    if !(step.is_finite() && step > 0.0) {
        return Err(format!("sweep step must be positive, got {step}"));
    }
    if !(start.is_finite() && end.is_finite()) || end < start {
        return Err(format!("invalid sweep range {start}..{end}"));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| Tolerance::new(start + i as f64 * step).map_err(|e| e.to_string()))
        .collect()
}

/// Parses `A..B:S`.
pub fn parse_sweep(spec: &str) -> Result<Vec<Tolerance>, String> {
    let err = || format!("sweep must look like START..END:STEP, got {spec:?}");
    let (range, step) = spec.split_once(':').ok_or_else(err)?;
    let (a, b) = range.split_once("..").ok_or_else(err)?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err());
    tolerance_range(num(a)?, num(b)?, num(step)?)
}

/// Everything `consistency` reports for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub validity_threshold: u32,
    pub tie_epsilon: f64,
    pub groups_total: usize,
    pub valid_groups: u32,
    pub invalid_groups: Vec<String>,
    pub verdicts: Vec<GroupVerdict>,
    pub metrics: Vec<ConsistencyEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
}

impl ConsistencyReport {
    pub fn new(
        validity_threshold: u32,
        tie_epsilon: f64,
        verdicts: Vec<GroupVerdict>,
        metrics: Vec<ConsistencyEntry>,
        sweep: Option<Vec<SweepPoint>>,
    ) -> Self {
        Self {
            validity_threshold,
            tie_epsilon,
            groups_total: verdicts.len(),
            valid_groups: verdicts.iter().filter(|v| v.valid).count() as u32,
            invalid_groups: verdicts.iter().filter(|v| !v.valid).map(|v| v.group_id.clone()).collect(),
            verdicts,
            metrics,
            sweep,
        }
    }
}
