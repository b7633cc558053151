//! Turning raw model replies into task labels, and scoring runs.
//!
//! Replies go through a fixed cascade: the first standalone digit that is
//! a valid class code wins; otherwise the earliest class keyword (longest
//! keyword at a given position, so "unrelated" beats "related" and
//! "non-conspiracy" beats "conspiracy"); topic replies collect every
//! category name mentioned. Anything else falls back to the negative class
//! and is flagged non-compliant.

pub mod metrics;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ConspiracyCategory, IntentionLabel, RelatednessLabel};
use crate::inference::RunManifest;
use crate::instructions::{InstructionRecord, TaskId, NO_CONSPIRACY};
use crate::provenance::Provenance;

pub use metrics::{
    compute_multilabel_metrics, compute_single_label_metrics, ClassMetrics, MetricsError, MetricsReport,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Label {
    Intention(IntentionLabel),
    Topics(BTreeSet<ConspiracyCategory>),
    Conspiracy(bool),
    Relatedness(RelatednessLabel),
}

impl Label {
    /// Class index for single-label tasks.
    pub fn class_index(&self) -> Option<usize> {
        match self {
            Label::Intention(l) => Some(l.code() as usize),
            Label::Conspiracy(b) => Some(*b as usize),
            Label::Relatedness(r) => Some(r.code() as usize),
            Label::Topics(_) => None,
        }
    }

    pub fn topic_indices(&self) -> Option<Vec<usize>> {
        match self {
            Label::Topics(set) => Some(set.iter().map(|c| c.index()).collect()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedLabel {
    pub label: Label,
    /// False when nothing usable was found and the fallback class applied.
    pub compliant: bool,
}

pub fn class_names(task: TaskId) -> Vec<&'static str> {
    match task {
        TaskId::Intention | TaskId::PerCategory => IntentionLabel::ALL.iter().map(|l| l.as_str()).collect(),
        TaskId::Topics => ConspiracyCategory::ALL.iter().map(|c| c.display_name()).collect(),
        TaskId::Conspiracy => vec!["non-conspiracy", "conspiracy"],
        TaskId::Relatedness => RelatednessLabel::ALL.iter().map(|r| r.as_str()).collect(),
    }
}

fn fallback(task: TaskId) -> Label {
    match task {
        TaskId::Intention | TaskId::PerCategory => Label::Intention(IntentionLabel::Unrelated),
        TaskId::Topics => Label::Topics(BTreeSet::new()),
        TaskId::Conspiracy => Label::Conspiracy(false),
        TaskId::Relatedness => Label::Relatedness(RelatednessLabel::NotRelated),
    }
}

fn from_code(task: TaskId, code: u8) -> Option<Label> {
    match task {
        TaskId::Intention | TaskId::PerCategory => IntentionLabel::from_code(code).map(Label::Intention),
        TaskId::Conspiracy => (code <= 1).then_some(Label::Conspiracy(code == 1)),
        TaskId::Relatedness => RelatednessLabel::from_code(code).map(Label::Relatedness),
        TaskId::Topics => None,
    }
}

fn keywords(task: TaskId) -> &'static [(&'static str, u8)] {
    match task {
        TaskId::Intention | TaskId::PerCategory => {
            &[("unrelated", 0), ("not related", 0), ("related", 1), ("conspiracy", 2)]
        }
        TaskId::Conspiracy => &[
            ("non-conspiracy", 0),
            ("non conspiracy", 0),
            ("nonconspiracy", 0),
            ("not a conspiracy", 0),
            ("conspiracy", 1),
        ],
        TaskId::Relatedness => &[
            ("not related", 0),
            ("unrelated", 0),
            ("closely related", 1),
            ("broadly related", 2),
        ],
        TaskId::Topics => &[],
    }
}

fn digit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[0-9]+(?:\.[0-9]+)?").unwrap())
}

/// First standalone single digit that is a valid code for `task`.
fn first_code(task: TaskId, raw: &str) -> Option<Label> {
    let bytes = raw.as_bytes();
    digit_re()
        .find_iter(raw)
        .filter(|m| m.len() == 1)
        .filter(|m| {
            let before = m.start().checked_sub(1).map(|i| bytes[i]);
            let after = bytes.get(m.end()).copied();
            let word = |b: Option<u8>| b.is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
            !word(before) && before != Some(b'.') && !word(after)
        })
        .find_map(|m| from_code(task, m.as_str().as_bytes()[0] - b'0'))
}

fn is_word_start(text: &str, at: usize) -> bool {
    text[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric())
}

fn is_word_end(text: &str, at: usize) -> bool {
    text[at..].chars().next().is_none_or(|c| !c.is_alphanumeric())
}

/// Earliest keyword occurrence, longest keyword winning at a position.
fn first_keyword(task: TaskId, lower: &str) -> Option<Label> {
    let mut table: Vec<(&str, u8)> = keywords(task).to_vec();
    table.sort_by_key(|(k, _)| std::cmp::Reverse(k.len()));
    for (at, _) in lower.char_indices() {
        if !is_word_start(lower, at) {
            continue;
        }
        for (kw, code) in &table {
            if lower[at..].starts_with(kw) && is_word_end(lower, at + kw.len()) {
                return from_code(task, *code);
            }
        }
    }
    None
}

fn normalize_topics(raw: &str) -> String {
    let spaced: String = raw
        .to_lowercase()
        .chars()
        .map(|c| {
            if c == '-' || c == '_' || c.is_whitespace() {
                ' '
            } else {
                c
            }
        })
        .collect();
    spaced
        .split(' ')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn contains_phrase(text: &str, phrase: &str) -> bool {
    text.match_indices(phrase)
        .any(|(at, _)| is_word_start(text, at) && is_word_end(text, at + phrase.len()))
}

/// Maps any reply to a label for `task`. Total and deterministic.
pub fn parse_response(task: TaskId, raw: &str) -> ParsedLabel {
    let found = if task == TaskId::Topics {
        let text = normalize_topics(raw);
        let cats: BTreeSet<ConspiracyCategory> = ConspiracyCategory::ALL
            .into_iter()
            .filter(|c| contains_phrase(&text, c.display_name()))
            .collect();
        if !cats.is_empty() {
            Some(Label::Topics(cats))
        } else if contains_phrase(&text, NO_CONSPIRACY) {
            Some(Label::Topics(BTreeSet::new()))
        } else {
            None
        }
    } else {
        first_code(task, raw).or_else(|| first_keyword(task, &raw.to_lowercase()))
    };
    match found {
        Some(label) => ParsedLabel { label, compliant: true },
        None => ParsedLabel {
            label: fallback(task),
            compliant: false,
        },
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("run does not match dataset: {0}")]
    Misaligned(String),
    #[error("record {index}: gold output `{gold}` is not a valid task {task} label")]
    UnparseableGold { index: usize, task: TaskId, gold: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub category: ConspiracyCategory,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub run_name: String,
    pub task: TaskId,
    pub n: usize,
    /// How ACC is defined for this task.
    pub accuracy: String,
    pub non_compliant: usize,
    pub non_compliance_rate: f64,
    pub failed_requests: usize,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_category: Option<Vec<CategoryBreakdown>>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

fn single_label_indices(labels: &[Label]) -> Vec<usize> {
    labels
        .iter()
        .map(|l| l.class_index().expect("single-label task"))
        .collect()
}

/// Scores a run against the dataset it was produced from.
pub fn score_run(
    task: TaskId,
    dataset: &[InstructionRecord],
    manifest: &RunManifest,
) -> Result<ScoreReport, ScoreError> {
    if manifest.task != task {
        return Err(ScoreError::Misaligned(format!(
            "run is for task {}, not {task}",
            manifest.task
        )));
    }
    if dataset.len() != manifest.responses.len() {
        return Err(ScoreError::Misaligned(format!(
            "{} dataset records but {} responses",
            dataset.len(),
            manifest.responses.len()
        )));
    }
    let mut golds = Vec::with_capacity(dataset.len());
    let mut preds = Vec::with_capacity(dataset.len());
    let mut non_compliant = 0;
    for (index, (record, slot)) in dataset.iter().zip(&manifest.responses).enumerate() {
        if record.task != task || record.source_id != slot.source_id || record.category != slot.category {
            return Err(ScoreError::Misaligned(format!(
                "slot {index} answers `{}` but dataset record is `{}` (task {})",
                slot.source_id, record.source_id, record.task
            )));
        }
        let gold = parse_response(task, &record.gold_output);
        if !gold.compliant {
            return Err(ScoreError::UnparseableGold {
                index,
                task,
                gold: record.gold_output.clone(),
            });
        }
        let pred = parse_response(task, &slot.response);
        non_compliant += usize::from(!pred.compliant);
        golds.push(gold.label);
        preds.push(pred.label);
    }

    let names = class_names(task);
    let (metrics, per_category, accuracy) = match task {
        TaskId::Topics => {
            let g: Vec<Vec<usize>> = golds.iter().map(|l| l.topic_indices().unwrap()).collect();
            let p: Vec<Vec<usize>> = preds.iter().map(|l| l.topic_indices().unwrap()).collect();
            (
                compute_multilabel_metrics(&g, &p, &names)?,
                None,
                "subset accuracy (exact set match)",
            )
        }
        TaskId::PerCategory => {
            let g = single_label_indices(&golds);
            let p = single_label_indices(&preds);
            let pooled = compute_single_label_metrics(&g, &p, &names)?;
            let mut breakdown = Vec::new();
            for category in ConspiracyCategory::ALL {
                let idx: Vec<usize> = (0..dataset.len())
                    .filter(|&i| dataset[i].category == Some(category))
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let cg: Vec<usize> = idx.iter().map(|&i| g[i]).collect();
                let cp: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
                breakdown.push(CategoryBreakdown {
                    category,
                    metrics: compute_single_label_metrics(&cg, &cp, &names)?,
                });
            }
            (
                pooled,
                Some(breakdown),
                "exact match, pooled over (tweet, category) pairs",
            )
        }
        _ => (
            compute_single_label_metrics(&single_label_indices(&golds), &single_label_indices(&preds), &names)?,
            None,
            "exact match",
        ),
    };
    Ok(ScoreReport {
        run_name: manifest.run_name.clone(),
        task,
        n: dataset.len(),
        accuracy: accuracy.to_string(),
        non_compliant,
        non_compliance_rate: non_compliant as f64 / dataset.len() as f64,
        failed_requests: manifest.failures(),
        metrics,
        per_category,
        provenance: manifest.provenance.clone(),
    })
}

fn table(out: &mut String, title: &str, tasks: &[TaskId], reports: &[ScoreReport]) {
    let mut runs: Vec<&str> = Vec::new();
    for r in reports.iter().filter(|r| tasks.contains(&r.task)) {
        if !runs.contains(&r.run_name.as_str()) {
            runs.push(&r.run_name);
        }
    }
    if runs.is_empty() {
        return;
    }
    let width = runs.iter().map(|r| r.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(out, "{title}");
    let mut header = format!("{:<width$}", "Model");
    let mut sub = format!("{:<width$}", "");
    for t in tasks {
        let _ = write!(header, " | {:^27}", format!("Task{t}"));
        let _ = write!(sub, " | {:>6} {:>6} {:>6} {:>6}", "ACC", "PRE", "REC", "F1");
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{sub}");
    let _ = writeln!(out, "{}", "-".repeat(sub.len()));
    for run in runs {
        let mut line = format!("{run:<width$}");
        for t in tasks {
            match reports.iter().rev().find(|r| r.run_name == run && r.task == *t) {
                Some(r) => {
                    let m = &r.metrics;
                    let _ = write!(
                        line,
                        " | {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
                        m.acc, m.pre, m.rec, m.weighted_f1
                    );
                }
                None => {
                    let _ = write!(line, " | {:>6} {:>6} {:>6} {:>6}", "-", "-", "-", "-");
                }
            }
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out);
}

/// Plain-text tables in the layout of the published result tables: one
/// block for the COCO tasks, one for the LOCO tasks, then a detail block
/// with macro averages and compliance.
pub fn format_tables(reports: &[ScoreReport]) -> String {
    let mut out = String::new();
    table(
        &mut out,
        "Tasks 1-3 (COCO)",
        &[TaskId::Intention, TaskId::Topics, TaskId::PerCategory],
        reports,
    );
    table(
        &mut out,
        "Tasks 4-5 (LOCO)",
        &[TaskId::Conspiracy, TaskId::Relatedness],
        reports,
    );
    if !reports.is_empty() {
        let width = reports.iter().map(|r| r.run_name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "Details (PRE/REC/F1 support-weighted above; macro averages here)");
        let _ = writeln!(
            out,
            "{:<width$} | {:>4} | {:>6} | {:>9} {:>9} {:>9} | {:>13} | {:>6}",
            "Model", "Task", "N", "macro-PRE", "macro-REC", "macro-F1", "non-compliant", "failed"
        );
        for r in reports {
            let _ = writeln!(
                out,
                "{:<width$} | {:>4} | {:>6} | {:>9.3} {:>9.3} {:>9.3} | {:>12.1}% | {:>6}",
                r.run_name,
                r.task,
                r.n,
                r.metrics.macro_pre,
                r.metrics.macro_rec,
                r.metrics.macro_f1,
                100.0 * r.non_compliance_rate,
                r.failed_requests
            );
        }
    }
    out
}
