//! The five-task instruction dataset: record construction, prompt rendering
//! and JSON-lines serialization.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{format_affective_block, AffectiveProfile};
use crate::corpus::{CocoRecord, ConspiracyCategory, IntentionLabel, LocoRecord, RelatednessLabel, SplitName};
use crate::provenance::{sha256_hex, Provenance};

#[derive(Debug, Error)]
pub enum InstructionError {
    #[error("task {task} needs {expected} records")]
    WrongCorpus { task: TaskId, expected: &'static str },
    #[error("{records} records but {profiles} affective profiles")]
    Misaligned { records: usize, profiles: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum TaskId {
    /// Overall intention of a tweet (Unrelated / Related / Conspiracy).
    Intention = 1,
    /// Which of the twelve categories a tweet mentions.
    Topics = 2,
    /// Intention towards one named category.
    PerCategory = 3,
    /// Whether a document is a conspiracy theory.
    Conspiracy = 4,
    /// Degree of relatedness of a document to a conspiracy theory.
    Relatedness = 5,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::Intention,
        TaskId::Topics,
        TaskId::PerCategory,
        TaskId::Conspiracy,
        TaskId::Relatedness,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn uses_coco(self) -> bool {
        matches!(self, TaskId::Intention | TaskId::Topics | TaskId::PerCategory)
    }

    pub fn query_cue(self) -> &'static str {
        match self {
            TaskId::Topics => "The text mentions or refers to conspiracies:",
            _ => "Class:",
        }
    }
}

impl From<TaskId> for u8 {
    fn from(t: TaskId) -> u8 {
        t.number()
    }
}

impl TryFrom<u8> for TaskId {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        TaskId::ALL
            .get((n as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| format!("unknown task {n} (expected 1-5)"))
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .trim()
            .trim_start_matches("task")
            .trim_start_matches('T')
            .trim_start_matches('t');
        digits
            .parse::<u8>()
            .map_err(|_| format!("unknown task `{s}` (expected 1-5)"))
            .and_then(TaskId::try_from)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

pub const INTENTION_PROMPT: &str = "Classify the text regarding COVID-19 conspiracy theories or misinformation into one of the following three classes: 0. Unrelated. 1. Related (but not supporting). 2. Conspiracy (related and supporting).";
pub const TOPICS_PROMPT: &str = "detect whether the text in any form mentions or refers to any of the specific categories of COVID-19 conspiracy theories ('suppressed cures', 'behavior control', 'anti vaccination', 'fake virus', 'intentional pandemic', 'harmful radiation', 'depopulation', 'new world order', 'satanism', 'esoteric misinformation', 'other conspiracy theory') or other misinformation. If it doesn't, it is 'no conspiracy'.";
pub const CONSPIRACY_PROMPT: &str = "Determine if the text is a conspiracy theory. Classify it into one of the following two classes: 0. non-conspiracy. 1. conspiracy.";

pub fn per_category_prompt(category: ConspiracyCategory) -> String {
    format!(
        "Classify the text regarding the specific category {} into one of the following three classes: 0. Unrelated. 1. Related (but not supporting). 2. Conspiracy (related and supporting).",
        category.display_name()
    )
}

/// Phrase used for a LOCO topic inside the relatedness prompt.
pub fn topic_phrase(topic: &str) -> String {
    let norm = topic.trim().to_ascii_lowercase().replace(['-', '_'], " ");
    match norm.as_str() {
        "sandy hook" | "sandyhook" | "sandy hook school shooting" => "the Sandy Hook school shooting".to_string(),
        "coronavirus" | "covid" | "covid 19" | "covid19" => "coronavirus".to_string(),
        "" => "the conspiracy theory".to_string(),
        _ => topic.trim().to_string(),
    }
}

pub fn relatedness_prompt(topic: &str) -> String {
    format!(
        "Determine the relatedness between the text and {}. Classify it into one of the following three classes: 0. not related. 1. closely related. 2. broadly related.",
        topic_phrase(topic)
    )
}

pub const NO_CONSPIRACY: &str = "no conspiracy";

pub fn intention_gold(label: IntentionLabel) -> &'static str {
    match label {
        IntentionLabel::Unrelated => "0. Unrelated",
        IntentionLabel::Related => "1. Related (but not supporting)",
        IntentionLabel::Conspiracy => "2. Conspiracy (related and supporting)",
    }
}

/// Mentioned categories in canonical order, comma separated.
pub fn topics_gold<'a>(categories: impl IntoIterator<Item = &'a ConspiracyCategory>) -> String {
    let mut cats: Vec<ConspiracyCategory> = categories.into_iter().copied().collect();
    cats.sort();
    cats.dedup();
    if cats.is_empty() {
        NO_CONSPIRACY.to_string()
    } else {
        cats.iter().map(|c| c.display_name()).collect::<Vec<_>>().join(", ")
    }
}

pub fn conspiracy_gold(is_conspiracy: bool) -> &'static str {
    if is_conspiracy {
        "1. conspiracy"
    } else {
        "0. non-conspiracy"
    }
}

pub fn relatedness_gold(label: RelatednessLabel) -> &'static str {
    match label {
        RelatednessLabel::NotRelated => "0. not related",
        RelatednessLabel::CloselyRelated => "1. closely related",
        RelatednessLabel::BroadlyRelated => "2. broadly related",
    }
}

/// One (query, answer) pair. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub task: TaskId,
    pub source_id: String,
    pub category: Option<ConspiracyCategory>,
    pub task_prompt: String,
    pub input_text: String,
    pub query_cue: String,
    pub gold_output: String,
    pub affective_block: Option<String>,
}

/// `Task: <prompt>[ <affective block>]\nText: <input>\n<cue>`
pub fn render_prompt(record: &InstructionRecord) -> String {
    let mut out = String::with_capacity(record.task_prompt.len() + record.input_text.len() + 64);
    out.push_str("Task: ");
    out.push_str(&record.task_prompt);
    if let Some(block) = &record.affective_block {
        out.push(' ');
        out.push_str(block);
    }
    out.push_str("\nText: ");
    out.push_str(&record.input_text);
    out.push('\n');
    out.push_str(&record.query_cue);
    out
}

#[derive(Debug, Clone, Copy)]
pub enum TaskInput<'a> {
    Coco(&'a [CocoRecord]),
    Loco(&'a [LocoRecord]),
}

impl TaskInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            TaskInput::Coco(r) => r.len(),
            TaskInput::Loco(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn record(
    task: TaskId,
    source_id: &str,
    category: Option<ConspiracyCategory>,
    task_prompt: String,
    text: &str,
    gold: String,
    affect: Option<&String>,
) -> InstructionRecord {
    InstructionRecord {
        task,
        source_id: source_id.to_string(),
        category,
        task_prompt,
        input_text: text.to_string(),
        query_cue: task.query_cue().to_string(),
        gold_output: gold,
        affective_block: affect.cloned(),
    }
}

/// Builds the instruction records for one task. The per-category task
/// yields twelve records per tweet, one per category in canonical order.
pub fn build_task_dataset(
    task: TaskId,
    input: TaskInput<'_>,
    affect: Option<&[AffectiveProfile]>,
) -> Result<Vec<InstructionRecord>, InstructionError> {
    if let Some(profiles) = affect {
        if profiles.len() != input.len() {
            return Err(InstructionError::Misaligned {
                records: input.len(),
                profiles: profiles.len(),
            });
        }
    }
    let blocks: Option<Vec<String>> = affect.map(|p| p.iter().map(format_affective_block).collect());
    let block = |i: usize| blocks.as_ref().map(|b| &b[i]);

    let out = match (task, input) {
        (TaskId::Intention, TaskInput::Coco(records)) => records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                record(
                    task,
                    &r.id,
                    None,
                    INTENTION_PROMPT.to_string(),
                    &r.text,
                    intention_gold(r.overall).to_string(),
                    block(i),
                )
            })
            .collect(),
        (TaskId::Topics, TaskInput::Coco(records)) => records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let gold = topics_gold(&r.mentioned_categories());
                record(task, &r.id, None, TOPICS_PROMPT.to_string(), &r.text, gold, block(i))
            })
            .collect(),
        (TaskId::PerCategory, TaskInput::Coco(records)) => records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                let aff = block(i);
                ConspiracyCategory::ALL.into_iter().map(move |c| {
                    let gold = intention_gold(r.category_labels.get(c)).to_string();
                    record(task, &r.id, Some(c), per_category_prompt(c), &r.text, gold, aff)
                })
            })
            .collect(),
        (TaskId::Conspiracy, TaskInput::Loco(records)) => records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                record(
                    task,
                    &r.id,
                    None,
                    CONSPIRACY_PROMPT.to_string(),
                    &r.text,
                    conspiracy_gold(r.is_conspiracy).to_string(),
                    block(i),
                )
            })
            .collect(),
        (TaskId::Relatedness, TaskInput::Loco(records)) => records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                record(
                    task,
                    &r.id,
                    None,
                    relatedness_prompt(&r.topic),
                    &r.text,
                    relatedness_gold(r.relatedness).to_string(),
                    block(i),
                )
            })
            .collect(),
        (task, _) => {
            return Err(InstructionError::WrongCorpus {
                task,
                expected: if task.uses_coco() { "COCO" } else { "LOCO" },
            })
        }
    };
    Ok(out)
}

/// Hash of the serialized records, used to tie runs to datasets.
pub fn dataset_hash(records: &[InstructionRecord]) -> String {
    let mut bytes = Vec::new();
    for r in records {
        serde_json::to_writer(&mut bytes, r).expect("record serializes");
        bytes.push(b'\n');
    }
    sha256_hex(&bytes)
}

pub fn write_records(records: &[InstructionRecord], path: &Path) -> Result<(), InstructionError> {
    let io = |source| InstructionError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("record serializes");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_records(path: &Path) -> Result<Vec<InstructionRecord>, InstructionError> {
    let io = |source| InstructionError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| InstructionError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Sidecar describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: TaskId,
    pub split: SplitName,
    pub source_corpus_hash: String,
    pub dataset_hash: String,
    pub records: usize,
    pub affect: bool,
    pub provenance: Provenance,
}
