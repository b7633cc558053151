//! Raw corpus ingestion: COCO-style tweet annotations and LOCO-style
//! document annotations, gold-label derivation and deterministic splits.
//!
//! COCO files are CSV with a header `id,text,<12 category columns>` (an
//! optional `overall` column is accepted but never trusted), or JSON-lines
//! objects carrying the same keys. LOCO files are JSON-lines objects with
//! `id`, `text`, `conspiracy`, `relatedness` and `topic`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing category `{category}`")]
    MissingCategory { line: usize, category: &'static str },
    #[error("line {line}: unknown intention label `{value}` (expected one of: unrelated, related, conspiracy)")]
    UnknownLabel { line: usize, value: String },
    #[error(
        "line {line}: unknown relatedness `{value}` (expected one of: not related, closely related, broadly related)"
    )]
    UnknownRelatedness { line: usize, value: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("category labels incomplete: missing `{0}`")]
    IncompleteLabels(&'static str),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("duplicate record id `{0}` in split input")]
    DuplicateSplitId(String),
    #[error("split manifest does not match corpus: {0}")]
    ManifestMismatch(String),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// The twelve COCO conspiracy categories, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConspiracyCategory {
    SuppressedCures,
    BehaviorControl,
    AntiVaccination,
    FakeVirus,
    IntentionalPandemic,
    HarmfulRadiation,
    Depopulation,
    NewWorldOrder,
    EsotericMisinformation,
    Satanism,
    OtherConspiracyTheory,
    OtherMisinformation,
}

impl ConspiracyCategory {
    pub const ALL: [ConspiracyCategory; 12] = [
        ConspiracyCategory::SuppressedCures,
        ConspiracyCategory::BehaviorControl,
        ConspiracyCategory::AntiVaccination,
        ConspiracyCategory::FakeVirus,
        ConspiracyCategory::IntentionalPandemic,
        ConspiracyCategory::HarmfulRadiation,
        ConspiracyCategory::Depopulation,
        ConspiracyCategory::NewWorldOrder,
        ConspiracyCategory::EsotericMisinformation,
        ConspiracyCategory::Satanism,
        ConspiracyCategory::OtherConspiracyTheory,
        ConspiracyCategory::OtherMisinformation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lowercase wording used inside task prompts and gold outputs.
    pub fn display_name(self) -> &'static str {
        match self {
            ConspiracyCategory::SuppressedCures => "suppressed cures",
            ConspiracyCategory::BehaviorControl => "behavior control",
            ConspiracyCategory::AntiVaccination => "anti vaccination",
            ConspiracyCategory::FakeVirus => "fake virus",
            ConspiracyCategory::IntentionalPandemic => "intentional pandemic",
            ConspiracyCategory::HarmfulRadiation => "harmful radiation",
            ConspiracyCategory::Depopulation => "depopulation",
            ConspiracyCategory::NewWorldOrder => "new world order",
            ConspiracyCategory::EsotericMisinformation => "esoteric misinformation",
            ConspiracyCategory::Satanism => "satanism",
            ConspiracyCategory::OtherConspiracyTheory => "other conspiracy theory",
            ConspiracyCategory::OtherMisinformation => "other misinformation",
        }
    }

    /// Column name in the COCO CSV header.
    pub fn column_name(self) -> &'static str {
        match self {
            ConspiracyCategory::SuppressedCures => "suppressed_cures",
            ConspiracyCategory::BehaviorControl => "behavior_control",
            ConspiracyCategory::AntiVaccination => "anti_vaccination",
            ConspiracyCategory::FakeVirus => "fake_virus",
            ConspiracyCategory::IntentionalPandemic => "intentional_pandemic",
            ConspiracyCategory::HarmfulRadiation => "harmful_radiation",
            ConspiracyCategory::Depopulation => "depopulation",
            ConspiracyCategory::NewWorldOrder => "new_world_order",
            ConspiracyCategory::EsotericMisinformation => "esoteric_misinformation",
            ConspiracyCategory::Satanism => "satanism",
            ConspiracyCategory::OtherConspiracyTheory => "other_conspiracy_theory",
            ConspiracyCategory::OtherMisinformation => "other_misinformation",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ConspiracyCategory::SuppressedCures => "suppressed-cures",
            ConspiracyCategory::BehaviorControl => "behavior-control",
            ConspiracyCategory::AntiVaccination => "anti-vaccination",
            ConspiracyCategory::FakeVirus => "fake-virus",
            ConspiracyCategory::IntentionalPandemic => "intentional-pandemic",
            ConspiracyCategory::HarmfulRadiation => "harmful-radiation",
            ConspiracyCategory::Depopulation => "depopulation",
            ConspiracyCategory::NewWorldOrder => "new-world-order",
            ConspiracyCategory::EsotericMisinformation => "esoteric-misinformation",
            ConspiracyCategory::Satanism => "satanism",
            ConspiracyCategory::OtherConspiracyTheory => "other-conspiracy-theory",
            ConspiracyCategory::OtherMisinformation => "other-misinformation",
        }
    }

    pub fn from_column(name: &str) -> Option<Self> {
        let norm = name.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Self::ALL.into_iter().find(|c| c.column_name() == norm)
    }
}

impl fmt::Display for ConspiracyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentionLabel {
    Unrelated = 0,
    Related = 1,
    Conspiracy = 2,
}

impl IntentionLabel {
    pub const ALL: [IntentionLabel; 3] = [
        IntentionLabel::Unrelated,
        IntentionLabel::Related,
        IntentionLabel::Conspiracy,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntentionLabel::Unrelated => "unrelated",
            IntentionLabel::Related => "related",
            IntentionLabel::Conspiracy => "conspiracy",
        }
    }
}

impl FromStr for IntentionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unrelated" => Ok(IntentionLabel::Unrelated),
            "related" => Ok(IntentionLabel::Related),
            "conspiracy" => Ok(IntentionLabel::Conspiracy),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelatednessLabel {
    #[serde(rename = "not related")]
    NotRelated = 0,
    #[serde(rename = "closely related")]
    CloselyRelated = 1,
    #[serde(rename = "broadly related")]
    BroadlyRelated = 2,
}

impl RelatednessLabel {
    pub const ALL: [RelatednessLabel; 3] = [
        RelatednessLabel::NotRelated,
        RelatednessLabel::CloselyRelated,
        RelatednessLabel::BroadlyRelated,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelatednessLabel::NotRelated => "not related",
            RelatednessLabel::CloselyRelated => "closely related",
            RelatednessLabel::BroadlyRelated => "broadly related",
        }
    }
}

impl FromStr for RelatednessLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', '-'], " ");
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == norm)
            .ok_or_else(|| s.to_string())
    }
}

/// Per-category intention labels, total over the twelve categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CategoryLabels([IntentionLabel; 12]);

impl CategoryLabels {
    pub fn new(labels: [IntentionLabel; 12]) -> Self {
        CategoryLabels(labels)
    }

    pub fn uniform(label: IntentionLabel) -> Self {
        CategoryLabels([label; 12])
    }

    pub fn get(&self, category: ConspiracyCategory) -> IntentionLabel {
        self.0[category.index()]
    }

    pub fn set(&mut self, category: ConspiracyCategory, label: IntentionLabel) {
        self.0[category.index()] = label;
    }

    pub fn with(mut self, category: ConspiracyCategory, label: IntentionLabel) -> Self {
        self.set(category, label);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConspiracyCategory, IntentionLabel)> + '_ {
        ConspiracyCategory::ALL.into_iter().zip(self.0.iter().copied())
    }
}

impl TryFrom<&BTreeMap<ConspiracyCategory, IntentionLabel>> for CategoryLabels {
    type Error = CorpusError;

    fn try_from(map: &BTreeMap<ConspiracyCategory, IntentionLabel>) -> Result<Self, Self::Error> {
        let mut labels = [IntentionLabel::Unrelated; 12];
        for category in ConspiracyCategory::ALL {
            labels[category.index()] = *map
                .get(&category)
                .ok_or(CorpusError::IncompleteLabels(category.slug()))?;
        }
        Ok(CategoryLabels(labels))
    }
}

impl Serialize for CategoryLabels {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<ConspiracyCategory, IntentionLabel> = self.iter().collect();
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CategoryLabels {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<ConspiracyCategory, IntentionLabel>::deserialize(deserializer)?;
        CategoryLabels::try_from(&map).map_err(serde::de::Error::custom)
    }
}

/// Conspiracy if any category is Conspiracy, else Related if any is
/// Related, else Unrelated.
pub fn derive_overall_intention(labels: &CategoryLabels) -> IntentionLabel {
    labels.iter().map(|(_, l)| l).max().unwrap_or(IntentionLabel::Unrelated)
}

/// Categories the text mentions: every category labelled Related or
/// Conspiracy. Empty means "no conspiracy".
pub fn derive_mentioned_categories(labels: &CategoryLabels) -> BTreeSet<ConspiracyCategory> {
    labels
        .iter()
        .filter(|(_, l)| *l != IntentionLabel::Unrelated)
        .map(|(c, _)| c)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoRecord {
    pub id: String,
    pub text: String,
    pub category_labels: CategoryLabels,
    pub overall: IntentionLabel,
}

impl CocoRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, labels: CategoryLabels) -> Self {
        CocoRecord {
            id: id.into(),
            text: text.into(),
            overall: derive_overall_intention(&labels),
            category_labels: labels,
        }
    }

    pub fn mentioned_categories(&self) -> BTreeSet<ConspiracyCategory> {
        derive_mentioned_categories(&self.category_labels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocoRecord {
    pub id: String,
    pub text: String,
    #[serde(rename = "conspiracy")]
    pub is_conspiracy: bool,
    pub relatedness: RelatednessLabel,
    pub topic: String,
}

/// Records plus the non-fatal issues found while reading them.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T> Loaded<T> {
    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CocoFormat {
    Csv,
    JsonLines,
}

impl CocoFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => CocoFormat::JsonLines,
            _ => CocoFormat::Csv,
        }
    }
}

impl FromStr for CocoFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CocoFormat::Csv),
            "jsonl" | "json-lines" | "jsonlines" => Ok(CocoFormat::JsonLines),
            other => Err(format!("unknown COCO format `{other}` (expected csv or jsonl)")),
        }
    }
}

pub fn load_coco(path: &Path, format: CocoFormat) -> Result<Loaded<CocoRecord>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    match format {
        CocoFormat::Csv => parse_coco_csv(&content),
        CocoFormat::JsonLines => parse_coco_jsonl(&content),
    }
}

struct CocoRow<'a> {
    line: usize,
    id: Option<&'a str>,
    text: Option<&'a str>,
    cells: [Option<&'a str>; 12],
    overall: Option<&'a str>,
}

fn coco_from_row(
    row: CocoRow<'_>,
    out: &mut Loaded<CocoRecord>,
    seen: &mut HashSet<String>,
) -> Result<(), CorpusError> {
    let line = row.line;
    let id = row
        .id
        .filter(|s| !s.trim().is_empty())
        .ok_or(CorpusError::MissingField { line, field: "id" })?;
    let text = row.text.ok_or(CorpusError::MissingField { line, field: "text" })?;
    let mut labels = [IntentionLabel::Unrelated; 12];
    for category in ConspiracyCategory::ALL {
        let cell =
            row.cells[category.index()]
                .filter(|c| !c.trim().is_empty())
                .ok_or(CorpusError::MissingCategory {
                    line,
                    category: category.column_name(),
                })?;
        labels[category.index()] = cell
            .parse()
            .map_err(|value| CorpusError::UnknownLabel { line, value })?;
    }
    if !seen.insert(id.to_string()) {
        return Err(CorpusError::DuplicateId {
            line,
            id: id.to_string(),
        });
    }
    let record = CocoRecord::new(id, text, CategoryLabels(labels));
    if let Some(claimed) = row.overall.filter(|s| !s.trim().is_empty()) {
        match claimed.parse::<IntentionLabel>() {
            Ok(claimed) if claimed == record.overall => {}
            Ok(claimed) => out.warn(format!(
                "line {line}: record `{id}` claims overall={} but categories imply {}; using {}",
                claimed.as_str(),
                record.overall.as_str(),
                record.overall.as_str()
            )),
            Err(value) => out.warn(format!("line {line}: ignoring unparseable overall label `{value}`")),
        }
    }
    out.records.push(record);
    Ok(())
}

fn parse_coco_csv(content: &str) -> Result<Loaded<CocoRecord>, CorpusError> {
    let mut out = Loaded {
        records: Vec::new(),
        warnings: Vec::new(),
    };
    if content.trim().is_empty() {
        out.warn("COCO file is empty".to_string());
        return Ok(out);
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let id_col = position("id").ok_or(CorpusError::MissingField { line: 1, field: "id" })?;
    let text_col = position("text").ok_or(CorpusError::MissingField { line: 1, field: "text" })?;
    let overall_col = position("overall");
    let mut category_cols = [0usize; 12];
    for category in ConspiracyCategory::ALL {
        category_cols[category.index()] = headers
            .iter()
            .position(|h| ConspiracyCategory::from_column(h) == Some(category))
            .ok_or(CorpusError::MissingCategory {
                line: 1,
                category: category.column_name(),
            })?;
    }
    let mut seen = HashSet::new();
    for result in reader.records() {
        let record = result.map_err(|e| CorpusError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut cells = [None; 12];
        for (slot, col) in cells.iter_mut().zip(category_cols) {
            *slot = record.get(col);
        }
        coco_from_row(
            CocoRow {
                line,
                id: record.get(id_col),
                text: record.get(text_col),
                cells,
                overall: overall_col.and_then(|c| record.get(c)),
            },
            &mut out,
            &mut seen,
        )?;
    }
    if out.records.is_empty() {
        out.warn("COCO file contains no records".to_string());
    }
    Ok(out)
}

fn parse_coco_jsonl(content: &str) -> Result<Loaded<CocoRecord>, CorpusError> {
    let mut out = Loaded {
        records: Vec::new(),
        warnings: Vec::new(),
    };
    let mut seen = HashSet::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or(CorpusError::Malformed {
            line,
            message: "expected a JSON object".to_string(),
        })?;
        let mut by_category: [Option<&str>; 12] = [None; 12];
        for (key, v) in obj {
            if let Some(category) = ConspiracyCategory::from_column(key) {
                by_category[category.index()] = v.as_str();
            }
        }
        coco_from_row(
            CocoRow {
                line,
                id: obj.get("id").and_then(|v| v.as_str()),
                text: obj.get("text").and_then(|v| v.as_str()),
                cells: by_category,
                overall: obj.get("overall").and_then(|v| v.as_str()),
            },
            &mut out,
            &mut seen,
        )?;
    }
    if out.records.is_empty() {
        out.warn("COCO file contains no records".to_string());
    }
    Ok(out)
}

/// Writes the CSV form read by [`load_coco`].
pub fn write_coco_csv(records: &[CocoRecord], path: &Path) -> Result<(), CorpusError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let mut header = vec!["id", "text"];
    header.extend(ConspiracyCategory::ALL.iter().map(|c| c.column_name()));
    let io_err = |e: csv::Error| CorpusError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    writer.write_record(&header).map_err(io_err)?;
    for record in records {
        let mut row = vec![record.id.as_str(), record.text.as_str()];
        row.extend(record.category_labels.iter().map(|(_, l)| l.as_str()));
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush().map_err(|e| CorpusError::io(path, e))
}

#[derive(Deserialize)]
struct RawLoco {
    id: Option<String>,
    text: Option<String>,
    conspiracy: Option<bool>,
    relatedness: Option<String>,
    topic: Option<String>,
}

pub fn load_loco(path: &Path) -> Result<Loaded<LocoRecord>, CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Loaded {
        records: Vec::new(),
        warnings: Vec::new(),
    };
    let mut seen = HashSet::new();
    for (idx, raw) in BufReader::new(file).lines().enumerate() {
        let line = idx + 1;
        let raw = raw.map_err(|e| CorpusError::io(path, e))?;
        if raw.trim().is_empty() {
            continue;
        }
        let row: RawLoco = serde_json::from_str(&raw).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let id = row.id.ok_or(CorpusError::MissingField { line, field: "id" })?;
        let text = row.text.ok_or(CorpusError::MissingField { line, field: "text" })?;
        let is_conspiracy = row.conspiracy.ok_or(CorpusError::MissingField {
            line,
            field: "conspiracy",
        })?;
        let relatedness = row
            .relatedness
            .ok_or(CorpusError::MissingField {
                line,
                field: "relatedness",
            })?
            .parse()
            .map_err(|value| CorpusError::UnknownRelatedness { line, value })?;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line, id });
        }
        out.records.push(LocoRecord {
            id,
            text,
            is_conspiracy,
            relatedness,
            topic: row.topic.unwrap_or_default(),
        });
    }
    if out.records.is_empty() {
        out.warn(format!("{}: LOCO file contains no records", path.display()));
    }
    Ok(out)
}

pub fn write_loco(records: &[LocoRecord], path: &Path) -> Result<(), CorpusError> {
    let mut file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    for record in records {
        let line = serde_json::to_string(record).expect("LOCO record serializes");
        writeln!(file, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitName::Train),
            "dev" | "validation" | "val" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split `{other}` (expected train, dev or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self, CorpusError> {
        let ratios = SplitRatios { train, dev, test };
        ratios.validate()?;
        Ok(ratios)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, r) in [("train", self.train), ("dev", self.dev), ("test", self.test)] {
            if !r.is_finite() || r < 0.0 {
                return Err(CorpusError::InvalidRatios(format!(
                    "{name} ratio {r} is negative or not finite"
                )));
            }
        }
        let sum = self.train + self.dev + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidRatios(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// (train, dev, test) sizes: dev rounds down, test rounds up, train
    /// takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let nf = n as f64;
        let dev = ((nf * self.dev + 1e-9).floor() as usize).min(n);
        let test = ((nf * self.test - 1e-9).ceil().max(0.0) as usize).min(n - dev);
        (n - dev - test, dev, test)
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            dev: 0.2,
            test: 0.2,
        }
    }
}

impl FromStr for SplitRatios {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split([',', '/'])
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad ratio `{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [train, dev, test] => SplitRatios::new(*train, *dev, *test).map_err(|e| e.to_string()),
            _ => Err(format!("expected three ratios train,dev,test; got `{s}`")),
        }
    }
}

/// The split manifest file: `{"train": [...], "dev": [...], "test": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn ids(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitSource {
    Seeded { seed: u64, ratios: SplitRatios },
    Manifest,
}

/// Split membership for an ordered list of record ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    ids: Vec<String>,
    splits: Vec<SplitName>,
    pub source: SplitSource,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<SplitName> {
        self.ids.iter().position(|i| i == id).map(|p| self.splits[p])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, SplitName)> {
        self.ids.iter().map(String::as_str).zip(self.splits.iter().copied())
    }

    /// Ids of one split, in the original input order.
    pub fn ids_in(&self, split: SplitName) -> Vec<&str> {
        self.iter().filter(|(_, s)| *s == split).map(|(id, _)| id).collect()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.splits.iter().filter(|x| **x == s).count();
        (count(SplitName::Train), count(SplitName::Dev), count(SplitName::Test))
    }

    pub fn to_manifest(&self) -> SplitManifest {
        let owned = |s| self.ids_in(s).into_iter().map(str::to_string).collect();
        SplitManifest {
            train: owned(SplitName::Train),
            dev: owned(SplitName::Dev),
            test: owned(SplitName::Test),
        }
    }

    /// Adopts an explicit manifest, checking it covers `record_ids` exactly.
    pub fn from_manifest(record_ids: &[String], manifest: &SplitManifest) -> Result<Self, CorpusError> {
        let mut lookup = BTreeMap::new();
        for split in SplitName::ALL {
            for id in manifest.ids(split) {
                if lookup.insert(id.as_str(), split).is_some() {
                    return Err(CorpusError::ManifestMismatch(format!(
                        "id `{id}` listed more than once"
                    )));
                }
            }
        }
        check_distinct(record_ids)?;
        let mut splits = Vec::with_capacity(record_ids.len());
        for id in record_ids {
            let split = lookup
                .remove(id.as_str())
                .ok_or_else(|| CorpusError::ManifestMismatch(format!("id `{id}` not assigned to any split")))?;
            splits.push(split);
        }
        if let Some(extra) = lookup.keys().next() {
            return Err(CorpusError::ManifestMismatch(format!(
                "id `{extra}` is not in the corpus"
            )));
        }
        Ok(SplitAssignment {
            ids: record_ids.to_vec(),
            splits,
            source: SplitSource::Manifest,
        })
    }
}

fn check_distinct(ids: &[String]) -> Result<(), CorpusError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(CorpusError::DuplicateSplitId(id.clone()));
        }
    }
    Ok(())
}

/// Seeded shuffle of `record_ids` into train/dev/test.
pub fn split(record_ids: &[String], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, CorpusError> {
    ratios.validate()?;
    check_distinct(record_ids)?;
    let n = record_ids.len();
    let (train, dev, _) = ratios.sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![SplitName::Test; n];
    for (rank, &idx) in order.iter().enumerate() {
        splits[idx] = if rank < train {
            SplitName::Train
        } else if rank < train + dev {
            SplitName::Dev
        } else {
            SplitName::Test
        };
    }
    Ok(SplitAssignment {
        ids: record_ids.to_vec(),
        splits,
        source: SplitSource::Seeded { seed, ratios },
    })
}
