//! Affective distributions broken down by gold class: binned score
//! densities and label proportions, with CSV and SVG export.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{AffectiveProfile, BasicEmotion, Emotion, IntensityClass, SentimentClass, NEUTRAL_EMOTION};
use crate::corpus::{CocoRecord, ConspiracyCategory, IntentionLabel, LocoRecord};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error("no groups to analyze")]
    NoGroups,
    #[error("bin count {0} outside 2..=1000")]
    BadBins(usize),
    #[error("{0} records but {1} profiles")]
    Misaligned(usize, usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Profiles keyed by group name (a gold class).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupedProfiles {
    groups: BTreeMap<String, Vec<AffectiveProfile>>,
    order: Vec<String>,
}

impl GroupedProfiles {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, group: impl Into<String>, profile: AffectiveProfile) {
        let group = group.into();
        if !self.groups.contains_key(&group) {
            self.order.push(group.clone());
        }
        self.groups.entry(group).or_default().push(profile);
    }

    /// Group names in insertion order.
    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn get(&self, group: &str) -> Option<&[AffectiveProfile]> {
        self.groups.get(group).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[AffectiveProfile])> {
        self.order.iter().map(|g| (g.as_str(), self.groups[g].as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn check(&self) -> Result<(), AnalysisError> {
        if self.order.is_empty() {
            return Err(AnalysisError::NoGroups);
        }
        match self.iter().find(|(_, p)| p.is_empty()) {
            Some((g, _)) => Err(AnalysisError::EmptyGroup(g.to_string())),
            None => Ok(()),
        }
    }

    fn ordered(mut self, keys: &[&str]) -> Self {
        self.order
            .sort_by_key(|g| keys.iter().position(|k| k == g).unwrap_or(usize::MAX));
        self
    }

    /// Tweets grouped by overall intention.
    pub fn by_intention(records: &[CocoRecord], profiles: &[AffectiveProfile]) -> Result<Self, AnalysisError> {
        aligned(records.len(), profiles.len())?;
        let mut g = GroupedProfiles::new();
        for (r, p) in records.iter().zip(profiles) {
            g.push(r.overall.as_str(), p.clone());
        }
        let keys: Vec<&str> = IntentionLabel::ALL.iter().map(|l| l.as_str()).collect();
        Ok(g.ordered(&keys))
    }

    /// One group per category holding the tweets that spread that
    /// conspiracy. A tweet can sit in several groups; categories with no
    /// such tweet are left out.
    pub fn by_category(records: &[CocoRecord], profiles: &[AffectiveProfile]) -> Result<Self, AnalysisError> {
        aligned(records.len(), profiles.len())?;
        let mut g = GroupedProfiles::new();
        for category in ConspiracyCategory::ALL {
            for (r, p) in records.iter().zip(profiles) {
                if r.category_labels.get(category) == IntentionLabel::Conspiracy {
                    g.push(category.display_name(), p.clone());
                }
            }
        }
        Ok(g)
    }

    pub fn by_conspiracy(records: &[LocoRecord], profiles: &[AffectiveProfile]) -> Result<Self, AnalysisError> {
        aligned(records.len(), profiles.len())?;
        let mut g = GroupedProfiles::new();
        for (r, p) in records.iter().zip(profiles) {
            g.push(
                if r.is_conspiracy {
                    "conspiracy"
                } else {
                    "non-conspiracy"
                },
                p.clone(),
            );
        }
        Ok(g.ordered(&["non-conspiracy", "conspiracy"]))
    }

    pub fn by_relatedness(records: &[LocoRecord], profiles: &[AffectiveProfile]) -> Result<Self, AnalysisError> {
        aligned(records.len(), profiles.len())?;
        let mut g = GroupedProfiles::new();
        for (r, p) in records.iter().zip(profiles) {
            g.push(r.relatedness.as_str(), p.clone());
        }
        Ok(g.ordered(&["not related", "closely related", "broadly related"]))
    }
}

fn aligned(records: usize, profiles: usize) -> Result<(), AnalysisError> {
    if records == profiles {
        Ok(())
    } else {
        Err(AnalysisError::Misaligned(records, profiles))
    }
}

/// One of the five real-valued profile scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreField {
    Anger,
    Fear,
    Joy,
    Sadness,
    SentimentStrength,
}

impl ScoreField {
    pub const EMOTIONS: [ScoreField; 4] = [
        ScoreField::Anger,
        ScoreField::Fear,
        ScoreField::Joy,
        ScoreField::Sadness,
    ];

    pub fn value(self, p: &AffectiveProfile) -> f64 {
        match self {
            ScoreField::Anger => p.ei_scores.get(BasicEmotion::Anger),
            ScoreField::Fear => p.ei_scores.get(BasicEmotion::Fear),
            ScoreField::Joy => p.ei_scores.get(BasicEmotion::Joy),
            ScoreField::Sadness => p.ei_scores.get(BasicEmotion::Sadness),
            ScoreField::SentimentStrength => p.sentiment_strength,
        }
    }
}

impl fmt::Display for ScoreField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreField::Anger => "anger",
            ScoreField::Fear => "fear",
            ScoreField::Joy => "joy",
            ScoreField::Sadness => "sadness",
            ScoreField::SentimentStrength => "sentiment strength",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySeries {
    pub field: ScoreField,
    /// `bins + 1` equally spaced edges over [0, 1].
    pub edges: Vec<f64>,
    pub groups: Vec<GroupDensity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDensity {
    pub group: String,
    pub counts: Vec<usize>,
    /// Normalized bin masses; they sum to 1.
    pub masses: Vec<f64>,
}

impl GroupDensity {
    /// Mean of the binned distribution, using bin midpoints.
    pub fn mean(&self) -> f64 {
        let bins = self.masses.len() as f64;
        self.masses
            .iter()
            .enumerate()
            .map(|(i, m)| m * (i as f64 + 0.5) / bins)
            .sum()
    }
}

impl DensitySeries {
    pub fn group(&self, name: &str) -> Option<&GroupDensity> {
        self.groups.iter().find(|g| g.group == name)
    }
}

/// Bin of `value` among `bins` equal-width bins over [0, 1]; 1.0 goes in the last bin.
pub fn bin_index(value: f64, bins: usize) -> usize {
    let v = value.clamp(0.0, 1.0);
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

pub fn density(groups: &GroupedProfiles, field: ScoreField, bins: usize) -> Result<DensitySeries, AnalysisError> {
    if !(2..=1000).contains(&bins) {
        return Err(AnalysisError::BadBins(bins));
    }
    groups.check()?;
    let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let series = groups
        .iter()
        .map(|(name, profiles)| {
            let mut counts = vec![0usize; bins];
            for p in profiles {
                counts[bin_index(field.value(p), bins)] += 1;
            }
            let n = profiles.len() as f64;
            GroupDensity {
                group: name.to_string(),
                masses: counts.iter().map(|&c| c as f64 / n).collect(),
                counts,
            }
        })
        .collect();
    Ok(DensitySeries {
        field,
        edges,
        groups: series,
    })
}

/// Gaussian kernel density estimate of `values` at `grid` points, with
/// Silverman's rule-of-thumb bandwidth.
pub fn kde(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return vec![0.0; grid.len()];
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => 1e-3,
    };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|x| values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "emotion")]
pub enum LabelDimension {
    EiClass(BasicEmotion),
    SentimentClass,
    Emotions,
}

impl LabelDimension {
    pub fn labels(self) -> Vec<&'static str> {
        match self {
            LabelDimension::EiClass(_) => IntensityClass::ALL.iter().map(|c| c.as_str()).collect(),
            LabelDimension::SentimentClass => SentimentClass::ALL.iter().map(|c| c.as_str()).collect(),
            LabelDimension::Emotions => {
                let mut l: Vec<&str> = Emotion::ALL.iter().map(|e| e.as_str()).collect();
                l.push(NEUTRAL_EMOTION);
                l
            }
        }
    }

    /// Whether each profile carries exactly one label of this dimension.
    pub fn is_partitioning(self) -> bool {
        !matches!(self, LabelDimension::Emotions)
    }

    fn hits(self, p: &AffectiveProfile) -> Vec<usize> {
        match self {
            LabelDimension::EiClass(e) => vec![p.ei_classes.get(e) as usize],
            LabelDimension::SentimentClass => vec![p.sentiment_class as usize],
            LabelDimension::Emotions => {
                if p.emotions.is_neutral() {
                    vec![Emotion::ALL.len()]
                } else {
                    (0..Emotion::ALL.len())
                        .filter(|&i| p.emotions.contains(Emotion::ALL[i]))
                        .collect()
                }
            }
        }
    }
}

impl fmt::Display for LabelDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelDimension::EiClass(e) => write!(f, "{} intensity class", e.as_str()),
            LabelDimension::SentimentClass => f.write_str("sentiment class"),
            LabelDimension::Emotions => f.write_str("emotions"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub dimension: LabelDimension,
    pub labels: Vec<String>,
    /// Per group, the share of profiles carrying each label.
    pub groups: Vec<(String, Vec<f64>)>,
}

impl LabelDistribution {
    pub fn group(&self, name: &str) -> Option<&[f64]> {
        self.groups.iter().find(|(g, _)| g == name).map(|(_, p)| p.as_slice())
    }

    pub fn proportion(&self, group: &str, label: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == label)?;
        self.group(group).map(|p| p[i])
    }
}

pub fn label_distribution(
    groups: &GroupedProfiles,
    dimension: LabelDimension,
) -> Result<LabelDistribution, AnalysisError> {
    groups.check()?;
    let labels = dimension.labels();
    let rows = groups
        .iter()
        .map(|(name, profiles)| {
            let mut counts = vec![0usize; labels.len()];
            for p in profiles {
                for i in dimension.hits(p) {
                    counts[i] += 1;
                }
            }
            let n = profiles.len() as f64;
            (name.to_string(), counts.iter().map(|&c| c as f64 / n).collect())
        })
        .collect();
    Ok(LabelDistribution {
        dimension,
        labels: labels.into_iter().map(str::to_string).collect(),
        groups: rows,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AnalysisError + '_ {
    move |e| AnalysisError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Rows of `field,group,bin_lo,bin_hi,mass`.
pub fn write_density_csv(series: &[DensitySeries], path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["field", "group", "bin_lo", "bin_hi", "mass"])
        .map_err(csv_err(path))?;
    for s in series {
        for g in &s.groups {
            for (i, m) in g.masses.iter().enumerate() {
                w.write_record([
                    s.field.to_string(),
                    g.group.clone(),
                    format!("{}", s.edges[i]),
                    format!("{}", s.edges[i + 1]),
                    format!("{m}"),
                ])
                .map_err(csv_err(path))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

/// Rows of `dimension,group,label,proportion`.
pub fn write_label_csv(dists: &[LabelDistribution], path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["dimension", "group", "label", "proportion"])
        .map_err(csv_err(path))?;
    for d in dists {
        for (group, props) in &d.groups {
            for (label, p) in d.labels.iter().zip(props) {
                w.write_record([d.dimension.to_string(), group.clone(), label.clone(), format!("{p}")])
                    .map_err(csv_err(path))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 200.0;
const MARGIN: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(out: &mut String, names: &[&str], y: f64) {
    for (i, name) in names.iter().enumerate() {
        let x = MARGIN + 130.0 * i as f64;
        let _ = write!(
            out,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-size="11">{}</text>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y,
            escape(name)
        );
    }
}

/// Stacked line panels, one per series; optional smoothed curves replace
/// the step outline when `smooth` is set.
pub fn render_density_svg(title: &str, series: &[DensitySeries], smooth: Option<&GroupedProfiles>) -> String {
    let height = MARGIN * 2.0 + series.len() as f64 * (PANEL_H + MARGIN);
    let width = PANEL_W + 2.0 * MARGIN;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif"><text x="{MARGIN}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for (k, s) in series.iter().enumerate() {
        let top = MARGIN + k as f64 * (PANEL_H + MARGIN);
        let bins = s.edges.len() - 1;
        let curves: Vec<Vec<f64>> = match smooth {
            Some(groups) => {
                let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
                s.groups
                    .iter()
                    .map(|g| {
                        let vals: Vec<f64> = groups
                            .get(&g.group)
                            .unwrap_or(&[])
                            .iter()
                            .map(|p| s.field.value(p))
                            .collect();
                        kde(&vals, &grid)
                    })
                    .collect()
            }
            None => s
                .groups
                .iter()
                .map(|g| g.masses.iter().map(|m| m * bins as f64).collect())
                .collect(),
        };
        let ymax = curves.iter().flatten().cloned().fold(0.0, f64::max).max(1e-9);
        let _ = write!(
            out,
            r#"<rect x="{MARGIN}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="gray"/><text x="{}" y="{}" font-size="12">{}</text>"#,
            MARGIN + 4.0,
            top + 14.0,
            escape(&s.field.to_string())
        );
        for (i, curve) in curves.iter().enumerate() {
            let m = curve.len();
            let points: Vec<String> = curve
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let x = MARGIN
                        + PANEL_W * (j as f64 + if smooth.is_some() { 0.0 } else { 0.5 })
                            / (m - usize::from(smooth.is_some())).max(1) as f64;
                    let y = top + PANEL_H * (1.0 - v / ymax);
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            let _ = write!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                PALETTE[i % PALETTE.len()],
                points.join(" ")
            );
        }
    }
    let names: Vec<&str> = series
        .first()
        .map(|s| s.groups.iter().map(|g| g.group.as_str()).collect())
        .unwrap_or_default();
    legend(&mut out, &names, height - 12.0);
    out.push_str("</svg>\n");
    out
}

/// Grouped bar panels, one per distribution.
pub fn render_label_svg(title: &str, dists: &[LabelDistribution]) -> String {
    let height = MARGIN * 2.0 + dists.len() as f64 * (PANEL_H + MARGIN + 40.0);
    let width = PANEL_W + 2.0 * MARGIN;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif"><text x="{MARGIN}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for (k, d) in dists.iter().enumerate() {
        let top = MARGIN + k as f64 * (PANEL_H + MARGIN + 40.0);
        let _ = write!(
            out,
            r#"<rect x="{MARGIN}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="gray"/><text x="{}" y="{}" font-size="12">{}</text>"#,
            MARGIN + 4.0,
            top + 14.0,
            escape(&d.dimension.to_string())
        );
        let slot = PANEL_W / d.labels.len() as f64;
        let bar = slot * 0.8 / d.groups.len().max(1) as f64;
        for (li, label) in d.labels.iter().enumerate() {
            let x0 = MARGIN + slot * li as f64 + slot * 0.1;
            for (gi, (_, props)) in d.groups.iter().enumerate() {
                let h = PANEL_H * props[li];
                let _ = write!(
                    out,
                    r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                    x0 + bar * gi as f64,
                    top + PANEL_H - h,
                    bar,
                    h,
                    PALETTE[gi % PALETTE.len()]
                );
            }
            let _ = write!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" transform="rotate(30 {:.1} {:.1})">{}</text>"#,
                x0,
                top + PANEL_H + 12.0,
                x0,
                top + PANEL_H + 12.0,
                escape(label)
            );
        }
    }
    let names: Vec<&str> = dists
        .first()
        .map(|d| d.groups.iter().map(|(g, _)| g.as_str()).collect())
        .unwrap_or_default();
    legend(&mut out, &names, height - 12.0);
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub bins: usize,
    pub smooth: bool,
    pub svg: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            bins: 50,
            smooth: false,
            svg: true,
        }
    }
}

/// Writes the five figure families for one grouping, named
/// `{prefix}_{figure}_by_{grouping}.{csv,svg}`. Returns the paths written.
pub fn write_figures(
    dir: &Path,
    prefix: &str,
    grouping: &str,
    groups: &GroupedProfiles,
    options: &AnalysisOptions,
) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let emit_svg = |name: &str, svg: String, written: &mut Vec<PathBuf>| -> Result<(), AnalysisError> {
        if options.svg {
            let path = dir.join(format!("{name}.svg"));
            fs::write(&path, svg).map_err(io_err(&path))?;
            written.push(path);
        }
        Ok(())
    };

    let densities = |fields: &[ScoreField]| -> Result<Vec<DensitySeries>, AnalysisError> {
        fields.iter().map(|f| density(groups, *f, options.bins)).collect()
    };
    let smooth = options.smooth.then_some(groups);
    for (figure, fields, title) in [
        ("ei", &ScoreField::EMOTIONS[..], "Emotion intensity"),
        (
            "sentiment_strength",
            &[ScoreField::SentimentStrength][..],
            "Sentiment strength",
        ),
    ] {
        let name = format!("{prefix}_{figure}_by_{grouping}");
        let series = densities(fields)?;
        let path = dir.join(format!("{name}.csv"));
        write_density_csv(&series, &path)?;
        written.push(path);
        emit_svg(
            &name,
            render_density_svg(&format!("{title} by {grouping}"), &series, smooth),
            &mut written,
        )?;
    }

    let ei_dims: Vec<LabelDimension> = BasicEmotion::ALL.into_iter().map(LabelDimension::EiClass).collect();
    for (figure, dims, title) in [
        ("ei_class", ei_dims.as_slice(), "Emotion intensity classification"),
        (
            "sentiment_class",
            &[LabelDimension::SentimentClass][..],
            "Sentiment classification",
        ),
        ("emotions", &[LabelDimension::Emotions][..], "Emotion classification"),
    ] {
        let name = format!("{prefix}_{figure}_by_{grouping}");
        let dists: Vec<LabelDistribution> = dims
            .iter()
            .map(|d| label_distribution(groups, *d))
            .collect::<Result<_, _>>()?;
        let path = dir.join(format!("{name}.csv"));
        write_label_csv(&dists, &path)?;
        written.push(path);
        emit_svg(
            &name,
            render_label_svg(&format!("{title} by {grouping}"), &dists),
            &mut written,
        )?;
    }
    Ok(written)
}
