//! Five-dimension affective profiles: emotion intensity scores, ordinal
//! intensity classes, sentiment strength, sentiment class and the detected
//! emotion set. Profiles are acquired from an analyzer model (or a cache)
//! and rendered into the affective block appended to task prompts.

mod acquire;
mod parse;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use acquire::{
    acquire_profiles, cache_key, AcquireReport, AffectError, AffectPromptTemplates, AffectProvider, CacheEntry,
    CacheOnlyProvider, ProfileCache, ProviderError, RemoteAffectProvider,
};
pub use parse::{assemble_profile, parse_dimension_response, AffectDimension, AffectParseError, ProfileComponent};

/// The four emotions scored for intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasicEmotion {
    Anger,
    Fear,
    Joy,
    Sadness,
}

impl BasicEmotion {
    pub const ALL: [BasicEmotion; 4] = [
        BasicEmotion::Anger,
        BasicEmotion::Fear,
        BasicEmotion::Joy,
        BasicEmotion::Sadness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BasicEmotion::Anger => "anger",
            BasicEmotion::Fear => "fear",
            BasicEmotion::Joy => "joy",
            BasicEmotion::Sadness => "sadness",
        }
    }
}

/// A value for each of the four basic emotions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerEmotion<T> {
    pub anger: T,
    pub fear: T,
    pub joy: T,
    pub sadness: T,
}

impl<T: Copy> PerEmotion<T> {
    pub fn uniform(value: T) -> Self {
        PerEmotion {
            anger: value,
            fear: value,
            joy: value,
            sadness: value,
        }
    }

    pub fn get(&self, emotion: BasicEmotion) -> T {
        match emotion {
            BasicEmotion::Anger => self.anger,
            BasicEmotion::Fear => self.fear,
            BasicEmotion::Joy => self.joy,
            BasicEmotion::Sadness => self.sadness,
        }
    }

    pub fn set(&mut self, emotion: BasicEmotion, value: T) {
        match emotion {
            BasicEmotion::Anger => self.anger = value,
            BasicEmotion::Fear => self.fear = value,
            BasicEmotion::Joy => self.joy = value,
            BasicEmotion::Sadness => self.sadness = value,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (BasicEmotion, T)> + '_ {
        BasicEmotion::ALL.into_iter().map(|e| (e, self.get(e)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityClass {
    No,
    Low,
    Moderate,
    High,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 4] = [
        IntensityClass::No,
        IntensityClass::Low,
        IntensityClass::Moderate,
        IntensityClass::High,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntensityClass::No => "no",
            IntensityClass::Low => "low",
            IntensityClass::Moderate => "moderate",
            IntensityClass::High => "high",
        }
    }

    /// "no anger can be inferred", "moderate amount of fear can be inferred", ...
    pub fn phrase(self, emotion: BasicEmotion) -> String {
        match self {
            IntensityClass::No => format!("no {} can be inferred", emotion.as_str()),
            other => format!("{} amount of {} can be inferred", other.as_str(), emotion.as_str()),
        }
    }
}

impl FromStr for IntensityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|c| c.as_str() == s).ok_or(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SentimentClass {
    VeryNegative,
    ModeratelyNegative,
    SlightlyNegative,
    Neutral,
    SlightlyPositive,
    ModeratelyPositive,
    VeryPositive,
}

impl SentimentClass {
    pub const ALL: [SentimentClass; 7] = [
        SentimentClass::VeryNegative,
        SentimentClass::ModeratelyNegative,
        SentimentClass::SlightlyNegative,
        SentimentClass::Neutral,
        SentimentClass::SlightlyPositive,
        SentimentClass::ModeratelyPositive,
        SentimentClass::VeryPositive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentClass::VeryNegative => "very negative",
            SentimentClass::ModeratelyNegative => "moderately negative",
            SentimentClass::SlightlyNegative => "slightly negative",
            SentimentClass::Neutral => "neutral",
            SentimentClass::SlightlyPositive => "slightly positive",
            SentimentClass::ModeratelyPositive => "moderately positive",
            SentimentClass::VeryPositive => "very positive",
        }
    }

    pub fn phrase(self) -> String {
        match self {
            SentimentClass::Neutral => "neutral or mixed mental state can be inferred".to_string(),
            other => format!("{} mental state can be inferred", other.as_str()),
        }
    }
}

/// The eleven detectable emotions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Anticipation,
    Disgust,
    Fear,
    Joy,
    Love,
    Optimism,
    Pessimism,
    Sadness,
    Surprise,
    Trust,
}

impl Emotion {
    pub const ALL: [Emotion; 11] = [
        Emotion::Anger,
        Emotion::Anticipation,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Joy,
        Emotion::Love,
        Emotion::Optimism,
        Emotion::Pessimism,
        Emotion::Sadness,
        Emotion::Surprise,
        Emotion::Trust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Anticipation => "anticipation",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Joy => "joy",
            Emotion::Love => "love",
            Emotion::Optimism => "optimism",
            Emotion::Pessimism => "pessimism",
            Emotion::Sadness => "sadness",
            Emotion::Surprise => "surprise",
            Emotion::Trust => "trust",
        }
    }
}

pub const NEUTRAL_EMOTION: &str = "neutral or no emotion";

/// Detected emotions; never empty. `Neutral` stands for "neutral or no emotion".
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EmotionSet {
    Neutral,
    Emotions(BTreeSet<Emotion>),
}

impl EmotionSet {
    /// Builds a set, mapping an empty input to `Neutral`.
    pub fn from_emotions(emotions: impl IntoIterator<Item = Emotion>) -> Self {
        let set: BTreeSet<Emotion> = emotions.into_iter().collect();
        if set.is_empty() {
            EmotionSet::Neutral
        } else {
            EmotionSet::Emotions(set)
        }
    }

    pub fn contains(&self, emotion: Emotion) -> bool {
        matches!(self, EmotionSet::Emotions(s) if s.contains(&emotion))
    }

    pub fn is_neutral(&self) -> bool {
        matches!(self, EmotionSet::Neutral)
    }

    pub fn labels(&self) -> Vec<&'static str> {
        match self {
            EmotionSet::Neutral => vec![NEUTRAL_EMOTION],
            EmotionSet::Emotions(s) => s.iter().map(|e| e.as_str()).collect(),
        }
    }
}

impl fmt::Display for EmotionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.labels().join(", "))
    }
}

impl Serialize for EmotionSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.labels().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmotionSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(deserializer)?;
        let mut set = BTreeSet::new();
        for label in &labels {
            let label = label.trim().to_ascii_lowercase();
            if label == NEUTRAL_EMOTION || label == "neutral" {
                continue;
            }
            let emotion = Emotion::ALL
                .into_iter()
                .find(|e| e.as_str() == label)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown emotion `{label}`")))?;
            set.insert(emotion);
        }
        Ok(EmotionSet::from_emotions(set))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectiveProfile {
    pub ei_scores: PerEmotion<f64>,
    pub ei_classes: PerEmotion<IntensityClass>,
    pub sentiment_strength: f64,
    pub sentiment_class: SentimentClass,
    pub emotions: EmotionSet,
}

impl AffectiveProfile {
    /// Clamps every score into [0, 1], returning a warning per adjusted value.
    pub fn clamp_scores(&mut self) -> Vec<String> {
        let mut warnings = Vec::new();
        let mut clamp = |name: &str, v: &mut f64| {
            let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            if c != *v {
                warnings.push(format!("{name} score {v} outside [0, 1], clamped to {c}"));
                *v = c;
            }
        };
        for e in BasicEmotion::ALL {
            let mut v = self.ei_scores.get(e);
            clamp(e.as_str(), &mut v);
            self.ei_scores.set(e, v);
        }
        clamp("sentiment strength", &mut self.sentiment_strength);
        warnings
    }

    pub fn is_valid(&self) -> bool {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        self.ei_scores.iter().all(|(_, v)| in_range(v)) && in_range(self.sentiment_strength)
    }
}

/// Shortest decimal rendering with at most three places: 0.250 -> "0.25".
pub fn format_score(value: f64) -> String {
    let s = format!("{value:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub const AFFECTIVE_PREAMBLE: &str = "You can also refer to the affective information.";

pub fn format_emotion_intensity(profile: &AffectiveProfile) -> String {
    let scores: Vec<String> = profile
        .ei_scores
        .iter()
        .map(|(e, v)| format!("{}: {}", e.as_str(), format_score(v)))
        .collect();
    format!("(1) Emotion intensity: {}.", scores.join(", "))
}

pub fn format_emotion_classes(profile: &AffectiveProfile) -> String {
    let phrases: Vec<String> = profile.ei_classes.iter().map(|(e, c)| c.phrase(e)).collect();
    format!(
        "(2) Ordinal classification of emotion intensity: {}.",
        phrases.join(". ")
    )
}

pub fn format_sentiment_strength(profile: &AffectiveProfile) -> String {
    format!("(3) Sentiment intensity: {}.", format_score(profile.sentiment_strength))
}

pub fn format_sentiment_class(profile: &AffectiveProfile) -> String {
    format!("(4) Sentiment classification: {}.", profile.sentiment_class.phrase())
}

pub fn format_emotion_set(profile: &AffectiveProfile) -> String {
    format!("(5) The emotions included are: {}.", profile.emotions)
}

/// The affective sentence appended to a task prompt.
pub fn format_affective_block(profile: &AffectiveProfile) -> String {
    [
        AFFECTIVE_PREAMBLE.to_string(),
        format_emotion_intensity(profile),
        format_emotion_classes(profile),
        format_sentiment_strength(profile),
        format_sentiment_class(profile),
        format_emotion_set(profile),
    ]
    .join(" ")
}
