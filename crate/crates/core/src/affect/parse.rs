//! Extraction of profile components from the analyzer's free-text replies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AffectiveProfile, BasicEmotion, Emotion, EmotionSet, IntensityClass, PerEmotion, SentimentClass};

/// One of the five analysis dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffectDimension {
    EmotionIntensity,
    EmotionClass,
    SentimentStrength,
    SentimentClass,
    EmotionDetection,
}

impl AffectDimension {
    pub const ALL: [AffectDimension; 5] = [
        AffectDimension::EmotionIntensity,
        AffectDimension::EmotionClass,
        AffectDimension::SentimentStrength,
        AffectDimension::SentimentClass,
        AffectDimension::EmotionDetection,
    ];
}

impl fmt::Display for AffectDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AffectDimension::EmotionIntensity => "emotion-intensity",
            AffectDimension::EmotionClass => "emotion-class",
            AffectDimension::SentimentStrength => "sentiment-strength",
            AffectDimension::SentimentClass => "sentiment-class",
            AffectDimension::EmotionDetection => "emotion-detection",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cannot extract {dimension} from reply ({reason}): {raw:?}")]
pub struct AffectParseError {
    pub dimension: AffectDimension,
    pub reason: String,
    pub raw: String,
}

/// What a single dimension reply contributes to a profile. Per-emotion
/// components may be partial; [`assemble_profile`] demands totality.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileComponent {
    EmotionScores(BTreeMap<BasicEmotion, f64>),
    EmotionClasses(BTreeMap<BasicEmotion, IntensityClass>),
    SentimentStrength(f64),
    SentimentClass(SentimentClass),
    Emotions(EmotionSet),
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?[0-9]+(?:\.[0-9]+)?|-?\.[0-9]+").unwrap())
}

fn word_re(word: &str) -> Regex {
    Regex::new(&format!(r"(?i)\b{}\b", regex::escape(word))).unwrap()
}

/// Real numbers in `text` with their byte offsets, skipping list markers
/// like "(3)" and digits glued to letters.
fn numbers(text: &str) -> Vec<(usize, f64)> {
    let bytes = text.as_bytes();
    number_re()
        .find_iter(text)
        .filter(|m| {
            let before = m.start().checked_sub(1).map(|i| bytes[i]);
            let after = bytes.get(m.end()).copied();
            let glued = |b: Option<u8>| b.is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_');
            let enumerator = before == Some(b'(') && after == Some(b')');
            !glued(before) && !glued(after) && !enumerator
        })
        .filter_map(|m| m.as_str().parse().ok().map(|v| (m.start(), v)))
        .collect()
}

fn emotion_scores(raw: &str) -> BTreeMap<BasicEmotion, f64> {
    let mut mentions: Vec<(usize, BasicEmotion)> = BasicEmotion::ALL
        .into_iter()
        .flat_map(|e| {
            word_re(e.as_str())
                .find_iter(raw)
                .map(move |m| (m.end(), e))
                .collect::<Vec<_>>()
        })
        .collect();
    mentions.sort();
    let nums = numbers(raw);
    let mut scores = BTreeMap::new();
    for (i, &(start, emotion)) in mentions.iter().enumerate() {
        if scores.contains_key(&emotion) {
            continue;
        }
        let end = mentions.get(i + 1).map(|m| m.0).unwrap_or(raw.len());
        if let Some(&(_, v)) = nums.iter().find(|(pos, _)| *pos >= start && *pos < end) {
            scores.insert(emotion, v);
        }
    }
    scores
}

fn emotion_classes(raw: &str) -> BTreeMap<BasicEmotion, IntensityClass> {
    let mut classes = BTreeMap::new();
    for emotion in BasicEmotion::ALL {
        let e = regex::escape(emotion.as_str());
        let before = Regex::new(&format!(
            r"(?i)\b(no|low|moderate|high)(?:\s+(?:amount|level|degree)\s+of)?\s+{e}\b"
        ))
        .unwrap();
        let after = Regex::new(&format!(
            r"(?i)\b{e}\b(?:\s+intensity)?\s*[:=\-]\s*(no|low|moderate|high)\b"
        ))
        .unwrap();
        let hit = [before.captures(raw), after.captures(raw)]
            .into_iter()
            .flatten()
            .min_by_key(|c| c.get(0).unwrap().start());
        if let Some(c) = hit {
            if let Ok(class) = c[1].parse() {
                classes.insert(emotion, class);
            }
        }
    }
    classes
}

fn sentiment_class(raw: &str) -> Option<SentimentClass> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)\b(very|moderately|slightly)\s+(negative|positive)\b").unwrap());
    if let Some(c) = re.captures(raw) {
        let phrase = format!("{} {}", c[1].to_ascii_lowercase(), c[2].to_ascii_lowercase());
        return SentimentClass::ALL.into_iter().find(|s| s.as_str() == phrase);
    }
    word_re("neutral").is_match(raw).then_some(SentimentClass::Neutral)
}

fn emotion_set(raw: &str) -> Option<EmotionSet> {
    let found: BTreeSet<Emotion> = Emotion::ALL
        .into_iter()
        .filter(|e| word_re(e.as_str()).is_match(raw))
        .collect();
    if !found.is_empty() {
        return Some(EmotionSet::Emotions(found));
    }
    let lower = raw.to_ascii_lowercase();
    (lower.contains("no emotion") || word_re("neutral").is_match(raw)).then_some(EmotionSet::Neutral)
}

pub fn parse_dimension_response(dimension: AffectDimension, raw: &str) -> Result<ProfileComponent, AffectParseError> {
    let fail = |reason: &str| AffectParseError {
        dimension,
        reason: reason.to_string(),
        raw: raw.to_string(),
    };
    match dimension {
        AffectDimension::EmotionIntensity => {
            let scores = emotion_scores(raw);
            if scores.is_empty() {
                return Err(fail("no emotion score found"));
            }
            Ok(ProfileComponent::EmotionScores(scores))
        }
        AffectDimension::EmotionClass => {
            let classes = emotion_classes(raw);
            if classes.is_empty() {
                return Err(fail("no intensity class found"));
            }
            Ok(ProfileComponent::EmotionClasses(classes))
        }
        AffectDimension::SentimentStrength => numbers(raw)
            .first()
            .map(|&(_, v)| ProfileComponent::SentimentStrength(v))
            .ok_or_else(|| fail("no number found")),
        AffectDimension::SentimentClass => sentiment_class(raw)
            .map(ProfileComponent::SentimentClass)
            .ok_or_else(|| fail("no sentiment class found")),
        AffectDimension::EmotionDetection => emotion_set(raw)
            .map(ProfileComponent::Emotions)
            .ok_or_else(|| fail("no emotion label found")),
    }
}

/// Parses the five replies (in [`AffectDimension::ALL`] order) into a
/// profile, clamping out-of-range scores. Returns the profile and any
/// clamping warnings.
pub fn assemble_profile(
    replies: &[(AffectDimension, String)],
) -> Result<(AffectiveProfile, Vec<String>), AffectParseError> {
    let mut scores = None;
    let mut classes = None;
    let mut strength = None;
    let mut sentiment = None;
    let mut emotions = None;
    for (dimension, raw) in replies {
        let incomplete = |missing: BasicEmotion| AffectParseError {
            dimension: *dimension,
            reason: format!("missing {}", missing.as_str()),
            raw: raw.clone(),
        };
        match parse_dimension_response(*dimension, raw)? {
            ProfileComponent::EmotionScores(map) => {
                let mut total = PerEmotion::uniform(0.0);
                for e in BasicEmotion::ALL {
                    total.set(e, *map.get(&e).ok_or_else(|| incomplete(e))?);
                }
                scores = Some(total);
            }
            ProfileComponent::EmotionClasses(map) => {
                let mut total = PerEmotion::uniform(IntensityClass::No);
                for e in BasicEmotion::ALL {
                    total.set(e, *map.get(&e).ok_or_else(|| incomplete(e))?);
                }
                classes = Some(total);
            }
            ProfileComponent::SentimentStrength(v) => strength = Some(v),
            ProfileComponent::SentimentClass(c) => sentiment = Some(c),
            ProfileComponent::Emotions(set) => emotions = Some(set),
        }
    }
    let missing = |dimension| AffectParseError {
        dimension,
        reason: "no reply for dimension".to_string(),
        raw: String::new(),
    };
    let mut profile = AffectiveProfile {
        ei_scores: scores.ok_or_else(|| missing(AffectDimension::EmotionIntensity))?,
        ei_classes: classes.ok_or_else(|| missing(AffectDimension::EmotionClass))?,
        sentiment_strength: strength.ok_or_else(|| missing(AffectDimension::SentimentStrength))?,
        sentiment_class: sentiment.ok_or_else(|| missing(AffectDimension::SentimentClass))?,
        emotions: emotions.ok_or_else(|| missing(AffectDimension::EmotionDetection))?,
    };
    let warnings = profile.clamp_scores();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((profile, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affect::tests::exemplar_profile;
    use crate::affect::*;
    use proptest::prelude::*;

    #[test]
    fn intensity_reply() {
        let c = parse_dimension_response(
            AffectDimension::EmotionIntensity,
            "anger: 0.52, fear: 0.1, joy: 0.0, sadness: 0.3",
        )
        .unwrap();
        let expected = BTreeMap::from([
            (BasicEmotion::Anger, 0.52),
            (BasicEmotion::Fear, 0.1),
            (BasicEmotion::Joy, 0.0),
            (BasicEmotion::Sadness, 0.3),
        ]);
        assert_eq!(c, ProfileComponent::EmotionScores(expected));
    }

    #[test]
    fn class_reply() {
        let c = parse_dimension_response(
            AffectDimension::EmotionClass,
            "moderate amount of anger can be inferred",
        )
        .unwrap();
        assert_eq!(
            c,
            ProfileComponent::EmotionClasses(BTreeMap::from([(BasicEmotion::Anger, IntensityClass::Moderate)]))
        );
        let c = parse_dimension_response(AffectDimension::EmotionClass, "Fear: high").unwrap();
        assert_eq!(
            c,
            ProfileComponent::EmotionClasses(BTreeMap::from([(BasicEmotion::Fear, IntensityClass::High)]))
        );
    }

    #[test]
    fn emotion_reply() {
        let c = parse_dimension_response(AffectDimension::EmotionDetection, "anger, disgust, fear").unwrap();
        assert_eq!(
            c,
            ProfileComponent::Emotions(EmotionSet::from_emotions([
                Emotion::Anger,
                Emotion::Disgust,
                Emotion::Fear
            ]))
        );
        let c = parse_dimension_response(AffectDimension::EmotionDetection, "neutral or no emotion").unwrap();
        assert_eq!(c, ProfileComponent::Emotions(EmotionSet::Neutral));
    }

    #[test]
    fn sentiment_replies() {
        let c = parse_dimension_response(
            AffectDimension::SentimentClass,
            "Moderately negative mental state can be inferred",
        )
        .unwrap();
        assert_eq!(c, ProfileComponent::SentimentClass(SentimentClass::ModeratelyNegative));
        let c = parse_dimension_response(AffectDimension::SentimentStrength, "The intensity is 0.43").unwrap();
        assert_eq!(c, ProfileComponent::SentimentStrength(0.43));
    }

    #[test]
    fn unparseable_replies_fail_with_payload() {
        for dim in AffectDimension::ALL {
            let err = parse_dimension_response(dim, "I am not able to help.").unwrap_err();
            assert_eq!(err.raw, "I am not able to help.");
            assert_eq!(err.dimension, dim);
        }
    }

    #[test]
    fn covid19_is_not_a_score() {
        let c = parse_dimension_response(AffectDimension::SentimentStrength, "COVID-19 text, (3) score .7");
        assert_eq!(c.unwrap(), ProfileComponent::SentimentStrength(0.7));
    }

    #[test]
    fn assemble_requires_all_emotions() {
        let replies = vec![
            (AffectDimension::EmotionIntensity, "anger: 0.5".to_string()),
            (
                AffectDimension::EmotionClass,
                "no anger. no fear. no joy. no sadness".to_string(),
            ),
            (AffectDimension::SentimentStrength, "0.5".to_string()),
            (AffectDimension::SentimentClass, "neutral".to_string()),
            (AffectDimension::EmotionDetection, "joy".to_string()),
        ];
        let err = assemble_profile(&replies).unwrap_err();
        assert_eq!(err.dimension, AffectDimension::EmotionIntensity);
    }

    #[test]
    fn assemble_clamps() {
        let replies = vec![
            (
                AffectDimension::EmotionIntensity,
                "anger: 1.5, fear: 0.1, joy: 0, sadness: 0.2".to_string(),
            ),
            (
                AffectDimension::EmotionClass,
                "high anger, low fear, no joy, no sadness".to_string(),
            ),
            (AffectDimension::SentimentStrength, "0.5".to_string()),
            (AffectDimension::SentimentClass, "neutral".to_string()),
            (AffectDimension::EmotionDetection, "anger".to_string()),
        ];
        let (p, warnings) = assemble_profile(&replies).unwrap();
        assert_eq!(p.ei_scores.anger, 1.0);
        assert_eq!(warnings.len(), 1);
    }

    fn parts(p: &AffectiveProfile) -> Vec<(AffectDimension, String)> {
        vec![
            (AffectDimension::EmotionIntensity, format_emotion_intensity(p)),
            (AffectDimension::EmotionClass, format_emotion_classes(p)),
            (AffectDimension::SentimentStrength, format_sentiment_strength(p)),
            (AffectDimension::SentimentClass, format_sentiment_class(p)),
            (AffectDimension::EmotionDetection, format_emotion_set(p)),
        ]
    }

    #[test]
    fn exemplar_parts_roundtrip() {
        let p = exemplar_profile();
        let (back, _) = assemble_profile(&parts(&p)).unwrap();
        assert_eq!(back, p);
    }

    fn arb_profile() -> impl Strategy<Value = AffectiveProfile> {
        let score = (0u32..=1000).prop_map(|v| v as f64 / 1000.0);
        (
            proptest::array::uniform4(score.clone()),
            proptest::array::uniform4(0usize..4),
            score,
            0usize..7,
            proptest::collection::btree_set(0usize..11, 0..5),
        )
            .prop_map(|(s, c, strength, sc, em)| AffectiveProfile {
                ei_scores: PerEmotion {
                    anger: s[0],
                    fear: s[1],
                    joy: s[2],
                    sadness: s[3],
                },
                ei_classes: PerEmotion {
                    anger: IntensityClass::ALL[c[0]],
                    fear: IntensityClass::ALL[c[1]],
                    joy: IntensityClass::ALL[c[2]],
                    sadness: IntensityClass::ALL[c[3]],
                },
                sentiment_strength: strength,
                sentiment_class: SentimentClass::ALL[sc],
                emotions: EmotionSet::from_emotions(em.into_iter().map(|i| Emotion::ALL[i])),
            })
    }

    proptest! {
        #[test]
        fn render_then_parse_recovers_profile(p in arb_profile()) {
            let (back, warnings) = assemble_profile(&parts(&p)).unwrap();
            prop_assert!(warnings.is_empty());
            prop_assert_eq!(back, p);
        }

        #[test]
        fn block_is_injective(a in arb_profile(), b in arb_profile()) {
            if a != b {
                prop_assert_ne!(format_affective_block(&a), format_affective_block(&b));
            }
        }
    }
}
