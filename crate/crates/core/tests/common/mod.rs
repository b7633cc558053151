#![allow(dead_code)]

use std::path::{Path, PathBuf};

use condid::affect::{
    cache_key, AffectiveProfile, CacheEntry, Emotion, EmotionSet, IntensityClass, PerEmotion, ProfileCache,
    SentimentClass,
};
use condid::corpus::{
    write_coco_csv, write_loco, CategoryLabels, CocoRecord, ConspiracyCategory, IntentionLabel, LocoRecord,
    RelatednessLabel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// COCO records with sparse category labels: each category is mostly
/// Unrelated, sometimes Related or Conspiracy.
pub fn synthetic_coco(n: usize, seed: u64) -> Vec<CocoRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut labels = CategoryLabels::uniform(IntentionLabel::Unrelated);
            for c in ConspiracyCategory::ALL {
                let x: f64 = rng.gen();
                let l = if x < 0.06 {
                    IntentionLabel::Conspiracy
                } else if x < 0.16 {
                    IntentionLabel::Related
                } else {
                    IntentionLabel::Unrelated
                };
                labels.set(c, l);
            }
            CocoRecord::new(
                format!("t{i:05}"),
                format!("tweet number {i}, with \"quotes\", commas and 5G talk"),
                labels,
            )
        })
        .collect()
}

pub fn synthetic_loco(n: usize, seed: u64) -> Vec<LocoRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = ["sandy-hook", "coronavirus", "moon-landing", "flat-earth", ""];
    (0..n)
        .map(|i| LocoRecord {
            id: format!("d{i:05}"),
            text: format!("document {i}\nspanning lines"),
            is_conspiracy: rng.gen_bool(0.4),
            relatedness: RelatednessLabel::ALL[rng.gen_range(0..3)],
            topic: topics[rng.gen_range(0..topics.len())].to_string(),
        })
        .collect()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub coco: PathBuf,
    pub loco: PathBuf,
    pub coco_records: Vec<CocoRecord>,
    pub loco_records: Vec<LocoRecord>,
}

impl Fixture {
    pub fn new(n_coco: usize, n_loco: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let coco = dir.path().join("coco.csv");
        let loco = dir.path().join("loco.jsonl");
        let coco_records = synthetic_coco(n_coco, 1);
        let loco_records = synthetic_loco(n_loco, 2);
        write_coco_csv(&coco_records, &coco).unwrap();
        write_loco(&loco_records, &loco).unwrap();
        Fixture {
            dir,
            coco,
            loco,
            coco_records,
            loco_records,
        }
    }

    pub fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    /// Runs the CLI against this fixture's output directory.
    pub fn cli(&self, args: &[&str]) -> i32 {
        self.cli_in(&self.out(), args)
    }

    pub fn cli_in(&self, out: &Path, args: &[&str]) -> i32 {
        let mut full: Vec<String> = vec!["condid".into(), "--out".into(), out.display().to_string()];
        full.extend(args.iter().map(|s| s.to_string()));
        condid::cli::run_from(full)
    }

    pub fn ingest_and_split(&self) {
        let coco = self.coco.display().to_string();
        let loco = self.loco.display().to_string();
        assert_eq!(self.cli(&["ingest", "--coco", &coco, "--loco", &loco]), 0);
        assert_eq!(self.cli(&["split"]), 0);
    }
}

/// A valid profile whose scores depend on `x` in [0, 1].
pub fn profile_for(x: f64) -> AffectiveProfile {
    let class = match (x * 4.0) as usize {
        0 => IntensityClass::No,
        1 => IntensityClass::Low,
        2 => IntensityClass::Moderate,
        _ => IntensityClass::High,
    };
    AffectiveProfile {
        ei_scores: PerEmotion {
            anger: x,
            fear: 1.0 - x,
            joy: x / 2.0,
            sadness: 0.25,
        },
        ei_classes: PerEmotion {
            anger: class,
            fear: IntensityClass::Low,
            joy: IntensityClass::No,
            sadness: IntensityClass::Low,
        },
        sentiment_strength: x,
        sentiment_class: SentimentClass::ALL[((x * 6.0).round() as usize).min(6)],
        emotions: if x < 0.2 {
            EmotionSet::Neutral
        } else {
            EmotionSet::from_emotions([Emotion::Anger, Emotion::Fear])
        },
    }
}

/// Writes a cache entry for each `(id, text)`.
pub fn seed_cache(path: &Path, texts: &[(String, String)]) {
    let mut cache = ProfileCache::open(path).unwrap();
    for (i, (id, text)) in texts.iter().enumerate() {
        cache
            .append(CacheEntry {
                key: cache_key(text),
                text_id: id.clone(),
                profile: profile_for((i % 10) as f64 / 10.0),
            })
            .unwrap();
    }
}
