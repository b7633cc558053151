//! Profile acquisition: cache lookups, analyzer queries and cache appends.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use super::parse::{assemble_profile, AffectDimension, AffectParseError};
use super::AffectiveProfile;
use crate::inference::{call_with_retry, Backend, BackendError, RetryPolicy};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("affect provider unavailable: {0}")]
    Unavailable(String),
    #[error("affect provider failed: {0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum AffectError {
    #[error("text `{text_id}`: not cached and provider unavailable: {source}")]
    ProviderUnavailable {
        text_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("text `{text_id}`: {source}")]
    Parse {
        text_id: String,
        #[source]
        source: AffectParseError,
    },
    #[error("profile cache {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Answers one analysis question about a text.
pub trait AffectProvider: Sync {
    fn query(&self, dimension: AffectDimension, text: &str) -> Result<String, ProviderError>;
}

/// A provider that can never compute anything; only cached profiles resolve.
pub struct CacheOnlyProvider;

impl AffectProvider for CacheOnlyProvider {
    fn query(&self, _dimension: AffectDimension, _text: &str) -> Result<String, ProviderError> {
        Err(ProviderError::Unavailable("no affect provider configured".to_string()))
    }
}

/// Per-dimension prompt templates; `{text}` is replaced by the input text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffectPromptTemplates {
    pub emotion_intensity: String,
    pub emotion_class: String,
    pub sentiment_strength: String,
    pub sentiment_class: String,
    pub emotion_detection: String,
}

impl Default for AffectPromptTemplates {
    fn default() -> Self {
        AffectPromptTemplates {
            emotion_intensity: "Task: Assign a numerical value between 0 (least intense) and 1 (most intense) to represent the intensity of each of the emotions anger, fear, joy and sadness expressed in the text. Answer in the form \"anger: X, fear: X, joy: X, sadness: X\".\nText: {text}\nIntensity Scores:".to_string(),
            emotion_class: "Task: For each of the emotions anger, fear, joy and sadness, categorize the emotion intensity of the text into one of four classes: no, low, moderate or high amount of the emotion can be inferred. Answer with one sentence per emotion, e.g. \"low amount of fear can be inferred\".\nText: {text}\nIntensity Classes:".to_string(),
            sentiment_strength: "Task: Evaluate the valence intensity of the writer's mental state based on the text, assigning it a real-valued score from 0 (most negative) to 1 (most positive).\nText: {text}\nIntensity Score:".to_string(),
            sentiment_class: "Task: Categorize the text into the ordinal class that best characterizes the writer's mental state: very negative, moderately negative, slightly negative, neutral or mixed, slightly positive, moderately positive, or very positive mental state can be inferred.\nText: {text}\nIntensity Class:".to_string(),
            emotion_detection: "Task: Categorize the text's emotional tone as either 'neutral or no emotion' or identify the presence of one or more of the given emotions (anger, anticipation, disgust, fear, joy, love, optimism, pessimism, sadness, surprise, trust).\nText: {text}\nThis text contains emotions:".to_string(),
        }
    }
}

impl AffectPromptTemplates {
    pub fn render(&self, dimension: AffectDimension, text: &str) -> String {
        let template = match dimension {
            AffectDimension::EmotionIntensity => &self.emotion_intensity,
            AffectDimension::EmotionClass => &self.emotion_class,
            AffectDimension::SentimentStrength => &self.sentiment_strength,
            AffectDimension::SentimentClass => &self.sentiment_class,
            AffectDimension::EmotionDetection => &self.emotion_detection,
        };
        template.replace("{text}", text)
    }
}

/// Queries an analyzer model over the chat-completion protocol.
pub struct RemoteAffectProvider<B> {
    pub backend: B,
    pub templates: AffectPromptTemplates,
    pub retry: RetryPolicy,
}

impl<B: Backend> AffectProvider for RemoteAffectProvider<B> {
    fn query(&self, dimension: AffectDimension, text: &str) -> Result<String, ProviderError> {
        let prompt = self.templates.render(dimension, text);
        call_with_retry(&self.backend, &prompt, &self.retry)
            .result
            .map_err(|e| match e {
                BackendError::Transient(_) | BackendError::Unresolvable(_) => ProviderError::Unavailable(e.to_string()),
                other => ProviderError::Failed(other.to_string()),
            })
    }
}

/// SHA-256 of the NFC-normalized, trimmed text.
pub fn cache_key(text: &str) -> String {
    let normalized: String = text.trim().nfc().collect();
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

/// One line of the profile cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub text_id: String,
    #[serde(flatten)]
    pub profile: AffectiveProfile,
}

/// Append-only JSON-lines profile cache.
pub struct ProfileCache {
    path: PathBuf,
    entries: HashMap<String, AffectiveProfile>,
}

impl ProfileCache {
    /// Loads `path` if it exists. Unreadable lines (e.g. a torn final
    /// line) are skipped with a warning.
    pub fn open(path: &Path) -> Result<Self, AffectError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let io = |source| AffectError::Io {
                path: path.to_path_buf(),
                source,
            };
            let file = fs::File::open(path).map_err(io)?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.profile);
                    }
                    Err(e) => log::warn!("{}:{}: skipping unreadable cache line: {e}", path.display(), idx + 1),
                }
            }
        }
        Ok(ProfileCache {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&AffectiveProfile> {
        self.entries.get(&cache_key(text))
    }

    /// Writes one complete line per entry and records it in memory.
    pub fn append(&mut self, entry: CacheEntry) -> Result<(), AffectError> {
        let io = |source| AffectError::Io {
            path: self.path.clone(),
            source,
        };
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&self.path)
            .map_err(io)?;
        if ends_mid_line(&mut file).map_err(io)? {
            line.insert(0, '\n');
        }
        file.write_all(line.as_bytes()).map_err(io)?;
        file.flush().map_err(io)?;
        self.entries.insert(entry.key, entry.profile);
        Ok(())
    }
}

fn ends_mid_line(file: &mut fs::File) -> std::io::Result<bool> {
    if file.metadata()?.len() == 0 {
        return Ok(false);
    }
    file.seek(SeekFrom::End(-1))?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last)?;
    Ok(last[0] != b'\n')
}

#[derive(Debug, Clone)]
pub struct AcquireReport {
    pub profiles: Vec<AffectiveProfile>,
    pub cache_hits: usize,
    pub computed: usize,
    pub warnings: Vec<String>,
}

fn compute_profile(
    provider: &dyn AffectProvider,
    text_id: &str,
    text: &str,
) -> Result<(AffectiveProfile, Vec<String>), AffectError> {
    let mut replies = Vec::with_capacity(AffectDimension::ALL.len());
    for dimension in AffectDimension::ALL {
        let raw = provider
            .query(dimension, text)
            .map_err(|source| AffectError::ProviderUnavailable {
                text_id: text_id.to_string(),
                source,
            })?;
        replies.push((dimension, raw));
    }
    assemble_profile(&replies).map_err(|source| AffectError::Parse {
        text_id: text_id.to_string(),
        source,
    })
}

/// Returns one profile per `(id, text)` pair, in order. Cached texts cost
/// no provider calls; the rest are computed by up to `parallelism` workers
/// and appended to the cache as each completes. On error, the first failing
/// text (in input order) is reported; completed profiles stay cached.
pub fn acquire_profiles(
    texts: &[(String, String)],
    provider: &dyn AffectProvider,
    cache_path: &Path,
    parallelism: usize,
) -> Result<AcquireReport, AffectError> {
    let cache = ProfileCache::open(cache_path)?;
    let keys: Vec<String> = texts.iter().map(|(_, t)| cache_key(t)).collect();

    let mut pending = Vec::new();
    let mut queued = std::collections::HashSet::new();
    for (i, key) in keys.iter().enumerate() {
        if !cache.entries.contains_key(key) && queued.insert(key.clone()) {
            pending.push(i);
        }
    }
    let cache_hits = texts.len() - keys.iter().filter(|k| queued.contains(*k)).count();

    let cache = Mutex::new(cache);
    let errors: Mutex<Vec<(usize, AffectError)>> = Mutex::new(Vec::new());
    let warnings: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = parallelism.max(1).min(pending.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let Some(&i) = pending.get(next.fetch_add(1, Ordering::Relaxed)) else {
                    break;
                };
                let (text_id, text) = &texts[i];
                let outcome = compute_profile(provider, text_id, text).and_then(|(profile, w)| {
                    warnings
                        .lock()
                        .unwrap()
                        .extend(w.into_iter().map(|w| format!("{text_id}: {w}")));
                    cache.lock().unwrap().append(CacheEntry {
                        key: keys[i].clone(),
                        text_id: text_id.clone(),
                        profile,
                    })
                });
                if let Err(e) = outcome {
                    stop.store(true, Ordering::Relaxed);
                    errors.lock().unwrap().push((i, e));
                }
            });
        }
    });

    let mut errors = errors.into_inner().unwrap();
    if !errors.is_empty() {
        errors.sort_by_key(|(i, _)| *i);
        return Err(errors.remove(0).1);
    }
    let cache = cache.into_inner().unwrap();
    let profiles = keys
        .iter()
        .map(|k| cache.entries.get(k).cloned().expect("profile cached or computed"))
        .collect();
    Ok(AcquireReport {
        profiles,
        cache_hits,
        computed: pending.len(),
        warnings: warnings.into_inner().unwrap(),
    })
}
