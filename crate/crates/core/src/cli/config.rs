use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::affect::AffectPromptTemplates;
use crate::analysis::AnalysisOptions;
use crate::corpus::{CocoFormat, SplitName, SplitRatios};
use crate::inference::BackendConfig;
use crate::instructions::TaskId;
use crate::provenance::{json_hash, Provenance};

/// Everything a pipeline invocation needs. Loaded from JSON; command-line
/// flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub coco: Option<PathBuf>,
    pub coco_format: Option<CocoFormat>,
    pub loco: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/affect/cache.jsonl`.
    pub cache: Option<PathBuf>,
    pub seed: u64,
    pub ratios: SplitRatios,
    /// Explicit split manifests; when set they replace the seeded split.
    pub coco_split_manifest: Option<PathBuf>,
    pub loco_split_manifest: Option<PathBuf>,
    pub tasks: Vec<TaskId>,
    pub split: SplitName,
    pub affect: bool,
    pub backend: BackendConfig,
    /// Analyzer model for `annotate-affect`. Without it only cached
    /// profiles are available.
    pub affect_backend: Option<BackendConfig>,
    pub affect_templates: AffectPromptTemplates,
    pub analysis: AnalysisOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            coco: None,
            coco_format: None,
            loco: None,
            output_dir: PathBuf::from("out"),
            cache: None,
            seed: 42,
            ratios: SplitRatios::default(),
            coco_split_manifest: None,
            loco_split_manifest: None,
            tasks: vec![
                TaskId::Intention,
                TaskId::Topics,
                TaskId::PerCategory,
                TaskId::Conspiracy,
                TaskId::Relatedness,
            ],
            split: SplitName::Test,
            affect: false,
            backend: BackendConfig::default(),
            affect_backend: None,
            affect_templates: AffectPromptTemplates::default(),
            analysis: AnalysisOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache
            .clone()
            .unwrap_or_else(|| self.output_dir.join("affect").join("cache.jsonl"))
    }

    /// Checks that every input path the config names exists.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let inputs = [
            &self.coco,
            &self.loco,
            &self.coco_split_manifest,
            &self.loco_split_manifest,
        ];
        for path in inputs.into_iter().flatten() {
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "configured path {} does not exist",
                    path.display()
                )));
            }
        }
        self.ratios.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// Hash of the settings that shape artifact contents. File locations
    /// and the task selection are left out, so the same settings give the
    /// same hash wherever the inputs and outputs live.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.tasks.clear();
        c.coco = None;
        c.loco = None;
        c.output_dir = PathBuf::new();
        c.cache = None;
        c.coco_split_manifest = c.coco_split_manifest.as_ref().map(|_| PathBuf::from("manifest"));
        c.loco_split_manifest = c.loco_split_manifest.as_ref().map(|_| PathBuf::from("manifest"));
        json_hash(&c)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.content_hash(), self.seed)
    }
}
