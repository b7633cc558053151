use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::layout::{io_error, json_files, read_json, write_atomic, write_json, Corpus, Layout};
use super::CliError;
use crate::affect::{
    acquire_profiles, AffectError, AffectiveProfile, CacheOnlyProvider, ProfileCache, RemoteAffectProvider,
};
use crate::analysis::{write_figures, AnalysisOptions, GroupedProfiles};
use crate::corpus::{
    load_coco, load_loco, split as seeded_split, write_coco_csv, write_loco, CocoFormat, CocoRecord, LocoRecord,
    SplitAssignment, SplitManifest, SplitName, SplitSource,
};
use crate::inference::{run_task, Backend, ConstantBackend, EchoBackend, HttpBackend, RunManifest};
use crate::instructions::{build_task_dataset, dataset_hash, read_records, write_records, DatasetManifest, TaskInput};
use crate::provenance::{sha256_hex, Provenance};
use crate::scoring::{format_tables, score_run, ScoreReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus: String,
    pub source_file: String,
    pub records: usize,
    pub sha256: String,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Contents of `splits/<corpus>.json`. The `manifest` member is itself a
/// valid split manifest and can be fed back with `--coco-manifest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub corpus: String,
    pub corpus_sha256: String,
    pub source: SplitSource,
    pub sizes: SplitSizes,
    pub manifest: SplitManifest,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisManifest {
    pub files: Vec<String>,
    pub profiles: BTreeMap<String, usize>,
    pub without_profile: BTreeMap<String, usize>,
    pub options: AnalysisOptions,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub reports: Vec<ScoreReport>,
    pub provenance: Provenance,
}

fn require(path: &Path, producer: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Dependency {
            artifact: path.to_path_buf(),
            producer,
        })
    }
}

fn file_sha(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| io_error(path, e))?))
}

fn source_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn warn_all(context: &str, warnings: &[String]) {
    for w in warnings {
        log::warn!("{context}: {w}");
    }
}

pub fn ingest(config: &PipelineConfig, layout: &Layout) -> Result<(), CliError> {
    if config.coco.is_none() && config.loco.is_none() {
        return Err(CliError::Usage(
            "ingest needs --coco and/or --loco (or the config equivalents)".into(),
        ));
    }
    if let Some(src) = &config.coco {
        let format = config.coco_format.unwrap_or_else(|| CocoFormat::from_path(src));
        let loaded = load_coco(src, format)?;
        warn_all(&src.display().to_string(), &loaded.warnings);
        let out = layout.corpus(Corpus::Coco);
        fs::create_dir_all(out.parent().unwrap()).map_err(|e| io_error(&out, e))?;
        write_coco_csv(&loaded.records, &out)?;
        finish_ingest(config, layout, Corpus::Coco, src, loaded.records.len(), loaded.warnings)?;
    }
    if let Some(src) = &config.loco {
        let loaded = load_loco(src)?;
        warn_all(&src.display().to_string(), &loaded.warnings);
        let out = layout.corpus(Corpus::Loco);
        fs::create_dir_all(out.parent().unwrap()).map_err(|e| io_error(&out, e))?;
        write_loco(&loaded.records, &out)?;
        finish_ingest(config, layout, Corpus::Loco, src, loaded.records.len(), loaded.warnings)?;
    }
    Ok(())
}

fn finish_ingest(
    config: &PipelineConfig,
    layout: &Layout,
    corpus: Corpus,
    src: &Path,
    records: usize,
    warnings: Vec<String>,
) -> Result<(), CliError> {
    let out = layout.corpus(corpus);
    let manifest = CorpusManifest {
        corpus: corpus.as_str().to_string(),
        source_file: source_name(src),
        records,
        sha256: file_sha(&out)?,
        warnings,
        provenance: config.provenance(),
    };
    write_json(&layout.corpus_manifest(corpus), &manifest)?;
    println!("{}: {records} records -> {}", corpus.as_str(), out.display());
    Ok(())
}

fn corpus_manifest(layout: &Layout, corpus: Corpus) -> Result<CorpusManifest, CliError> {
    let path = layout.corpus_manifest(corpus);
    require(&path, "ingest")?;
    require(&layout.corpus(corpus), "ingest")?;
    read_json(&path)
}

fn coco_records(layout: &Layout) -> Result<Vec<CocoRecord>, CliError> {
    let path = layout.corpus(Corpus::Coco);
    require(&path, "ingest")?;
    Ok(load_coco(&path, CocoFormat::Csv)?.records)
}

fn loco_records(layout: &Layout) -> Result<Vec<LocoRecord>, CliError> {
    let path = layout.corpus(Corpus::Loco);
    require(&path, "ingest")?;
    Ok(load_loco(&path)?.records)
}

fn corpus_ids(layout: &Layout, corpus: Corpus) -> Result<Vec<String>, CliError> {
    Ok(match corpus {
        Corpus::Coco => coco_records(layout)?.into_iter().map(|r| r.id).collect(),
        Corpus::Loco => loco_records(layout)?.into_iter().map(|r| r.id).collect(),
    })
}

/// Reads an explicit manifest: either a bare `{train, dev, test}` object
/// or a split file written by `split`.
fn read_split_manifest(path: &Path) -> Result<SplitManifest, CliError> {
    let value: serde_json::Value = read_json(path)?;
    let inner = value.get("manifest").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn split(config: &PipelineConfig, layout: &Layout) -> Result<(), CliError> {
    let available: Vec<Corpus> = [Corpus::Coco, Corpus::Loco]
        .into_iter()
        .filter(|c| layout.corpus_manifest(*c).exists())
        .collect();
    if available.is_empty() {
        return Err(CliError::Dependency {
            artifact: layout.corpus_manifest(Corpus::Coco),
            producer: "ingest",
        });
    }
    for corpus in available {
        let cm = corpus_manifest(layout, corpus)?;
        let ids = corpus_ids(layout, corpus)?;
        let explicit = match corpus {
            Corpus::Coco => &config.coco_split_manifest,
            Corpus::Loco => &config.loco_split_manifest,
        };
        let assignment = match explicit {
            Some(path) => SplitAssignment::from_manifest(&ids, &read_split_manifest(path)?)?,
            None => seeded_split(&ids, config.ratios, config.seed)?,
        };
        let (train, dev, test) = assignment.sizes();
        let file = SplitFile {
            corpus: corpus.as_str().to_string(),
            corpus_sha256: cm.sha256,
            source: assignment.source.clone(),
            sizes: SplitSizes { train, dev, test },
            manifest: assignment.to_manifest(),
            provenance: config.provenance(),
        };
        let out = layout.split(corpus);
        write_json(&out, &file)?;
        println!(
            "{}: {train}/{dev}/{test} (train/dev/test) -> {}",
            corpus.as_str(),
            out.display()
        );
    }
    Ok(())
}

fn split_assignment(layout: &Layout, corpus: Corpus, ids: &[String]) -> Result<SplitAssignment, CliError> {
    let path = layout.split(corpus);
    require(&path, "split")?;
    let file: SplitFile = read_json(&path)?;
    let current = corpus_manifest(layout, corpus)?.sha256;
    if file.corpus_sha256 != current {
        return Err(CliError::Data(format!(
            "{} was made for a different {} corpus; rerun `condid split`",
            path.display(),
            corpus.as_str()
        )));
    }
    Ok(SplitAssignment::from_manifest(ids, &file.manifest)?)
}

/// Records of one corpus, optionally restricted to a split, in corpus order.
fn select<T: Clone>(
    layout: &Layout,
    corpus: Corpus,
    records: &[T],
    id: impl Fn(&T) -> &str,
    split: Option<SplitName>,
) -> Result<Vec<T>, CliError> {
    let Some(split) = split else {
        return Ok(records.to_vec());
    };
    let ids: Vec<String> = records.iter().map(|r| id(r).to_string()).collect();
    let assignment = split_assignment(layout, corpus, &ids)?;
    Ok(records
        .iter()
        .filter(|r| assignment.get(id(r)) == Some(split))
        .cloned()
        .collect())
}

fn texts_of(corpus: Corpus, layout: &Layout, split: Option<SplitName>) -> Result<Vec<(String, String)>, CliError> {
    Ok(match corpus {
        Corpus::Coco => select(layout, corpus, &coco_records(layout)?, |r| &r.id, split)?
            .into_iter()
            .map(|r| (r.id, r.text))
            .collect(),
        Corpus::Loco => select(layout, corpus, &loco_records(layout)?, |r| &r.id, split)?
            .into_iter()
            .map(|r| (r.id, r.text))
            .collect(),
    })
}

pub fn annotate_affect(
    config: &PipelineConfig,
    layout: &Layout,
    corpora: &[Corpus],
    split: Option<SplitName>,
    parallelism: Option<usize>,
) -> Result<(), CliError> {
    let remote = match &config.affect_backend {
        Some(cfg) => Some(RemoteAffectProvider {
            backend: HttpBackend::new(cfg.clone())?,
            templates: config.affect_templates.clone(),
            retry: cfg.retry,
        }),
        None => None,
    };
    let workers = parallelism
        .or(config.affect_backend.as_ref().map(|b| b.parallelism))
        .unwrap_or(1);
    let cache = config.cache_path();
    for &corpus in corpora {
        if !layout.corpus(corpus).exists() && corpora.len() > 1 {
            log::info!("{} not ingested; skipping", corpus.as_str());
            continue;
        }
        let texts = texts_of(corpus, layout, split)?;
        let report = match &remote {
            Some(p) => acquire_profiles(&texts, p, &cache, workers),
            None => acquire_profiles(&texts, &CacheOnlyProvider, &cache, workers),
        };
        let report = report.map_err(|e| match e {
            AffectError::ProviderUnavailable { .. } if remote.is_none() => {
                CliError::Usage(format!("{e}; configure `affect_backend` to compute missing profiles"))
            }
            other => other.into(),
        })?;
        warn_all(corpus.as_str(), &report.warnings);
        println!(
            "{}: {} profiles ({} cached, {} computed) -> {}",
            corpus.as_str(),
            report.profiles.len(),
            report.cache_hits,
            report.computed,
            cache.display()
        );
    }
    Ok(())
}

fn cached_profiles(config: &PipelineConfig, texts: &[(String, String)]) -> Result<Vec<AffectiveProfile>, CliError> {
    let cache = config.cache_path();
    require(&cache, "annotate-affect")?;
    acquire_profiles(texts, &CacheOnlyProvider, &cache, 1)
        .map(|r| r.profiles)
        .map_err(|e| match e {
            AffectError::ProviderUnavailable { text_id, .. } => CliError::Data(format!(
                "no cached affective profile for `{text_id}` in {}; run `condid annotate-affect` first",
                cache.display()
            )),
            other => other.into(),
        })
}

pub fn build(config: &PipelineConfig, layout: &Layout) -> Result<(), CliError> {
    let split = config.split;
    for &task in &config.tasks {
        let corpus = Corpus::of(task);
        let cm = corpus_manifest(layout, corpus)?;
        let (coco, loco);
        let (input, texts): (TaskInput<'_>, Vec<(String, String)>) = match corpus {
            Corpus::Coco => {
                coco = select(layout, corpus, &coco_records(layout)?, |r| &r.id, Some(split))?;
                let texts = coco.iter().map(|r| (r.id.clone(), r.text.clone())).collect();
                (TaskInput::Coco(&coco), texts)
            }
            Corpus::Loco => {
                loco = select(layout, corpus, &loco_records(layout)?, |r| &r.id, Some(split))?;
                let texts = loco.iter().map(|r| (r.id.clone(), r.text.clone())).collect();
                (TaskInput::Loco(&loco), texts)
            }
        };
        let profiles = if config.affect {
            Some(cached_profiles(config, &texts)?)
        } else {
            None
        };
        let records = build_task_dataset(task, input, profiles.as_deref())?;
        let out = layout.dataset(task, split, config.affect);
        fs::create_dir_all(out.parent().unwrap()).map_err(|e| io_error(&out, e))?;
        write_records(&records, &out)?;
        let manifest = DatasetManifest {
            task,
            split,
            source_corpus_hash: cm.sha256,
            dataset_hash: dataset_hash(&records),
            records: records.len(),
            affect: config.affect,
            provenance: config.provenance(),
        };
        write_json(&layout.dataset_manifest(task, split, config.affect), &manifest)?;
        println!("task {task} {split}: {} records -> {}", records.len(), out.display());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunBackend {
    Echo,
    Constant(String),
    Http,
}

pub fn run(
    config: &PipelineConfig,
    layout: &Layout,
    backend: RunBackend,
    name: Option<String>,
    dataset: Option<PathBuf>,
) -> Result<(), CliError> {
    if dataset.is_some() && config.tasks.len() != 1 {
        return Err(CliError::Usage("--dataset needs exactly one --task".into()));
    }
    config.backend.validate()?;
    let http = match backend {
        RunBackend::Http => Some(HttpBackend::new(config.backend.clone())?),
        _ => None,
    };
    for &task in &config.tasks {
        let (path, reference, stem) = match &dataset {
            Some(p) => (
                p.clone(),
                p.display().to_string(),
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "dataset".into()),
            ),
            None => (
                layout.dataset(task, config.split, config.affect),
                Layout::dataset_rel(task, config.split, config.affect),
                Layout::dataset_stem(task, config.split, config.affect),
            ),
        };
        require(&path, "build")?;
        let records = read_records(&path)?;
        if let Some(r) = records.iter().find(|r| r.task != task) {
            return Err(CliError::Data(format!(
                "{} holds task {} records, not task {task}",
                path.display(),
                r.task
            )));
        }
        let (echo, constant);
        let b: &dyn Backend = match (&backend, &http) {
            (RunBackend::Echo, _) => {
                echo = EchoBackend::from_records(&records);
                &echo
            }
            (RunBackend::Constant(reply), _) => {
                constant = ConstantBackend { reply: reply.clone() };
                &constant
            }
            (RunBackend::Http, Some(h)) => h,
            (RunBackend::Http, None) => unreachable!("http backend built above"),
        };
        let run_name = name.clone().unwrap_or_else(|| {
            let base = match &backend {
                RunBackend::Echo => "mock-echo".to_string(),
                RunBackend::Constant(_) => "mock-constant".to_string(),
                RunBackend::Http => config.backend.model.clone(),
            };
            if config.affect {
                format!("{base}-aff")
            } else {
                base
            }
        });
        let mut manifest = run_task(&records, b, &config.backend)?;
        manifest.run_name = run_name.clone();
        manifest.dataset = reference;
        manifest.provenance = Some(config.provenance());
        let out = layout.run(&run_name, &stem);
        write_json(&out, &manifest)?;
        let failed = manifest.failures();
        println!(
            "{run_name} task {task}: {} responses, {failed} failed -> {}",
            manifest.responses.len(),
            out.display()
        );
        if failed == manifest.responses.len() {
            let first = manifest
                .responses
                .iter()
                .find_map(|r| r.error.clone())
                .unwrap_or_default();
            return Err(CliError::Backend(format!(
                "all {failed} requests failed; first error: {first}"
            )));
        }
        if failed > 0 {
            log::warn!(
                "{failed} of {} requests failed; they will be scored as non-compliant",
                manifest.responses.len()
            );
        }
    }
    Ok(())
}

pub fn score(
    config: &PipelineConfig,
    layout: &Layout,
    runs: &[PathBuf],
    dataset: Option<PathBuf>,
) -> Result<(), CliError> {
    if dataset.is_some() && runs.len() != 1 {
        return Err(CliError::Usage("--dataset needs exactly one --run".into()));
    }
    let runs = if runs.is_empty() {
        json_files(&layout.runs())?
    } else {
        runs.to_vec()
    };
    if runs.is_empty() {
        return Err(CliError::Dependency {
            artifact: layout.runs(),
            producer: "run",
        });
    }
    let mut reports = Vec::new();
    for run_path in &runs {
        require(run_path, "run")?;
        let manifest: RunManifest = read_json(run_path)?;
        let data_path = dataset.clone().unwrap_or_else(|| layout.resolve(&manifest.dataset));
        require(&data_path, "build")?;
        let records = read_records(&data_path)?;
        if dataset_hash(&records) != manifest.dataset_hash {
            return Err(CliError::Data(format!(
                "{} does not match the dataset {} was run on (hash mismatch)",
                data_path.display(),
                run_path.display()
            )));
        }
        let mut report = score_run(manifest.task, &records, &manifest)?;
        report.provenance = Some(config.provenance());
        let stem = run_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        write_json(&layout.score(&report.run_name, &stem), &report)?;
        reports.push(report);
    }
    print!("{}", format_tables(&reports));
    Ok(())
}

fn analyze_grouping(
    dir: &Path,
    prefix: &str,
    grouping: &str,
    groups: GroupedProfiles,
    options: &AnalysisOptions,
    files: &mut Vec<String>,
) -> Result<(), CliError> {
    if groups.is_empty() {
        log::warn!("{prefix}: no groups by {grouping}; skipped");
        return Ok(());
    }
    for path in write_figures(dir, prefix, grouping, &groups, options)? {
        files.push(source_name(&path));
    }
    Ok(())
}

/// Records with a cached profile, and how many had none.
fn with_profiles<T: Clone>(
    cache: &ProfileCache,
    records: &[T],
    text: impl Fn(&T) -> &str,
) -> (Vec<T>, Vec<AffectiveProfile>, usize) {
    let mut kept = Vec::new();
    let mut profiles = Vec::new();
    for r in records {
        if let Some(p) = cache.get(text(r)) {
            kept.push(r.clone());
            profiles.push(p.clone());
        }
    }
    let missing = records.len() - kept.len();
    (kept, profiles, missing)
}

pub fn analyze(config: &PipelineConfig, layout: &Layout) -> Result<(), CliError> {
    let cache_path = config.cache_path();
    require(&cache_path, "annotate-affect")?;
    let cache = ProfileCache::open(&cache_path)?;
    let dir = layout.analysis();
    let opts = &config.analysis;
    let mut files = Vec::new();
    let mut counts = BTreeMap::new();
    let mut missing = BTreeMap::new();

    if layout.corpus(Corpus::Coco).exists() {
        let (records, profiles, miss) = with_profiles(&cache, &coco_records(layout)?, |r| &r.text);
        if !profiles.is_empty() {
            analyze_grouping(
                &dir,
                "coco",
                "intention",
                GroupedProfiles::by_intention(&records, &profiles)?,
                opts,
                &mut files,
            )?;
            analyze_grouping(
                &dir,
                "coco",
                "category",
                GroupedProfiles::by_category(&records, &profiles)?,
                opts,
                &mut files,
            )?;
        }
        counts.insert("coco".to_string(), profiles.len());
        missing.insert("coco".to_string(), miss);
    }
    if layout.corpus(Corpus::Loco).exists() {
        let (records, profiles, miss) = with_profiles(&cache, &loco_records(layout)?, |r| &r.text);
        if !profiles.is_empty() {
            analyze_grouping(
                &dir,
                "loco",
                "conspiracy",
                GroupedProfiles::by_conspiracy(&records, &profiles)?,
                opts,
                &mut files,
            )?;
            analyze_grouping(
                &dir,
                "loco",
                "relatedness",
                GroupedProfiles::by_relatedness(&records, &profiles)?,
                opts,
                &mut files,
            )?;
        }
        counts.insert("loco".to_string(), profiles.len());
        missing.insert("loco".to_string(), miss);
    }
    if counts.is_empty() {
        return Err(CliError::Dependency {
            artifact: layout.corpus(Corpus::Coco),
            producer: "ingest",
        });
    }
    if counts.values().all(|&n| n == 0) {
        return Err(CliError::Data(format!(
            "no corpus text has a profile in {}; run `condid annotate-affect` first",
            cache_path.display()
        )));
    }
    for (corpus, n) in &missing {
        if *n > 0 {
            log::warn!("{corpus}: {n} records without a cached profile left out of the analysis");
        }
    }
    let manifest = AnalysisManifest {
        files,
        profiles: counts,
        without_profile: missing,
        options: *opts,
        provenance: config.provenance(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!("{} analysis files -> {}", manifest.files.len(), dir.display());
    Ok(())
}

pub fn report(config: &PipelineConfig, layout: &Layout) -> Result<(), CliError> {
    let paths = json_files(&layout.scores())?;
    if paths.is_empty() {
        return Err(CliError::Dependency {
            artifact: layout.scores(),
            producer: "score",
        });
    }
    let reports: Vec<ScoreReport> = paths.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let tables = format_tables(&reports);
    write_atomic(&layout.report_txt(), tables.as_bytes())?;
    write_json(
        &layout.report_json(),
        &ReportFile {
            reports,
            provenance: config.provenance(),
        },
    )?;
    print!("{tables}");
    Ok(())
}
