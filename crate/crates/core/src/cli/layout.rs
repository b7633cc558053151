use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::CliError;
use crate::corpus::SplitName;
use crate::instructions::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corpus {
    Coco,
    Loco,
}

impl Corpus {
    pub fn as_str(self) -> &'static str {
        match self {
            Corpus::Coco => "coco",
            Corpus::Loco => "loco",
        }
    }

    pub fn of(task: TaskId) -> Self {
        if task.uses_coco() {
            Corpus::Coco
        } else {
            Corpus::Loco
        }
    }
}

/// Where each artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self, corpus: Corpus) -> PathBuf {
        match corpus {
            Corpus::Coco => self.root.join("corpus/coco.csv"),
            Corpus::Loco => self.root.join("corpus/loco.jsonl"),
        }
    }

    pub fn corpus_manifest(&self, corpus: Corpus) -> PathBuf {
        self.root.join(format!("corpus/{}.manifest.json", corpus.as_str()))
    }

    pub fn split(&self, corpus: Corpus) -> PathBuf {
        self.root.join(format!("splits/{}.json", corpus.as_str()))
    }

    pub fn dataset_stem(task: TaskId, split: SplitName, affect: bool) -> String {
        format!("task{}_{split}{}", task.number(), if affect { "_aff" } else { "" })
    }

    /// Dataset path relative to the root, as recorded in run manifests.
    pub fn dataset_rel(task: TaskId, split: SplitName, affect: bool) -> String {
        format!("datasets/{}.jsonl", Self::dataset_stem(task, split, affect))
    }

    pub fn dataset(&self, task: TaskId, split: SplitName, affect: bool) -> PathBuf {
        self.root.join(Self::dataset_rel(task, split, affect))
    }

    pub fn dataset_manifest(&self, task: TaskId, split: SplitName, affect: bool) -> PathBuf {
        self.root.join(format!(
            "datasets/{}.manifest.json",
            Self::dataset_stem(task, split, affect)
        ))
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run(&self, name: &str, stem: &str) -> PathBuf {
        self.runs().join(safe_name(name)).join(format!("{stem}.json"))
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores")
    }

    pub fn score(&self, name: &str, stem: &str) -> PathBuf {
        self.scores().join(safe_name(name)).join(format!("{stem}.json"))
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(".condid.lock")
    }

    /// Resolves a dataset reference from a run manifest.
    pub fn resolve(&self, reference: &str) -> PathBuf {
        let p = Path::new(reference);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

fn safe_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(layout: &Layout) -> Result<Self, CliError> {
        fs::create_dir_all(layout.root()).map_err(|e| io_error(layout.root(), e))?;
        let path = layout.lock();
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(OutputLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if holder_alive(&path) {
                        break;
                    }
                    log::warn!("removing stale lock {}", path.display());
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(io_error(&path, e)),
            }
        }
        Err(CliError::Data(format!(
            "{} is locked by another condid command (remove {} if none is running)",
            layout.root().display(),
            path.display()
        )))
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Whether the process named in a lock file still exists. Where that can't
/// be checked the lock is assumed live.
fn holder_alive(lock: &Path) -> bool {
    let Ok(text) = fs::read_to_string(lock) else {
        return true;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        return true;
    };
    let proc_root = Path::new("/proc");
    if !proc_root.is_dir() {
        return true;
    }
    proc_root.join(pid.to_string()).exists()
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Pretty JSON with a trailing newline, written via a temporary file.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Every `*.json` file under `dir`, sorted by path.
pub(crate) fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| io_error(&d, e))? {
            let path = entry.map_err(|e| io_error(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "json") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
