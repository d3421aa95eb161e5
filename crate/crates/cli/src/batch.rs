use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff", "bmp", "ppm", "pnm"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Expands files, directories (non-recursive, image extensions only) and glob
/// patterns, in argument order with duplicates removed. Literal paths are
/// kept even if missing so that they surface as per-image failures.
pub fn expand_inputs(args: &[String]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |p: PathBuf, out: &mut Vec<PathBuf>| {
        if seen.insert(p.clone()) {
            out.push(p);
        }
    };
    for arg in args {
        let path = Path::new(arg);
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| CliError::Usage(format!("{arg}: {e}")))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            files.sort();
            if files.is_empty() {
                log::warn!("{arg}: no images in directory");
            }
            files.into_iter().for_each(|p| push(p, &mut out));
        } else if arg.contains(['*', '?', '[']) {
            let matches: Vec<PathBuf> = glob::glob(arg)
                .map_err(|e| CliError::Usage(format!("{arg}: {e}")))?
                .filter_map(|m| m.ok())
                .filter(|p| p.is_file())
                .collect();
            if matches.is_empty() {
                log::warn!("{arg}: pattern matched no files");
            }
            matches.into_iter().for_each(|p| push(p, &mut out));
        } else {
            push(path.to_path_buf(), &mut out);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no input images".into()));
    }
    Ok(out)
}

/// Manifest name of an input: its file name.
pub fn image_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn stem(name: &str) -> &str {
    Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name)
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub input: String,
    pub error: String,
}

/// Runs `f` over `items` on the worker pool and returns per-item results in
/// input order. In strict mode the first failure (in input order) aborts
/// the batch; otherwise failures are logged and collected.
pub fn run_batch<I, T, F>(items: &[I], label: impl Fn(&I) -> String + Sync, strict: bool, f: F) -> Result<Vec<Result<T, Failure>>, CliError>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> anyhow::Result<T> + Sync,
{
    let abort = AtomicBool::new(false);
    let results: Vec<Option<anyhow::Result<T>>> = items
        .par_iter()
        .map(|item| {
            if abort.load(Ordering::Relaxed) {
                return None;
            }
            let r = f(item);
            if r.is_err() && strict {
                abort.store(true, Ordering::Relaxed);
            }
            Some(r)
        })
        .collect();
    let mut out = Vec::with_capacity(items.len());
    for (item, r) in items.iter().zip(results) {
        match r {
            Some(Ok(v)) => out.push(Ok(v)),
            Some(Err(e)) => {
                let input = label(item);
                if strict {
                    return Err(CliError::Fatal(e.context(format!("{input} (strict mode)"))));
                }
                log::error!("{input}: {e:#}");
                out.push(Err(Failure {
                    input,
                    error: format!("{e:#}"),
                }));
            }
            None => {}
        }
    }
    Ok(out)
}

/// Rejects later inputs whose file name or stem repeats an earlier one, so
/// manifest names and overlay files stay unique.
pub fn unique_names(paths: &[PathBuf]) -> (Vec<PathBuf>, Vec<Failure>) {
    let mut names = HashSet::new();
    let mut stems = HashSet::new();
    let mut keep = Vec::new();
    let mut rejected = Vec::new();
    for p in paths {
        let name = image_name(p);
        if names.insert(name.clone()) && stems.insert(stem(&name).to_string()) {
            keep.push(p.clone());
        } else {
            log::error!("{}: duplicate image name {name}", p.display());
            rejected.push(Failure {
                input: p.display().to_string(),
                error: format!("duplicate image name {name}"),
            });
        }
    }
    (keep, rejected)
}

/// Machine-readable result of one command, printed as JSON on stdout.
pub struct Summary {
    command: &'static str,
    processed: usize,
    failures: Vec<Failure>,
    fields: Map<String, Value>,
}

impl Summary {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            processed: 0,
            failures: Vec::new(),
            fields: Map::new(),
        }
    }

    pub fn ok(&mut self) {
        self.processed += 1;
    }

    pub fn fail(&mut self, failure: Failure) {
        self.failures.push(failure);
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("summary values serialize");
        self.fields.insert(key.to_string(), v);
    }

    /// 0 on success, 3 when some inputs failed, 4 when all of them did.
    pub fn exit_code(&self) -> i32 {
        match (self.failures.is_empty(), self.processed) {
            (true, _) => 0,
            (false, 0) => 4,
            (false, _) => 3,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("command".into(), self.command.into());
        m.insert("processed".into(), self.processed.into());
        m.insert("failed".into(), self.failures.len().into());
        m.insert(
            "failures".into(),
            serde_json::to_value(&self.failures).expect("failures serialize"),
        );
        m.extend(self.fields.clone());
        Value::Object(m)
    }
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Directory holding a manifest's images: explicit, else the manifest's own.
pub fn images_dir(explicit: Option<&Path>, manifest: &Path) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| {
        manifest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

pub fn read_manifest(path: &Path) -> Result<tarspot::Manifest, CliError> {
    tarspot::Manifest::read(path)
        .map_err(|e| CliError::Fatal(anyhow!(e).context(format!("reading {}", path.display()))))
}
