//! Output directories that appear complete or not at all, plus the run
//! manifest written into each of them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

/// Name of the deterministic run manifest.
pub const RUN_FILE: &str = "run.json";
/// Name of the wall-clock measurements, which differ from run to run.
pub const TIMINGS_FILE: &str = "timings.json";

/// A scratch directory next to the requested output. Files go into
/// [`Staged::path`]; [`Staged::commit`] renames it into place. Dropping it
/// uncommitted removes everything.
pub struct Staged {
    dir: tempfile::TempDir,
    target: PathBuf,
    started: Instant,
    manifest: serde_json::Map<String, Value>,
    timings: serde_json::Map<String, Value>,
}

impl Staged {
    /// Check that `target` can be written and create its scratch sibling.
    pub fn new(target: &Path, command: &str) -> Result<Self> {
        if target.exists() && !target.is_dir() {
            bail!("output path {} exists and is not a directory", target.display());
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
            _ => PathBuf::from("."),
        };
        if !parent.is_dir() {
            bail!("parent directory {} of the output does not exist", parent.display());
        }
        let dir = tempfile::Builder::new()
            .prefix(".smpc-staging-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating a staging directory in {}", parent.display()))?;
        let mut manifest = serde_json::Map::new();
        manifest.insert("command".into(), json!(command));
        manifest.insert("argv".into(), json!(std::env::args().skip(1).collect::<Vec<_>>()));
        manifest.insert(
            "versions".into(),
            json!({ "smpc": env!("CARGO_PKG_VERSION"), "format": 1 }),
        );
        Ok(Self { dir, target: target.to_owned(), started: Instant::now(), manifest, timings: Default::default() })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Create a subdirectory of the staged output.
    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.path().join(name);
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    /// Record a reproducible fact about the run in `run.json`.
    pub fn record(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.manifest.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Record a wall-clock measurement in `timings.json`.
    pub fn time(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.timings.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Write both manifests and move the directory into place, replacing a
    /// previous output of the same name.
    pub fn commit(mut self) -> Result<PathBuf> {
        let mut outputs = Vec::new();
        list_files(self.path(), self.path(), &mut outputs)?;
        outputs.sort();
        self.manifest.insert("outputs".into(), json!(outputs));
        self.timings.insert("total_wall_s".into(), json!(self.started.elapsed().as_secs_f64()));
        let (manifest, timings) = (std::mem::take(&mut self.manifest), std::mem::take(&mut self.timings));
        write_json(&self.path().join(RUN_FILE), &Value::Object(manifest))?;
        write_json(&self.path().join(TIMINGS_FILE), &Value::Object(timings))?;

        let staged = self.dir.keep();
        let backup = self.target.with_file_name(format!(
            ".{}.old",
            self.target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        ));
        let replacing = self.target.exists();
        if replacing {
            if backup.exists() {
                fs::remove_dir_all(&backup)?;
            }
            fs::rename(&self.target, &backup).context("moving the previous output aside")?;
        }
        if let Err(e) = fs::rename(&staged, &self.target) {
            if replacing {
                // put the previous output back before reporting
                let _ = fs::rename(&backup, &self.target);
            }
            let _ = fs::remove_dir_all(&staged);
            return Err(e).context(format!("moving the output into {}", self.target.display()));
        }
        if replacing {
            fs::remove_dir_all(&backup)?;
        }
        Ok(self.target)
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("listed under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Size and name of an input file, for the manifest.
pub fn describe_inputs(paths: &[PathBuf]) -> Result<Vec<Value>> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = fs::metadata(p).with_context(|| format!("reading {}", p.display()))?.len();
        out.push(json!({ "path": p.to_string_lossy(), "bytes": bytes }));
    }
    Ok(out)
}
