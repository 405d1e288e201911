//! The artifact directory: an exclusive lock, the run manifest and
//! freshness checks on stage inputs.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.jsonl";
pub const LOCK: &str = ".crisp.lock";

/// One manifest line per completed command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: String,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    /// Artifact key to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file
            .read(&mut buf)
            .with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    /// Creates the directory if needed and takes its lock. The lock is
    /// released on drop.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let lock = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&lock).unwrap_or_default();
                bail!(
                    "{} is locked by process {}; if no crisp command is running there, delete {}",
                    root.display(),
                    holder.trim(),
                    lock.display()
                );
            }
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Paths inside the directory are keyed relative to it; others by their
    /// path as given.
    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|_| path.to_string_lossy().into_owned())
    }

    fn resolve(&self, key: &str) -> PathBuf {
        let p = Path::new(key);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn entries(&self) -> Result<Vec<ManifestEntry>> {
        let path = self.path(MANIFEST);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        BufReader::new(file)
            .lines()
            .enumerate()
            .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
            .map(|(i, line)| {
                let line = line?;
                serde_json::from_str(&line)
                    .with_context(|| format!("{}:{}: bad manifest entry", path.display(), i + 1))
            })
            .collect()
    }

    pub fn begin<'a>(&'a self, command: &str, config: &'a RunConfig) -> Result<Stage<'a>> {
        Ok(Stage {
            dir: self,
            history: self.entries()?,
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK));
    }
}

/// A command in progress: inputs are hashed and checked as they are
/// declared, outputs are hashed when the stage is recorded.
pub struct Stage<'a> {
    dir: &'a Workdir,
    history: Vec<ManifestEntry>,
    command: String,
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Stage<'_> {
    /// Declares an input. An artifact written by an earlier command must
    /// still carry the hash recorded then, and so must the inputs that
    /// command read.
    pub fn input(&mut self, path: &Path) -> Result<PathBuf> {
        if !path.exists() {
            bail!("missing input {}", path.display());
        }
        let key = self.dir.key(path);
        let hash = sha256_file(path)?;
        if let Some(producer) = self.history.iter().rev().find(|e| e.outputs.contains_key(&key)) {
            if producer.outputs[&key] != hash {
                bail!(stale(&key, &producer.command, "was modified after it was written"));
            }
            for (upstream, recorded) in &producer.inputs {
                let upstream_path = self.dir.resolve(upstream);
                if !upstream_path.exists() {
                    continue;
                }
                if sha256_file(&upstream_path)? != *recorded {
                    bail!(stale(
                        &key,
                        &producer.command,
                        &format!("was built from an older {upstream}")
                    ));
                }
            }
        }
        self.inputs.insert(key, hash);
        Ok(path.to_path_buf())
    }

    pub fn output(&mut self, path: PathBuf) -> PathBuf {
        self.outputs.push(path.clone());
        path
    }

    /// Appends the manifest entry.
    pub fn record(self) -> Result<ManifestEntry> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            outputs.insert(self.dir.key(p), sha256_file(p)?);
        }
        let entry = ManifestEntry {
            command: self.command,
            config_hash: self.config.hash(),
            config: self
                .config
                .entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            inputs: self.inputs,
            outputs,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.path(MANIFEST);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        let line = serde_json::to_string(&entry).map_err(|e| anyhow!(e))?;
        writeln!(file, "{line}").with_context(|| format!("writing {}", path.display()))?;
        Ok(entry)
    }
}

fn stale(key: &str, command: &str, what: &str) -> String {
    format!("stale artifact: {key} {what}; rerun `crisp {command}` and the stages after it")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let w = Workdir::open(dir.path()).unwrap();
        assert!(Workdir::open(dir.path()).is_err());
        drop(w);
        Workdir::open(dir.path()).unwrap();
    }

    #[test]
    fn modified_outputs_are_stale() {
        let dir = tempfile::tempdir().unwrap();
        let w = Workdir::open(dir.path()).unwrap();
        let config = RunConfig::default();
        std::fs::write(w.path("a"), "one").unwrap();
        let mut s = w.begin("first", &config).unwrap();
        s.input(&w.path("a")).unwrap();
        std::fs::write(w.path("b"), "two").unwrap();
        s.output(w.path("b"));
        let entry = s.record().unwrap();
        assert_eq!(entry.inputs.keys().collect::<Vec<_>>(), ["a"]);
        assert_eq!(w.entries().unwrap(), [entry]);

        let mut s = w.begin("second", &config).unwrap();
        s.input(&w.path("b")).unwrap();
        std::fs::write(w.path("a"), "changed").unwrap();
        let err = s.input(&w.path("b")).unwrap_err().to_string();
        assert!(err.contains("older a") && err.contains("crisp first"), "{err}");
        std::fs::write(w.path("a"), "one").unwrap();
        std::fs::write(w.path("b"), "edited").unwrap();
        let err = s.input(&w.path("b")).unwrap_err().to_string();
        assert!(err.contains("modified"), "{err}");
    }
}
