//! Materializing a resampled stream as `WND1` records plus an occurrence
//! manifest.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{ClusterIndex, SamplerState, SamplingTarget};
use crate::corpus::{read_windows, DocumentWindow, WindowWriter};
use crate::{seed, Error, Result};

/// Windows keyed by id, for resolving sampled ids.
#[derive(Debug, Default)]
pub struct WindowStore {
    windows: HashMap<u64, DocumentWindow>,
}

impl WindowStore {
    pub fn from_windows(windows: impl IntoIterator<Item = DocumentWindow>) -> Self {
        Self {
            windows: windows.into_iter().map(|w| (w.window_id, w)).collect(),
        }
    }

    pub fn from_shards(paths: &[PathBuf]) -> Result<Self> {
        let mut store = Self::default();
        for p in paths {
            for w in read_windows(p)? {
                store.windows.insert(w.window_id, w);
            }
        }
        Ok(store)
    }

    pub fn get(&self, id: u64) -> Result<&DocumentWindow> {
        self.windows.get(&id).ok_or(Error::UnresolvedWindow(id))
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// `window_id → occurrences` for an exported stream.
pub type Manifest = BTreeMap<u64, u64>;

/// Draws `count` windows and writes them in draw order, repeated windows
/// written each time they are drawn.
pub fn export_stream<W: Write>(
    state: &mut SamplerState,
    target: &SamplingTarget,
    index: &ClusterIndex,
    count: u64,
    store: &WindowStore,
    out: W,
) -> Result<Manifest> {
    let mut writer = WindowWriter::new(out)?;
    let mut manifest = Manifest::new();
    for _ in 0..count {
        let id = state.draw(target, index);
        writer.write(store.get(id)?)?;
        *manifest.entry(id).or_insert(0) += 1;
    }
    writer.finish()?;
    Ok(manifest)
}

/// Splits the export over `shards` independent streams seeded with
/// `derive(seed, shard)`, written in parallel to `dir/shard-NNNNN.wnd`.
/// Shard `j` draws `count / shards` windows, plus one when `j` is below
/// the remainder.
pub fn export_sharded(
    seed_value: u64,
    target: &SamplingTarget,
    index: &ClusterIndex,
    count: u64,
    shards: u64,
    store: &WindowStore,
    dir: &Path,
) -> Result<Manifest> {
    if shards == 0 {
        return Err(Error::Config("need at least one shard".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifests: Vec<Manifest> = (0..shards)
        .into_par_iter()
        .map(|j| {
            let n = count / shards + u64::from(j < count % shards);
            let path = dir.join(format!("shard-{j:05}.wnd"));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut state = SamplerState::new(seed::derive(seed_value, &[j]));
            export_stream(&mut state, target, index, n, store, BufWriter::new(file))
        })
        .collect::<Result<_>>()?;
    let mut merged = Manifest::new();
    for m in manifests {
        for (id, c) in m {
            *merged.entry(id).or_insert(0) += c;
        }
    }
    Ok(merged)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "window_id\toccurrences")?;
        for (id, c) in manifest {
            writeln!(w, "{id}\t{c}")?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = Manifest::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidData(format!("{}:{}: bad manifest line {line:?}", path.display(), n + 1));
        let (id, c) = line.split_once('\t').ok_or_else(bad)?;
        let id: u64 = id.trim().parse().map_err(|_| bad())?;
        let c: u64 = c.trim().parse().map_err(|_| bad())?;
        *manifest.entry(id).or_insert(0) += c;
    }
    Ok(manifest)
}
