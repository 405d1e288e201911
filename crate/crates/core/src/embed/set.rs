//! `EMB1` files: the magic, `dim: u32`, `count: u64`, then per record
//! `window_id: u64` and `dim` little-endian f32 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Accepted deviation of a normalized vector's norm from one.
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            normalized: false,
        }
    }

    pub fn from_parts(dim: usize, ids: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        Ok(Self {
            dim,
            ids,
            data,
            normalized: false,
        })
    }

    pub fn push(&mut self, id: u64, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        self.ids.push(id);
        self.data.extend_from_slice(v);
        self.normalized = false;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Row-major vector data.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f32])> {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim.max(1)))
    }

    /// Scales every vector to unit Euclidean norm. Zero or non-finite
    /// vectors are rejected.
    pub fn normalize(&mut self) -> Result<()> {
        let dim = self.dim;
        for (i, v) in self.data.chunks_exact_mut(dim.max(1)).enumerate() {
            normalize_in_place(v).map_err(|why| {
                Error::InvalidData(format!("embedding {}: {why}", self.ids[i]))
            })?;
        }
        self.normalized = true;
        Ok(())
    }

    pub(crate) fn mark_normalized(&mut self) {
        self.normalized = true;
    }

    /// Every vector's norm is within [`NORM_TOLERANCE`] of one.
    pub fn check_unit_norm(&self) -> bool {
        self.iter().all(|(_, v)| {
            let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            (n - 1.0).abs() <= NORM_TOLERANCE
        })
    }

    pub fn select(&self, indices: &[usize]) -> EmbeddingSet {
        let mut out = EmbeddingSet::new(self.dim);
        for &i in indices {
            out.ids.push(self.ids[i]);
            out.data.extend_from_slice(self.vector(i));
        }
        out.normalized = self.normalized;
        out
    }
}

fn normalize_in_place(v: &mut [f32]) -> std::result::Result<(), &'static str> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err("non-finite norm");
    }
    if norm == 0.0 {
        return Err("zero vector cannot be normalized");
    }
    v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    Ok(())
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer::new(BufWriter::new(file));
    w.bytes(EMBEDDING_MAGIC)?;
    w.u32(set.dim as u32)?;
    w.u64(set.len() as u64)?;
    for (id, v) in set.iter() {
        w.u64(id)?;
        for &x in v {
            w.f32(x)?;
        }
    }
    w.flush()
}

fn read_from<R: Read>(inner: R, normalize: bool) -> Result<EmbeddingSet> {
    let mut r = Reader::new(inner, "EMB1");
    r.expect_magic(EMBEDDING_MAGIC)?;
    let dim = r.u32("dim")? as usize;
    let count = r.u64("count")?;
    if dim == 0 {
        return Err(r.error("dimension must be positive"));
    }
    let mut set = EmbeddingSet::new(dim);
    for _ in 0..count {
        let at = r.offset();
        let id = r.u64("window_id")?;
        let start = set.data.len();
        r.finite_f32s(dim, &mut set.data, "embedding")?;
        if normalize {
            normalize_in_place(&mut set.data[start..])
                .map_err(|why| Error::format("EMB1", at, format!("record {id}: {why}")))?;
        }
        set.ids.push(id);
    }
    if r.at_record_start()?.is_some() {
        return Err(r.error(format!("trailing bytes after {count} records")));
    }
    set.normalized = normalize;
    Ok(set)
}

/// Reads an `EMB1` file as stored.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let set = read_from(BufReader::new(file), false)?;
    Ok(EmbeddingSet {
        normalized: set.check_unit_norm(),
        ..set
    })
}

/// Reads an externally produced `EMB1` file and re-normalizes every vector.
pub fn import_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let set = read_from(BufReader::new(file), true)?;
    log::info!(
        "imported {} embeddings of dim {} from {}",
        set.len(),
        set.dim(),
        path.display()
    );
    Ok(set)
}
