use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::{Error, Result};

pub const TFIDF_MAGIC: &[u8; 4] = b"TFI1";

/// Sparse row with sorted, unique indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    pub dim: u32,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn zero(dim: u32) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim as usize];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfVector {
    pub vector: SparseVec,
    /// No token of the window was in the fitted vocabulary.
    pub degenerate: bool,
}

/// Document frequencies over a window stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TfIdfModel {
    vocab_size: u32,
    document_frequency: Vec<u32>,
    num_documents: u64,
}

impl TfIdfModel {
    /// Counts, for every token id below `vocab_size`, the number of windows
    /// containing it. Ids outside the vocabulary are ignored.
    pub fn fit<'a, I>(windows: I, vocab_size: u32) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let mut document_frequency = vec![0u32; vocab_size as usize];
        let mut last_seen = vec![u64::MAX; vocab_size as usize];
        let mut num_documents = 0u64;
        for tokens in windows {
            for &t in tokens {
                if let Some(seen) = last_seen.get_mut(t as usize) {
                    if *seen != num_documents {
                        *seen = num_documents;
                        document_frequency[t as usize] += 1;
                    }
                }
            }
            num_documents += 1;
        }
        if num_documents < 2 {
            return Err(Error::Empty(format!(
                "tf-idf needs at least 2 windows, got {num_documents}"
            )));
        }
        Ok(Self {
            vocab_size,
            document_frequency,
            num_documents,
        })
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn num_documents(&self) -> u64 {
        self.num_documents
    }

    pub fn df(&self, token: u32) -> u32 {
        self.document_frequency
            .get(token as usize)
            .copied()
            .unwrap_or(0)
    }

    /// Smoothed inverse document frequency `ln((N+1)/(df+1)) + 1`.
    pub fn idf(&self, token: u32) -> f64 {
        let n = self.num_documents as f64;
        ((n + 1.0) / (self.df(token) as f64 + 1.0)).ln() + 1.0
    }

    fn in_vocab(&self, token: u32) -> bool {
        self.df(token) > 0
    }

    /// Log-scaled term frequency times smoothed idf, L2-normalized.
    pub fn transform(&self, tokens: &[u32]) -> TfIdfVector {
        let mut kept: Vec<u32> = tokens
            .iter()
            .copied()
            .filter(|&t| self.in_vocab(t))
            .collect();
        kept.sort_unstable();
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for run in kept.chunk_by(|a, b| a == b) {
            let tf = run.len() as f64;
            indices.push(run[0]);
            values.push((1.0 + tf.ln()) * self.idf(run[0]));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let degenerate = norm == 0.0;
        if !degenerate {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        TfIdfVector {
            vector: SparseVec {
                dim: self.vocab_size,
                indices,
                values,
            },
            degenerate,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer::new(BufWriter::new(file));
        w.bytes(TFIDF_MAGIC)?;
        w.u32(self.vocab_size)?;
        w.u64(self.num_documents)?;
        for &df in &self.document_frequency {
            w.u32(df)?;
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(BufReader::new(file), "TFI1");
        r.expect_magic(TFIDF_MAGIC)?;
        let vocab_size = r.u32("vocab_size")?;
        let num_documents = r.u64("num_documents")?;
        let mut document_frequency = Vec::with_capacity(vocab_size as usize);
        for _ in 0..vocab_size {
            let at = r.offset();
            let df = r.u32("document_frequency")?;
            if df as u64 > num_documents {
                return Err(Error::format(
                    "TFI1",
                    at,
                    format!("df {df} exceeds document count {num_documents}"),
                ));
            }
            document_frequency.push(df);
        }
        Ok(Self {
            vocab_size,
            document_frequency,
            num_documents,
        })
    }
}
