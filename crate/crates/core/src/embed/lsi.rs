//! Latent semantic indexing: a truncated SVD of tf-idf rows computed with a
//! randomized range finder (Gaussian sketch, oversampling and power
//! iterations with re-orthonormalization).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::SparseVec;
use crate::binio::{Reader, Writer};
use crate::{seed, Error, Result};

pub const LSI_MAGIC: &[u8; 4] = b"LSI1";

pub const DEFAULT_LSI_DIM: usize = 256;
pub const DEFAULT_FIT_ROWS: usize = 131_072;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsiConfig {
    pub dim: usize,
    pub oversample: usize,
    pub power_iterations: usize,
    /// Rows beyond this are uniformly subsampled before fitting.
    pub max_fit_rows: usize,
    pub seed: u64,
}

impl Default for LsiConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_LSI_DIM,
            oversample: 10,
            power_iterations: 2,
            max_fit_rows: DEFAULT_FIT_ROWS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsiProjection {
    dim: usize,
    vocab_size: u32,
    singular_values: Vec<f64>,
    /// `dim` orthonormal rows of length `vocab_size`, row-major.
    basis: Vec<f64>,
}

/// Rows re-indexed onto the active (non-empty) columns.
struct CompactRows {
    rows: Vec<(Vec<u32>, Vec<f64>)>,
    columns: Vec<u32>,
}

impl CompactRows {
    fn new(rows: &[&SparseVec]) -> Self {
        let columns: Vec<u32> = rows
            .iter()
            .flat_map(|r| {
                r.indices
                    .iter()
                    .zip(&r.values)
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(&i, _)| i)
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let rows = rows
            .iter()
            .map(|r| {
                r.indices
                    .iter()
                    .zip(&r.values)
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, &v)| (columns.binary_search(i).unwrap() as u32, v))
                    .unzip()
            })
            .collect();
        Self { rows, columns }
    }

    fn nrows(&self) -> usize {
        self.rows.len()
    }

    fn ncols(&self) -> usize {
        self.columns.len()
    }

    /// `A · M` for `M` of shape `ncols × k`.
    fn mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let k = m.ncols();
        let mt = m.transpose();
        let mut out = vec![0.0; self.nrows() * k];
        out.par_chunks_mut(k)
            .zip(&self.rows)
            .for_each(|(dst, (cols, vals))| {
                for (&c, &v) in cols.iter().zip(vals) {
                    let src = mt.column(c as usize);
                    for (d, s) in dst.iter_mut().zip(src.iter()) {
                        *d += v * s;
                    }
                }
            });
        DMatrix::from_row_slice(self.nrows(), k, &out)
    }

    /// `Aᵀ · M` for `M` of shape `nrows × k`.
    fn mul_transpose(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let k = m.ncols();
        let mt = m.transpose();
        let mut out = vec![0.0; self.ncols() * k];
        for (i, (cols, vals)) in self.rows.iter().enumerate() {
            let src = mt.column(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let dst = &mut out[c as usize * k..(c as usize + 1) * k];
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d += v * s;
                }
            }
        }
        DMatrix::from_row_slice(self.ncols(), k, &out)
    }
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Fits a rank-`dim` projection onto the top right singular vectors of the
/// matrix whose rows are `rows`.
pub fn lsi_fit(rows: &[SparseVec], config: &LsiConfig) -> Result<LsiProjection> {
    let vocab_size = match rows.first() {
        Some(r) => r.dim,
        None => return Err(Error::Empty("LSI fit needs at least one row".into())),
    };
    if let Some(r) = rows.iter().find(|r| r.dim != vocab_size) {
        return Err(Error::DimensionMismatch {
            expected: vocab_size as usize,
            found: r.dim as usize,
        });
    }
    if config.dim == 0 {
        return Err(Error::Config("LSI dimension must be positive".into()));
    }
    let mut rng = seed::child_rng(config.seed, &[0x151]);

    let sample: Vec<&SparseVec> = if rows.len() > config.max_fit_rows {
        let mut picked = index::sample(&mut rng, rows.len(), config.max_fit_rows).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| &rows[i]).collect()
    } else {
        rows.iter().collect()
    };
    let a = CompactRows::new(&sample);
    let max_rank = a.nrows().min(a.ncols());
    if config.dim > max_rank {
        return Err(Error::RankDeficient {
            requested: config.dim,
            achievable: max_rank,
        });
    }

    let width = (config.dim + config.oversample).min(max_rank);
    let omega = DMatrix::from_fn(a.ncols(), width, |_, _| {
        StandardNormal.sample(&mut rng)
    });
    let mut q = orthonormalize(a.mul(&omega));
    for _ in 0..config.power_iterations {
        let z = orthonormalize(a.mul_transpose(&q));
        q = orthonormalize(a.mul(&z));
    }
    // Bᵀ = Aᵀ Q; the left singular vectors of Bᵀ are the right singular
    // vectors of B = Qᵀ A.
    let bt = a.mul_transpose(&q);
    let svd = bt.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .total_cmp(&svd.singular_values[i])
            .then(i.cmp(&j))
    });

    let top = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let rank = order
        .iter()
        .filter(|&&i| top > 0.0 && svd.singular_values[i] > top * RANK_TOLERANCE)
        .count();
    if config.dim > rank {
        return Err(Error::RankDeficient {
            requested: config.dim,
            achievable: rank,
        });
    }

    let vocab = vocab_size as usize;
    let mut basis = vec![0.0; config.dim * vocab];
    let mut singular_values = Vec::with_capacity(config.dim);
    for (row, &j) in order.iter().take(config.dim).enumerate() {
        singular_values.push(svd.singular_values[j]);
        let col = u.column(j);
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| {
                if v.abs() > best.1.abs() {
                    (i, v)
                } else {
                    best
                }
            })
            .1;
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let dst = &mut basis[row * vocab..(row + 1) * vocab];
        for (&c, &v) in a.columns.iter().zip(col.iter()) {
            dst[c as usize] = sign * v;
        }
    }
    Ok(LsiProjection {
        dim: config.dim,
        vocab_size,
        singular_values,
        basis,
    })
}

impl LsiProjection {
    pub fn new(
        dim: usize,
        vocab_size: u32,
        singular_values: Vec<f64>,
        basis: Vec<f64>,
    ) -> Result<Self> {
        if singular_values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: singular_values.len(),
            });
        }
        if basis.len() != dim * vocab_size as usize {
            return Err(Error::DimensionMismatch {
                expected: dim * vocab_size as usize,
                found: basis.len(),
            });
        }
        Ok(Self {
            dim,
            vocab_size,
            singular_values,
            basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        let v = self.vocab_size as usize;
        &self.basis[i * v..(i + 1) * v]
    }

    /// Projects a tf-idf row and L2-normalizes it. A zero projection is
    /// flagged degenerate and replaced by the first basis direction.
    pub fn transform(&self, x: &SparseVec) -> Result<(Vec<f32>, bool)> {
        if x.dim != self.vocab_size {
            return Err(Error::DimensionMismatch {
                expected: self.vocab_size as usize,
                found: x.dim as usize,
            });
        }
        if let Some(&bad) = x.indices.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::DimensionMismatch {
                expected: self.vocab_size as usize,
                found: bad as usize + 1,
            });
        }
        let projected: Vec<f64> = (0..self.dim)
            .map(|row| {
                let b = self.basis_row(row);
                x.indices
                    .iter()
                    .zip(&x.values)
                    .map(|(&i, &v)| b[i as usize] * v)
                    .sum()
            })
            .collect();
        let norm = projected.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            let mut e0 = vec![0.0f32; self.dim];
            e0[0] = 1.0;
            return Ok((e0, true));
        }
        Ok((projected.iter().map(|v| (v / norm) as f32).collect(), false))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer::new(BufWriter::new(file));
        w.bytes(LSI_MAGIC)?;
        w.u32(self.dim as u32)?;
        w.u32(self.vocab_size)?;
        for &s in &self.singular_values {
            w.f32(s as f32)?;
        }
        for &b in &self.basis {
            w.f32(b as f32)?;
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(BufReader::new(file), "LSI1");
        r.expect_magic(LSI_MAGIC)?;
        let dim = r.u32("dim")? as usize;
        let vocab_size = r.u32("vocab_size")?;
        let mut buf = Vec::new();
        r.finite_f32s(dim, &mut buf, "singular values")?;
        let singular_values = buf.iter().map(|&v| v as f64).collect();
        buf.clear();
        r.finite_f32s(dim * vocab_size as usize, &mut buf, "basis")?;
        let basis = buf.iter().map(|&v| v as f64).collect();
        Self::new(dim, vocab_size, singular_values, basis)
    }
}
