//! Distance-to-specialist reports and per-cluster weight summaries.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::cluster::AssignmentTable;
use crate::embed::EmbeddingSet;
use crate::weights::{Histogram, ImportanceWeights};
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 20;
const MAX_DISTANCE: f64 = 2.0;

/// `(min, mean)` of `1 − ⟨e, s⟩` over the specialist set.
pub fn specialist_distance(embedding: &[f32], specialist: &EmbeddingSet) -> Result<(f64, f64)> {
    if specialist.is_empty() {
        return Err(Error::Empty("specialist set is empty".into()));
    }
    if embedding.len() != specialist.dim() {
        return Err(Error::DimensionMismatch {
            expected: specialist.dim(),
            found: embedding.len(),
        });
    }
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for (_, s) in specialist.iter() {
        let d = 1.0
            - s.iter()
                .zip(embedding)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>();
        min = min.min(d);
        sum += d;
    }
    Ok((min, sum / specialist.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRow {
    pub window_id: u64,
    pub min: f64,
    pub mean: f64,
}

/// Windows binned by their minimum distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub mean_min: f64,
    pub mean_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub rows: Vec<DistanceRow>,
    pub bins: Vec<DistanceBin>,
}

/// Exact distances for every window, plus `bins` equal-width bins over
/// `[0, 2]`. Values are clamped into range before binning.
pub fn distance_report(
    windows: &EmbeddingSet,
    specialist: &EmbeddingSet,
    bins: usize,
) -> Result<DistanceReport> {
    if bins == 0 {
        return Err(Error::Config("need at least one bin".into()));
    }
    if windows.dim() != specialist.dim() {
        return Err(Error::DimensionMismatch {
            expected: specialist.dim(),
            found: windows.dim(),
        });
    }
    let rows: Vec<DistanceRow> = (0..windows.len())
        .into_par_iter()
        .map(|i| {
            let (min, mean) = specialist_distance(windows.vector(i), specialist)?;
            Ok(DistanceRow {
                window_id: windows.ids()[i],
                min,
                mean,
            })
        })
        .collect::<Result<_>>()?;

    let width = MAX_DISTANCE / bins as f64;
    let mut acc = vec![(0u64, 0.0f64, 0.0f64); bins];
    for r in &rows {
        let b = ((r.min.clamp(0.0, MAX_DISTANCE) / width) as usize).min(bins - 1);
        acc[b].0 += 1;
        acc[b].1 += r.min;
        acc[b].2 += r.mean;
    }
    let bins = acc
        .into_iter()
        .enumerate()
        .map(|(b, (count, smin, smean))| {
            let avg = |s: f64| if count == 0 { f64::NAN } else { s / count as f64 };
            DistanceBin {
                lo: b as f64 * width,
                hi: (b + 1) as f64 * width,
                count,
                mean_min: avg(smin),
                mean_mean: avg(smean),
            }
        })
        .collect();
    Ok(DistanceReport { rows, bins })
}

impl DistanceReport {
    pub fn write_rows(&self, path: &Path) -> Result<()> {
        write_tsv(path, "window_id\tmin_distance\tmean_distance", |out| {
            for r in &self.rows {
                writeln!(out, "{}\t{}\t{}", r.window_id, r.min, r.mean)?;
            }
            Ok(())
        })
    }

    pub fn write_bins(&self, path: &Path) -> Result<()> {
        write_tsv(path, "bin_lo\tbin_hi\tcount\tmean_min_distance\tmean_mean_distance", |out| {
            for b in &self.bins {
                writeln!(out, "{}\t{}\t{}\t{}\t{}", b.lo, b.hi, b.count, b.mean_min, b.mean_mean)?;
            }
            Ok(())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterRow {
    /// 1-based position in the sorted table.
    pub rank: usize,
    pub path: u64,
    /// Generalist windows assigned to the cluster.
    pub members: u64,
    pub specialist_count: u64,
    pub specialist_prob: f64,
    pub generalist_prob: f64,
    pub weight: f64,
    /// Specialist mass here cannot be sampled.
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub level: u32,
    pub rows: Vec<ClusterRow>,
    pub dropped_specialist_mass: f64,
}

/// One row per cluster in the union of the specialist, generalist and
/// assignment supports, sorted by weight descending then path.
pub fn cluster_summary(
    table: &AssignmentTable,
    specialist: &Histogram,
    generalist: &Histogram,
    weights: &ImportanceWeights,
) -> Result<ClusterSummary> {
    let level = table.level();
    for other in [specialist.level(), generalist.level(), weights.level()] {
        if other != level {
            return Err(Error::LevelMismatch {
                left: level,
                right: other,
            });
        }
    }
    let paths: BTreeSet<u64> = table
        .counts()
        .keys()
        .copied()
        .chain(specialist.support())
        .chain(generalist.support())
        .collect();
    let mut rows: Vec<ClusterRow> = paths
        .into_iter()
        .map(|path| {
            let members = table.counts().get(&path).copied().unwrap_or(0);
            let specialist_prob = specialist.prob(path);
            ClusterRow {
                rank: 0,
                path,
                members,
                specialist_count: specialist.count(path),
                specialist_prob,
                generalist_prob: generalist.prob(path),
                weight: weights.weight(path).unwrap_or(0.0),
                dropped: specialist_prob > 0.0 && weights.weight(path).is_none(),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.path.cmp(&b.path)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(ClusterSummary {
        level,
        rows,
        dropped_specialist_mass: weights.dropped_specialist_mass(),
    })
}

impl ClusterSummary {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_tsv(
            path,
            "rank\tpath\tmembers\tspecialist_count\tspecialist_prob\tgeneralist_prob\tweight\tdropped",
            |out| {
                for r in &self.rows {
                    writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        r.rank,
                        r.path,
                        r.members,
                        r.specialist_count,
                        r.specialist_prob,
                        r.generalist_prob,
                        r.weight,
                        u8::from(r.dropped)
                    )?;
                }
                writeln!(out, "# dropped_specialist_mass\t{}", self.dropped_specialist_mass)
            },
        )
    }
}

fn write_tsv(
    path: &Path,
    header: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "{header}").map_err(io)?;
    body(&mut out).map_err(io)?;
    out.flush().map_err(io)
}
