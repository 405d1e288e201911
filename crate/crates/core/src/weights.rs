//! Cluster histograms `P(c|D)`, importance weights
//! `w(c) = P(c|specialist) / P(c|generalist)` and histogram mixtures.
//!
//! Histograms are sparse: only clusters with non-zero probability are stored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::AssignmentTable;
use crate::{Error, Result};

/// Tolerance on `Σ p = 1`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Dropped specialist mass above which a warning is logged.
pub const DROPPED_MASS_WARNING: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    level: u32,
    probs: BTreeMap<u64, f64>,
    /// Empty for mixtures, which carry no count semantics.
    counts: BTreeMap<u64, u64>,
    total: u64,
}

/// Estimates `P(c|D)` by counting the examples of each cluster.
pub fn histogram(table: &AssignmentTable) -> Result<Histogram> {
    Histogram::from_counts(table.level(), table.counts().clone())
}

impl Histogram {
    pub fn from_counts(level: u32, counts: BTreeMap<u64, u64>) -> Result<Self> {
        let counts: BTreeMap<u64, u64> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(Error::Empty("cannot estimate P(c|D) from zero examples".into()));
        }
        let probs = counts
            .iter()
            .map(|(&p, &c)| (p, c as f64 / total as f64))
            .collect();
        Ok(Self {
            level,
            probs,
            counts,
            total,
        })
    }

    /// A count-free histogram; `probs` must lie on the simplex.
    pub fn from_probs(level: u32, probs: BTreeMap<u64, f64>) -> Result<Self> {
        if let Some((p, v)) = probs.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidData(format!("probability {v} for cluster {p}")));
        }
        let sum: f64 = probs.values().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidData(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self {
            level,
            probs: probs.into_iter().filter(|&(_, v)| v > 0.0).collect(),
            counts: BTreeMap::new(),
            total: 0,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn probs(&self) -> &BTreeMap<u64, f64> {
        &self.probs
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn prob(&self, path: u64) -> f64 {
        self.probs.get(&path).copied().unwrap_or(0.0)
    }

    pub fn count(&self, path: u64) -> u64 {
        self.counts.get(&path).copied().unwrap_or(0)
    }

    pub fn is_mixture(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = u64> + '_ {
        self.probs.keys().copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let record = HistogramRecord {
            kind: "histogram".into(),
            level: self.level,
            total: self.total,
            entries: self
                .probs
                .iter()
                .map(|(&p, &prob)| HistogramEntry {
                    path: p,
                    prob,
                    count: self.counts.get(&p).copied(),
                })
                .collect(),
        };
        write_json(path, &record)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let record: HistogramRecord = read_json(path)?;
        if record.kind != "histogram" {
            return Err(Error::InvalidData(format!(
                "{} holds a {:?} record, expected a histogram",
                path.display(),
                record.kind
            )));
        }
        let has_counts = record.entries.iter().all(|e| e.count.is_some());
        if has_counts && !record.entries.is_empty() {
            let counts = record
                .entries
                .iter()
                .map(|e| (e.path, e.count.unwrap_or(0)))
                .collect();
            let h = Self::from_counts(record.level, counts)?;
            if h.total != record.total {
                return Err(Error::InvalidData(format!(
                    "{}: counts sum to {}, header says {}",
                    path.display(),
                    h.total,
                    record.total
                )));
            }
            Ok(h)
        } else {
            Self::from_probs(
                record.level,
                record.entries.iter().map(|e| (e.path, e.prob)).collect(),
            )
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeightOptions {
    /// Add `ε = 1/total` to every generalist cluster of the joint support
    /// before taking ratios.
    pub smoothing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    level: u32,
    weights: BTreeMap<u64, f64>,
    dropped_specialist_mass: f64,
}

impl ImportanceWeights {
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Weights of every cluster with generalist support.
    pub fn weights(&self) -> &BTreeMap<u64, f64> {
        &self.weights
    }

    pub fn weight(&self, path: u64) -> Option<f64> {
        self.weights.get(&path).copied()
    }

    /// Specialist mass on clusters with no generalist example.
    pub fn dropped_specialist_mass(&self) -> f64 {
        self.dropped_specialist_mass
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let record = WeightsRecord {
            kind: "weights".into(),
            level: self.level,
            dropped_mass: self.dropped_specialist_mass,
            entries: self.weights.iter().map(|(&p, &w)| (p, w)).collect(),
        };
        write_json(path, &record)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let record: WeightsRecord = read_json(path)?;
        if record.kind != "weights" {
            return Err(Error::InvalidData(format!(
                "{} holds a {:?} record, expected weights",
                path.display(),
                record.kind
            )));
        }
        if !(0.0..=1.0).contains(&record.dropped_mass) {
            return Err(Error::InvalidData(format!(
                "dropped mass {} outside [0, 1]",
                record.dropped_mass
            )));
        }
        Ok(Self {
            level: record.level,
            weights: record.entries.into_iter().collect(),
            dropped_specialist_mass: record.dropped_mass,
        })
    }
}

/// `w(c) = h_s(c) / h_g(c)` over the generalist support. Specialist mass on
/// clusters without generalist examples is excluded and reported.
pub fn importance_weights(
    specialist: &Histogram,
    generalist: &Histogram,
    options: WeightOptions,
) -> Result<ImportanceWeights> {
    if specialist.level != generalist.level {
        return Err(Error::LevelMismatch {
            left: specialist.level,
            right: generalist.level,
        });
    }
    let generalist_probs: BTreeMap<u64, f64> = if options.smoothing {
        if generalist.total == 0 {
            return Err(Error::Config(
                "smoothing needs a counted generalist histogram".into(),
            ));
        }
        let eps = 1.0 / generalist.total as f64;
        let union: BTreeSet<u64> = specialist.support().chain(generalist.support()).collect();
        let z = 1.0 + eps * union.len() as f64;
        union
            .into_iter()
            .map(|p| (p, (generalist.prob(p) + eps) / z))
            .collect()
    } else {
        generalist.probs.clone()
    };

    let weights: BTreeMap<u64, f64> = generalist_probs
        .iter()
        .map(|(&p, &g)| (p, specialist.prob(p) / g))
        .collect();
    let dropped: f64 = specialist
        .probs
        .iter()
        .filter(|(p, _)| !generalist_probs.contains_key(p))
        .fold(0.0, |acc, (_, &s)| acc + s);
    if dropped > DROPPED_MASS_WARNING {
        log::warn!("{dropped:.6} of the specialist mass falls in clusters without generalist examples");
    }
    Ok(ImportanceWeights {
        level: specialist.level,
        weights,
        dropped_specialist_mass: dropped,
    })
}

/// `Σ_i mix_i · h_i`. The result carries no counts.
pub fn mix_histograms(histograms: &[Histogram], mix_weights: &[f64]) -> Result<Histogram> {
    let Some(first) = histograms.first() else {
        return Err(Error::Empty("no histograms to mix".into()));
    };
    if histograms.len() != mix_weights.len() {
        return Err(Error::Config(format!(
            "{} histograms but {} mixing weights",
            histograms.len(),
            mix_weights.len()
        )));
    }
    if let Some(h) = histograms.iter().find(|h| h.level != first.level) {
        return Err(Error::LevelMismatch {
            left: first.level,
            right: h.level,
        });
    }
    if mix_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config(format!("mixing weights {mix_weights:?} must be non-negative")));
    }
    let sum: f64 = mix_weights.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Config(format!("mixing weights sum to {sum}, not 1")));
    }
    let mut probs: BTreeMap<u64, f64> = BTreeMap::new();
    for (h, &w) in histograms.iter().zip(mix_weights) {
        if w == 0.0 {
            continue;
        }
        for (&p, &v) in &h.probs {
            *probs.entry(p).or_insert(0.0) += w * v;
        }
    }
    Ok(Histogram {
        level: first.level,
        probs,
        counts: BTreeMap::new(),
        total: 0,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramEntry {
    path: u64,
    prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramRecord {
    kind: String,
    level: u32,
    total: u64,
    entries: Vec<HistogramEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsRecord {
    kind: String,
    level: u32,
    dropped_mass: f64,
    entries: Vec<(u64, f64)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidData(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        format: "JSON",
        offset: e.line() as u64,
        message: format!("{}: {e}", path.display()),
    })
}
