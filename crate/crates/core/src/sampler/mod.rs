//! The resampled training stream: draw a cluster from the target
//! histogram, then a generalist window uniformly (with replacement) from
//! that cluster.

mod alias;
mod export;

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::cluster::AssignmentTable;
use crate::weights::Histogram;
use crate::{seed, Error, Result};

pub use alias::AliasTable;
pub use export::{
    export_sharded, export_stream, read_manifest, write_manifest, Manifest, WindowStore,
};

/// Generalist window ids grouped by cluster, each list sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterIndex {
    level: u32,
    members: BTreeMap<u64, Vec<u64>>,
}

impl ClusterIndex {
    pub fn build(table: &AssignmentTable) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Empty("cannot index an empty assignment table".into()));
        }
        let mut members: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for &(id, path) in table.entries() {
            members.entry(path).or_default().push(id);
        }
        for list in members.values_mut() {
            list.sort_unstable();
        }
        Ok(Self {
            level: table.level(),
            members,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn members(&self, path: u64) -> &[u64] {
        self.members.get(&path).map_or(&[], Vec::as_slice)
    }

    pub fn clusters(&self) -> impl Iterator<Item = (u64, &[u64])> {
        self.members.iter().map(|(&p, m)| (p, m.as_slice()))
    }

    pub fn sizes(&self) -> BTreeMap<u64, u64> {
        self.members
            .iter()
            .map(|(&p, m)| (p, m.len() as u64))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.members.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A target histogram restricted and renormalized to the clusters that
/// have generalist members.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingTarget {
    level: u32,
    clusters: Vec<u64>,
    probs: Vec<f64>,
    table: AliasTable,
    dropped_mass: f64,
}

impl SamplingTarget {
    pub fn new(target: &Histogram, index: &ClusterIndex) -> Result<Self> {
        if target.level() != index.level() {
            return Err(Error::LevelMismatch {
                left: target.level(),
                right: index.level(),
            });
        }
        let (kept, dropped): (Vec<(u64, f64)>, Vec<(u64, f64)>) = target
            .probs()
            .iter()
            .map(|(&p, &v)| (p, v))
            .partition(|&(p, _)| !index.members(p).is_empty());
        let kept_mass: f64 = kept.iter().map(|(_, v)| v).sum();
        if kept.is_empty() || kept_mass <= 0.0 {
            return Err(Error::Empty(
                "target histogram has no mass on clusters with generalist members".into(),
            ));
        }
        let dropped_mass = dropped.iter().fold(0.0, |acc, (_, v)| acc + v);
        if dropped_mass > crate::weights::DROPPED_MASS_WARNING {
            log::warn!("renormalizing target: {dropped_mass:.6} of its mass has no generalist members");
        }
        let (clusters, probs): (Vec<u64>, Vec<f64>) =
            kept.into_iter().map(|(p, v)| (p, v / kept_mass)).unzip();
        let table = AliasTable::new(&probs)?;
        Ok(Self {
            level: target.level(),
            clusters,
            probs,
            table,
            dropped_mass,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// `(cluster, renormalized probability)` pairs.
    pub fn probabilities(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.clusters.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn dropped_mass(&self) -> f64 {
        self.dropped_mass
    }

    fn draw_cluster(&self, rng: &mut seed::Rng) -> u64 {
        self.clusters[self.table.sample(rng)]
    }
}

/// The random state of one stream. The stream is a pure function of the
/// seed, the target and the index; batch boundaries do not matter.
#[derive(Debug, Clone)]
pub struct SamplerState {
    seed: u64,
    rng: seed::Rng,
    draws_emitted: u64,
    occurrences: Option<BTreeMap<u64, u64>>,
}

impl SamplerState {
    pub fn new(seed_value: u64) -> Self {
        Self {
            seed: seed_value,
            rng: seed::child_rng(seed_value, &[0x5a3]),
            draws_emitted: 0,
            occurrences: None,
        }
    }

    /// Also count how often each window is drawn.
    pub fn with_occurrence_log(mut self) -> Self {
        self.occurrences = Some(BTreeMap::new());
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws_emitted(&self) -> u64 {
        self.draws_emitted
    }

    pub fn occurrence_log(&self) -> Option<&BTreeMap<u64, u64>> {
        self.occurrences.as_ref()
    }

    pub fn draw(&mut self, target: &SamplingTarget, index: &ClusterIndex) -> u64 {
        let cluster = target.draw_cluster(&mut self.rng);
        let members = index.members(cluster);
        let id = members[self.rng.random_range(0..members.len())];
        self.draws_emitted += 1;
        if let Some(log) = self.occurrences.as_mut() {
            *log.entry(id).or_insert(0) += 1;
        }
        id
    }

    pub fn sample_batch(
        &mut self,
        target: &SamplingTarget,
        index: &ClusterIndex,
        batch_size: usize,
    ) -> Vec<u64> {
        (0..batch_size).map(|_| self.draw(target, index)).collect()
    }
}

/// Bundles an index, a target and a stream.
pub struct Sampler<'a> {
    pub index: &'a ClusterIndex,
    pub target: SamplingTarget,
    pub state: SamplerState,
}

impl<'a> Sampler<'a> {
    pub fn new(index: &'a ClusterIndex, target: &Histogram, seed_value: u64) -> Result<Self> {
        Ok(Self {
            index,
            target: SamplingTarget::new(target, index)?,
            state: SamplerState::new(seed_value),
        })
    }

    pub fn sample_batch(&mut self, batch_size: usize) -> Vec<u64> {
        self.state.sample_batch(&self.target, self.index, batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Generic,
    Crisp,
}

/// Continued pretraining: a generic phase on the base distribution, then
/// a final phase on the CRISP distribution.
#[derive(Debug, Clone)]
pub struct Schedule {
    total_steps: u64,
    crisp_steps: u64,
    base: SamplingTarget,
    crisp: SamplingTarget,
}

impl Schedule {
    /// `round(fraction · total_steps)` steps use the CRISP distribution.
    pub fn from_fraction(
        total_steps: u64,
        crisp_fraction: f64,
        base: SamplingTarget,
        crisp: SamplingTarget,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&crisp_fraction) {
            return Err(Error::Config(format!(
                "crisp fraction {crisp_fraction} outside [0, 1]"
            )));
        }
        let crisp_steps = (crisp_fraction * total_steps as f64).round() as u64;
        Self::from_generic_steps(total_steps, total_steps - crisp_steps, base, crisp)
    }

    pub fn from_generic_steps(
        total_steps: u64,
        generic_steps: u64,
        base: SamplingTarget,
        crisp: SamplingTarget,
    ) -> Result<Self> {
        if generic_steps > total_steps {
            return Err(Error::Config(format!(
                "generic steps {generic_steps} exceed total steps {total_steps}"
            )));
        }
        if base.level != crisp.level {
            return Err(Error::LevelMismatch {
                left: base.level,
                right: crisp.level,
            });
        }
        Ok(Self {
            total_steps,
            crisp_steps: total_steps - generic_steps,
            base,
            crisp,
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn crisp_steps(&self) -> u64 {
        self.crisp_steps
    }

    pub fn generic_steps(&self) -> u64 {
        self.total_steps - self.crisp_steps
    }

    pub fn crisp_fraction(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.crisp_steps as f64 / self.total_steps as f64
        }
    }

    pub fn phase(&self, step: u64) -> Result<Phase> {
        if step >= self.total_steps {
            return Err(Error::Config(format!(
                "step {step} out of range for a {}-step schedule",
                self.total_steps
            )));
        }
        Ok(if step < self.generic_steps() {
            Phase::Generic
        } else {
            Phase::Crisp
        })
    }

    pub fn sample(
        &self,
        state: &mut SamplerState,
        index: &ClusterIndex,
        step: u64,
        batch_size: usize,
    ) -> Result<Vec<u64>> {
        let target = match self.phase(step)? {
            Phase::Generic => &self.base,
            Phase::Crisp => &self.crisp,
        };
        Ok(state.sample_batch(target, index, batch_size))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionReport {
    /// Windows drawn at least once.
    pub distinct: u64,
    pub total: u64,
    pub mean: f64,
    pub max: u64,
    pub quantiles: Vec<(f64, u64)>,
}

/// Occurrence statistics over the windows drawn at least once. The
/// q-quantile is the `⌈q·n⌉`-th smallest count (the smallest for q = 0).
pub fn repetition_stats(log: &BTreeMap<u64, u64>, quantiles: &[f64]) -> Result<RepetitionReport> {
    let mut counts: Vec<u64> = log.values().copied().filter(|&c| c > 0).collect();
    if counts.is_empty() {
        return Err(Error::Empty("occurrence log is empty".into()));
    }
    if let Some(q) = quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::Config(format!("quantile {q} outside [0, 1]")));
    }
    counts.sort_unstable();
    let n = counts.len();
    let total: u64 = counts.iter().sum();
    let quantiles = quantiles
        .iter()
        .map(|&q| (q, counts[order_statistic(q, n) - 1]))
        .collect();
    Ok(RepetitionReport {
        distinct: n as u64,
        total,
        mean: total as f64 / n as f64,
        max: counts[n - 1],
        quantiles,
    })
}

/// 1-based rank `⌈q·n⌉`, clamped to `[1, n]`; products within 1e-9 of an
/// integer are taken as that integer.
pub(crate) fn order_statistic(q: f64, n: usize) -> usize {
    let x = q * n as f64;
    let r = x.round();
    let rank = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (rank as usize).clamp(1, n.max(1))
}
