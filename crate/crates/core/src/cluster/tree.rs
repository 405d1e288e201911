//! Hierarchical balanced k-means tree. Levels are trained root to leaves;
//! each node's children come from a balanced k-means run over the training
//! examples routed to that node.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;

use super::balance::{balance, BalanceOutcome};
use super::kmeans::{kmeanspp_init, nearest, KMeansState};
use super::ClusterId;
use crate::binio::{Reader, Writer};
use crate::embed::EmbeddingSet;
use crate::{seed, Error, Result};

pub const TREE_MAGIC: &[u8; 4] = b"TREE";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub depth: u32,
    pub arity: u32,
    pub steps: usize,
    pub samples_per_step: usize,
    pub limit: f64,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            arity: 64,
            steps: 20,
            samples_per_step: 6400,
            limit: 0.022,
            seed: 0,
        }
    }
}

impl TreeConfig {
    pub fn shape(&self) -> TreeShape {
        TreeShape {
            arity: self.arity,
            depth: self.depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arity < 2 {
            return Err(Error::Config("tree arity must be at least 2".into()));
        }
        if !(1..=4).contains(&self.depth) {
            return Err(Error::Config(format!(
                "tree depth must be between 1 and 4, got {}",
                self.depth
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("k-means needs at least one step".into()));
        }
        if self.samples_per_step < self.arity as usize {
            return Err(Error::Config(format!(
                "samples_per_step {} is smaller than the arity {}",
                self.samples_per_step, self.arity
            )));
        }
        if self.limit * (self.arity as f64) < 1.0 - 1e-12 {
            return Err(Error::Config(format!(
                "balancing limit {} is below 1/{}",
                self.limit, self.arity
            )));
        }
        self.shape().leaves()?;
        Ok(())
    }
}

/// Arity and depth of a tree, without centroids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeShape {
    pub arity: u32,
    pub depth: u32,
}

impl TreeShape {
    /// Number of nodes at `level` (`arity^level`).
    pub fn level_size(&self, level: u32) -> Result<u64> {
        (self.arity as u64)
            .checked_pow(level)
            .ok_or_else(|| Error::Config(format!("arity^{level} overflows")))
    }

    pub fn level_sizes(&self) -> Result<Vec<u64>> {
        (1..=self.depth).map(|l| self.level_size(l)).collect()
    }

    pub fn leaves(&self) -> Result<u64> {
        self.level_size(self.depth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    arity: u32,
    depth: u32,
    dim: usize,
    seed: u64,
    /// `levels[l - 1]` holds the `arity^l` centroids of level `l`, row-major.
    levels: Vec<Vec<f32>>,
}

/// One EM step of one node's k-means, recorded during training.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub level: u32,
    pub node: u64,
    pub step: usize,
    pub batch_size: usize,
    pub balance: BalanceOutcome,
    /// Largest cluster fraction after balancing and re-seeding.
    pub max_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub steps: Vec<StepTrace>,
    /// Nodes whose own routed pool was smaller than the arity.
    pub resampled_nodes: Vec<ClusterId>,
}

impl TrainTrace {
    pub fn max_fraction(&self) -> f64 {
        self.steps.iter().map(|s| s.max_fraction).fold(0.0, f64::max)
    }
}

struct NodeResult {
    centroids: Vec<f32>,
    steps: Vec<StepTrace>,
    resampled: bool,
}

fn gather(set: &EmbeddingSet, indices: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(indices.len() * set.dim());
    for &i in indices {
        out.extend_from_slice(set.vector(i));
    }
    out
}

fn train_node(
    set: &EmbeddingSet,
    pool: &[usize],
    level: u32,
    node: u64,
    config: &TreeConfig,
) -> Result<(Vec<f32>, Vec<StepTrace>)> {
    let dim = set.dim();
    let k = config.arity as usize;
    let mut rng = seed::child_rng(config.seed, &[level as u64, node]);
    let batch_size = config.samples_per_step.min(pool.len());
    let draw = |rng: &mut seed::Rng| -> Vec<f32> {
        if batch_size == pool.len() {
            gather(set, pool)
        } else {
            let mut picked = index::sample(rng, pool.len(), batch_size).into_vec();
            picked.sort_unstable();
            let idx: Vec<usize> = picked.into_iter().map(|i| pool[i]).collect();
            gather(set, &idx)
        }
    };

    let mut batch = draw(&mut rng);
    let init = kmeanspp_init(&batch, dim, k, &mut rng)?;
    let mut state = KMeansState::new(init, dim);
    let mut steps = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        if step > 0 {
            batch = draw(&mut rng);
        }
        let mut assignments = state.assign(&batch);
        let outcome = balance(&mut assignments, k, config.limit, &mut rng)?;
        state.update(&batch, &mut assignments);
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a as usize] += 1;
        }
        steps.push(StepTrace {
            level,
            node,
            step,
            batch_size,
            balance: outcome,
            max_fraction: *sizes.iter().max().unwrap_or(&0) as f64 / batch_size as f64,
        });
    }
    Ok((state.centroids, steps))
}

/// Trains a tree over unit-norm embeddings.
pub fn train_tree(set: &EmbeddingSet, config: &TreeConfig) -> Result<ClusterTree> {
    train_tree_traced(set, config).map(|(tree, _)| tree)
}

pub fn train_tree_traced(set: &EmbeddingSet, config: &TreeConfig) -> Result<(ClusterTree, TrainTrace)> {
    config.validate()?;
    if set.len() < config.samples_per_step {
        return Err(Error::Empty(format!(
            "tree training needs at least samples_per_step={} embeddings, got {}",
            config.samples_per_step,
            set.len()
        )));
    }
    if !set.check_unit_norm() {
        return Err(Error::InvalidData(
            "tree training requires unit-norm embeddings".into(),
        ));
    }
    let dim = set.dim();
    let arity = config.arity as u64;
    let n = set.len();

    // partitions[l][node] lists the embeddings routed to `node` at level l.
    let mut partitions: Vec<Vec<Vec<usize>>> = vec![vec![(0..n).collect()]];
    let mut routes = vec![0u64; n];
    let mut levels: Vec<Vec<f32>> = Vec::with_capacity(config.depth as usize);
    let mut trace = TrainTrace::default();

    for level in 1..=config.depth {
        let parent_level = (level - 1) as usize;
        let parents = partitions[parent_level].len();
        let results: Vec<NodeResult> = (0..parents as u64)
            .into_par_iter()
            .map(|node| {
                // Walk up until a pool with at least `arity` examples.
                let (mut l, mut id) = (parent_level, node);
                while partitions[l][id as usize].len() < arity as usize {
                    l -= 1;
                    id /= arity;
                }
                let resampled = l != parent_level;
                if resampled {
                    log::warn!(
                        "node {node} at level {parent_level} has {} routed samples (< arity {arity}); training on ancestor data",
                        partitions[parent_level][node as usize].len()
                    );
                }
                let (centroids, steps) =
                    train_node(set, &partitions[l][id as usize], level, node, config)?;
                Ok(NodeResult {
                    centroids,
                    steps,
                    resampled,
                })
            })
            .collect::<Result<_>>()?;

        let mut centroids = Vec::with_capacity(parents * arity as usize * dim);
        for (node, r) in results.into_iter().enumerate() {
            centroids.extend(r.centroids);
            trace.steps.extend(r.steps);
            if r.resampled {
                trace.resampled_nodes.push(ClusterId {
                    level: level - 1,
                    path: node as u64,
                });
            }
        }

        let k = arity as usize;
        routes = routes
            .par_iter()
            .enumerate()
            .map(|(i, &parent)| {
                let base = parent as usize * k;
                let children = &centroids[base * dim..(base + k) * dim];
                parent * arity + nearest(children, dim, set.vector(i)).0 as u64
            })
            .collect();
        if level < config.depth {
            let mut next = vec![Vec::new(); parents * k];
            for (i, &r) in routes.iter().enumerate() {
                next[r as usize].push(i);
            }
            partitions.push(next);
        }
        levels.push(centroids);
    }

    let tree = ClusterTree {
        arity: config.arity,
        depth: config.depth,
        dim,
        seed: config.seed,
        levels,
    };
    Ok((tree, trace))
}

impl ClusterTree {
    pub fn from_levels(arity: u32, dim: usize, seed: u64, levels: Vec<Vec<f32>>) -> Result<Self> {
        let depth = levels.len() as u32;
        let shape = TreeShape { arity, depth };
        for (i, level) in levels.iter().enumerate() {
            let expected = shape.level_size(i as u32 + 1)? as usize * dim;
            if level.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: level.len(),
                });
            }
        }
        Ok(Self {
            arity,
            depth,
            dim,
            seed,
            levels,
        })
    }

    pub fn arity(&self) -> u32 {
        self.arity
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shape(&self) -> TreeShape {
        TreeShape {
            arity: self.arity,
            depth: self.depth,
        }
    }

    /// Centroids of `level` (1-based), row-major.
    pub fn level(&self, level: u32) -> &[f32] {
        &self.levels[level as usize - 1]
    }

    pub fn centroid(&self, id: ClusterId) -> &[f32] {
        let level = self.level(id.level);
        let i = id.path as usize;
        &level[i * self.dim..(i + 1) * self.dim]
    }

    /// Greedy descent from the root: at every level the nearest child of the
    /// current node is selected (ties to the lowest child index).
    pub fn assign(&self, embedding: &[f32], level: u32) -> Result<ClusterId> {
        if embedding.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: embedding.len(),
            });
        }
        if level > self.depth {
            return Err(Error::Config(format!(
                "level {level} exceeds tree depth {}",
                self.depth
            )));
        }
        let k = self.arity as usize;
        let mut path = 0u64;
        for l in 1..=level {
            let base = path as usize * k;
            let children = &self.level(l)[base * self.dim..(base + k) * self.dim];
            path = path * self.arity as u64 + nearest(children, self.dim, embedding).0 as u64;
        }
        Ok(ClusterId { level, path })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer::new(BufWriter::new(file));
        w.bytes(TREE_MAGIC)?;
        w.u32(self.arity)?;
        w.u32(self.depth)?;
        w.u32(self.dim as u32)?;
        w.u64(self.seed)?;
        for level in &self.levels {
            for &x in level {
                w.f32(x)?;
            }
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(BufReader::new(file), "TREE");
        r.expect_magic(TREE_MAGIC)?;
        let arity = r.u32("arity")?;
        let depth = r.u32("depth")?;
        let dim = r.u32("dim")? as usize;
        let seed = r.u64("seed")?;
        if arity < 2 || depth == 0 || dim == 0 {
            return Err(r.error(format!("invalid header arity={arity} depth={depth} dim={dim}")));
        }
        let shape = TreeShape { arity, depth };
        let mut levels = Vec::with_capacity(depth as usize);
        for l in 1..=depth {
            let mut level = Vec::new();
            r.finite_f32s(shape.level_size(l)? as usize * dim, &mut level, "centroids")?;
            levels.push(level);
        }
        if r.at_record_start()?.is_some() {
            return Err(r.error("trailing bytes after the last level"));
        }
        Self::from_levels(arity, dim, seed, levels)
    }
}
