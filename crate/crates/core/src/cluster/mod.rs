//! Hierarchical balanced k-means clustering and radix-path cluster ids.

mod balance;
mod kmeans;
mod tree;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{Reader, Writer};
use crate::embed::EmbeddingSet;
use crate::{Error, Result};

pub use balance::{balance, cluster_cap, BalanceOutcome};
pub use kmeans::{kmeans_step, kmeanspp_init, nearest, KMeansState};
pub use tree::{
    train_tree, train_tree_traced, ClusterTree, StepTrace, TrainTrace, TreeConfig, TreeShape,
    TREE_MAGIC,
};

pub const ASSIGNMENT_MAGIC: &[u8; 4] = b"ASG1";

/// A node of the tree: the base-`arity` digits of `path` spell the child
/// index chosen at each level, root first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClusterId {
    pub level: u32,
    pub path: u64,
}

impl ClusterId {
    pub const ROOT: ClusterId = ClusterId { level: 0, path: 0 };

    pub fn parent(self, arity: u32) -> Option<ClusterId> {
        (self.level > 0).then(|| ClusterId {
            level: self.level - 1,
            path: self.path / arity as u64,
        })
    }

    pub fn child(self, arity: u32, index: u32) -> ClusterId {
        debug_assert!(index < arity);
        ClusterId {
            level: self.level + 1,
            path: self.path * arity as u64 + index as u64,
        }
    }

    /// Child indices from the root down.
    pub fn digits(self, arity: u32) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.level as usize);
        let mut p = self.path;
        for _ in 0..self.level {
            out.push((p % arity as u64) as u32);
            p /= arity as u64;
        }
        out.reverse();
        out
    }

    pub fn is_valid(self, shape: TreeShape) -> bool {
        self.level <= shape.depth
            && shape
                .level_size(self.level)
                .is_ok_and(|size| self.path < size)
    }
}

/// Cluster id of every window at one tree level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentTable {
    level: u32,
    entries: Vec<(u64, u64)>,
    counts: BTreeMap<u64, u64>,
}

impl AssignmentTable {
    /// Builds a table from `(window_id, path)` pairs.
    pub fn from_entries(level: u32, entries: Vec<(u64, u64)>) -> Self {
        let mut counts = BTreeMap::new();
        for &(_, path) in &entries {
            *counts.entry(path).or_insert(0) += 1;
        }
        Self {
            level,
            entries,
            counts,
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn entries(&self) -> &[(u64, u64)] {
        &self.entries
    }

    /// Per-cluster totals over clusters with at least one entry.
    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, shape: TreeShape) -> Result<()> {
        let size = shape.level_size(self.level)?;
        match self.counts.keys().next_back() {
            Some(&p) if p >= size => Err(Error::InvalidData(format!(
                "path {p} out of range for level {} (size {size})",
                self.level
            ))),
            _ => Ok(()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer::new(BufWriter::new(file));
        w.bytes(ASSIGNMENT_MAGIC)?;
        w.u32(self.level)?;
        w.u64(self.entries.len() as u64)?;
        for &(id, p) in &self.entries {
            w.u64(id)?;
            w.u64(p)?;
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(BufReader::new(file), "ASG1");
        r.expect_magic(ASSIGNMENT_MAGIC)?;
        let level = r.u32("level")?;
        let count = r.u64("count")?;
        let mut entries = Vec::with_capacity(count.min(1 << 24) as usize);
        for _ in 0..count {
            let id = r.u64("window_id")?;
            let p = r.u64("path")?;
            entries.push((id, p));
        }
        if r.at_record_start()?.is_some() {
            return Err(r.error(format!("trailing bytes after {count} records")));
        }
        Ok(Self::from_entries(level, entries))
    }
}

/// Assigns every embedding of the set at `level`.
pub fn assign_all(tree: &ClusterTree, set: &EmbeddingSet, level: u32) -> Result<AssignmentTable> {
    if set.is_empty() {
        return Err(Error::Empty(
            "cannot assign an empty embedding set (no histogram can be estimated)".into(),
        ));
    }
    if set.dim() != tree.dim() {
        return Err(Error::DimensionMismatch {
            expected: tree.dim(),
            found: set.dim(),
        });
    }
    let entries = (0..set.len())
        .into_par_iter()
        .map(|i| Ok((set.ids()[i], tree.assign(set.vector(i), level)?.path)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AssignmentTable::from_entries(level, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_arithmetic() {
        let id = ClusterId::ROOT.child(8, 3).child(8, 5);
        assert_eq!(id, ClusterId { level: 2, path: 29 });
        assert_eq!(id.digits(8), [3, 5]);
        assert_eq!(id.parent(8), Some(ClusterId { level: 1, path: 3 }));
        assert_eq!(ClusterId::ROOT.parent(8), None);
        let shape = TreeShape { arity: 8, depth: 2 };
        assert!(id.is_valid(shape));
        assert!(!ClusterId { level: 2, path: 64 }.is_valid(shape));
        assert!(!ClusterId { level: 3, path: 0 }.is_valid(shape));
    }

    #[test]
    fn level_sizes() {
        let shape = TreeShape { arity: 64, depth: 4 };
        assert_eq!(shape.level_sizes().unwrap(), [64, 4096, 262_144, 16_777_216]);
    }

    fn small_tree() -> ClusterTree {
        // arity 2, depth 2, dim 2
        let l1 = vec![1.0, 0.0, 0.0, 1.0];
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let l2 = vec![1.0, 0.0, s, -s, 0.0, 1.0, -s, s];
        ClusterTree::from_levels(2, 2, 0, vec![l1, l2]).unwrap()
    }

    #[test]
    fn assign_levels() {
        let t = small_tree();
        assert_eq!(t.assign(&[0.0, 1.0], 0).unwrap(), ClusterId::ROOT);
        assert_eq!(t.assign(&[0.0, 1.0], 1).unwrap().path, 1);
        assert_eq!(t.assign(&[1.0, 0.0], 2).unwrap().path, 0);
        assert_eq!(t.assign(&[-0.6, 0.8], 2).unwrap().path, 3);
        assert!(t.assign(&[1.0], 1).is_err());
        assert!(t.assign(&[1.0, 0.0], 3).is_err());
    }

    #[test]
    fn ties_go_to_lowest_child() {
        let t = small_tree();
        let s = std::f32::consts::FRAC_1_SQRT_2;
        assert_eq!(t.assign(&[s, s], 1).unwrap().path, 0);
    }

    #[test]
    fn assign_all_counts() {
        let t = small_tree();
        let mut set = EmbeddingSet::new(2);
        set.push(10, &[1.0, 0.0]).unwrap();
        let table = assign_all(&t, &set, 1).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.counts().get(&0), Some(&1));
        assert!(assign_all(&t, &EmbeddingSet::new(2), 1).is_err());
    }

    #[test]
    fn assignment_file_roundtrip() {
        let table = AssignmentTable::from_entries(2, vec![(5, 3), (6, 3), (9, 1)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.asg");
        table.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 8 + 3 * 16);
        assert_eq!(AssignmentTable::load(&p).unwrap(), table);
    }

    #[test]
    fn tree_file_roundtrip() {
        let t = small_tree();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tree");
        t.save(&p).unwrap();
        assert_eq!(ClusterTree::load(&p).unwrap(), t);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 8 + (2 + 4) * 2 * 4);
    }
}
