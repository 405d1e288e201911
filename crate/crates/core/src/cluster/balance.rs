use rand::seq::SliceRandom;

use crate::seed::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceOutcome {
    pub iterations: usize,
    pub max_fraction: f64,
    pub converged: bool,
}

/// Largest count a cluster may hold: `floor(limit * n)`, raised to
/// `ceil(n / k)` when integer granularity makes the limit infeasible.
pub fn cluster_cap(n: usize, k: usize, limit: f64) -> usize {
    ((limit * n as f64).floor() as usize).max(n.div_ceil(k))
}

/// Caps cluster sizes at `limit` of the batch. While some cluster is over the
/// cap, the members of the largest cluster and of the smallest cluster are
/// pooled, shuffled and split evenly between the two. Gives up after
/// `10 * k` splits.
pub fn balance(assignments: &mut [u32], k: usize, limit: f64, rng: &mut Rng) -> Result<BalanceOutcome> {
    if k == 0 || limit * (k as f64) < 1.0 - 1e-12 {
        return Err(Error::Config(format!(
            "balancing limit {limit} is infeasible for {k} clusters (needs >= 1/{k})"
        )));
    }
    let n = assignments.len();
    if n == 0 {
        return Ok(BalanceOutcome {
            iterations: 0,
            max_fraction: 0.0,
            converged: true,
        });
    }
    let cap = cluster_cap(n, k, limit);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        let a = a as usize;
        if a >= k {
            return Err(Error::InvalidData(format!("assignment {a} out of range for k={k}")));
        }
        members[a].push(i);
    }

    let mut iterations = 0;
    let max_iterations = 10 * k;
    let converged = loop {
        let (big, big_len) = members
            .iter()
            .enumerate()
            .fold((0, 0), |best, (j, m)| if m.len() > best.1 { (j, m.len()) } else { best });
        if big_len <= cap {
            break true;
        }
        if iterations == max_iterations {
            break false;
        }
        let small = members
            .iter()
            .enumerate()
            .min_by_key(|(j, m)| (m.len(), *j))
            .map(|(j, _)| j)
            .expect("k > 0");
        let mut pooled = std::mem::take(&mut members[big]);
        pooled.append(&mut members[small]);
        pooled.sort_unstable();
        pooled.shuffle(rng);
        let keep = pooled.len().div_ceil(2);
        let mut moved = pooled.split_off(keep);
        pooled.sort_unstable();
        moved.sort_unstable();
        members[big] = pooled;
        members[small] = moved;
        iterations += 1;
    };

    for (j, m) in members.iter().enumerate() {
        for &i in m {
            assignments[i] = j as u32;
        }
    }
    let max_len = members.iter().map(Vec::len).max().unwrap_or(0);
    if !converged {
        log::warn!("balancing stopped after {iterations} splits with a cluster of {max_len}/{n}");
    }
    Ok(BalanceOutcome {
        iterations,
        max_fraction: max_len as f64 / n as f64,
        converged,
    })
}
