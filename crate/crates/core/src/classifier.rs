//! Logistic-regression filtering baseline: a linear classifier separating
//! specialist (positive) from generalist (negative) embeddings, and
//! quantile thresholds over generalist scores.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;

use crate::embed::EmbeddingSet;
use crate::{seed, Error, Result};

pub const DEFAULT_MAX_ITERS: u64 = 10_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Negatives per positive in the generalist subsample.
pub const NEGATIVE_RATIO: usize = 100;
pub const MAX_NEGATIVES: usize = 1_000_000;

pub const QUANTILE_GRID: [f64; 13] = [
    0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 0.95, 0.975, 0.98, 0.9875, 0.99, 0.995, 0.9975,
];

/// Regularization strengths; 0 means none.
pub const L2_GRID: [f64; 8] = [0.0, 1000.0, 100.0, 10.0, 1.0, 0.1, 0.01, 0.001];

const MODEL_HEADER: &str = "crisp-logreg 1";
const SCORE_HEADER: &str = "window_id\tscore";
const CHUNK: usize = 4096;
const MAX_HALVINGS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub l2_strength: f64,
    pub max_iters: u64,
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_strength: 0.0,
            max_iters: DEFAULT_MAX_ITERS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    weights: Vec<f32>,
    bias: f64,
    l2_strength: f64,
    iterations: u64,
    final_loss: f64,
}

/// A trained model and the objective after every accepted step, starting
/// from the zero model.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: LogRegModel,
    pub losses: Vec<f64>,
    pub gradient_norm: f64,
    pub converged: bool,
}

impl LogRegModel {
    pub fn new(weights: Vec<f32>, bias: f64, l2_strength: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::InvalidData("non-finite model parameters".into()));
        }
        if !(l2_strength.is_finite() && l2_strength >= 0.0) {
            return Err(Error::Config(format!("l2 strength {l2_strength} must be >= 0")));
        }
        Ok(Self {
            weights,
            bias,
            l2_strength,
            iterations: 0,
            final_loss: f64::NAN,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn l2_strength(&self) -> f64 {
        self.l2_strength
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    pub fn linear(&self, embedding: &[f32]) -> Result<f64> {
        if embedding.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: embedding.len(),
            });
        }
        Ok(dot(&self.weights, embedding) + self.bias)
    }

    /// Estimated probability of being in-domain.
    pub fn score(&self, embedding: &[f32]) -> Result<f64> {
        self.linear(embedding).map(sigmoid)
    }

    pub fn score_all(&self, set: &EmbeddingSet) -> Result<Vec<(u64, f64)>> {
        if set.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: set.dim(),
            });
        }
        Ok((0..set.len())
            .into_par_iter()
            .map(|i| (set.ids()[i], sigmoid(dot(&self.weights, set.vector(i)) + self.bias)))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_HEADER}");
        let _ = writeln!(s, "dim {}", self.dim());
        let _ = writeln!(s, "l2 {}", self.l2_strength);
        let _ = writeln!(s, "iterations {}", self.iterations);
        let _ = writeln!(s, "loss {}", self.final_loss);
        let _ = writeln!(s, "bias {}", self.bias);
        for w in &self.weights {
            let _ = writeln!(s, "{w}");
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: &str| {
            Error::InvalidData(format!("{}:{}: {msg}", path.display(), line + 1))
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, MODEL_HEADER)) => {}
            _ => return Err(bad(0, "not a logistic-regression model file")),
        }
        let mut field = |name: &str| -> Result<String> {
            let (i, line) = lines.next().ok_or_else(|| bad(0, "truncated header"))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(i, &format!("expected `{name}`")))
        };
        let parse_err = |what: &str| Error::InvalidData(format!("{}: bad {what}", path.display()));
        let dim: usize = field("dim")?.parse().map_err(|_| parse_err("dim"))?;
        let l2: f64 = field("l2")?.parse().map_err(|_| parse_err("l2"))?;
        let iterations: u64 = field("iterations")?.parse().map_err(|_| parse_err("iterations"))?;
        let final_loss: f64 = field("loss")?.parse().map_err(|_| parse_err("loss"))?;
        let bias: f64 = field("bias")?.parse().map_err(|_| parse_err("bias"))?;
        let weights = lines
            .map(|(i, l)| l.trim().parse::<f32>().map_err(|_| bad(i, "bad weight")))
            .collect::<Result<Vec<f32>>>()?;
        if weights.len() != dim {
            return Err(Error::InvalidData(format!(
                "{}: header says {dim} weights, found {}",
                path.display(),
                weights.len()
            )));
        }
        let mut model = Self::new(weights, bias, l2)?;
        model.iterations = iterations;
        model.final_loss = final_loss;
        Ok(model)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(w: &[f32], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn dot64(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a * b as f64).sum()
}

/// The class-balanced objective
/// `½·mean_pos softplus(−z) + ½·mean_neg softplus(z) + (λ/2)·‖w‖²`.
struct Objective<'a> {
    pos: &'a EmbeddingSet,
    neg: &'a EmbeddingSet,
    l2: f64,
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        self.pos.dim()
    }

    /// Per-chunk partial sums are reduced in a fixed order, so the result
    /// does not depend on the thread count.
    fn class_sum<T: Send>(
        set: &EmbeddingSet,
        f: impl Fn(&[f32]) -> T + Sync,
        fold: impl Fn(T, T) -> T + Sync,
        zero: impl Fn() -> T + Sync,
    ) -> T {
        let n = set.len();
        let chunks: Vec<T> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                (c * CHUNK..((c + 1) * CHUNK).min(n))
                    .map(|i| f(set.vector(i)))
                    .fold(zero(), &fold)
            })
            .collect();
        chunks.into_iter().fold(zero(), &fold)
    }

    fn loss(&self, w: &[f64], b: f64) -> f64 {
        let add = |a: f64, b: f64| a + b;
        let lp = Self::class_sum(self.pos, |x| softplus(-(dot64(w, x) + b)), add, || 0.0);
        let ln = Self::class_sum(self.neg, |x| softplus(dot64(w, x) + b), add, || 0.0);
        0.5 * lp / self.pos.len() as f64
            + 0.5 * ln / self.neg.len() as f64
            + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Gradient with respect to `(w, b)`, bias last.
    fn gradient(&self, w: &[f64], b: f64) -> Vec<f64> {
        let d = self.dim();
        let grad_class = |set: &EmbeddingSet, positive: bool| {
            let scale = 0.5 / set.len() as f64;
            Self::class_sum(
                set,
                |x| {
                    let p = sigmoid(dot64(w, x) + b);
                    let r = if positive { p - 1.0 } else { p };
                    let mut g: Vec<f64> = x.iter().map(|&v| r * v as f64).collect();
                    g.push(r);
                    g
                },
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    a
                },
                || vec![0.0; d + 1],
            )
            .into_iter()
            .map(|v| v * scale)
            .collect::<Vec<f64>>()
        };
        let mut g = grad_class(self.pos, true);
        let gn = grad_class(self.neg, false);
        for (i, (a, b)) in g.iter_mut().zip(gn).enumerate() {
            *a += b;
            if i < d {
                *a += self.l2 * w[i];
            }
        }
        g
    }
}

fn check_finite(set: &EmbeddingSet, what: &str) -> Result<()> {
    if let Some(i) = set.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!(
            "non-finite value in {what} embedding {}",
            set.ids()[i / set.dim().max(1)]
        )));
    }
    Ok(())
}

pub fn train_logreg(pos: &EmbeddingSet, neg: &EmbeddingSet, l2_strength: f64) -> Result<LogRegModel> {
    let config = TrainConfig {
        l2_strength,
        ..TrainConfig::default()
    };
    Ok(train_logreg_with(pos, neg, &config)?.model)
}

/// Full-batch gradient descent with Armijo backtracking from the zero
/// model. Stops when the gradient norm falls below `tolerance`, after
/// `max_iters` steps, or when no step decreases the objective.
pub fn train_logreg_with(pos: &EmbeddingSet, neg: &EmbeddingSet, config: &TrainConfig) -> Result<Trained> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty(format!(
            "need both classes: {} positives, {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    if pos.dim() != neg.dim() {
        return Err(Error::DimensionMismatch {
            expected: pos.dim(),
            found: neg.dim(),
        });
    }
    if !(config.l2_strength.is_finite() && config.l2_strength >= 0.0) {
        return Err(Error::Config(format!(
            "l2 strength {} must be >= 0",
            config.l2_strength
        )));
    }
    check_finite(pos, "positive")?;
    check_finite(neg, "negative")?;

    let obj = Objective {
        pos,
        neg,
        l2: config.l2_strength,
    };
    let d = obj.dim();
    let mut w = vec![0.0f64; d];
    let mut b = 0.0f64;
    let mut loss = obj.loss(&w, b);
    let mut losses = vec![loss];
    let mut step = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    let mut g = obj.gradient(&w, b);
    let mut gnorm = norm(&g);

    while iterations < config.max_iters {
        if gnorm < config.tolerance {
            converged = true;
            break;
        }
        let g2 = gnorm * gnorm;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let w_new: Vec<f64> = w.iter().zip(&g).map(|(x, gi)| x - step * gi).collect();
            let b_new = b - step * g[d];
            let l_new = obj.loss(&w_new, b_new);
            if l_new <= loss - 0.5 * step * g2 {
                accepted = Some((w_new, b_new, l_new));
                break;
            }
            step *= 0.5;
        }
        let Some((w_new, b_new, l_new)) = accepted else {
            log::debug!("line search stalled at iteration {iterations}, gradient norm {gnorm:e}");
            break;
        };
        w = w_new;
        b = b_new;
        loss = l_new;
        losses.push(loss);
        iterations += 1;
        step *= 2.0;
        g = obj.gradient(&w, b);
        gnorm = norm(&g);
    }
    if !converged && gnorm < config.tolerance {
        converged = true;
    }
    if !converged {
        log::info!("logistic regression stopped after {iterations} iterations, gradient norm {gnorm:e}");
    }
    let mut model = LogRegModel::new(
        w.iter().map(|&v| v as f32).collect(),
        b,
        config.l2_strength,
    )?;
    model.iterations = iterations;
    model.final_loss = loss;
    Ok(Trained {
        model,
        losses,
        gradient_norm: gnorm,
        converged,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sorted indices of a uniform generalist subsample of
/// `min(100·positives, 1,000,000, generalists)` negatives.
pub fn subsample_negatives(generalists: usize, positives: usize, seed_value: u64) -> Vec<usize> {
    let n = positives
        .saturating_mul(NEGATIVE_RATIO)
        .min(MAX_NEGATIVES)
        .min(generalists);
    let mut rng = seed::child_rng(seed_value, &[0xc1a55]);
    let mut picked = index::sample(&mut rng, generalists, n).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionThreshold {
    pub quantile: f64,
    pub score_cut: f64,
    pub accepted_fraction: f64,
}

/// The cut is the `⌈q·n⌉`-th smallest score (−∞ for q = 0); the accepted
/// fraction counts scores strictly above it.
pub fn threshold_from_quantile(scores: &[f64], quantile: f64) -> Result<SelectionThreshold> {
    if scores.is_empty() {
        return Err(Error::Empty("no scores to threshold".into()));
    }
    if !(0.0..1.0).contains(&quantile) {
        return Err(Error::Config(format!("quantile {quantile} outside [0, 1)")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidData("NaN score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let x = quantile * n as f64;
    let rank = if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x.ceil()
    } as usize;
    let score_cut = if rank == 0 {
        f64::NEG_INFINITY
    } else {
        sorted[rank.min(n) - 1]
    };
    let above = n - sorted.partition_point(|&s| s <= score_cut);
    Ok(SelectionThreshold {
        quantile,
        score_cut,
        accepted_fraction: above as f64 / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected ids in input order.
    pub ids: Vec<u64>,
    pub acceptance_rate: f64,
}

/// Keeps the windows scoring strictly above the cut.
pub fn filter(scores: &[(u64, f64)], threshold: &SelectionThreshold) -> Selection {
    let ids: Vec<u64> = scores
        .iter()
        .filter(|(_, s)| *s > threshold.score_cut)
        .map(|&(id, _)| id)
        .collect();
    let acceptance_rate = if scores.is_empty() {
        0.0
    } else {
        ids.len() as f64 / scores.len() as f64
    };
    Selection {
        ids,
        acceptance_rate,
    }
}

/// Scores are written as `f32`.
pub fn write_scores(path: &Path, scores: &[(u64, f64)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{SCORE_HEADER}").map_err(io)?;
    for &(id, s) in scores {
        writeln!(out, "{id}\t{}", s as f32).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_scores(path: &Path) -> Result<Vec<(u64, f64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let bad = |i: usize, msg: &str| {
        Error::InvalidData(format!("{}:{}: {msg}", path.display(), i + 1))
    };
    match lines.next() {
        Some((_, Ok(h))) if h == SCORE_HEADER => {}
        _ => return Err(bad(0, "missing score header")),
    }
    let mut scores = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, s) = line.split_once('\t').ok_or_else(|| bad(i, "expected two fields"))?;
        let id: u64 = id.parse().map_err(|_| bad(i, "bad window id"))?;
        let s: f32 = s.parse().map_err(|_| bad(i, "bad score"))?;
        if !s.is_finite() {
            return Err(bad(i, "non-finite score"));
        }
        scores.push((id, s as f64));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[[f32; 2]], first_id: u64) -> EmbeddingSet {
        let data = rows.iter().flatten().copied().collect();
        let ids = (0..rows.len() as u64).map(|i| first_id + i).collect();
        EmbeddingSet::from_parts(2, ids, data).unwrap()
    }

    fn blobs() -> (EmbeddingSet, EmbeddingSet) {
        let pos: Vec<[f32; 2]> = (0..20)
            .map(|i| {
                let a = 0.2 + 0.02 * i as f32;
                [a.cos(), a.sin()]
            })
            .collect();
        let neg: Vec<[f32; 2]> = (0..30)
            .map(|i| {
                let a = 3.0 + 0.02 * i as f32;
                [a.cos(), a.sin()]
            })
            .collect();
        (set(&pos, 0), set(&neg, 100))
    }

    #[test]
    fn zero_model_scores_half() {
        let (pos, neg) = blobs();
        let cfg = TrainConfig {
            max_iters: 0,
            ..TrainConfig::default()
        };
        let t = train_logreg_with(&pos, &neg, &cfg).unwrap();
        assert_eq!(t.model.iterations(), 0);
        assert!(t.model.score_all(&pos).unwrap().iter().all(|&(_, s)| s == 0.5));
    }

    #[test]
    fn separable_blobs() {
        let (pos, neg) = blobs();
        let t = train_logreg_with(&pos, &neg, &TrainConfig { max_iters: 500, ..TrainConfig::default() }).unwrap();
        let ok = t.model.score_all(&pos).unwrap().iter().filter(|s| s.1 > 0.5).count()
            + t.model.score_all(&neg).unwrap().iter().filter(|s| s.1 <= 0.5).count();
        assert_eq!(ok, 50);
        assert!(t.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn regularized_converges() {
        let (pos, neg) = blobs();
        let cfg = TrainConfig {
            l2_strength: 1.0,
            ..TrainConfig::default()
        };
        let t = train_logreg_with(&pos, &neg, &cfg).unwrap();
        assert!(t.converged);
        assert!(t.gradient_norm < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (pos, _) = blobs();
        assert!(train_logreg(&pos, &EmbeddingSet::new(2), 0.0).is_err());
        let nan = EmbeddingSet::from_parts(2, vec![1], vec![f32::NAN, 0.0]).unwrap();
        assert!(train_logreg(&pos, &nan, 0.0).is_err());
    }

    #[test]
    fn score_values() {
        let m = LogRegModel::new(vec![0.0, 0.0], 20.0, 0.0).unwrap();
        assert!(m.score(&[1.0, 0.0]).unwrap() >= 0.999999);
        let m = LogRegModel::new(vec![1.0, -2.0], 0.5, 0.0).unwrap();
        let expected = 1.0 / (1.0 + (-(0.3 - 2.0 * 0.4 + 0.5f64)).exp());
        assert!((m.score(&[0.3, 0.4]).unwrap() - expected).abs() < 1e-7);
        assert!(m.score(&[1.0]).is_err());
    }

    #[test]
    fn quantile_counting() {
        let scores: Vec<f64> = (1..=1000).map(f64::from).collect();
        let t = threshold_from_quantile(&scores, 0.9).unwrap();
        assert_eq!(t.score_cut, 900.0);
        assert_eq!(t.accepted_fraction, 0.1);
        let all = threshold_from_quantile(&scores, 0.0).unwrap();
        assert_eq!(all.accepted_fraction, 1.0);
        assert!(threshold_from_quantile(&scores, 1.0).is_err());
        assert!(threshold_from_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn filter_strict() {
        let scores = vec![(1, 0.2), (2, 0.5), (3, 0.9)];
        let cut = |t| SelectionThreshold {
            quantile: 0.5,
            score_cut: t,
            accepted_fraction: 0.0,
        };
        assert_eq!(filter(&scores, &cut(0.5)).ids, [3]);
        assert_eq!(filter(&scores, &cut(0.0)).ids, [1, 2, 3]);
        assert!(filter(&scores, &cut(1.0)).ids.is_empty());
    }

    #[test]
    fn subsample_sizes() {
        assert_eq!(subsample_negatives(500, 3, 1).len(), 300);
        assert_eq!(subsample_negatives(50, 3, 1).len(), 50);
        let s = subsample_negatives(20_000_000, 20_000, 1);
        assert_eq!(s.len(), MAX_NEGATIVES);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_negatives(1000, 2, 9), subsample_negatives(1000, 2, 9));
    }

    #[test]
    fn files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (pos, neg) = blobs();
        let m = train_logreg(&pos, &neg, 0.1).unwrap();
        let p = dir.path().join("model.txt");
        m.save(&p).unwrap();
        assert_eq!(LogRegModel::load(&p).unwrap(), m);
        let scores = m.score_all(&neg).unwrap();
        let s = dir.path().join("scores.tsv");
        write_scores(&s, &scores).unwrap();
        let back = read_scores(&s).unwrap();
        assert_eq!(back.len(), scores.len());
        for (a, b) in back.iter().zip(&scores) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1 as f32 as f64);
        }
    }
}
