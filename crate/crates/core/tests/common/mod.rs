//! Reference implementations used as test oracles. None of them call into
//! the library's numerical code.

#![allow(dead_code)]

use sha2::{Digest, Sha256};

/// One-sided (Hestenes) Jacobi SVD of the matrix whose columns are
/// `columns`. Returns `(σ, u)` pairs, σ descending, `u` the unit left
/// singular vector (zero for σ = 0).
pub fn jacobi_svd(mut columns: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let n = columns.len();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&columns[p], &columns[q]);
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (head, tail) = columns.split_at_mut(q);
                for (x, y) in head[p].iter_mut().zip(tail[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut out: Vec<(f64, Vec<f64>)> = columns
        .into_iter()
        .map(|c| {
            let s = dot(&c, &c).sqrt();
            let u = if s > 0.0 {
                c.iter().map(|x| x / s).collect()
            } else {
                vec![0.0; c.len()]
            };
            (s, u)
        })
        .collect();
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sine of the largest principal angle between the row spaces of two sets
/// of orthonormal rows.
pub fn max_principal_sine(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let residual: Vec<Vec<f64>> = b
        .iter()
        .map(|row| {
            let mut r = row.clone();
            for basis in a {
                let c = dot(row, basis);
                r.iter_mut().zip(basis).for_each(|(x, y)| *x -= c * y);
            }
            r
        })
        .collect();
    jacobi_svd(residual).first().map_or(0.0, |p| p.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn ids_digest(ids: &[u64]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Little xorshift generator so oracle inputs do not depend on the
/// library's RNG plumbing.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u = self.unit().max(f64::MIN_POSITIVE);
        let v = self.unit();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }

    pub fn unit_vector(&mut self, dim: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
        let n = dot(&v, &v).sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }
}
