//! Independent oracles and data helpers shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n × d` sample from a random well-conditioned linear map of N(0, I).
pub fn gaussian_sample(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mix: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 + rng.random::<f64>() } else { 0.3 * normal(rng) }).collect())
        .collect();
    let shift: Vec<f64> = (0..d).map(|_| 5.0 * normal(rng)).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
            (0..d).map(|i| shift[i] + (0..d).map(|j| mix[i][j] * z[j]).sum::<f64>()).collect()
        })
        .collect()
}

pub fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
}

/// Population covariance by the two-pass textbook formula.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = mean(rows);
    let d = m.len();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                c[a][b] += (r[a] - m[a]) * (r[b] - m[b]);
            }
        }
    }
    for row in &mut c {
        for v in row {
            *v /= rows.len() as f64;
        }
    }
    c
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()).unwrap();
        m.swap(col, p);
        let piv = m[col][col];
        for v in &mut m[col] {
            *v /= piv;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[i][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// `(x−μ)ᵀ Σ⁻¹ (x−μ)` with an explicit inverse.
pub fn md_oracle(mu: &[f64], sigma_inv: &[Vec<f64>], x: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    (0..d.len()).map(|i| (0..d.len()).map(|j| d[i] * sigma_inv[i][j] * d[j]).sum::<f64>()).sum()
}

/// `PRR` by direct definition: mean quality after rejecting the `k` most
/// uncertain for each `k`, areas by plain averages.
pub fn prr_oracle(u: &[f64], q: &[f64]) -> f64 {
    let n = u.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| u[j].partial_cmp(&u[i]).unwrap());
    let area = |order: &[usize]| -> f64 {
        (0..n).map(|k| order[k..].iter().map(|&i| q[i]).sum::<f64>() / (n - k) as f64).sum::<f64>() / n as f64
    };
    let mut oracle: Vec<usize> = (0..n).collect();
    oracle.sort_by(|&i, &j| q[i].partial_cmp(&q[j]).unwrap());
    let random = q.iter().sum::<f64>() / n as f64;
    let denom = area(&oracle) - random;
    if denom == 0.0 {
        0.0
    } else {
        (area(&idx) - random) / denom
    }
}

/// Pairwise ROC-AUC: P(score_pos > score_neg) + ½ P(tie).
pub fn roc_oracle(s: &[f64], y: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                den += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Ranks (argsort positions) with ties broken by index, for ordering checks.
pub fn order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap().then(i.cmp(&j)));
    idx
}

/// True when `a` and `b` induce the same weak order (ties allowed in either).
pub fn same_weak_order(a: &[f64], b: &[f64]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| a[i].partial_cmp(&a[j]) == b[i].partial_cmp(&b[j])))
}

pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// `a` orders no pair against `b`: `b_i < b_j ⇒ a_i ≤ a_j` and equal `b`
/// gives equal `a`.
pub fn order_consistent(a: &[f64], b: &[f64]) -> bool {
    (0..a.len()).all(|i| {
        (0..a.len()).all(|j| match b[i].partial_cmp(&b[j]).unwrap() {
            std::cmp::Ordering::Less => a[i] <= a[j],
            std::cmp::Ordering::Equal => a[i] == a[j],
            std::cmp::Ordering::Greater => a[i] >= a[j],
        })
    })
}
