//! Hybrid uncertainty: a rank-based, case-wise combination of a
//! probability score `u1` and a density score `u2`, tuned on held-out data.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::prr;
use crate::scalar::Scalar;

/// Mixing weights tried by [`tune_huq`]: 0, 0.05, …, 1.
pub const ALPHA_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct HuqParams<T> {
    /// Threshold on `u2`; `-inf` routes every input through the mixed branch.
    pub delta_min: T,
    /// Threshold on `u1`.
    pub delta_max: T,
    pub alpha: T,
    /// Sorted `u1` over the tuning set.
    pub ref_t2_u1: Vec<T>,
    /// Sorted `u2` over the tuning set.
    pub ref_t2_u2: Vec<T>,
    /// Sorted `u1` over tuning points with `u2 <= delta_min`.
    pub ref_tid_u1: Vec<T>,
    /// Set when tuning saw constant quality and fell back to `u1`.
    pub degenerate: bool,
}

impl<T: Scalar> HuqParams<T> {
    /// Builds the reference arrays from tuning-set scores. A finite
    /// `delta_min` must keep at least one reference point in case 1.
    pub fn new(delta_min: T, delta_max: T, alpha: T, u1: &[T], u2: &[T]) -> Result<Self> {
        if u1.len() != u2.len() {
            return Err(Error::dims(format!("{} u1 scores vs {} u2 scores", u1.len(), u2.len())));
        }
        if u1.is_empty() {
            return Err(Error::data("empty reference set"));
        }
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::data(format!("alpha {alpha} outside [0, 1]")));
        }
        let mut ref_tid_u1: Vec<T> = u1.iter().zip(u2).filter(|(_, &b)| b <= delta_min).map(|(&a, _)| a).collect();
        if ref_tid_u1.is_empty() && delta_min != T::neg_infinity() {
            return Err(Error::data(format!("delta_min {delta_min} lies below every reference u2")));
        }
        let mut ref_t2_u1 = u1.to_vec();
        let mut ref_t2_u2 = u2.to_vec();
        for v in [&mut ref_tid_u1, &mut ref_t2_u1, &mut ref_t2_u2] {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        }
        Ok(Self { delta_min, delta_max, alpha, ref_t2_u1, ref_t2_u2, ref_tid_u1, degenerate: false })
    }
}

/// Fraction of the sorted reference values that are `<= u`.
pub fn rank<T: Scalar>(u: T, reference: &[T]) -> Result<T> {
    if reference.is_empty() {
        return Err(Error::data("rank against an empty reference set"));
    }
    let count = reference.partition_point(|&r| r <= u);
    Ok(T::of_usize(count) / T::of_usize(reference.len()))
}

pub fn huq_score<T: Scalar>(params: &HuqParams<T>, u1: T, u2: T) -> Result<T> {
    if u2 <= params.delta_min {
        if u1 <= params.delta_max {
            rank(u1, &params.ref_tid_u1)
        } else {
            rank(u1, &params.ref_t2_u1)
        }
    } else {
        let a = params.alpha;
        Ok((T::one() - a) * rank(u2, &params.ref_t2_u2)? + a * rank(u1, &params.ref_t2_u1)?)
    }
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile<T: Scalar>(sorted: &[T], p: f64) -> T {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn deciles<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    (1..=9).map(|k| quantile(&s, k as f64 / 10.0)).collect()
}

/// Grid search over `delta_min ∈ {-inf} ∪ deciles(u2)`,
/// `delta_max ∈ deciles(u1)` and `alpha ∈ {0, 0.05, …, 1}` maximizing PRR
/// on the tuning set. Ties prefer larger `alpha`, then larger `delta_min`,
/// then the earlier grid point.
pub fn tune_huq<T: Scalar>(u1: &[T], u2: &[T], quality: &[T]) -> Result<HuqParams<T>> {
    let n = u1.len();
    if u2.len() != n || quality.len() != n {
        return Err(Error::dims(format!("u1 {n}, u2 {}, quality {} lengths differ", u2.len(), quality.len())));
    }
    if n < 4 {
        return Err(Error::data(format!("too few points for HUQ tuning: {n} (need 4)")));
    }
    if u1.iter().chain(u2).chain(quality).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite value in HUQ tuning input"));
    }
    let d_max_grid = deciles(u1);
    if quality.iter().all(|&q| q == quality[0]) {
        log::warn!("constant quality on the tuning set; HUQ falls back to u1");
        let mut p = HuqParams::new(T::neg_infinity(), d_max_grid[4], T::one(), u1, u2)?;
        p.degenerate = true;
        return Ok(p);
    }
    let mut d_min_grid = vec![T::neg_infinity()];
    d_min_grid.extend(deciles(u2));

    let mut grid = Vec::with_capacity(d_min_grid.len() * d_max_grid.len() * (ALPHA_STEPS + 1));
    for (i, &dmin) in d_min_grid.iter().enumerate() {
        for &dmax in &d_max_grid {
            for a in 0..=ALPHA_STEPS {
                grid.push((i, dmin, dmax, a));
            }
        }
    }
    let scored: Vec<T> = grid
        .par_iter()
        .map(|&(_, dmin, dmax, a)| {
            let params = HuqParams::new(dmin, dmax, T::of(a as f64 / ALPHA_STEPS as f64), u1, u2)?;
            let scores = u1
                .iter()
                .zip(u2)
                .map(|(&x, &y)| huq_score(&params, x, y))
                .collect::<Result<Vec<T>>>()?;
            prr(&scores, quality)
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for k in 1..grid.len() {
        let (s, b) = (scored[k], scored[best]);
        let better = s > b
            || (s == b && (grid[k].3 > grid[best].3 || (grid[k].3 == grid[best].3 && grid[k].0 > grid[best].0)));
        if better {
            best = k;
        }
    }
    let (_, dmin, dmax, a) = grid[best];
    HuqParams::new(dmin, dmax, T::of(a as f64 / ALPHA_STEPS as f64), u1, u2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_counts() {
        let r = [1.0f64, 2.0, 3.0];
        assert!((rank(2.5, &r).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rank(0.0, &r).unwrap(), 0.0);
        assert_eq!(rank(3.0, &r).unwrap(), 1.0);
        assert_eq!(rank(9.0, &r).unwrap(), 1.0);
        assert!(rank(1.0, &[] as &[f64]).is_err());
    }

    // Direct transcription of the three branches with linear scans.
    fn oracle(dmin: f64, dmax: f64, alpha: f64, t2: &[(f64, f64)], x: (f64, f64)) -> f64 {
        let r = |u: f64, set: &[f64]| set.iter().filter(|&&v| v <= u).count() as f64 / set.len() as f64;
        let t2_u1: Vec<f64> = t2.iter().map(|p| p.0).collect();
        let t2_u2: Vec<f64> = t2.iter().map(|p| p.1).collect();
        let tid_u1: Vec<f64> = t2.iter().filter(|p| p.1 <= dmin).map(|p| p.0).collect();
        let (u1, u2) = x;
        if u2 <= dmin && u1 <= dmax {
            r(u1, &tid_u1)
        } else if u2 <= dmin {
            r(u1, &t2_u1)
        } else {
            (1.0 - alpha) * r(u2, &t2_u2) + alpha * r(u1, &t2_u1)
        }
    }

    #[test]
    fn three_branches_match_enumeration() {
        let t2 = [(0.1, 0.2), (0.5, 0.9), (0.3, 0.4), (0.9, 0.1), (0.7, 0.6), (0.2, 0.8)];
        let (u1, u2): (Vec<f64>, Vec<f64>) = t2.iter().copied().unzip();
        let (dmin, dmax, alpha) = (0.45, 0.5, 0.3);
        let p = HuqParams::new(dmin, dmax, alpha, &u1, &u2).unwrap();
        assert_eq!(p.ref_tid_u1, vec![0.1, 0.3, 0.9]);
        // case 1, case 2, case 3
        for x in [(0.2, 0.3), (0.8, 0.1), (0.4, 0.7)] {
            let got = huq_score(&p, x.0, x.1).unwrap();
            assert!((got - oracle(dmin, dmax, alpha, &t2, x)).abs() < 1e-15, "{x:?}");
        }
        assert!((huq_score(&p, 0.2, 0.3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((huq_score(&p, 0.8, 0.1).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((huq_score(&p, 0.4, 0.7).unwrap() - (0.7 * 4.0 / 6.0 + 0.3 * 3.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn tuning_recovers_perfect_u1() {
        let quality: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64 / 20.0).collect();
        let u1: Vec<f64> = quality.iter().map(|q| 1.0 - q).collect();
        let u2: Vec<f64> = (0..20).map(|i| ((i * 13 + 5) % 17) as f64).collect();
        let p = tune_huq(&u1, &u2, &quality).unwrap();
        let s: Vec<f64> = u1.iter().zip(&u2).map(|(&a, &b)| huq_score(&p, a, b).unwrap()).collect();
        assert!((prr(&s, &quality).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_scores_prefer_alpha_one() {
        let quality: Vec<f64> = (0..12).map(|i| (i % 5) as f64).collect();
        let u: Vec<f64> = (0..12).map(|i| ((i * 5) % 12) as f64).collect();
        let p = tune_huq(&u, &u, &quality).unwrap();
        assert_eq!(p.alpha, 1.0);
    }

    #[test]
    fn tuning_preconditions() {
        assert!(tune_huq(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0]).unwrap_err().to_string().contains("too few points"));
        let p = tune_huq(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0], &[1.0; 4]).unwrap();
        assert!(p.degenerate && p.alpha == 1.0);
    }
}
