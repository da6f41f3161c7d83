//! Generation quality metrics (ROUGE-L, exact match) and uncertainty
//! evaluation metrics (PRR, ROC-AUC, PR-AUC, rejection curves).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 between token sequences.
pub fn rouge_l<S: PartialEq>(hypothesis: &[S], reference: &[S]) -> f64 {
    let l = lcs_len(hypothesis, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / hypothesis.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l_text(hypothesis: &str, reference: &str) -> f64 {
    rouge_l(&tokenize(hypothesis), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactMatchOptions {
    /// SQuAD-style normalization: also drop punctuation and English articles.
    #[serde(default)]
    pub qa_normalize: bool,
}

fn normalize_answer(s: &str, opts: ExactMatchOptions) -> String {
    let lowered = s.trim().to_lowercase();
    if !opts.qa_normalize {
        return lowered;
    }
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 when the trimmed, casefolded strings are equal.
pub fn exact_match(hypothesis: &str, reference: &str) -> f64 {
    exact_match_with(hypothesis, reference, ExactMatchOptions::default())
}

pub fn exact_match_with(hypothesis: &str, reference: &str, opts: ExactMatchOptions) -> f64 {
    if normalize_answer(hypothesis, opts) == normalize_answer(reference, opts) {
        1.0
    } else {
        0.0
    }
}

fn check_pair<T: Scalar>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dims(format!("{} scores vs {} targets", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite value in metric input"));
    }
    Ok(())
}

fn cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Mean retained quality after rejecting the `k` most uncertain instances,
/// for `k = 0..n`. Ties in uncertainty keep input order.
pub fn rejection_curve<T: Scalar>(uncertainty: &[T], quality: &[T]) -> Result<Vec<T>> {
    check_pair(uncertainty, quality)?;
    if uncertainty.len() < 2 {
        return Err(Error::data(format!("need at least 2 instances, got {}", uncertainty.len())));
    }
    let mut order: Vec<usize> = (0..uncertainty.len()).collect();
    order.sort_by(|&i, &j| cmp(&uncertainty[j], &uncertainty[i]));
    Ok(retained_means(order.iter().map(|&i| quality[i])))
}

fn retained_means<T: Scalar>(sorted_quality: impl DoubleEndedIterator<Item = T> + ExactSizeIterator) -> Vec<T> {
    let n = sorted_quality.len();
    let mut out = vec![T::zero(); n];
    let mut acc = T::zero();
    for (pos, q) in sorted_quality.enumerate().rev() {
        acc += q;
        out[pos] = acc / T::of_usize(n - pos);
    }
    out
}

fn curve_area<T: Scalar>(curve: &[T]) -> T {
    curve.iter().copied().sum::<T>() / T::of_usize(curve.len())
}

/// Prediction rejection ratio: area between the uncertainty-ordered
/// rejection curve and the random baseline, normalized by the oracle's.
/// Returns 0 when quality is constant.
pub fn prr<T: Scalar>(uncertainty: &[T], quality: &[T]) -> Result<T> {
    let auc = curve_area(&rejection_curve(uncertainty, quality)?);
    let mut oracle: Vec<T> = quality.to_vec();
    oracle.sort_by(cmp);
    let auc_oracle = curve_area(&retained_means(oracle.into_iter()));
    let auc_random = quality.iter().copied().sum::<T>() / T::of_usize(quality.len());
    let denom = auc_oracle - auc_random;
    if denom == T::zero() {
        return Ok(T::zero());
    }
    Ok((auc - auc_random) / denom)
}

/// Rejection curve sampled at the requested fractions (nearest `k`).
pub fn rejection_table<T: Scalar>(uncertainty: &[T], quality: &[T], grid: &[f64]) -> Result<Vec<(f64, T)>> {
    let curve = rejection_curve(uncertainty, quality)?;
    let n = curve.len();
    let mut prev = f64::NEG_INFINITY;
    grid.iter()
        .map(|&f| {
            if !(0.0..1.0).contains(&f) || f <= prev {
                return Err(Error::data(format!("rejection fractions must be strictly increasing in [0,1), got {f}")));
            }
            prev = f;
            let k = ((f * n as f64).round() as usize).min(n - 1);
            Ok((f, curve[k]))
        })
        .collect()
}

fn class_counts(labels: &[bool]) -> (u64, u64) {
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    (pos, labels.len() as u64 - pos)
}

/// ROC-AUC with positives = `true`, ties counted ½ (Mann–Whitney).
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T> {
    if scores.len() != labels.len() {
        return Err(Error::dims(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite score"));
    }
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::data("ROC-AUC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| cmp(&scores[i], &scores[j]));
    // twice the Mann–Whitney U, kept integral so tie halves stay exact
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        twice_u += gp * (2 * neg_below + gn);
        neg_below += gn;
        i = j;
    }
    Ok(T::of(twice_u as f64 / (2 * p * n) as f64))
}

/// Average precision over distinct descending thresholds; tied scores form
/// one threshold.
pub fn pr_auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T> {
    if scores.len() != labels.len() {
        return Err(Error::dims(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite score"));
    }
    let (p, _) = class_counts(labels);
    if p == 0 {
        return Err(Error::data("PR-AUC needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| cmp(&scores[j], &scores[i]));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area = T::zero();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut new_tp = 0u64;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                new_tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += new_tp;
        if new_tp > 0 {
            let precision = T::of_usize(tp as usize) / T::of_usize((tp + fp) as usize);
            area += T::of_usize(new_tp as usize) / T::of_usize(p as usize) * precision;
        }
        i = j;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionPoint {
    pub fraction: f64,
    pub mean_quality: f64,
}

/// Evaluation of one uncertainty score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodEval {
    pub prr: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub prr: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr_auc: Option<f64>,
    /// Full curve at fractions `k / n` for the first quality metric.
    pub rejection_curve: Vec<RejectionPoint>,
    /// Built-in baselines evaluated on the same instances.
    #[serde(default)]
    pub baselines: BTreeMap<String, MethodEval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_checksum: Option<String>,
}

pub fn full_rejection_points(uncertainty: &[f64], quality: &[f64]) -> Result<Vec<RejectionPoint>> {
    let curve = rejection_curve(uncertainty, quality)?;
    let n = curve.len() as f64;
    Ok(curve
        .into_iter()
        .enumerate()
        .map(|(k, q)| RejectionPoint { fraction: k as f64 / n, mean_quality: q })
        .collect())
}

pub fn rejection_csv(points: &[RejectionPoint]) -> String {
    let mut out = String::from("fraction,mean_quality\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.fraction, p.mean_quality);
    }
    out
}

/// Two-column CSV with the given header, e.g. `layer,prr`.
pub fn table_csv<K: std::fmt::Display>(key: &str, value: &str, rows: &[(K, f64)]) -> String {
    let mut out = format!("{key},{value}\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}
