//! Correctness-filtered token selection, per-layer Gaussian fits and
//! (relative) Mahalanobis distances.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::embedstore::{EmbeddingStore, HiddenStates, ResponseEntry, ResponseManifest};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower, Matrix};
use crate::scalar::Scalar;

/// Metric name that selects every token regardless of quality.
pub const ALL_TOKENS: &str = "all";

/// Largest ridge multiplier tried before giving up on a covariance.
pub const RIDGE_CAP: f64 = 1e-2;

/// Fallback ladder start when the caller asked for an unregularized fit.
const RIDGE_FALLBACK: f64 = 1e-6;

/// Token positions, keyed by response id. Iteration order (id
/// lexicographic, token ascending) is the accumulation order of every fit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSet {
    by_response: BTreeMap<String, Vec<usize>>,
}

impl TokenSet {
    pub fn insert_response(&mut self, id: &str, tokens: impl IntoIterator<Item = usize>) {
        let v = self.by_response.entry(id.to_string()).or_default();
        v.extend(tokens);
        v.sort_unstable();
        v.dedup();
    }

    pub fn len(&self) -> usize {
        self.by_response.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn response_ids(&self) -> impl Iterator<Item = &str> {
        self.by_response.keys().map(String::as_str)
    }

    pub fn contains(&self, id: &str, token: usize) -> bool {
        self.by_response.get(id).is_some_and(|v| v.binary_search(&token).is_ok())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.by_response.iter().flat_map(|(id, v)| v.iter().map(move |&t| (id.as_str(), t)))
    }
}

/// Every token of every train-split response whose `metric` exceeds `tau`.
pub fn select_tokens(manifest: &ResponseManifest, metric: &str, tau: f64) -> Result<TokenSet> {
    select_tokens_from(manifest.train(), metric, tau)
}

/// [`select_tokens`] over an explicit set of responses.
pub fn select_tokens_from<'a>(
    responses: impl IntoIterator<Item = &'a ResponseEntry>,
    metric: &str,
    tau: f64,
) -> Result<TokenSet> {
    let mut set = TokenSet::default();
    for r in responses {
        let keep = if metric == ALL_TOKENS {
            true
        } else {
            let q = r
                .quality
                .get(metric)
                .ok_or_else(|| Error::data(format!("response {}: quality metric {metric:?} missing", r.id)))?;
            *q > tau
        };
        if keep && r.token_count > 0 {
            set.insert_response(&r.id, 0..r.token_count);
        }
    }
    if set.is_empty() {
        return Err(Error::data(format!(
            "empty token selection: no response has {metric} > {tau}; no correct responses, lower tau"
        )));
    }
    Ok(set)
}

/// Gaussian fit of one layer's embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLayerStats<T> {
    /// 1-based decoder layer index.
    pub layer: usize,
    pub mu: Vec<T>,
    /// Lower Cholesky factor of the regularized covariance.
    pub chol: Matrix<T>,
    pub n_samples: usize,
    /// Ridge multiplier actually applied, relative to the mean diagonal.
    pub ridge: T,
}

impl<T: Scalar> GaussianLayerStats<T> {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Fits centroid and population covariance to the rows of `embeddings`,
/// escalating the ridge by ×10 from `ridge_base` up to [`RIDGE_CAP`] until
/// the Cholesky factorization succeeds.
pub fn fit_gaussian<T: Scalar>(embeddings: &Matrix<T>, ridge_base: T) -> Result<GaussianLayerStats<T>> {
    let (n, d) = (embeddings.rows(), embeddings.cols());
    if n < 2 {
        return Err(Error::data(format!("insufficient samples: need at least 2, got {n}")));
    }
    if !embeddings.is_finite() {
        return Err(Error::data("non-finite value in embeddings"));
    }
    if !(ridge_base >= T::zero()) {
        return Err(Error::data("ridge_base must be non-negative"));
    }
    let nf = T::of_usize(n);
    let mut mu = vec![T::zero(); d];
    for i in 0..n {
        for (m, &x) in mu.iter_mut().zip(embeddings.row(i)) {
            *m += x;
        }
    }
    for m in &mut mu {
        *m /= nf;
    }
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![T::zero(); d];
    for i in 0..n {
        for ((c, &x), &m) in centered.iter_mut().zip(embeddings.row(i)).zip(&mu) {
            *c = x - m;
        }
        for a in 0..d {
            let ca = centered[a];
            let row = cov.row_mut(a);
            for b in 0..=a {
                row[b] += ca * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / nf;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let mut mean_diag = (0..d).map(|i| cov[(i, i)]).sum::<T>() / T::of_usize(d.max(1));
    if mean_diag == T::zero() {
        mean_diag = T::one();
    }

    let cap = T::of(RIDGE_CAP);
    let slack = T::one() + T::of(1e-9);
    let mut ridge = ridge_base;
    loop {
        let mut reg = cov.clone();
        let shift = ridge * mean_diag;
        for i in 0..d {
            reg[(i, i)] += shift;
        }
        if let Some(chol) = cholesky(&reg) {
            if ridge > ridge_base {
                log::warn!("covariance ridge escalated from {ridge_base:e} to {ridge:e}");
            }
            return Ok(GaussianLayerStats { layer: 1, mu, chol, n_samples: n, ridge });
        }
        ridge = if ridge == T::zero() { T::of(RIDGE_FALLBACK) } else { ridge * T::of(10.0) };
        if ridge > cap * slack {
            return Err(Error::numerical(format!(
                "covariance Cholesky failed with ridge up to the cap {RIDGE_CAP:e}"
            )));
        }
    }
}

/// Squared Mahalanobis distance `(x−μ)ᵀΣ⁻¹(x−μ)` via a triangular solve
/// against the Cholesky factor.
pub fn mahalanobis<T: Scalar>(stats: &GaussianLayerStats<T>, x: &[T]) -> Result<T> {
    if x.len() != stats.dim() {
        return Err(Error::dims(format!("vector has {} entries, stats have d={}", x.len(), stats.dim())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite value in query vector"));
    }
    Ok(md_unchecked(stats, x.iter().copied()))
}

#[inline]
fn md_unchecked<T: Scalar>(stats: &GaussianLayerStats<T>, x: impl Iterator<Item = T>) -> T {
    let r: Vec<T> = x.zip(&stats.mu).map(|(v, &m)| v - m).collect();
    let z = solve_lower(&stats.chol, &r);
    z.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

/// Mahalanobis distance of a stored f32 embedding.
pub(crate) fn md_embedding<T: Scalar>(stats: &GaussianLayerStats<T>, x: &[f32]) -> Result<T> {
    if x.len() != stats.dim() {
        return Err(Error::dims(format!("embedding has {} entries, stats have d={}", x.len(), stats.dim())));
    }
    Ok(md_unchecked(stats, x.iter().map(|&v| T::of_f32(v))))
}

/// `MD_in(x) − MD_bg(x)`; may be negative.
pub fn relative_mahalanobis<T: Scalar>(
    stats_in: &GaussianLayerStats<T>,
    stats_bg: &GaussianLayerStats<T>,
    x: &[T],
) -> Result<T> {
    if stats_in.dim() != stats_bg.dim() {
        return Err(Error::dims(format!(
            "in-domain d={} vs background d={}",
            stats_in.dim(),
            stats_bg.dim()
        )));
    }
    Ok(mahalanobis(stats_in, x)? - mahalanobis(stats_bg, x)?)
}

/// Fits one Gaussian per layer from the selected tokens. Layers are fitted
/// in parallel; rows within a layer are always gathered in token-set order.
pub fn fit_all_layers<T: Scalar>(
    store: &EmbeddingStore,
    tokens: &TokenSet,
    ridge_base: T,
) -> Result<Vec<GaussianLayerStats<T>>> {
    if tokens.is_empty() {
        return Err(Error::data("empty token selection"));
    }
    let mut refs: Vec<(&HiddenStates, usize)> = Vec::with_capacity(tokens.len());
    for (id, t) in tokens.iter() {
        let rec = store.get(id).ok_or_else(|| Error::data(format!("response {id} not in store")))?;
        if t >= rec.hidden.tokens() {
            return Err(Error::data(format!("response {id}: token {t} out of range")));
        }
        refs.push((&rec.hidden, t));
    }
    let d = store.dim();
    (0..store.layers())
        .into_par_iter()
        .map(|layer| {
            let mut data = Vec::with_capacity(refs.len() * d);
            for &(h, t) in &refs {
                data.extend(h.embedding(t, layer).iter().map(|&v| T::of_f32(v)));
            }
            let rows = Matrix::from_vec(refs.len(), d, data);
            let mut stats = fit_gaussian(&rows, ridge_base)
                .map_err(|e| annotate(e, layer + 1))?;
            stats.layer = layer + 1;
            Ok(stats)
        })
        .collect()
}

fn annotate(e: Error, layer: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("layer {layer}: {m}")),
        Error::Data(m) => Error::Data(format!("layer {layer}: {m}")),
        other => other,
    }
}

/// Mean over tokens of one layer's embeddings (1-based `layer`).
pub fn sequence_embedding<T: Scalar>(hidden: &HiddenStates, layer: usize) -> Result<Vec<T>> {
    if hidden.tokens() == 0 {
        return Err(Error::data("empty generation"));
    }
    if layer == 0 || layer > hidden.layers() {
        return Err(Error::dims(format!("layer {layer} outside 1..={}", hidden.layers())));
    }
    let mut acc = vec![T::zero(); hidden.dim()];
    for t in 0..hidden.tokens() {
        for (a, &v) in acc.iter_mut().zip(hidden.embedding(t, layer - 1)) {
            *a += T::of_f32(v);
        }
    }
    let n = T::of_usize(hidden.tokens());
    Ok(acc.into_iter().map(|a| a / n).collect())
}
