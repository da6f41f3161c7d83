//! Layer-wise feature vectors (ATMD / ATRMD), probability baselines and the
//! standardize + PCA projector used in front of the regression.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::density::{md_embedding, GaussianLayerStats};
use crate::embedstore::HiddenStates;
use crate::error::{Error, Result};
use crate::linalg::{dot, svd_jacobi, Matrix};
use crate::scalar::Scalar;

/// Log-probability floor applied before exponentiating a sequence sum.
pub const LOG_PROB_FLOOR: f64 = -700.0;

/// Stats a distance is measured against.
#[derive(Debug, Clone, Copy)]
pub enum Density<'a, T> {
    /// Plain Mahalanobis distance to the in-domain fit.
    Md(&'a [GaussianLayerStats<T>]),
    /// In-domain distance minus background distance.
    Rmd {
        in_domain: &'a [GaussianLayerStats<T>],
        background: &'a [GaussianLayerStats<T>],
    },
}

impl<'a, T: Scalar> Density<'a, T> {
    pub fn layers(&self) -> usize {
        match self {
            Density::Md(s) => s.len(),
            Density::Rmd { in_domain, .. } => in_domain.len(),
        }
    }

    fn check(&self, hidden: &HiddenStates) -> Result<()> {
        let (l, d) = match self {
            Density::Md(s) => (s.len(), s.first().map_or(0, |s| s.dim())),
            Density::Rmd { in_domain, background } => {
                if in_domain.len() != background.len() {
                    return Err(Error::dims(format!(
                        "in-domain stats have L={}, background L={}",
                        in_domain.len(),
                        background.len()
                    )));
                }
                let d = in_domain.first().map_or(0, |s| s.dim());
                if background.iter().any(|s| s.dim() != d) {
                    return Err(Error::dims("background stats dimension differs from in-domain"));
                }
                (in_domain.len(), d)
            }
        };
        if hidden.layers() != l {
            return Err(Error::dims(format!("hidden states have L={}, stats have L={l}", hidden.layers())));
        }
        if hidden.dim() != d {
            return Err(Error::dims(format!("hidden states have d={}, stats have d={d}", hidden.dim())));
        }
        Ok(())
    }

    /// Distance of one token at one 0-based layer.
    fn token_layer(&self, hidden: &HiddenStates, token: usize, layer: usize) -> Result<T> {
        let x = hidden.embedding(token, layer);
        match self {
            Density::Md(s) => md_embedding(&s[layer], x),
            Density::Rmd { in_domain, background } => {
                Ok(md_embedding(&in_domain[layer], x)? - md_embedding(&background[layer], x)?)
            }
        }
    }
}

/// Per-token, per-layer distances as a `T × L` matrix.
pub fn token_scores<T: Scalar>(hidden: &HiddenStates, density: Density<'_, T>) -> Result<Matrix<T>> {
    density.check(hidden)?;
    let l = density.layers();
    let mut out = Matrix::zeros(hidden.tokens(), l);
    for t in 0..hidden.tokens() {
        for layer in 0..l {
            out[(t, layer)] = density.token_layer(hidden, t, layer)?;
        }
    }
    Ok(out)
}

/// Per-layer mean of token distances over the half-open token `span`.
pub fn span_features<T: Scalar>(hidden: &HiddenStates, span: Range<usize>, density: Density<'_, T>) -> Result<Vec<T>> {
    if span.start >= span.end {
        return Err(Error::data(format!("empty span [{}, {})", span.start, span.end)));
    }
    if span.end > hidden.tokens() {
        return Err(Error::data(format!("span [{}, {}) exceeds {} tokens", span.start, span.end, hidden.tokens())));
    }
    density.check(hidden)?;
    let l = density.layers();
    let mut acc = vec![T::zero(); l];
    for t in span.clone() {
        for (layer, a) in acc.iter_mut().enumerate() {
            *a += density.token_layer(hidden, t, layer)?;
        }
    }
    let n = T::of_usize(span.len());
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Average token-level Mahalanobis distance per layer.
pub fn atmd<T: Scalar>(hidden: &HiddenStates, stats: &[GaussianLayerStats<T>]) -> Result<Vec<T>> {
    whole_sequence(hidden, Density::Md(stats))
}

/// Average token-level relative Mahalanobis distance per layer.
pub fn atrmd<T: Scalar>(
    hidden: &HiddenStates,
    in_domain: &[GaussianLayerStats<T>],
    background: &[GaussianLayerStats<T>],
) -> Result<Vec<T>> {
    whole_sequence(hidden, Density::Rmd { in_domain, background })
}

pub fn whole_sequence<T: Scalar>(hidden: &HiddenStates, density: Density<'_, T>) -> Result<Vec<T>> {
    if hidden.tokens() == 0 {
        return Err(Error::data("empty generation"));
    }
    span_features(hidden, 0..hidden.tokens(), density)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbFeatureMode {
    /// Raw product of token probabilities.
    #[default]
    Product,
    /// Length-normalized: `exp(mean log p)`.
    GeometricMean,
}

fn check_logprobs<T: Scalar>(logprobs: &[T]) -> Result<()> {
    if logprobs.is_empty() {
        return Err(Error::data("empty generation"));
    }
    if let Some(bad) = logprobs.iter().find(|&&v| !(v <= T::zero())) {
        return Err(Error::data(format!("invalid token log-probability {bad}")));
    }
    Ok(())
}

/// `P(y|x) = exp(Σ log p)`, with the sum floored at −700.
pub fn sequence_probability<T: Scalar>(logprobs: &[T]) -> Result<T> {
    check_logprobs(logprobs)?;
    let sum: T = logprobs.iter().copied().sum();
    Ok(sum.max(T::of(LOG_PROB_FLOOR)).exp())
}

pub fn prob_feature<T: Scalar>(logprobs: &[T], mode: ProbFeatureMode) -> Result<T> {
    match mode {
        ProbFeatureMode::Product => sequence_probability(logprobs),
        ProbFeatureMode::GeometricMean => {
            check_logprobs(logprobs)?;
            let mean = logprobs.iter().copied().sum::<T>() / T::of_usize(logprobs.len());
            Ok(mean.exp())
        }
    }
}

/// Maximum sequence probability baseline: `1 − P(y|x)`.
pub fn msp_uncertainty<T: Scalar>(logprobs: &[T]) -> Result<T> {
    Ok(T::one() - sequence_probability(logprobs)?)
}

/// `exp(−mean log p)`.
pub fn perplexity<T: Scalar>(logprobs: &[T]) -> Result<T> {
    check_logprobs(logprobs)?;
    let mean = logprobs.iter().copied().sum::<T>() / T::of_usize(logprobs.len());
    Ok((-mean).exp())
}

/// Column standardizer followed by projection on the leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjector<T> {
    pub feature_means: Vec<T>,
    /// Strictly positive; constant columns carry 1.
    pub feature_stds: Vec<T>,
    /// `N × F`, orthonormal rows.
    pub components: Matrix<T>,
    /// Fraction of standardized variance captured by each component.
    pub explained_variance_ratio: Vec<T>,
}

impl<T: Scalar> PcaProjector<T> {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn n_features(&self) -> usize {
        self.feature_means.len()
    }

    pub fn standardize(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.feature_means)
            .zip(&self.feature_stds)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    pub fn project(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n_features() {
            return Err(Error::dims(format!("feature vector has {} entries, projector expects {}", x.len(), self.n_features())));
        }
        let z = self.standardize(x);
        Ok((0..self.n_components()).map(|k| dot(self.components.row(k), &z)).collect())
    }
}

/// Standardizes the columns of `x` and keeps the top
/// `min(n_components, F, n − 1)` right singular vectors, each signed so that
/// its largest-magnitude entry is positive.
pub fn fit_projector<T: Scalar>(x: &Matrix<T>, n_components: usize) -> Result<PcaProjector<T>> {
    let (n, f) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::data(format!("PCA needs at least 2 rows, got {n}")));
    }
    if n_components == 0 {
        return Err(Error::data("n_components must be at least 1"));
    }
    if f == 0 {
        return Err(Error::data("PCA needs at least one feature"));
    }
    if !x.is_finite() {
        return Err(Error::data("non-finite value in feature matrix"));
    }
    let nf = T::of_usize(n);
    let mut means = vec![T::zero(); f];
    for i in 0..n {
        for (m, &v) in means.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= nf);
    let mut stds = vec![T::zero(); f];
    for i in 0..n {
        for ((s, &v), &m) in stds.iter_mut().zip(x.row(i)).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    let tol = T::epsilon() * T::of(64.0);
    for (s, &m) in stds.iter_mut().zip(&means) {
        let sd = (*s / nf).sqrt();
        *s = if sd <= tol * m.abs().max(T::one()) { T::one() } else { sd };
    }
    let mut z = Matrix::zeros(n, f);
    for i in 0..n {
        for j in 0..f {
            z[(i, j)] = (x[(i, j)] - means[j]) / stds[j];
        }
    }
    let svd = svd_jacobi(&z);
    let keep = n_components.min(f).min(n - 1);
    let mut components = Matrix::zeros(keep, f);
    for k in 0..keep {
        let mut best = 0;
        for j in 1..f {
            if svd.v[(j, k)].abs() > svd.v[(best, k)].abs() {
                best = j;
            }
        }
        let sign = if svd.v[(best, k)] < T::zero() { -T::one() } else { T::one() };
        for j in 0..f {
            components[(k, j)] = sign * svd.v[(j, k)];
        }
    }
    let total: T = svd.singular_values.iter().map(|&s| s * s).sum();
    let explained_variance_ratio = svd.singular_values[..keep]
        .iter()
        .map(|&s| if total > T::zero() { s * s / total } else { T::zero() })
        .collect();
    Ok(PcaProjector { feature_means: means, feature_stds: stds, components, explained_variance_ratio })
}
