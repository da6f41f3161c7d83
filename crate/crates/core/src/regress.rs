//! Supervised scorer: layer-wise density features, PCA and a linear model
//! trained to predict negative quality on a held-out part of the training
//! data.
//!
//! Training runs in five steps:
//!
//! 1. split the training responses into `T1` and `T2`;
//! 2. fit per-layer Gaussians on the correctness-filtered tokens of `T1`
//!    (plus background Gaussians for the relative variant);
//! 3. compute layer-wise features and targets (`-quality`, or the claim
//!    label) on `T2`;
//! 4. fit the projector on the `T2` features, append the probability
//!    feature when configured, and fit the linear model;
//! 5. refit the per-layer Gaussians on all of `T` with the same selection.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{fit_all_layers, select_tokens_from, GaussianLayerStats, TokenSet, ALL_TOKENS};
use crate::embedstore::{ClaimLabel, EmbeddingStore, ResponseEntry, ResponseManifest, ResponseRecord};
use crate::error::{Error, Result};
use crate::features::{fit_projector, prob_feature, span_features, Density, PcaProjector, ProbFeatureMode};
use crate::hybrid::{huq_score, tune_huq, HuqParams};
use crate::linalg::{dot, lstsq_qr, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "RMD")]
    Rmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Sequence,
    Claim,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HuqConfig {
    pub enabled: bool,
    /// Name of an ingested score used as `u1` instead of MSP.
    pub external_score: Option<String>,
}

/// Modeling parameters of a fit. Paths live in the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub variant: Variant,
    pub use_prob_feature: bool,
    pub prob_feature_mode: ProbFeatureMode,
    pub level: Level,
    pub quality_metric: String,
    pub tau: f64,
    pub n_components: usize,
    pub ridge_base: f64,
    pub ols_ridge: f64,
    pub split_ratio: f64,
    pub seed: u64,
    /// Re-estimate the Gaussians on all of `T` after the regression fit.
    pub refit_stats: bool,
    /// Refit on every token of `T` instead of the filtered selection.
    pub refit_unfiltered: bool,
    pub huq: HuqConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Md,
            use_prob_feature: false,
            prob_feature_mode: ProbFeatureMode::Product,
            level: Level::Sequence,
            quality_metric: "exact_match".into(),
            tau: 0.3,
            n_components: 10,
            ridge_base: 1e-6,
            ols_ridge: 1e-8,
            split_ratio: 0.5,
            seed: 0,
            refit_stats: true,
            refit_unfiltered: false,
            huq: HuqConfig::default(),
        }
    }
}

impl FitConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Seeded shuffle of `ids` (sorted first), first `⌈ratio·n⌉` to `T1`.
pub fn split_ids(ids: &[String], ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::data(format!("degenerate split ratio {ratio}; must lie in (0, 1)")));
    }
    let n = ids.len();
    if n < 4 {
        return Err(Error::data(format!("too few training responses to split: {n} (need 4)")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n1 = ((ratio * n as f64).ceil() as usize).min(n);
    if n1 == n {
        return Err(Error::data(format!("empty second split (ratio {ratio}, n {n})")));
    }
    let t2 = shuffled.split_off(n1);
    Ok((shuffled, t2))
}

/// Splits the train-split responses of `manifest`.
pub fn split_train(manifest: &ResponseManifest, ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let ids: Vec<String> = manifest.train().map(|r| r.id.clone()).collect();
    split_ids(&ids, ratio, seed)
}

/// Minimizes `‖Xw + b − y‖² + ridge·‖w‖²` with an unpenalized intercept,
/// via Householder QR on the centered, ridge-augmented system.
pub fn ols_fit<T: Scalar>(x: &Matrix<T>, y: &[T], ridge: T) -> Result<(Vec<T>, T)> {
    let (n, k) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::data(format!("regression needs at least 2 rows, got {n}")));
    }
    if y.len() != n {
        return Err(Error::dims(format!("{n} rows vs {} targets", y.len())));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite value in regression input"));
    }
    if !(ridge >= T::zero()) {
        return Err(Error::data("ridge must be non-negative"));
    }
    let nf = T::of_usize(n);
    let y_mean = y.iter().copied().sum::<T>() / nf;
    if k == 0 {
        return Ok((vec![], y_mean));
    }
    let x_mean: Vec<T> = (0..k).map(|j| (0..n).map(|i| x[(i, j)]).sum::<T>() / nf).collect();
    let mut a = Matrix::zeros(n + k, k);
    let mut rhs = vec![T::zero(); n + k];
    for i in 0..n {
        for j in 0..k {
            a[(i, j)] = x[(i, j)] - x_mean[j];
        }
        rhs[i] = y[i] - y_mean;
    }
    let sr = ridge.sqrt();
    for j in 0..k {
        a[(n + j, j)] = sr;
    }
    let w = lstsq_qr(&a, &rhs).ok_or_else(|| Error::numerical("regression design is rank deficient"))?;
    let b = y_mean - dot(&w, &x_mean);
    Ok((w, b))
}

/// One scored unit: a whole response, or one claim span of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub claim: Option<usize>,
    pub span: Range<usize>,
}

/// Scored units of `entries` at `level`, in entry order.
pub fn instances<'a>(entries: impl IntoIterator<Item = &'a ResponseEntry>, level: Level) -> Vec<Instance> {
    let mut out = Vec::new();
    for e in entries {
        match level {
            Level::Sequence => out.push(Instance { id: e.id.clone(), claim: None, span: 0..e.token_count }),
            Level::Claim => {
                for (k, c) in e.claims.iter().enumerate() {
                    out.push(Instance { id: e.id.clone(), claim: Some(k), span: c.span_start..c.span_end });
                }
            }
        }
    }
    out
}

fn record<'a>(store: &'a EmbeddingStore, id: &str) -> Result<&'a ResponseRecord> {
    store.get(id).ok_or_else(|| Error::data(format!("response {id} not in store")))
}

/// Layer-wise density features of each instance, one row per instance.
pub fn density_features<T: Scalar>(
    store: &EmbeddingStore,
    units: &[Instance],
    density: Density<'_, T>,
) -> Result<Matrix<T>> {
    let rows: Vec<Vec<T>> = units
        .par_iter()
        .map(|u| span_features(&record(store, &u.id)?.hidden, u.span.clone(), density))
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, density.layers()));
    }
    Ok(Matrix::from_rows(&rows))
}

fn span_logprobs<T: Scalar>(rec: &ResponseRecord, span: &Range<usize>) -> Result<Vec<T>> {
    rec.logprobs
        .get(span.clone())
        .map(|s| s.iter().map(|&v| T::of_f32(v)).collect())
        .ok_or_else(|| Error::data(format!("response {}: span beyond logprobs", rec.id)))
}

/// Probability feature (`P(y|x)` or its length-normalized form) of an instance.
pub fn instance_probability<T: Scalar>(
    store: &EmbeddingStore,
    unit: &Instance,
    mode: ProbFeatureMode,
) -> Result<T> {
    prob_feature(&span_logprobs::<T>(record(store, &unit.id)?, &unit.span)?, mode)
}

/// Regression target: negative quality, or 1 for a nonfactual claim.
fn target<T: Scalar>(entry: &ResponseEntry, unit: &Instance, metric: &str) -> Result<T> {
    match unit.claim {
        None => entry
            .quality
            .get(metric)
            .map(|&q| T::of(-q))
            .ok_or_else(|| Error::data(format!("response {}: quality metric {metric:?} missing", entry.id))),
        Some(k) => Ok(match entry.claims[k].label {
            ClaimLabel::Nonfactual => T::one(),
            ClaimLabel::Factual => T::zero(),
        }),
    }
}

/// Probability-based score `u1` for hybrid scoring: `1 − P` or an ingested
/// external score.
pub fn instance_u1<T: Scalar>(
    store: &EmbeddingStore,
    entry: &ResponseEntry,
    unit: &Instance,
    external: Option<&str>,
) -> Result<T> {
    match external {
        None => Ok(T::one() - instance_probability::<T>(store, unit, ProbFeatureMode::Product)?),
        Some(name) => {
            let scores = match unit.claim {
                None => &entry.external_scores,
                Some(k) => &entry.claims[k].external_scores,
            };
            scores
                .get(name)
                .map(|&v| T::of(v))
                .ok_or_else(|| Error::data(format!("response {}: external score {name:?} missing", entry.id)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub quality_metric: String,
    pub tau: f64,
    pub seed: u64,
    pub split_ratio: f64,
    pub ridge_base: f64,
    pub ols_ridge: f64,
    /// Requested component count; the projector may hold fewer.
    pub n_components: usize,
    pub refit_stats: bool,
    pub refit_unfiltered: bool,
    /// Targets were constant on `T2`; weights are zero.
    pub degenerate_targets: bool,
    /// External score used as `u1` by the hybrid, `None` for MSP.
    pub huq_u1: Option<String>,
    pub t1_size: usize,
    pub t2_size: usize,
    pub config_checksum: String,
}

/// Fitted supervised scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct UqModel<T> {
    pub variant: Variant,
    pub use_prob_feature: bool,
    pub prob_feature_mode: ProbFeatureMode,
    pub level: Level,
    pub layer_stats: Vec<GaussianLayerStats<T>>,
    pub bg_stats: Option<Vec<GaussianLayerStats<T>>>,
    pub projector: PcaProjector<T>,
    pub weights: Vec<T>,
    pub intercept: T,
    pub huq: Option<HuqParams<T>>,
    pub metadata: ModelMetadata,
}

impl<T: Scalar> UqModel<T> {
    pub fn layers(&self) -> usize {
        self.layer_stats.len()
    }

    pub fn dim(&self) -> usize {
        self.layer_stats.first().map_or(0, |s| s.dim())
    }

    pub fn density(&self) -> Result<Density<'_, T>> {
        match (self.variant, &self.bg_stats) {
            (Variant::Md, _) => Ok(Density::Md(&self.layer_stats)),
            (Variant::Rmd, Some(bg)) => Ok(Density::Rmd { in_domain: &self.layer_stats, background: bg }),
            (Variant::Rmd, None) => Err(Error::data("RMD model without background stats")),
        }
    }

    /// Linear model applied to raw layer features (and the probability
    /// feature when the model uses one).
    pub fn predict(&self, layer_features: &[T], probability: Option<T>) -> Result<T> {
        let mut z = self.projector.project(layer_features)?;
        if self.use_prob_feature {
            z.push(probability.ok_or_else(|| Error::data("model needs the probability feature"))?);
        }
        if z.len() != self.weights.len() {
            return Err(Error::dims(format!("{} regression inputs vs {} weights", z.len(), self.weights.len())));
        }
        Ok(dot(&self.weights, &z) + self.intercept)
    }

    fn check_store(&self, store: &EmbeddingStore) -> Result<()> {
        if store.is_empty() {
            return Ok(());
        }
        if store.layers() != self.layers() || store.dim() != self.dim() {
            return Err(Error::dims(format!(
                "model has L={}, d={} but store has L={}, d={}",
                self.layers(),
                self.dim(),
                store.layers(),
                store.dim()
            )));
        }
        Ok(())
    }

    /// Supervised uncertainty of each unit; higher is more uncertain.
    pub fn score_units(&self, store: &EmbeddingStore, units: &[Instance]) -> Result<Vec<T>> {
        self.check_store(store)?;
        let density = self.density()?;
        units
            .par_iter()
            .map(|u| {
                let rec = record(store, &u.id)?;
                let f = span_features(&rec.hidden, u.span.clone(), density)?;
                let p = if self.use_prob_feature {
                    Some(prob_feature(&span_logprobs::<T>(rec, &u.span)?, self.prob_feature_mode)?)
                } else {
                    None
                };
                self.predict(&f, p)
            })
            .collect()
    }

    /// Scores of one response: a single value, or one per claim.
    pub fn score(&self, store: &EmbeddingStore, entry: &ResponseEntry) -> Result<Vec<T>> {
        self.score_units(store, &instances([entry], self.level))
    }

    /// Final scores: supervised, or hybrid when the model carries hybrid
    /// parameters.
    pub fn final_scores(
        &self,
        store: &EmbeddingStore,
        manifest: &ResponseManifest,
        units: &[Instance],
    ) -> Result<Vec<T>> {
        let u2 = self.score_units(store, units)?;
        let Some(params) = &self.huq else { return Ok(u2) };
        let entries = index_entries(manifest);
        units
            .iter()
            .zip(u2)
            .map(|(u, s2)| {
                let e = entries
                    .get(u.id.as_str())
                    .ok_or_else(|| Error::data(format!("response {} not in manifest", u.id)))?;
                let s1 = instance_u1::<T>(store, e, u, self.metadata.huq_u1.as_deref())?;
                huq_score(params, s1, s2)
            })
            .collect()
    }
}

pub fn index_entries(manifest: &ResponseManifest) -> BTreeMap<&str, &ResponseEntry> {
    manifest.responses.iter().map(|e| (e.id.as_str(), e)).collect()
}

/// A fitted model plus the held-out quantities it was trained on.
#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub model: UqModel<T>,
    pub t1: Vec<String>,
    pub t2: Vec<String>,
    pub t2_units: Vec<Instance>,
    /// Predictions on `T2` with the step-2 (pre-refit) Gaussians.
    pub t2_predictions: Vec<T>,
    pub t2_targets: Vec<T>,
}

fn fit_background<T: Scalar>(bg: &EmbeddingStore, ridge_base: T) -> Result<Vec<GaussianLayerStats<T>>> {
    let mut all = TokenSet::default();
    for r in bg.iter() {
        all.insert_response(&r.id, 0..r.hidden.tokens());
    }
    fit_all_layers(bg, &all, ridge_base)
}

/// Runs the five-step training procedure on the train-split responses of
/// `manifest`.
pub fn fit_supervised<T: Scalar>(
    store: &EmbeddingStore,
    manifest: &ResponseManifest,
    background: Option<&EmbeddingStore>,
    cfg: &FitConfig,
) -> Result<FitOutcome<T>> {
    let entries = index_entries(manifest);
    let train: Vec<&ResponseEntry> = manifest.train().collect();
    let ids: Vec<String> = train.iter().map(|e| e.id.clone()).collect();
    fit_on_ids(store, &entries, &ids, background, cfg)
}

/// As [`fit_supervised`], restricted to the given training ids.
pub fn fit_on_ids<T: Scalar>(
    store: &EmbeddingStore,
    entries: &BTreeMap<&str, &ResponseEntry>,
    train_ids: &[String],
    background: Option<&EmbeddingStore>,
    cfg: &FitConfig,
) -> Result<FitOutcome<T>> {
    if cfg.variant == Variant::Rmd && background.is_none() {
        return Err(Error::data("variant RMD requires a background store"));
    }
    if let Some(bg) = background {
        if bg.dim() != store.dim() || bg.layers() != store.layers() {
            return Err(Error::dims(format!(
                "background store has L={}, d={} but store has L={}, d={}",
                bg.layers(),
                bg.dim(),
                store.layers(),
                store.dim()
            )));
        }
    }
    let lookup = |id: &str| -> Result<&ResponseEntry> {
        entries.get(id).copied().ok_or_else(|| Error::data(format!("response {id} not in manifest")))
    };
    let ridge_base = T::of(cfg.ridge_base);

    // 1. split
    let (t1, t2) = split_ids(train_ids, cfg.split_ratio, cfg.seed)?;

    // 2. Gaussians on T1
    let t1_entries = t1.iter().map(|id| lookup(id)).collect::<Result<Vec<_>>>()?;
    let selection = select_tokens_from(t1_entries.iter().copied(), &cfg.quality_metric, cfg.tau)?;
    let layer_stats = fit_all_layers(store, &selection, ridge_base)?;
    let bg_stats = match (cfg.variant, background) {
        (Variant::Rmd, Some(bg)) => Some(fit_background(bg, ridge_base)?),
        _ => None,
    };
    log::info!(
        "split |T1|={} |T2|={}; {} selected tokens; ridge per layer {:?}",
        t1.len(),
        t2.len(),
        selection.len(),
        layer_stats.iter().map(|s| s.ridge.as_f64()).collect::<Vec<_>>()
    );

    // 3. features and targets on T2
    let t2_entries = t2.iter().map(|id| lookup(id)).collect::<Result<Vec<_>>>()?;
    let units = instances(t2_entries.iter().copied(), cfg.level);
    if units.len() < 2 {
        return Err(Error::data(format!("only {} training instances in T2; need at least 2", units.len())));
    }
    let density = match &bg_stats {
        Some(bg) => Density::Rmd { in_domain: &layer_stats, background: bg },
        None => Density::Md(&layer_stats),
    };
    let features = density_features(store, &units, density)?;
    let targets: Vec<T> =
        units.iter().map(|u| target(lookup(&u.id)?, u, &cfg.quality_metric)).collect::<Result<_>>()?;

    // 4. projector + linear model
    let projector = fit_projector(&features, cfg.n_components)?;
    let mut design_rows = Vec::with_capacity(units.len());
    let mut probs = Vec::with_capacity(units.len());
    for (i, u) in units.iter().enumerate() {
        let mut z = projector.project(features.row(i))?;
        if cfg.use_prob_feature {
            let p = instance_probability::<T>(store, u, cfg.prob_feature_mode)?;
            z.push(p);
            probs.push(Some(p));
        } else {
            probs.push(None);
        }
        design_rows.push(z);
    }
    let design = Matrix::from_rows(&design_rows);
    let degenerate = targets.iter().all(|&t| t == targets[0]);
    let (weights, intercept) = if degenerate {
        log::warn!("constant regression targets on T2; model weights set to zero");
        (vec![T::zero(); design.cols()], targets[0])
    } else {
        ols_fit(&design, &targets, T::of(cfg.ols_ridge))?
    };
    let t2_predictions: Vec<T> = design_rows.iter().map(|z| dot(&weights, z) + intercept).collect();

    // 5. re-estimate the Gaussians on all of T
    let refit_metric = if cfg.refit_unfiltered { ALL_TOKENS } else { cfg.quality_metric.as_str() };
    let layer_stats = if cfg.refit_stats {
        let all_entries = train_ids.iter().map(|id| lookup(id)).collect::<Result<Vec<_>>>()?;
        let selection = select_tokens_from(all_entries.iter().copied(), refit_metric, cfg.tau)?;
        fit_all_layers(store, &selection, ridge_base)?
    } else {
        layer_stats
    };

    let mut model = UqModel {
        variant: cfg.variant,
        use_prob_feature: cfg.use_prob_feature,
        prob_feature_mode: cfg.prob_feature_mode,
        level: cfg.level,
        layer_stats,
        bg_stats,
        projector,
        weights,
        intercept,
        huq: None,
        metadata: ModelMetadata {
            quality_metric: cfg.quality_metric.clone(),
            tau: cfg.tau,
            seed: cfg.seed,
            split_ratio: cfg.split_ratio,
            ridge_base: cfg.ridge_base,
            ols_ridge: cfg.ols_ridge,
            n_components: cfg.n_components,
            refit_stats: cfg.refit_stats,
            refit_unfiltered: cfg.refit_unfiltered,
            degenerate_targets: degenerate,
            huq_u1: cfg.huq.external_score.clone(),
            t1_size: t1.len(),
            t2_size: t2.len(),
            config_checksum: cfg.checksum(),
        },
    };

    if cfg.huq.enabled {
        let u1: Vec<T> = units
            .iter()
            .map(|u| instance_u1(store, lookup(&u.id)?, u, cfg.huq.external_score.as_deref()))
            .collect::<Result<_>>()?;
        // tuning quality: higher is better
        let quality: Vec<T> = match cfg.level {
            Level::Sequence => targets.iter().map(|&t| -t).collect(),
            Level::Claim => targets.iter().map(|&t| T::one() - t).collect(),
        };
        model.huq = Some(tune_huq(&u1, &t2_predictions, &quality)?);
    }

    Ok(FitOutcome { model, t1, t2, t2_units: units, t2_predictions, t2_targets: targets })
}
