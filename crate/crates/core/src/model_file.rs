//! Model files: a `TMD1` container whose tensors hold the Gaussian,
//! projector, regression and hybrid arrays, with everything else in the
//! `meta` header entry (`"version": "uqmodel/1"`).
//!
//! Arrays are stored as an f32 tensor `<name>` plus an f32 residual tensor
//! `<name>.lo`; `hi + lo` restores each f64 value to about 48 bits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::GaussianLayerStats;
use crate::embedstore::{Container, Tensor};
use crate::error::{Error, Result};
use crate::features::{PcaProjector, ProbFeatureMode};
use crate::hybrid::HuqParams;
use crate::linalg::Matrix;
use crate::regress::{Level, ModelMetadata, UqModel, Variant};
use crate::scalar::Scalar;

pub const MODEL_VERSION: &str = "uqmodel/1";

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    layer: usize,
    n_samples: usize,
    ridge: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HuqMeta {
    /// `None` encodes `-inf`.
    delta_min: Option<f64>,
    delta_max: f64,
    alpha: f64,
    degenerate: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    version: String,
    variant: Variant,
    use_prob_feature: bool,
    prob_feature_mode: ProbFeatureMode,
    level: Level,
    layers: usize,
    dim: usize,
    n_components: usize,
    n_features: usize,
    intercept: f64,
    layer_stats: Vec<LayerMeta>,
    bg_stats: Option<Vec<LayerMeta>>,
    huq: Option<HuqMeta>,
    metadata: ModelMetadata,
}

fn put<T: Scalar>(c: &mut Container, name: &str, shape: Vec<usize>, values: &[T]) -> Result<()> {
    let mut hi = Vec::with_capacity(values.len());
    let mut lo = Vec::with_capacity(values.len());
    for &v in values {
        let v = v.as_f64();
        let h = v as f32;
        if !h.is_finite() {
            return Err(Error::numerical(format!("{name}: value {v} not representable in the model file")));
        }
        hi.push(h);
        lo.push((v - h as f64) as f32);
    }
    c.insert(name, Tensor::new(shape.clone(), hi))?;
    c.insert(format!("{name}.lo"), Tensor::new(shape, lo))
}

fn take<T: Scalar>(c: &Container, name: &str, shape: &[usize]) -> Result<Vec<T>> {
    let hi = c.get(name).ok_or_else(|| Error::data(format!("model file lacks tensor {name}")))?;
    let lo = c.get(&format!("{name}.lo")).ok_or_else(|| Error::data(format!("model file lacks tensor {name}.lo")))?;
    if hi.shape != shape || lo.shape != shape {
        return Err(Error::dims(format!("model tensor {name}: shape {:?}, expected {shape:?}", hi.shape)));
    }
    Ok(hi.data.iter().zip(&lo.data).map(|(&h, &l)| T::of(h as f64 + l as f64)).collect())
}

fn put_stats<T: Scalar>(c: &mut Container, prefix: &str, stats: &[GaussianLayerStats<T>]) -> Result<Vec<LayerMeta>> {
    stats
        .iter()
        .map(|s| {
            let d = s.dim();
            put(c, &format!("{prefix}/{:03}/mu", s.layer), vec![d], &s.mu)?;
            put(c, &format!("{prefix}/{:03}/chol", s.layer), vec![d, d], s.chol.as_slice())?;
            Ok(LayerMeta { layer: s.layer, n_samples: s.n_samples, ridge: s.ridge.as_f64() })
        })
        .collect()
}

fn take_stats<T: Scalar>(c: &Container, prefix: &str, meta: &[LayerMeta], d: usize) -> Result<Vec<GaussianLayerStats<T>>> {
    meta.iter()
        .map(|m| {
            let mu = take(c, &format!("{prefix}/{:03}/mu", m.layer), &[d])?;
            let chol = Matrix::from_vec(d, d, take(c, &format!("{prefix}/{:03}/chol", m.layer), &[d, d])?);
            Ok(GaussianLayerStats { layer: m.layer, mu, chol, n_samples: m.n_samples, ridge: T::of(m.ridge) })
        })
        .collect()
}

pub fn model_to_container<T: Scalar>(model: &UqModel<T>) -> Result<Container> {
    let mut c = Container::new();
    let layer_stats = put_stats(&mut c, "stats/in", &model.layer_stats)?;
    let bg_stats = model.bg_stats.as_ref().map(|bg| put_stats(&mut c, "stats/bg", bg)).transpose()?;
    let p = &model.projector;
    let (n, f) = (p.n_components(), p.n_features());
    put(&mut c, "pca/means", vec![f], &p.feature_means)?;
    put(&mut c, "pca/stds", vec![f], &p.feature_stds)?;
    put(&mut c, "pca/components", vec![n, f], p.components.as_slice())?;
    put(&mut c, "pca/explained_variance_ratio", vec![n], &p.explained_variance_ratio)?;
    put(&mut c, "reg/weights", vec![model.weights.len()], &model.weights)?;
    let huq = match &model.huq {
        Some(h) => {
            put(&mut c, "huq/ref_t2_u1", vec![h.ref_t2_u1.len()], &h.ref_t2_u1)?;
            put(&mut c, "huq/ref_t2_u2", vec![h.ref_t2_u2.len()], &h.ref_t2_u2)?;
            put(&mut c, "huq/ref_tid_u1", vec![h.ref_tid_u1.len()], &h.ref_tid_u1)?;
            let dmin = h.delta_min.as_f64();
            Some(HuqMeta {
                delta_min: dmin.is_finite().then_some(dmin),
                delta_max: h.delta_max.as_f64(),
                alpha: h.alpha.as_f64(),
                degenerate: h.degenerate,
            })
        }
        None => None,
    };
    let meta = ModelMeta {
        version: MODEL_VERSION.into(),
        variant: model.variant,
        use_prob_feature: model.use_prob_feature,
        prob_feature_mode: model.prob_feature_mode,
        level: model.level,
        layers: model.layers(),
        dim: model.dim(),
        n_components: n,
        n_features: f,
        intercept: model.intercept.as_f64(),
        layer_stats,
        bg_stats,
        huq,
        metadata: model.metadata.clone(),
    };
    c.set_meta(serde_json::to_value(meta).expect("model meta serializes"));
    Ok(c)
}

pub fn model_from_container<T: Scalar>(c: &Container) -> Result<UqModel<T>> {
    let meta = c.meta().ok_or_else(|| Error::data("model file has no meta entry"))?;
    let meta: ModelMeta =
        serde_json::from_value(meta.clone()).map_err(|e| Error::data(format!("malformed model meta: {e}")))?;
    if meta.version != MODEL_VERSION {
        return Err(Error::data(format!("unsupported model version {:?}", meta.version)));
    }
    let d = meta.dim;
    let layer_stats = take_stats(c, "stats/in", &meta.layer_stats, d)?;
    let bg_stats = meta.bg_stats.as_ref().map(|m| take_stats(c, "stats/bg", m, d)).transpose()?;
    let (n, f) = (meta.n_components, meta.n_features);
    let projector = PcaProjector {
        feature_means: take(c, "pca/means", &[f])?,
        feature_stds: take(c, "pca/stds", &[f])?,
        components: Matrix::from_vec(n, f, take(c, "pca/components", &[n, f])?),
        explained_variance_ratio: take(c, "pca/explained_variance_ratio", &[n])?,
    };
    let k = n + usize::from(meta.use_prob_feature);
    let weights = take(c, "reg/weights", &[k])?;
    let huq = match &meta.huq {
        Some(h) => {
            let len = |name: &str| c.get(name).map_or(0, |t| t.data.len());
            Some(HuqParams {
                delta_min: h.delta_min.map_or(T::neg_infinity(), T::of),
                delta_max: T::of(h.delta_max),
                alpha: T::of(h.alpha),
                ref_t2_u1: take(c, "huq/ref_t2_u1", &[len("huq/ref_t2_u1")])?,
                ref_t2_u2: take(c, "huq/ref_t2_u2", &[len("huq/ref_t2_u2")])?,
                ref_tid_u1: take(c, "huq/ref_tid_u1", &[len("huq/ref_tid_u1")])?,
                degenerate: h.degenerate,
            })
        }
        None => None,
    };
    if meta.variant == Variant::Rmd && bg_stats.is_none() {
        return Err(Error::data("RMD model file lacks background stats"));
    }
    Ok(UqModel {
        variant: meta.variant,
        use_prob_feature: meta.use_prob_feature,
        prob_feature_mode: meta.prob_feature_mode,
        level: meta.level,
        layer_stats,
        bg_stats,
        projector,
        weights,
        intercept: T::of(meta.intercept),
        huq,
        metadata: meta.metadata,
    })
}

pub fn model_to_bytes<T: Scalar>(model: &UqModel<T>) -> Result<Vec<u8>> {
    Ok(model_to_container(model)?.to_bytes())
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<UqModel<T>> {
    model_from_container(&Container::from_bytes(bytes)?)
}

pub fn write_model<T: Scalar>(path: &Path, model: &UqModel<T>) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_model<T: Scalar>(path: &Path) -> Result<UqModel<T>> {
    model_from_container(&Container::read(path)?)
}
