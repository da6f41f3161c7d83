//! Command implementations behind the `tmd` binary. Each command reads its
//! inputs from a [`RunConfig`], writes its outputs and returns them.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::density::{fit_all_layers, fit_gaussian, mahalanobis, select_tokens_from, TokenSet, ALL_TOKENS};
use crate::embedstore::{read_store, validate, ClaimLabel, EmbeddingStore, HiddenStates, ResponseManifest, ValidationReport};
use crate::error::{Error, Result};
use crate::features::{msp_uncertainty, perplexity, Density};
use crate::metrics::{full_rejection_points, pr_auc, prr, rejection_csv, rejection_table, roc_auc, EvalReport, MethodEval};
use crate::model_file::{read_model, write_model};
use crate::regress::{fit_on_ids, fit_supervised, index_entries, instances, FitConfig, Instance, Level, Variant};
use crate::{FitOutcome, GaussianLayerStats, Matrix, Real, UqModel};

/// Quality key used for claim-level PRR: 1 for factual claims, 0 otherwise.
pub const CLAIM_QUALITY: &str = "factual";

/// Runs `f` on a dedicated pool with `threads` workers (default: all cores).
pub fn run_with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::data(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Inputs {
    store: EmbeddingStore,
    manifest: ResponseManifest,
    background: Option<EmbeddingStore>,
}

fn load_inputs(cfg: &RunConfig, need_background: bool) -> Result<Inputs> {
    let store = read_store(cfg.require("store")?)?;
    let manifest = ResponseManifest::read(cfg.require("manifest")?)?;
    let background = match (&cfg.background_store, need_background) {
        (Some(p), true) => Some(read_store(p)?),
        _ => None,
    };
    Ok(Inputs { store, manifest, background })
}

fn ensure_valid(store: &EmbeddingStore, manifest: &ResponseManifest) -> Result<()> {
    let report = validate(store, manifest);
    match report.issues.first() {
        None => Ok(()),
        Some(first) => Err(Error::data(format!("{} validation issue(s); first: {first}", report.issues.len()))),
    }
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<ValidationReport> {
    let store = read_store(cfg.require("store")?)?;
    let manifest = ResponseManifest::read(cfg.require("manifest")?)?;
    Ok(validate(&store, &manifest))
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<FitOutcome> {
    let out = cfg.require("model")?;
    let inputs = load_inputs(cfg, cfg.fit.variant == Variant::Rmd)?;
    ensure_valid(&inputs.store, &inputs.manifest)?;
    let outcome = fit_supervised::<Real>(&inputs.store, &inputs.manifest, inputs.background.as_ref(), &cfg.fit)?;
    let m = &outcome.model;
    log::info!(
        "fitted {:?} model: {} layers, {} components, |T1|={} |T2|={}{}",
        m.variant,
        m.layers(),
        m.projector.n_components(),
        outcome.t1.len(),
        outcome.t2.len(),
        if m.huq.is_some() { ", with hybrid" } else { "" }
    );
    write_model(out, m)?;
    Ok(outcome)
}

/// One row of a scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_index: Option<usize>,
    pub score: f64,
}

pub fn scores_csv(rows: &[ScoreRow], level: Level) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::data(format!("writing scores: {e}"));
    match level {
        Level::Sequence => w.write_record(["id", "score"]).map_err(fail)?,
        Level::Claim => w.write_record(["id", "claim_index", "score"]).map_err(fail)?,
    }
    for r in rows {
        let score = r.score.to_string();
        match (level, r.claim_index) {
            (Level::Sequence, _) => w.write_record([r.id.as_str(), &score]).map_err(fail)?,
            (Level::Claim, Some(k)) => w.write_record([r.id.as_str(), &k.to_string(), &score]).map_err(fail)?,
            (Level::Claim, None) => return Err(Error::data(format!("claim-level row for {} lacks an index", r.id))),
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::data(format!("writing scores: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::data(format!("{}: {e}", path.display()))))
        .collect::<Result<Vec<ScoreRow>>>()
        .and_then(|rows| {
            if rows.iter().any(|r| !r.score.is_finite()) {
                Err(Error::data(format!("{}: non-finite score", path.display())))
            } else {
                Ok(rows)
            }
        })
}

fn test_units(manifest: &ResponseManifest, level: Level) -> Vec<Instance> {
    instances(manifest.test(), level)
}

/// Final scores of the test-split units of `manifest`.
pub fn score_test(model: &UqModel, store: &EmbeddingStore, manifest: &ResponseManifest) -> Result<Vec<ScoreRow>> {
    let units = test_units(manifest, model.level);
    if units.is_empty() {
        return Err(Error::data("no test-split instances to score"));
    }
    let scores = model.final_scores(store, manifest, &units)?;
    Ok(units.into_iter().zip(scores).map(|(u, score)| ScoreRow { id: u.id, claim_index: u.claim, score }).collect())
}

pub fn cmd_score(cfg: &RunConfig) -> Result<Vec<ScoreRow>> {
    let model: UqModel = read_model(cfg.require("model")?)?;
    let out = cfg.require("scores")?;
    let store = read_store(cfg.require("store")?)?;
    let manifest = ResponseManifest::read(cfg.require("manifest")?)?;
    let rows = score_test(&model, &store, &manifest)?;
    write_text(out, &scores_csv(&rows, model.level)?)?;
    Ok(rows)
}

fn units_of_rows(rows: &[ScoreRow], manifest: &ResponseManifest) -> Result<Vec<Instance>> {
    let entries = index_entries(manifest);
    rows.iter()
        .map(|r| {
            let e = entries.get(r.id.as_str()).ok_or_else(|| Error::data(format!("scored response {} not in manifest", r.id)))?;
            let span = match r.claim_index {
                None => 0..e.token_count,
                Some(k) => {
                    let c = e.claims.get(k).ok_or_else(|| Error::data(format!("response {}: no claim {k}", r.id)))?;
                    c.span_start..c.span_end
                }
            };
            Ok(Instance { id: r.id.clone(), claim: r.claim_index, span })
        })
        .collect()
}

/// Quality of each unit under `metric`; claims use [`CLAIM_QUALITY`].
pub fn unit_quality(manifest: &ResponseManifest, units: &[Instance], metric: &str) -> Result<Vec<Real>> {
    let entries = index_entries(manifest);
    units
        .iter()
        .map(|u| {
            let e = entries.get(u.id.as_str()).ok_or_else(|| Error::data(format!("response {} not in manifest", u.id)))?;
            match u.claim {
                Some(k) => Ok(match e.claims[k].label {
                    ClaimLabel::Factual => 1.0,
                    ClaimLabel::Nonfactual => 0.0,
                }),
                None => e
                    .quality
                    .get(metric)
                    .copied()
                    .ok_or_else(|| Error::data(format!("response {}: missing quality {metric:?}", u.id))),
            }
        })
        .collect()
}

fn is_claim(units: &[Instance]) -> bool {
    units.first().is_some_and(|u| u.claim.is_some())
}

/// Quality keys evaluated for `units`.
fn eval_keys(cfg: &RunConfig, units: &[Instance]) -> Vec<String> {
    if is_claim(units) {
        vec![CLAIM_QUALITY.to_string()]
    } else {
        cfg.metrics()
    }
}

fn evaluate_method(
    scores: &[Real],
    qualities: &BTreeMap<String, Vec<Real>>,
    labels: Option<&[bool]>,
) -> Result<MethodEval> {
    let mut out = MethodEval::default();
    for (k, q) in qualities {
        out.prr.insert(k.clone(), prr(scores, q)?);
    }
    if let Some(l) = labels {
        out.roc_auc = Some(roc_auc(scores, l)?);
        out.pr_auc = Some(pr_auc(scores, l)?);
    }
    Ok(out)
}

fn span_logprobs(store: &EmbeddingStore, u: &Instance) -> Result<Vec<Real>> {
    let rec = store.get(&u.id).ok_or_else(|| Error::data(format!("response {} not in store", u.id)))?;
    rec.logprobs
        .get(u.span.clone())
        .map(|s| s.iter().map(|&v| v as Real).collect())
        .ok_or_else(|| Error::data(format!("response {}: span beyond logprobs", u.id)))
}

/// Mean embedding of `span` at a 1-based layer.
pub fn span_embedding(hidden: &HiddenStates, span: Range<usize>, layer: usize) -> Result<Vec<Real>> {
    if span.is_empty() || span.end > hidden.tokens() {
        return Err(Error::data(format!("bad span [{}, {}) for {} tokens", span.start, span.end, hidden.tokens())));
    }
    if layer == 0 || layer > hidden.layers() {
        return Err(Error::dims(format!("layer {layer} outside 1..={}", hidden.layers())));
    }
    let mut acc = vec![0.0; hidden.dim()];
    for t in span.clone() {
        for (a, &v) in acc.iter_mut().zip(hidden.embedding(t, layer - 1)) {
            *a += v as Real;
        }
    }
    let n = span.len() as Real;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

fn stack(rows: Vec<Vec<Real>>) -> Matrix {
    Matrix::from_rows(&rows)
}

/// Sequence-level Gaussians at one layer: in-domain from the selected
/// training responses, background from every background response.
struct SequenceDensity {
    layer: usize,
    in_domain: GaussianLayerStats,
    background: Option<GaussianLayerStats>,
}

impl SequenceDensity {
    fn fit(
        store: &EmbeddingStore,
        selected: &TokenSet,
        background: Option<&EmbeddingStore>,
        layer: usize,
        ridge_base: Real,
    ) -> Result<Self> {
        let rows = selected
            .response_ids()
            .map(|id| {
                let h = &store.get(id).ok_or_else(|| Error::data(format!("response {id} not in store")))?.hidden;
                span_embedding(h, 0..h.tokens(), layer)
            })
            .collect::<Result<Vec<_>>>()?;
        let in_domain = fit_gaussian(&stack(rows), ridge_base)?;
        let background = match background {
            Some(bg) => {
                let rows = bg
                    .iter()
                    .map(|r| span_embedding(&r.hidden, 0..r.hidden.tokens(), layer))
                    .collect::<Result<Vec<_>>>()?;
                Some(fit_gaussian(&stack(rows), ridge_base)?)
            }
            None => None,
        };
        Ok(Self { layer, in_domain, background })
    }

    /// `(md, rmd)` of each unit's mean embedding.
    fn score(&self, store: &EmbeddingStore, units: &[Instance]) -> Result<(Vec<Real>, Option<Vec<Real>>)> {
        let pairs = units
            .par_iter()
            .map(|u| {
                let h = &store.get(&u.id).ok_or_else(|| Error::data(format!("response {} not in store", u.id)))?.hidden;
                let x = span_embedding(h, u.span.clone(), self.layer)?;
                let md = mahalanobis(&self.in_domain, &x)?;
                let rmd = match &self.background {
                    Some(bg) => Some(md - mahalanobis(bg, &x)?),
                    None => None,
                };
                Ok((md, rmd))
            })
            .collect::<Result<Vec<_>>>()?;
        let md = pairs.iter().map(|p| p.0).collect();
        let rmd = self.background.as_ref().map(|_| pairs.iter().map(|p| p.1.expect("background present")).collect());
        Ok((md, rmd))
    }
}

/// Train-split tokens used for unsupervised density fits.
fn train_selection(manifest: &ResponseManifest, fit: &FitConfig) -> Result<TokenSet> {
    select_tokens_from(manifest.train(), &fit.quality_metric, fit.tau)
}

/// Evaluates `scores` on `units` next to the built-in baselines.
pub fn evaluate(
    cfg: &RunConfig,
    store: &EmbeddingStore,
    manifest: &ResponseManifest,
    background: Option<&EmbeddingStore>,
    units: &[Instance],
    scores: &[Real],
) -> Result<EvalReport> {
    if units.len() < 2 {
        return Err(Error::data(format!("need at least 2 scored instances, got {}", units.len())));
    }
    let keys = eval_keys(cfg, units);
    let mut qualities = BTreeMap::new();
    for k in &keys {
        qualities.insert(k.clone(), unit_quality(manifest, units, k)?);
    }
    let labels: Option<Vec<bool>> =
        is_claim(units).then(|| qualities[CLAIM_QUALITY].iter().map(|&q| q == 0.0).collect());
    let main = evaluate_method(scores, &qualities, labels.as_deref())?;

    let mut baselines = BTreeMap::new();
    let lps = units.iter().map(|u| span_logprobs(store, u)).collect::<Result<Vec<_>>>()?;
    let msp = lps.iter().map(|l| msp_uncertainty(l)).collect::<Result<Vec<_>>>()?;
    let ppl = lps.iter().map(|l| perplexity(l)).collect::<Result<Vec<_>>>()?;
    baselines.insert("msp".to_string(), evaluate_method(&msp, &qualities, labels.as_deref())?);
    baselines.insert("perplexity".to_string(), evaluate_method(&ppl, &qualities, labels.as_deref())?);

    let layer = cfg.baseline_layer.unwrap_or(store.layers().div_ceil(2));
    let seq = SequenceDensity::fit(store, &train_selection(manifest, &cfg.fit)?, background, layer, cfg.fit.ridge_base)?;
    let (md, rmd) = seq.score(store, units)?;
    baselines.insert("md_seq".to_string(), evaluate_method(&md, &qualities, labels.as_deref())?);
    if let Some(rmd) = rmd {
        baselines.insert("rmd_seq".to_string(), evaluate_method(&rmd, &qualities, labels.as_deref())?);
    }

    Ok(EvalReport {
        n: units.len(),
        rejection_curve: full_rejection_points(scores, &qualities[&keys[0]])?,
        prr: main.prr,
        roc_auc: main.roc_auc,
        pr_auc: main.pr_auc,
        baselines,
        config_checksum: Some(cfg.fit.checksum()),
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let dir = cfg.require("report_dir")?;
    let rows = read_scores(cfg.require("scores")?)?;
    let inputs = load_inputs(cfg, true)?;
    let units = units_of_rows(&rows, &inputs.manifest)?;
    let scores: Vec<Real> = rows.iter().map(|r| r.score).collect();
    let report = evaluate(cfg, &inputs.store, &inputs.manifest, inputs.background.as_ref(), &units, &scores)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&dir.join("eval.json"), &(json + "\n"))?;
    write_text(&dir.join("rejection_curve.csv"), &rejection_csv(&report.rejection_curve))?;
    Ok(report)
}

/// Rejection table of the scores file at the configured fractions.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<(f64, Real)>> {
    let dir = cfg.require("report_dir")?;
    let rows = read_scores(cfg.require("scores")?)?;
    let manifest = ResponseManifest::read(cfg.require("manifest")?)?;
    let units = units_of_rows(&rows, &manifest)?;
    let q = unit_quality(&manifest, &units, &eval_keys(cfg, &units)[0])?;
    let scores: Vec<Real> = rows.iter().map(|r| r.score).collect();
    let table = rejection_table(&scores, &q, &cfg.rejection_grid)?;
    let points: Vec<_> = table
        .iter()
        .map(|&(fraction, mean_quality)| crate::metrics::RejectionPoint { fraction, mean_quality })
        .collect();
    write_text(&dir.join("rejection_table.csv"), &rejection_csv(&points))?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Layer,
    Tau,
    NComponents,
    TrainSize,
}

impl SweepAxis {
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Layer => "layer",
            SweepAxis::Tau => "tau",
            SweepAxis::NComponents => "n_components",
            SweepAxis::TrainSize => "train_size",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(SweepAxis::Layer),
            "tau" => Ok(SweepAxis::Tau),
            "n_components" => Ok(SweepAxis::NComponents),
            "train_size" => Ok(SweepAxis::TrainSize),
            _ => Err(Error::data(format!("unknown sweep axis {s:?}"))),
        }
    }
}

/// PRR per grid value, for one or more methods.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    /// Method whose column is written to `sweep_<axis>.csv`.
    pub primary: String,
    pub columns: BTreeMap<String, Vec<(String, Real)>>,
}

impl SweepTable {
    pub fn column(&self, method: &str) -> &[(String, Real)] {
        self.columns.get(method).map_or(&[], Vec::as_slice)
    }

    /// Grid value with the highest PRR in the primary column (first on ties).
    pub fn argmax(&self) -> Option<&str> {
        let col = self.column(&self.primary);
        let mut best: Option<&(String, Real)> = None;
        for row in col {
            if best.is_none_or(|b| row.1 > b.1) {
                best = Some(row);
            }
        }
        best.map(|b| b.0.as_str())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let key = self.axis.key();
        write_text(&dir.join(format!("sweep_{key}.csv")), &crate::metrics::table_csv(key, "prr", self.column(&self.primary)))?;
        if self.columns.len() > 1 {
            for (method, rows) in &self.columns {
                write_text(&dir.join(format!("sweep_{key}_{method}.csv")), &crate::metrics::table_csv(key, "prr", rows))?;
            }
        }
        Ok(())
    }
}

fn layer_sweep(cfg: &RunConfig, inputs: &Inputs) -> Result<SweepTable> {
    let (store, manifest) = (&inputs.store, &inputs.manifest);
    let units = test_units(manifest, cfg.fit.level);
    if units.len() < 2 {
        return Err(Error::data("layer sweep needs at least 2 test instances"));
    }
    let key = eval_keys(cfg, &units).remove(0);
    let q = unit_quality(manifest, &units, &key)?;
    let ridge = cfg.fit.ridge_base;
    let bg_stats = match &inputs.background {
        Some(bg) => {
            let mut all = TokenSet::default();
            for r in bg.iter() {
                all.insert_response(&r.id, 0..r.hidden.tokens());
            }
            Some(fit_all_layers::<Real>(bg, &all, ridge)?)
        }
        None => None,
    };
    let filtered = train_selection(manifest, &cfg.fit)?;
    let raw = select_tokens_from(manifest.train(), ALL_TOKENS, 0.0)?;

    let mut columns: BTreeMap<String, Vec<(String, Real)>> = BTreeMap::new();
    let mut per_layer = |name: &str, features: &Matrix| -> Result<()> {
        let col = (0..features.cols())
            .map(|l| Ok(((l + 1).to_string(), prr(&features.column(l), &q)?)))
            .collect::<Result<Vec<_>>>()?;
        columns.insert(name.to_string(), col);
        Ok(())
    };
    for (suffix, selection) in [("", &filtered), ("_raw", &raw)] {
        let stats = fit_all_layers::<Real>(store, selection, ridge)?;
        per_layer(&format!("atmd{suffix}"), &crate::regress::density_features(store, &units, Density::Md(&stats))?)?;
        if let Some(bg) = &bg_stats {
            let d = Density::Rmd { in_domain: &stats, background: bg };
            per_layer(&format!("atrmd{suffix}"), &crate::regress::density_features(store, &units, d)?)?;
        }
    }
    let mut md_seq = Vec::new();
    let mut rmd_seq = Vec::new();
    for layer in 1..=store.layers() {
        let seq = SequenceDensity::fit(store, &filtered, inputs.background.as_ref(), layer, ridge)?;
        let (md, rmd) = seq.score(store, &units)?;
        md_seq.push((layer.to_string(), prr(&md, &q)?));
        if let Some(rmd) = rmd {
            rmd_seq.push((layer.to_string(), prr(&rmd, &q)?));
        }
    }
    columns.insert("md_seq".into(), md_seq);
    if !rmd_seq.is_empty() {
        columns.insert("rmd_seq".into(), rmd_seq);
    }
    let primary = match (cfg.fit.variant, inputs.background.is_some()) {
        (Variant::Rmd, true) => "atrmd",
        _ => "atmd",
    };
    Ok(SweepTable { axis: SweepAxis::Layer, primary: primary.into(), columns })
}

/// Test PRR of the supervised score of a model fitted on `train_ids`.
fn refit_prr(cfg: &RunConfig, fit: &FitConfig, inputs: &Inputs, train_ids: &[String]) -> Result<Real> {
    let entries = index_entries(&inputs.manifest);
    let outcome = fit_on_ids::<Real>(&inputs.store, &entries, train_ids, inputs.background.as_ref(), fit)?;
    let units = test_units(&inputs.manifest, fit.level);
    let scores = outcome.model.score_units(&inputs.store, &units)?;
    let q = unit_quality(&inputs.manifest, &units, &eval_keys(cfg, &units)[0])?;
    prr(&scores, &q)
}

/// Seeded subsample of `n` ids (sorted first, then shuffled).
pub fn subsample_ids(ids: &[String], n: usize, seed: u64) -> Vec<String> {
    let mut v = ids.to_vec();
    v.sort();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v.truncate(n);
    v
}

pub fn sweep(cfg: &RunConfig, axis: SweepAxis) -> Result<SweepTable> {
    let inputs = load_inputs(cfg, cfg.fit.variant == Variant::Rmd || axis == SweepAxis::Layer)?;
    ensure_valid(&inputs.store, &inputs.manifest)?;
    if axis == SweepAxis::Layer {
        return layer_sweep(cfg, &inputs);
    }
    let train_ids: Vec<String> = inputs.manifest.train().map(|e| e.id.clone()).collect();
    let mut rows = Vec::new();
    match axis {
        SweepAxis::Tau => {
            let raw = FitConfig { tau: f64::NEG_INFINITY, ..cfg.fit.clone() };
            rows.push(("raw".to_string(), refit_prr(cfg, &raw, &inputs, &train_ids)?));
            for &tau in &cfg.sweep.tau_grid {
                let fit = FitConfig { tau, ..cfg.fit.clone() };
                rows.push((tau.to_string(), refit_prr(cfg, &fit, &inputs, &train_ids)?));
            }
        }
        SweepAxis::NComponents => {
            for n in cfg.sweep.n_components_for(inputs.store.layers()) {
                let fit = FitConfig { n_components: n, ..cfg.fit.clone() };
                rows.push((n.to_string(), refit_prr(cfg, &fit, &inputs, &train_ids)?));
            }
        }
        SweepAxis::TrainSize => {
            for &n in &cfg.sweep.train_size_grid {
                if n > train_ids.len() {
                    log::warn!("train size {n} exceeds the {} available responses; skipped", train_ids.len());
                    continue;
                }
                let ids = subsample_ids(&train_ids, n, cfg.fit.seed);
                rows.push((n.to_string(), refit_prr(cfg, &cfg.fit, &inputs, &ids)?));
            }
        }
        SweepAxis::Layer => unreachable!(),
    }
    let primary = "supervised".to_string();
    Ok(SweepTable { axis, primary: primary.clone(), columns: [(primary, rows)].into() })
}

pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis) -> Result<SweepTable> {
    let dir = cfg.require("report_dir")?.to_path_buf();
    let table = sweep(cfg, axis)?;
    table.write(&dir)?;
    Ok(table)
}

/// Writes a synthetic corpus plus a `config.json` pointing at it.
pub fn cmd_synth(dir: &Path, synth: &crate::synthetic::SyntheticConfig) -> Result<RunConfig> {
    let corpus = crate::synthetic::generate(synth);
    corpus.write_to(dir)?;
    let mut cfg = RunConfig {
        store: Some("store.tmd".into()),
        background_store: Some("background.tmd".into()),
        manifest: Some("manifest.json".into()),
        model: Some("model.tmd".into()),
        scores: Some("scores.csv".into()),
        report_dir: Some("report".into()),
        ..RunConfig::default()
    };
    match synth.quality {
        crate::synthetic::QualityModel::Binary { .. } => {}
        crate::synthetic::QualityModel::Graded { .. } => cfg.fit.quality_metric = "alignscore".into(),
        crate::synthetic::QualityModel::Claims { .. } => {
            cfg.fit.quality_metric = "factuality".into();
            cfg.fit.tau = 0.99;
            cfg.fit.level = Level::Claim;
        }
    }
    let json = serde_json::to_string_pretty(&cfg.to_json()).expect("config serializes");
    write_text(&dir.join("config.json"), &(json + "\n"))?;
    Ok(cfg)
}
