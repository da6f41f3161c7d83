//! Seeded synthetic corpora with a known planted signal, for end-to-end
//! checks and demos.
//!
//! Every layer draws token embeddings from a fixed anisotropic Gaussian.
//! Tokens of low-quality responses (or of nonfactual claims) are additionally
//! shifted along a fixed direction at a single layer, so the ground-truth
//! informative layer is known. Token log-probabilities carry a tunable
//! amount of the same correctness signal.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedstore::{
    write_store_file, Claim, ClaimLabel, HiddenStates, ResponseEntry, ResponseManifest, ResponseRecord, Split,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityModel {
    /// Correct with probability `p_correct`; incorrect responses get the
    /// full shift. Quality `exact_match` ∈ {0, 1}.
    Binary { p_correct: f64 },
    /// Quality `alignscore` ~ U(0, 1); the shift fades linearly to zero as
    /// quality rises to `threshold`. `exact_match` is `alignscore > 0.5`.
    Graded { threshold: f64 },
    /// Two or three claims per response, each nonfactual with probability
    /// `p_nonfactual`; only nonfactual claim tokens are shifted.
    Claims { p_nonfactual: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_background: usize,
    pub layers: usize,
    pub dim: usize,
    /// 1-based layer carrying the planted shift.
    pub shift_layer: usize,
    /// Shift length in units of the per-dimension noise scale.
    pub shift: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub quality: QualityModel,
    /// 0: log-probabilities carry no correctness signal; 1: fully driven by it.
    pub msp_signal: f64,
    /// Background mean offset (along a random unit direction per layer).
    pub background_offset: f64,
    /// Background noise scale relative to the in-domain scale.
    pub background_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_test: 200,
            n_background: 200,
            layers: 6,
            dim: 16,
            shift_layer: 4,
            shift: 3.0,
            min_tokens: 5,
            max_tokens: 15,
            quality: QualityModel::Binary { p_correct: 0.6 },
            msp_signal: 0.5,
            background_offset: 2.0,
            background_scale: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<ResponseRecord>,
    pub manifest: ResponseManifest,
    pub background: Vec<ResponseRecord>,
}

impl SyntheticCorpus {
    /// Writes `store.tmd`, `background.tmd` and `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        write_store_file(&dir.join("store.tmd"), &self.records)?;
        write_store_file(&dir.join("background.tmd"), &self.background)?;
        self.manifest.write(&dir.join("manifest.json"))
    }
}

struct LayerDist {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Generates a corpus; identical configs give identical corpora.
pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    assert!(cfg.layers >= 1 && cfg.dim >= 1, "empty geometry");
    assert!((1..=cfg.layers).contains(&cfg.shift_layer), "shift layer out of range");
    assert!(cfg.min_tokens >= 1 && cfg.min_tokens <= cfg.max_tokens, "token range");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (l, d) = (cfg.layers, cfg.dim);

    let dists: Vec<LayerDist> = (0..l)
        .map(|_| LayerDist {
            mean: gaussian_vec(&mut rng, d),
            scale: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
        })
        .collect();
    let bg_dists: Vec<LayerDist> = dists
        .iter()
        .map(|ld| {
            let offset = unit(gaussian_vec(&mut rng, d));
            LayerDist {
                mean: ld.mean.iter().zip(&offset).map(|(m, o)| m + cfg.background_offset * o).collect(),
                scale: ld.scale.iter().map(|s| s * cfg.background_scale).collect(),
            }
        })
        .collect();
    let direction = unit(gaussian_vec(&mut rng, d));
    let shift_at = cfg.shift_layer - 1;

    // Draws one response; `shifted[t]` is the shift fraction of token t.
    let draw = |rng: &mut ChaCha8Rng, dists: &[LayerDist], shifted: &[f64], badness: f64| -> (HiddenStates, Vec<f32>) {
        let t = shifted.len();
        let mut data = Vec::with_capacity(t * l * d);
        for &frac in shifted {
            for (layer, ld) in dists.iter().enumerate() {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    let mut v = ld.mean[j] + ld.scale[j] * z;
                    if layer == shift_at && frac > 0.0 {
                        v += frac * cfg.shift * ld.scale[j] * direction[j];
                    }
                    data.push(v as f32);
                }
            }
        }
        let noise: f64 = rng.random();
        let mean_nll = 0.02 + 0.1 * (cfg.msp_signal * badness + (1.0 - cfg.msp_signal) * noise);
        let exp = Exp::new(1.0 / mean_nll).expect("positive rate");
        let logprobs = (0..t).map(|_| -(exp.sample(rng) as f32)).collect();
        (HiddenStates::new(t, l, d, data).expect("consistent shape"), logprobs)
    };

    let mut records = Vec::new();
    let mut entries = Vec::new();
    let total = cfg.n_train + cfg.n_test;
    for i in 0..total {
        let (id, split) = if i < cfg.n_train {
            (format!("train-{i:05}"), Split::Train)
        } else {
            (format!("test-{:05}", i - cfg.n_train), Split::Test)
        };
        let t = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
        let mut quality = BTreeMap::new();
        let mut claims = Vec::new();
        let (shifted, badness) = match cfg.quality {
            QualityModel::Binary { p_correct } => {
                let correct = rng.random::<f64>() < p_correct;
                quality.insert("exact_match".to_string(), if correct { 1.0 } else { 0.0 });
                let frac = if correct { 0.0 } else { 1.0 };
                (vec![frac; t], frac)
            }
            QualityModel::Graded { threshold } => {
                let q: f64 = rng.random_range(f64::EPSILON..1.0);
                quality.insert("alignscore".to_string(), q);
                quality.insert("exact_match".to_string(), if q > 0.5 { 1.0 } else { 0.0 });
                let frac = (1.0 - q / threshold).max(0.0);
                (vec![frac; t], 1.0 - q)
            }
            QualityModel::Claims { p_nonfactual } => {
                let n_claims = if t >= 3 { rng.random_range(2..=3usize) } else { 1 };
                let mut bounds: Vec<usize> = (0..n_claims).map(|k| k * t / n_claims).collect();
                bounds.push(t);
                let mut shifted = vec![0.0; t];
                let mut nonfactual = 0;
                for k in 0..n_claims {
                    let bad = rng.random::<f64>() < p_nonfactual;
                    if bad {
                        nonfactual += 1;
                        shifted[bounds[k]..bounds[k + 1]].iter_mut().for_each(|s| *s = 1.0);
                    }
                    let signal = if bad { 0.6 } else { 0.4 };
                    let ccp = (signal + 0.6 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0);
                    claims.push(Claim {
                        span_start: bounds[k],
                        span_end: bounds[k + 1],
                        label: if bad { ClaimLabel::Nonfactual } else { ClaimLabel::Factual },
                        external_scores: [("ccp".to_string(), ccp)].into(),
                    });
                }
                let factual = 1.0 - nonfactual as f64 / n_claims as f64;
                quality.insert("factuality".to_string(), factual);
                (shifted, 1.0 - factual)
            }
        };
        let (hidden, logprobs) = draw(&mut rng, &dists, &shifted, badness);
        records.push(ResponseRecord { id: id.clone(), hidden, logprobs });
        entries.push(ResponseEntry {
            id,
            prompt_text: format!("synthetic prompt {i}"),
            output_text: String::new(),
            token_count: t,
            quality,
            external_scores: BTreeMap::new(),
            claims,
            split: Some(split),
        });
    }

    let background = (0..cfg.n_background)
        .map(|i| {
            let t = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
            let (hidden, logprobs) = draw(&mut rng, &bg_dists, &vec![0.0; t], 0.0);
            ResponseRecord { id: format!("bg-{i:05}"), hidden, logprobs }
        })
        .collect();

    SyntheticCorpus { records, manifest: ResponseManifest { responses: entries }, background }
}
