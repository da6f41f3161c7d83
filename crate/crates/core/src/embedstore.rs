//! Tensor container and response manifest.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "TMD1" | u64 header length | UTF-8 JSON header | payload
//! ```
//!
//! The header maps tensor names to `{"dtype": "F32", "shape": [..],
//! "offset": o, "length": n}` where `offset` is relative to the start of the
//! payload and `n = product(shape) * 4`. The reserved key `"meta"` may hold an
//! arbitrary JSON object. Tensors are stored row-major as 32-bit floats, in
//! lexicographic name order.
//!
//! Response tensors are named `resp/<id>/hidden` with shape `[T, L, d]` and
//! `resp/<id>/logprob` with shape `[T]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TMD1";
pub const META_KEY: &str = "meta";
const DTYPE_F32: &str = "F32";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

/// Named f32 tensors plus optional JSON metadata, serialized in the `TMD1`
/// layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    tensors: BTreeMap<String, Tensor>,
    meta: Option<Value>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name == META_KEY {
            return Err(Error::data(format!("tensor name {META_KEY:?} is reserved")));
        }
        if tensor.shape.iter().product::<usize>() != tensor.data.len() {
            return Err(Error::dims(format!("tensor {name}: data length does not match shape")));
        }
        if let Some(bad) = tensor.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("tensor {name}: non-finite value {bad}")));
        }
        if self.tensors.insert(name.clone(), tensor).is_some() {
            return Err(Error::data(format!("duplicate tensor {name}")));
        }
        Ok(())
    }

    pub fn set_meta(&mut self, meta: Value) {
        self.meta = Some(meta);
    }

    pub fn meta(&self) -> Option<&Value> {
        self.meta.as_ref()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let length = (t.data.len() * 4) as u64;
            let entry = IndexEntry { dtype: DTYPE_F32.into(), shape: t.shape.clone(), offset, length };
            header.insert(name.clone(), serde_json::to_value(entry).expect("index entry serializes"));
            offset += length;
        }
        if let Some(meta) = &self.meta {
            header.insert(META_KEY.into(), meta.clone());
        }
        let header = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::data("bad magic"));
        }
        if bytes.len() < 12 {
            return Err(Error::data("truncated header length"));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let rest = (bytes.len() - 12) as u64;
        if header_len > rest {
            return Err(Error::data(format!(
                "header length {header_len} exceeds file size ({rest} bytes after prefix)"
            )));
        }
        let header_end = 12 + header_len as usize;
        let header: Value = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::data(format!("malformed JSON header: {e}")))?;
        let Value::Object(header) = header else {
            return Err(Error::data("malformed JSON header: expected an object"));
        };
        let payload = &bytes[header_end..];

        let mut meta = None;
        let mut entries = Vec::new();
        for (name, value) in header {
            if name == META_KEY {
                meta = Some(value);
                continue;
            }
            let entry: IndexEntry = serde_json::from_value(value)
                .map_err(|e| Error::data(format!("malformed JSON header entry {name}: {e}")))?;
            if entry.dtype != DTYPE_F32 {
                return Err(Error::data(format!("unsupported dtype {} for tensor {name}", entry.dtype)));
            }
            let expected = entry
                .shape
                .iter()
                .try_fold(4u64, |acc, &s| acc.checked_mul(s as u64))
                .ok_or_else(|| Error::data(format!("tensor {name}: shape overflows")))?;
            if entry.length != expected {
                return Err(Error::data(format!(
                    "tensor {name}: length {} does not match shape {:?}",
                    entry.length, entry.shape
                )));
            }
            let end = entry.offset.checked_add(entry.length);
            if end.is_none_or(|end| end > payload.len() as u64) {
                return Err(Error::data(format!("tensor {name}: region out of bounds")));
            }
            entries.push((name, entry));
        }

        let mut regions: Vec<(u64, u64, &str)> =
            entries.iter().map(|(n, e)| (e.offset, e.offset + e.length, n.as_str())).collect();
        regions.sort();
        for w in regions.windows(2) {
            // zero-length tensors occupy no bytes and cannot overlap
            if w[0].1 > w[1].0 && w[0].0 != w[0].1 && w[1].0 != w[1].1 {
                return Err(Error::data(format!("tensor regions overlap: {} and {}", w[0].2, w[1].2)));
            }
        }

        let mut tensors = BTreeMap::new();
        for (name, entry) in entries {
            let start = entry.offset as usize;
            let raw = &payload[start..start + entry.length as usize];
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.insert(name, Tensor { shape: entry.shape, data });
        }
        Ok(Self { tensors, meta })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Hidden states and log-probabilities of one generated response.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRecord {
    pub id: String,
    pub hidden: HiddenStates,
    pub logprobs: Vec<f32>,
}

/// Token-by-layer hidden states, row-major `[T, L, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    tokens: usize,
    layers: usize,
    dim: usize,
    data: Vec<f32>,
}

impl HiddenStates {
    pub fn new(tokens: usize, layers: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != tokens * layers * dim {
            return Err(Error::dims(format!(
                "hidden data length {} does not match shape [{tokens}, {layers}, {dim}]",
                data.len()
            )));
        }
        Ok(Self { tokens, layers, dim, data })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Embedding of `token` after decoder layer `layer` (0-based here;
    /// layer numbering elsewhere is 1-based).
    #[inline]
    pub fn embedding(&self, token: usize, layer: usize) -> &[f32] {
        let start = (token * self.layers + layer) * self.dim;
        &self.data[start..start + self.dim]
    }
}

fn hidden_name(id: &str) -> String {
    format!("resp/{id}/hidden")
}

fn logprob_name(id: &str) -> String {
    format!("resp/{id}/logprob")
}

/// Serializes response records into container bytes.
pub fn write_store(records: &[ResponseRecord]) -> Result<Vec<u8>> {
    let mut container = Container::new();
    let mut shape: Option<(usize, usize)> = None;
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::data(format!("duplicate response id {}", r.id)));
        }
        let h = &r.hidden;
        match shape {
            None => shape = Some((h.layers, h.dim)),
            Some((l, d)) if (l, d) != (h.layers, h.dim) => {
                return Err(Error::dims(format!(
                    "response {} has L={}, d={} but earlier responses have L={l}, d={d}",
                    r.id, h.layers, h.dim
                )));
            }
            Some(_) => {}
        }
        if r.logprobs.len() != h.tokens {
            return Err(Error::dims(format!(
                "response {}: {} logprobs for {} tokens",
                r.id,
                r.logprobs.len(),
                h.tokens
            )));
        }
        container.insert(hidden_name(&r.id), Tensor::new(vec![h.tokens, h.layers, h.dim], h.data.clone()))?;
        container.insert(logprob_name(&r.id), Tensor::new(vec![h.tokens], r.logprobs.clone()))?;
    }
    Ok(container.to_bytes())
}

pub fn write_store_file(path: &Path, records: &[ResponseRecord]) -> Result<()> {
    let bytes = write_store(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A loaded store of per-response hidden states and log-probabilities.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    responses: BTreeMap<String, ResponseRecord>,
    layers: usize,
    dim: usize,
}

impl EmbeddingStore {
    pub fn from_records(records: Vec<ResponseRecord>) -> Result<Self> {
        let bytes = write_store(&records)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(Container::from_bytes(bytes)?)
    }

    fn from_container(container: Container) -> Result<Self> {
        let Container { tensors, .. } = container;
        let mut hidden = BTreeMap::new();
        let mut logprob = BTreeMap::new();
        for (name, t) in tensors {
            let Some(rest) = name.strip_prefix("resp/") else { continue };
            if let Some(id) = rest.strip_suffix("/hidden") {
                hidden.insert(id.to_string(), t);
            } else if let Some(id) = rest.strip_suffix("/logprob") {
                logprob.insert(id.to_string(), t);
            }
        }
        let mut responses = BTreeMap::new();
        let mut shape: Option<(usize, usize)> = None;
        for (id, h) in hidden {
            let [tokens, layers, dim] = h.shape[..] else {
                return Err(Error::dims(format!("response {id}: hidden tensor must be 3-D, got {:?}", h.shape)));
            };
            match shape {
                None => shape = Some((layers, dim)),
                Some((l, d)) if (l, d) != (layers, dim) => {
                    return Err(Error::dims(format!(
                        "response {id} has L={layers}, d={dim} but others have L={l}, d={d}"
                    )));
                }
                Some(_) => {}
            }
            let lp = logprob
                .remove(&id)
                .ok_or_else(|| Error::data(format!("response {id}: missing logprob tensor")))?;
            if lp.shape != [tokens] {
                return Err(Error::dims(format!(
                    "response {id}: logprob shape {:?} does not match {tokens} tokens",
                    lp.shape
                )));
            }
            let hs = HiddenStates::new(tokens, layers, dim, h.data)?;
            responses.insert(id.clone(), ResponseRecord { id, hidden: hs, logprobs: lp.data });
        }
        if let Some(id) = logprob.keys().next() {
            return Err(Error::data(format!("response {id}: missing hidden tensor")));
        }
        let (layers, dim) = shape.unwrap_or((0, 0));
        Ok(Self { responses, layers, dim })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ResponseRecord> {
        self.responses.get(id)
    }

    /// Responses in lexicographic id order.
    pub fn iter(&self) -> impl Iterator<Item = &ResponseRecord> {
        self.responses.values()
    }
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    EmbeddingStore::from_container(Container::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimLabel {
    Factual,
    Nonfactual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    /// First token of the claim.
    pub span_start: usize,
    /// One past the last token.
    pub span_end: usize,
    pub label: ClaimLabel,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEntry {
    pub id: String,
    #[serde(default)]
    pub prompt_text: String,
    #[serde(default)]
    pub output_text: String,
    pub token_count: usize,
    #[serde(default)]
    pub quality: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external_scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub claims: Vec<Claim>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ResponseEntry {
    /// Untagged responses count as training data.
    pub fn is_train(&self) -> bool {
        self.split != Some(Split::Test)
    }

    pub fn is_test(&self) -> bool {
        self.split == Some(Split::Test)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseManifest {
    pub responses: Vec<ResponseEntry>,
}

impl ResponseManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: malformed manifest: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, id: &str) -> Option<&ResponseEntry> {
        self.responses.iter().find(|r| r.id == id)
    }

    pub fn train(&self) -> impl Iterator<Item = &ResponseEntry> {
        self.responses.iter().filter(|r| r.is_train())
    }

    pub fn test(&self) -> impl Iterator<Item = &ResponseEntry> {
        self.responses.iter().filter(|r| r.is_test())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueKind {
    DuplicateId,
    MissingTensors,
    TokenCountMismatch { manifest: usize, store: usize },
    ClaimSpanOutOfRange { claim: usize, start: usize, end: usize },
    NonFinite { tensor: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub id: String,
    pub kind: IssueKind,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "response {}: ", self.id)?;
        match &self.kind {
            IssueKind::DuplicateId => write!(f, "duplicate id in manifest"),
            IssueKind::MissingTensors => write!(f, "missing tensors"),
            IssueKind::TokenCountMismatch { manifest, store } => {
                write!(f, "token count mismatch (manifest {manifest}, store {store})")
            }
            IssueKind::ClaimSpanOutOfRange { claim, start, end } => {
                write!(f, "claim span out of range (claim {claim}: [{start}, {end}))")
            }
            IssueKind::NonFinite { tensor } => write!(f, "non-finite values in {tensor}"),
        }
    }
}

/// Problems found by [`validate`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Cross-checks a manifest against a store. Problems are collected, not
/// returned as errors.
pub fn validate(store: &EmbeddingStore, manifest: &ResponseManifest) -> ValidationReport {
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    for entry in &manifest.responses {
        let id = entry.id.clone();
        if !seen.insert(entry.id.as_str()) {
            issues.push(Issue { id: id.clone(), kind: IssueKind::DuplicateId });
        }
        for (k, c) in entry.claims.iter().enumerate() {
            if !(c.span_start < c.span_end && c.span_end <= entry.token_count) {
                issues.push(Issue {
                    id: id.clone(),
                    kind: IssueKind::ClaimSpanOutOfRange { claim: k, start: c.span_start, end: c.span_end },
                });
            }
        }
        let Some(rec) = store.get(&entry.id) else {
            issues.push(Issue { id, kind: IssueKind::MissingTensors });
            continue;
        };
        if rec.hidden.tokens() != entry.token_count {
            issues.push(Issue {
                id: id.clone(),
                kind: IssueKind::TokenCountMismatch { manifest: entry.token_count, store: rec.hidden.tokens() },
            });
        }
        if rec.hidden.as_slice().iter().any(|v| !v.is_finite()) {
            issues.push(Issue { id: id.clone(), kind: IssueKind::NonFinite { tensor: "hidden" } });
        }
        if rec.logprobs.iter().any(|v| !v.is_finite()) {
            issues.push(Issue { id, kind: IssueKind::NonFinite { tensor: "logprob" } });
        }
    }
    ValidationReport { issues }
}
