//! Run configuration: one JSON file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::regress::FitConfig;

/// Keys holding filesystem paths; relative values resolve against the
/// directory of the config file.
pub const PATH_KEYS: [&str; 6] = ["store", "background_store", "manifest", "model", "scores", "report_dir"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub tau_grid: Vec<f64>,
    /// `None` means `{2, 5, 10, 20, L}`.
    pub n_components_grid: Option<Vec<usize>>,
    /// Total training responses per point, before the T1/T2 split.
    pub train_size_grid: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            tau_grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            n_components_grid: None,
            train_size_grid: vec![50, 100, 200, 400],
        }
    }
}

impl SweepConfig {
    pub fn n_components_for(&self, layers: usize) -> Vec<usize> {
        let mut grid = self.n_components_grid.clone().unwrap_or_else(|| vec![2, 5, 10, 20, layers]);
        let mut seen = std::collections::BTreeSet::new();
        grid.retain(|n| seen.insert(*n));
        grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub store: Option<PathBuf>,
    pub background_store: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub fit: FitConfig,
    /// Quality metrics evaluated by `eval`; empty means `[quality_metric]`.
    pub eval_metrics: Vec<String>,
    /// 1-based layer of the sequence-level MD/RMD baselines; `None` is `⌈L/2⌉`.
    pub baseline_layer: Option<usize>,
    /// Rejection fractions reported by `report`.
    pub rejection_grid: Vec<f64>,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            store: None,
            background_store: None,
            manifest: None,
            model: None,
            scores: None,
            report_dir: None,
            fit: FitConfig::default(),
            eval_metrics: Vec::new(),
            baseline_layer: None,
            rejection_grid: (0..10).map(|k| k as f64 / 10.0).collect(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(value: Value) -> Result<Self> {
        check_keys(&value, &serde_json::to_value(Self::default()).expect("config serializes"), "")?;
        serde_json::from_value(value).map_err(|e| Error::data(format!("invalid config: {e}")))
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Loads `path` (if any), resolves its relative paths against the file's
    /// directory, then applies `key=value` overrides. Override values parse
    /// as JSON and fall back to plain strings; dotted keys reach nested
    /// objects.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let mut v: Value = serde_json::from_str(&text)
                    .map_err(|e| Error::data(format!("{}: malformed config: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new(""));
                resolve_paths(&mut v, base);
                v
            }
            None => Value::Object(Map::new()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_json(value)
    }

    pub fn metrics(&self) -> Vec<String> {
        if self.eval_metrics.is_empty() {
            vec![self.fit.quality_metric.clone()]
        } else {
            self.eval_metrics.clone()
        }
    }

    pub fn require(&self, field: &str) -> Result<&Path> {
        let p = match field {
            "store" => &self.store,
            "background_store" => &self.background_store,
            "manifest" => &self.manifest,
            "model" => &self.model,
            "scores" => &self.scores,
            "report_dir" => &self.report_dir,
            _ => unreachable!("unknown path field {field}"),
        };
        p.as_deref().ok_or_else(|| Error::data(format!("config field {field:?} is required for this command")))
    }
}

fn resolve_paths(value: &mut Value, base: &Path) {
    let Value::Object(map) = value else { return };
    for key in PATH_KEYS {
        if let Some(Value::String(s)) = map.get_mut(key) {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
    }
}

fn check_keys(value: &Value, reference: &Value, prefix: &str) -> Result<()> {
    let (Value::Object(got), Value::Object(known)) = (value, reference) else { return Ok(()) };
    for (k, v) in got {
        let Some(r) = known.get(k) else {
            return Err(Error::data(format!("unknown config key {prefix}{k:?}")));
        };
        check_keys(v, r, &format!("{prefix}{k}."))?;
    }
    Ok(())
}

pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::data(format!("override {assignment:?} is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::data(format!("bad override key {key:?}")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let map = cur
            .as_object_mut()
            .ok_or_else(|| Error::data(format!("override {key:?} descends into a non-object")))?;
        cur = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .ok_or_else(|| Error::data(format!("override {key:?} descends into a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::Variant;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.fit.tau, 0.3);
        assert_eq!(c.fit.n_components, 10);
        assert_eq!(c.fit.ridge_base, 1e-6);
        assert_eq!(c.fit.ols_ridge, 1e-8);
        assert_eq!(c.fit.split_ratio, 0.5);
        assert_eq!(c.sweep.tau_grid.len(), 9);
        assert_eq!(c.sweep.n_components_for(6), vec![2, 5, 10, 20, 6]);
        assert_eq!(c.sweep.n_components_for(10), vec![2, 5, 10, 20]);
    }

    #[test]
    fn overrides() {
        let mut v = serde_json::json!({});
        apply_override(&mut v, "variant=RMD").unwrap();
        apply_override(&mut v, "tau=0.5").unwrap();
        apply_override(&mut v, "huq.enabled=true").unwrap();
        apply_override(&mut v, "sweep.tau_grid=[0.2,0.4]").unwrap();
        let c = RunConfig::from_json(v).unwrap();
        assert_eq!(c.fit.variant, Variant::Rmd);
        assert_eq!(c.fit.tau, 0.5);
        assert!(c.fit.huq.enabled);
        assert_eq!(c.sweep.tau_grid, vec![0.2, 0.4]);
        assert!(apply_override(&mut serde_json::json!({}), "novalue").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(serde_json::json!({"tua": 0.3})).unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
        assert!(RunConfig::from_json(serde_json::json!({"huq": {"enabeld": true}})).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut c = RunConfig::default();
        c.fit.tau = 0.1 + 0.2;
        c.fit.seed = u64::MAX;
        c.store = Some("/x/y.tmd".into());
        c.baseline_layer = Some(3);
        c.sweep.n_components_grid = Some(vec![1, 3]);
        assert_eq!(RunConfig::from_json(c.to_json()).unwrap(), c);
    }
}
