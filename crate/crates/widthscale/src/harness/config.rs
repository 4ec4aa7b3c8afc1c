use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::limits::LimitVariant;
use crate::netcore::{ActivationConfig, InitDist};
use crate::scaling::{Anchors, RegionId, ScalingExponents};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    Minibatch,
}

/// How batches are drawn each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    pub mode: BatchMode,
    /// Minibatch size; ignored in full mode.
    pub size: usize,
    /// Draw separate batches for the output and input layer updates.
    pub independent: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            mode: BatchMode::Full,
            size: 64,
            independent: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Two unit-variance gaussian classes centred at `±mu e1`, features scaled by `1/√d_x`.
    Synthetic {
        d_x: usize,
        n_train: usize,
        n_test: usize,
        mu: f64,
        seed: u64,
    },
    /// Airplane vs automobile from the CIFAR-10 binary batches in `dir`.
    Cifar2 { dir: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            d_x: 20,
            n_train: 1024,
            n_test: 2000,
            mu: 1.5,
            seed: 0,
        }
    }
}

/// Steps at which metrics are recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cadence {
    /// `"log"`: 0, 1, 2, 5, 10, 20, 50, ... up to the final step, which is always included.
    Named(String),
    Steps(Vec<usize>),
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence::Named("log".into())
    }
}

impl Cadence {
    pub fn steps(&self, total: usize) -> Result<Vec<usize>> {
        let mut out = match self {
            Cadence::Named(name) if name == "log" => log_steps(total),
            Cadence::Named(name) => return Err(Error::config("cadence", format!("unknown cadence `{name}`"))),
            Cadence::Steps(list) => list.iter().copied().filter(|&s| s <= total).collect(),
        };
        out.push(0);
        out.push(total);
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

/// `0, 1, 2, 5, 10, 20, 50, ...` capped at `total`.
pub fn log_steps(total: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut decade = 1usize;
    'outer: loop {
        for m in [1, 2, 5] {
            let s = m * decade;
            if s > total {
                break 'outer;
            }
            out.push(s);
        }
        decade *= 10;
    }
    out.push(total);
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    #[default]
    Standard,
    Icmf,
}

/// Infinite-width simulators compared against the reference network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitKind {
    Ntk,
    Mf,
    Icmf,
    SymDefault,
    /// Sym-default dynamics started from zero output weights.
    Default,
}

impl LimitKind {
    pub const ALL: [LimitKind; 5] = [
        LimitKind::Ntk,
        LimitKind::Mf,
        LimitKind::Icmf,
        LimitKind::SymDefault,
        LimitKind::Default,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LimitKind::Ntk => "ntk",
            LimitKind::Mf => "mf",
            LimitKind::Icmf => "icmf",
            LimitKind::SymDefault => "sym-default",
            LimitKind::Default => "default",
        }
    }

    pub fn region_and_variant(self) -> (RegionId, LimitVariant) {
        match self {
            LimitKind::Ntk => (RegionId::Ntk, LimitVariant::Plain),
            LimitKind::Mf => (RegionId::MeanField, LimitVariant::Plain),
            LimitKind::Icmf => (RegionId::MeanField, LimitVariant::Icmf),
            LimitKind::SymDefault => (RegionId::SymDefault, LimitVariant::Plain),
            LimitKind::Default => (RegionId::SymDefault, LimitVariant::DefaultInit),
        }
    }
}

impl std::fmt::Display for LimitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitConfig {
    pub kinds: Vec<LimitKind>,
    /// Particles (evolving regimes) or Monte-Carlo draws (constant-kernel regimes).
    pub size: usize,
    /// Start particle clouds exactly at zero normalized logit.
    pub antithetic: bool,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            kinds: vec![LimitKind::Ntk, LimitKind::Mf, LimitKind::Icmf],
            size: 4096,
            antithetic: true,
        }
    }
}

/// Full description of a training experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Identifier written to every CSV row.
    pub name: String,
    pub scaling: ScalingExponents,
    pub anchors: Anchors,
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub batch: BatchConfig,
    pub dataset: DatasetSpec,
    /// Number of test inputs used for logit and kernel probes.
    pub probes: usize,
    pub cadence: Cadence,
    pub out: Option<PathBuf>,
    pub alpha: f64,
    pub variant: ModelVariant,
    pub init: InitDist,
    pub base_seed: u64,
    pub limit: LimitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            scaling: ScalingExponents::ntk(),
            anchors: Anchors::default(),
            widths: (7..=12).map(|k| 1usize << k).collect(),
            seeds: (0..10).collect(),
            steps: 2000,
            batch: BatchConfig::default(),
            dataset: DatasetSpec::default(),
            probes: 10,
            cadence: Cadence::default(),
            out: None,
            alpha: 0.2,
            variant: ModelVariant::Standard,
            init: InitDist::Gaussian,
            base_seed: 0,
            limit: LimitConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn activation(&self) -> Result<ActivationConfig> {
        ActivationConfig::new(self.alpha).map_err(|e| Error::config("alpha", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scaling.validate().map_err(|e| Error::config("scaling", e.to_string()))?;
        self.anchors.validate().map_err(|e| Error::config("anchors", e.to_string()))?;
        self.activation()?;
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("widths", "need at least one positive width"));
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("widths", "widths must be strictly ascending"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() || seeds.is_empty() {
            return Err(Error::config("seeds", "seeds must be non-empty and distinct"));
        }
        if self.batch.mode == BatchMode::Minibatch && self.batch.size == 0 {
            return Err(Error::config("batch.size", "minibatch size must be positive"));
        }
        if self.probes == 0 {
            return Err(Error::config("probes", "need at least one probe input"));
        }
        if self.variant == ModelVariant::Icmf && self.scaling != ScalingExponents::mean_field() {
            return Err(Error::config("variant", "the icmf variant trains at the mf scaling (-1, 1, 1)"));
        }
        if let DatasetSpec::Synthetic { d_x, n_train, n_test, mu, .. } = &self.dataset {
            if *d_x == 0 || *n_train == 0 || *n_test == 0 || !mu.is_finite() {
                return Err(Error::config("dataset", "synthetic data needs positive sizes and finite mu"));
            }
        }
        if self.limit.size == 0 || (self.limit.antithetic && self.limit.size % 2 != 0) {
            return Err(Error::config("limit.size", "must be positive, and even when antithetic"));
        }
        self.cadence.steps(self.steps)?;
        Ok(())
    }

    /// Parses a JSON document, reporting the first unknown key by its dotted path.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        if let Some(key) = unknown_key(&value, &template_for(&value), "") {
            return Err(Error::config(key, "unknown key"));
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::config("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Default configuration as JSON, with the dataset template matching the document's dataset kind.
fn template_for(value: &Value) -> Value {
    let mut t = RunConfig::default().to_value();
    if value.pointer("/dataset/kind").and_then(Value::as_str) == Some("cifar2") {
        t["dataset"] = serde_json::to_value(DatasetSpec::Cifar2 { dir: PathBuf::new() }).expect("serializes");
    }
    t
}

fn unknown_key(value: &Value, template: &Value, prefix: &str) -> Option<String> {
    let (Value::Object(obj), Value::Object(tmpl)) = (value, template) else {
        return None;
    };
    for (k, v) in obj {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match tmpl.get(k) {
            None => return Some(path),
            Some(t) => {
                if let Some(bad) = unknown_key(v, t, &path) {
                    return Some(bad);
                }
            }
        }
    }
    None
}

/// Sets `key` (dotted path) in `doc` to `raw`, parsed as JSON when possible and as a string otherwise.
/// Only keys present in the configuration schema are accepted.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let template = template_for(doc);
    let parts: Vec<&str> = key.split('.').collect();
    let mut tmpl = &template;
    for p in &parts {
        tmpl = tmpl.get(*p).ok_or_else(|| Error::config(key, "unknown key"))?;
    }
    let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    for (i, p) in parts.iter().enumerate() {
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert((*p).to_string(), parsed);
            return Ok(());
        }
        cur = obj.entry((*p).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_cadence() {
        assert_eq!(log_steps(2000), vec![0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000]);
        assert_eq!(log_steps(0), vec![0]);
        assert_eq!(Cadence::default().steps(7).unwrap(), vec![0, 1, 2, 5, 7]);
        assert_eq!(Cadence::Steps(vec![3, 9, 50]).steps(10).unwrap(), vec![0, 3, 9, 10]);
        assert!(Cadence::Named("linear".into()).steps(3).is_err());
    }

    #[test]
    fn round_trips_and_partial_documents() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_value(cfg.to_value()).unwrap();
        assert_eq!(back, cfg);
        let partial = RunConfig::from_json(r#"{"steps": 5, "batch": {"mode": "minibatch"}}"#).unwrap();
        assert_eq!(partial.steps, 5);
        assert_eq!(partial.batch.size, 64);
        let cifar = RunConfig::from_json(r#"{"dataset": {"kind": "cifar2", "dir": "/data"}}"#).unwrap();
        assert_eq!(cifar.dataset, DatasetSpec::Cifar2 { dir: "/data".into() });
    }

    #[test]
    fn unknown_keys_are_reported_by_path() {
        let err = RunConfig::from_json(r#"{"batch": {"sise": 3}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "batch.sise"), "{err}");
        let err = RunConfig::from_json(r#"{"dataset": {"kind": "cifar2", "dir": "x", "mu": 1}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "dataset.mu"), "{err}");
    }

    #[test]
    fn overrides() {
        let mut doc = RunConfig::default().to_value();
        apply_override(&mut doc, "widths", "[128]").unwrap();
        apply_override(&mut doc, "anchors.d_star", "64").unwrap();
        apply_override(&mut doc, "name", "fig").unwrap();
        let cfg = RunConfig::from_value(doc.clone()).unwrap();
        assert_eq!(cfg.widths, vec![128]);
        assert_eq!(cfg.anchors.d_star, 64);
        assert_eq!(cfg.name, "fig");
        assert!(matches!(apply_override(&mut doc, "anchors.dstar", "1"), Err(Error::Config { .. })));
    }

    #[test]
    fn validation() {
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.widths = vec![256, 128]));
        assert!(bad(|c| c.seeds = vec![1, 1]));
        assert!(bad(|c| c.alpha = 1.5));
        assert!(bad(|c| c.variant = ModelVariant::Icmf));
        assert!(!bad(|c| {
            c.variant = ModelVariant::Icmf;
            c.scaling = ScalingExponents::mean_field();
        }));
    }
}
