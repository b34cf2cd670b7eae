//! Experiment configuration, per-seed orchestration, sweeps and reports.

mod runner;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auxiliary::ProviderConfig;
use crate::error::{Error, Result};
use crate::factor::{DiffKind, DiffMethod, FactorConfig, LabelMode};
use crate::graph::synth::{generate, SynthConfig};
use crate::graph::{load_citation_dataset, CitationGraph, MaskMode};
use crate::nn::TrainConfig;
use crate::pseudo::LoopConfig;

pub use runner::{report, run, run_method, sweep, MethodOutcome, SweepKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gcn,
    SelfTrain,
    Intersection,
    Difac,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gcn => "gcn",
            Method::SelfTrain => "self_train",
            Method::Intersection => "intersection",
            Method::Difac => "difac",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Method::Gcn),
            "self_train" | "self-train" | "self_training" => Ok(Method::SelfTrain),
            "intersection" => Ok(Method::Intersection),
            "difac" => Ok(Method::Difac),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Where auxiliary description vectors come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuxSource {
    #[default]
    None,
    /// JSON-lines `{node_id, vector}` file.
    File { path: PathBuf },
    Stub { accuracy: f64, dim: usize },
    /// Remote provider; `texts` is a JSON object mapping node id to text.
    Remote { provider: ProviderConfig, texts: PathBuf },
}

impl FromStr for AuxSource {
    type Err = Error;

    /// `none`, `file:PATH`, `stub:ACC` or `remote` (provider settings then
    /// come from the config file).
    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(AuxSource::None);
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(AuxSource::File { path: path.into() });
        }
        if let Some(acc) = s.strip_prefix("stub:") {
            let accuracy = acc
                .parse()
                .map_err(|_| Error::Config(format!("bad stub accuracy {acc:?}")))?;
            return Ok(AuxSource::Stub { accuracy, dim: 64 });
        }
        if s == "remote" {
            return Ok(AuxSource::Remote {
                provider: ProviderConfig::default(),
                texts: PathBuf::from("texts.json"),
            });
        }
        Err(Error::Config(format!("unknown aux source {s:?}")))
    }
}

impl FromStr for DiffKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marker" => Ok(DiffKind::Marker),
            "reverse" | "random_reverse" => Ok(DiffKind::RandomReverse),
            "exchange" | "random_exchange" => Ok(DiffKind::RandomExchange),
            "pair_swap" | "swap" => Ok(DiffKind::PairSwap),
            other => Err(Error::Config(format!("unknown diff method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub per_class: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            per_class: 20,
            n_val: 500,
            n_test: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// `cora`, `citeseer`, any `<name>` with files in `data_dir`, or
    /// `synth-cora`/`synth-small` for generated graphs.
    pub dataset: String,
    pub data_dir: PathBuf,
    pub row_normalize: bool,
    pub methods: Vec<Method>,
    pub split: SplitConfig,
    pub factor: FactorConfig,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub train: TrainConfig,
    pub aux: AuxSource,
    pub mask_ratio: f64,
    pub mask_mode: MaskMode,
    /// Count only misclassified nodes above this confidence in conceit.
    pub conceit_threshold: Option<f64>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Concurrent (method, seed) runs.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "cora".into(),
            data_dir: PathBuf::from("data"),
            row_normalize: true,
            methods: vec![Method::Gcn, Method::Difac],
            split: SplitConfig::default(),
            factor: FactorConfig::default(),
            loop_config: LoopConfig::default(),
            train: TrainConfig::default(),
            aux: AuxSource::None,
            mask_ratio: 0.0,
            mask_mode: MaskMode::Columns,
            conceit_threshold: None,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn synthetic(&self) -> Option<SynthConfig> {
        match self.dataset.as_str() {
            "synth-cora" => Some(SynthConfig::cora_like(0)),
            "synth-small" => Some(SynthConfig::small(0)),
            _ => None,
        }
    }

    pub fn dataset_paths(&self) -> (PathBuf, PathBuf) {
        (
            self.data_dir.join(format!("{}.content", self.dataset)),
            self.data_dir.join(format!("{}.cites", self.dataset)),
        )
    }

    /// Checks everything that can fail before training starts.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if self.synthetic().is_none() {
            let (content, cites) = self.dataset_paths();
            for p in [&content, &cites] {
                if !p.is_file() {
                    return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
                }
            }
        }
        match &self.aux {
            AuxSource::File { path } if !path.is_file() => {
                return Err(Error::Config(format!("aux file {} does not exist", path.display())))
            }
            AuxSource::Remote { texts, provider } => {
                if !texts.is_file() {
                    return Err(Error::Config(format!("texts file {} does not exist", texts.display())));
                }
                provider.validate()?;
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask_ratio must be in [0,1], got {}", self.mask_ratio)));
        }
        self.loop_config.validate()?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn load_graph(&self) -> Result<CitationGraph> {
        if let Some(cfg) = self.synthetic() {
            return generate(&cfg);
        }
        let (content, cites) = self.dataset_paths();
        if self.row_normalize {
            load_citation_dataset(&content, &cites)
        } else {
            crate::graph::load_citation_dataset_with(&content, &cites, crate::graph::LoadOptions { row_normalize: false })
        }
    }

    /// SHA-256 of the canonical (key-sorted) JSON of everything that affects
    /// results. Seeds, output location and concurrency are excluded.
    pub fn digest(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            for key in ["seeds", "out_dir", "jobs"] {
                map.remove(key);
            }
        }
        Ok(hex::encode(Sha256::digest(canonical_json(&value).as_bytes())))
    }

    /// The config with everything seed-dependent set for `seed`.
    pub fn for_seed(&self, seed: u64) -> (TrainConfig, FactorConfig) {
        let train = TrainConfig { seed, ..self.train.clone() };
        let factor = FactorConfig {
            method: DiffMethod { seed, ..self.factor.method },
            ..self.factor.clone()
        };
        (train, factor)
    }
}

/// JSON with object keys sorted at every level.
pub fn canonical_json(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", serde_json::Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        serde_json::Value::Array(items) => {
            format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(","))
        }
        other => other.to_string(),
    }
}

/// The single-factor input used by the baselines: variant 0 is the raw
/// feature matrix.
pub fn baseline_factor() -> FactorConfig {
    FactorConfig {
        k: 1,
        method: DiffMethod {
            kind: DiffKind::RandomReverse,
            perturb_frac: 0.0,
            seed: 0,
        },
        label_mode: LabelMode::Extended,
        ..Default::default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub method: Method,
    pub seed: u64,
    pub run_id: String,
    /// Relative to the manifest's directory.
    pub record: PathBuf,
    pub status: RunStatus,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub code_version: String,
    /// Unix seconds when the manifest was first written.
    pub created: u64,
    pub config: ExperimentConfig,
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.status == RunStatus::Failed)
    }

    /// SHA-256 of the canonical JSON of the whole manifest.
    pub fn digest(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(hex::encode(Sha256::digest(canonical_json(&value).as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_key_order_and_seeds() {
        let a = ExperimentConfig::default();
        let json = a.to_json().unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let map = value.as_object_mut().unwrap();
        let mut reordered = serde_json::Map::new();
        let mut keys: Vec<String> = map.keys().cloned().collect();
        keys.reverse();
        for k in keys {
            reordered.insert(k.clone(), map[&k].clone());
        }
        let b = ExperimentConfig::from_json(&serde_json::Value::Object(reordered).to_string()).unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        let c = ExperimentConfig { seeds: vec![9], out_dir: "x".into(), ..a.clone() };
        assert_eq!(a.digest().unwrap(), c.digest().unwrap());
        let d = ExperimentConfig { mask_ratio: 0.5, ..a.clone() };
        assert_ne!(a.digest().unwrap(), d.digest().unwrap());
    }

    #[test]
    fn canonical_json_sorts_nested_keys() {
        let v: serde_json::Value = serde_json::from_str(r#"{"b":{"y":1,"x":[{"q":2,"p":3}]},"a":null}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":null,"b":{"x":[{"p":3,"q":2}],"y":1}}"#);
    }

    #[test]
    fn parsing_cli_values() {
        assert_eq!("stub:0.9".parse::<AuxSource>().unwrap(), AuxSource::Stub { accuracy: 0.9, dim: 64 });
        assert_eq!("file:a.jsonl".parse::<AuxSource>().unwrap(), AuxSource::File { path: "a.jsonl".into() });
        assert!("stub:x".parse::<AuxSource>().is_err());
        assert_eq!("reverse".parse::<DiffKind>().unwrap(), DiffKind::RandomReverse);
        assert_eq!("self_train".parse::<Method>().unwrap(), Method::SelfTrain);
        assert!("gat".parse::<Method>().is_err());
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let c = ExperimentConfig { data_dir: "/nonexistent".into(), ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let s = ExperimentConfig { dataset: "synth-small".into(), ..Default::default() };
        assert!(s.validate().is_ok());
        assert!(ExperimentConfig { seeds: vec![], ..s }.validate().is_err());
    }
}
