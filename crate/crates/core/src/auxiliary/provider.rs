use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AuxVectorTable, Provenance};
use crate::error::{Error, Result};
use crate::graph::CitationGraph;
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    /// Sent as `model` in the request body when set.
    pub model: Option<String>,
    /// Part of the cache key; distinguishes vector spaces.
    pub provider_id: String,
    /// Environment variable holding a bearer token.
    pub auth_env: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub cache_path: PathBuf,
    pub dim: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/embed".into(),
            model: None,
            provider_id: "remote".into(),
            auth_env: Some("DIFAC_PROVIDER_TOKEN".into()),
            timeout_secs: 30.0,
            retries: 3,
            backoff_ms: 200,
            cache_path: PathBuf::from("aux_cache.jsonl"),
            dim: 256,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config(format!("timeout must be > 0, got {}", self.timeout_secs)));
        }
        if self.dim == 0 {
            return Err(Error::Config("embedding dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// One cache line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub node_id: String,
    pub provider: String,
    pub text_hash: String,
    pub vector: Vec<f32>,
}

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

type CacheKey = (String, String, String);

fn load_cache(config: &ProviderConfig) -> Result<HashMap<CacheKey, Vec<f32>>> {
    let mut map = HashMap::new();
    let file = match std::fs::File::open(&config.cache_path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(map),
        Err(e) => return Err(e.into()),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CacheRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Cache(format!("{}:{}: {e}", config.cache_path.display(), i + 1)))?;
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Cache(format!("{}:{}: non-finite vector", config.cache_path.display(), i + 1)));
        }
        // later lines win, so a re-fetched vector supersedes an older one
        map.insert((rec.node_id, rec.provider, rec.text_hash), rec.vector);
    }
    Ok(map)
}

/// Finds the first array of numbers anywhere in a response body.
fn extract_vector(value: &serde_json::Value) -> Option<Vec<f32>> {
    match value {
        serde_json::Value::Array(items) if !items.is_empty() && items.iter().all(|v| v.is_number()) => {
            items.iter().map(|v| v.as_f64().map(|x| x as f32)).collect()
        }
        serde_json::Value::Array(items) => items.iter().find_map(extract_vector),
        serde_json::Value::Object(map) => ["embedding", "vector", "data"]
            .iter()
            .filter_map(|k| map.get(*k))
            .chain(map.values())
            .find_map(extract_vector),
        _ => None,
    }
}

fn request_once(client: &reqwest::blocking::Client, config: &ProviderConfig, token: Option<&str>, text: &str) -> std::result::Result<Vec<f32>, String> {
    let mut body = serde_json::json!({ "input": text });
    if let Some(model) = &config.model {
        body["model"] = serde_json::Value::String(model.clone());
    }
    let mut req = client.post(&config.endpoint).json(&body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().map_err(|e| e.to_string())?;
    let status = resp.status();
    if !status.is_success() {
        return Err(format!("HTTP {status}"));
    }
    let value: serde_json::Value = resp.json().map_err(|e| e.to_string())?;
    let vector = extract_vector(&value).ok_or("response has no numeric vector")?;
    if vector.len() != config.dim {
        return Err(format!("vector length {} != configured {}", vector.len(), config.dim));
    }
    if vector.iter().any(|v| !v.is_finite()) {
        return Err("non-finite vector".into());
    }
    Ok(vector)
}

/// Description vectors for every node of `graph`, served from the cache when
/// `(node_id, provider, sha256(text))` is present, otherwise fetched and
/// appended to the cache.
pub fn fetch_descriptions(config: &ProviderConfig, graph: &CitationGraph, texts: &HashMap<String, String>) -> Result<AuxVectorTable> {
    config.validate()?;
    if let Some(id) = graph.node_ids.iter().find(|id| !texts.contains_key(*id)) {
        return Err(Error::InvalidArgument(format!("no description text for node {id}")));
    }
    let cache = load_cache(config)?;
    let mut vectors = Matrix::zeros(graph.n(), config.dim);
    let mut provenance = vec![Provenance::Cache; graph.n()];
    let mut pending = Vec::new();
    for (v, id) in graph.node_ids.iter().enumerate() {
        let key = (id.clone(), config.provider_id.clone(), text_hash(&texts[id]));
        match cache.get(&key) {
            Some(vec) if vec.len() == config.dim => vectors.row_mut(v).copy_from_slice(vec),
            Some(vec) => {
                return Err(Error::Cache(format!(
                    "cached vector for node {id} has length {}, expected {}",
                    vec.len(),
                    config.dim
                )))
            }
            None => pending.push((v, key)),
        }
    }

    if !pending.is_empty() {
        let token = match &config.auth_env {
            Some(var) => std::env::var(var).ok(),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Fetch { msg: e.to_string(), missing: vec![] })?;
        if let Some(dir) = config.cache_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut writer = OpenOptions::new().create(true).append(true).open(&config.cache_path)?;
        let mut missing = Vec::new();
        let mut last_error = String::new();
        for (v, (id, provider, hash)) in pending {
            let mut result = Err(String::new());
            for attempt in 0..=config.retries {
                if attempt > 0 {
                    std::thread::sleep(Duration::from_millis(config.backoff_ms << (attempt - 1).min(6)));
                }
                result = request_once(&client, config, token.as_deref(), &texts[&id]);
                if result.is_ok() {
                    break;
                }
            }
            match result {
                Ok(vec) => {
                    let rec = CacheRecord { node_id: id, provider, text_hash: hash, vector: vec };
                    writeln!(writer, "{}", serde_json::to_string(&rec)?)?;
                    writer.flush()?;
                    vectors.row_mut(v).copy_from_slice(&rec.vector);
                    provenance[v] = Provenance::Remote;
                }
                Err(e) => {
                    log::warn!("fetch failed for node {id}: {e}");
                    last_error = e;
                    missing.push(id);
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Fetch { msg: last_error, missing });
        }
    }

    Ok(AuxVectorTable {
        node_ids: graph.node_ids.clone(),
        vectors,
        provenance,
        provider: config.provider_id.clone(),
    })
}
