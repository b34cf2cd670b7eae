//! Citation graphs: loading from `.content`/`.cites` files, deterministic
//! splits, the symmetric-normalized propagation matrix and feature masking.

mod adjacency;
pub mod synth;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::seeded;

pub use adjacency::{normalize_adjacency, NormalizedAdjacency};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CitationGraph {
    pub features: Matrix<f32>,
    pub labels: Vec<usize>,
    /// Undirected pairs, each stored once in the orientation first seen.
    pub edges: Vec<(usize, usize)>,
    pub node_ids: Vec<String>,
    /// Label strings in index order (first appearance in the content file).
    pub class_names: Vec<String>,
    #[serde(default)]
    pub dropped_edges: usize,
}

impl CitationGraph {
    pub fn new(
        features: Matrix<f32>,
        labels: Vec<usize>,
        edges: Vec<(usize, usize)>,
        node_ids: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let g = Self {
            features,
            labels,
            edges,
            node_ids,
            class_names,
            dropped_edges: 0,
        };
        g.validate()?;
        Ok(g)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.features.rows() != n || self.node_ids.len() != n {
            return Err(Error::Schema(format!(
                "{} labels, {} feature rows, {} ids",
                n,
                self.features.rows(),
                self.node_ids.len()
            )));
        }
        if let Some(&(a, b)) = self.edges.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::Schema(format!("edge ({a},{b}) references a node >= {n}")));
        }
        if let Some((i, &y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= self.c()) {
            return Err(Error::Schema(format!("node {i} has label {y} >= {}", self.c())));
        }
        if !self.features.is_finite() {
            return Err(Error::Schema("non-finite feature value".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = self.node_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Schema(format!("duplicate node id {dup:?}")));
        }
        Ok(())
    }

    /// Scales each feature row to unit L1 norm; all-zero rows are left alone.
    pub fn row_normalize(&mut self) {
        for i in 0..self.n() {
            let row = self.features.row_mut(i);
            let s: f32 = row.iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    pub fn with_features(&self, features: Matrix<f32>) -> Self {
        Self {
            features,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    pub row_normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { row_normalize: true }
    }
}

/// Reads a `<name>.content` / `<name>.cites` pair with default options.
pub fn load_citation_dataset(content_path: &Path, cites_path: &Path) -> Result<CitationGraph> {
    load_citation_dataset_with(content_path, cites_path, LoadOptions::default())
}

pub fn load_citation_dataset_with(
    content_path: &Path,
    cites_path: &Path,
    opts: LoadOptions,
) -> Result<CitationGraph> {
    let content = fs::read_to_string(content_path)?;
    let mut node_ids = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;

    for (lineno, line) in content.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: content_path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        if toks.len() < 2 {
            return Err(parse_err("expected `<id> <features...> <label>`".into()));
        }
        let d = toks.len() - 2;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(Error::Schema(format!(
                    "{}:{}: row has {d} features, expected {w}",
                    content_path.display(),
                    lineno + 1
                )))
            }
            _ => {}
        }
        let id = toks[0].to_string();
        if index.contains_key(&id) {
            return Err(parse_err(format!("duplicate node id {id:?}")));
        }
        for tok in &toks[1..toks.len() - 1] {
            let v: f32 = tok
                .parse()
                .map_err(|_| parse_err(format!("bad feature value {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite feature value {tok:?}")));
            }
            data.push(v);
        }
        let label = toks[toks.len() - 1];
        let y = *class_index.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            class_names.len() - 1
        });
        index.insert(id.clone(), node_ids.len());
        node_ids.push(id);
        labels.push(y);
    }

    let n = node_ids.len();
    let features = Matrix::from_vec(n, width.unwrap_or(0), data)?;

    let cites = fs::read_to_string(cites_path)?;
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped = 0usize;
    for (lineno, line) in cites.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return Err(Error::Parse {
                path: cites_path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected `<cited> <citing>`, got {} fields", toks.len()),
            });
        }
        match (index.get(toks[0]), index.get(toks[1])) {
            (Some(&a), Some(&b)) => {
                if seen.insert((a.min(b), a.max(b))) {
                    edges.push((a, b));
                }
            }
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} citation rows referencing unknown ids",
            cites_path.display()
        );
    }

    let mut g = CitationGraph::new(features, labels, edges, node_ids, class_names)?;
    g.dropped_edges = dropped;
    if opts.row_normalize {
        g.row_normalize();
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub per_class_train: usize,
}

impl SplitMasks {
    /// Every node outside the training set.
    pub fn unlabeled(&self, n: usize) -> Vec<usize> {
        let train: HashSet<usize> = self.train.iter().copied().collect();
        (0..n).filter(|i| !train.contains(i)).collect()
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .all(|&i| seen.insert(i))
    }
}

/// Per-class training nodes, then validation and test nodes, all drawn from
/// one seed-shuffled node order.
pub fn standard_split(
    graph: &CitationGraph,
    per_class: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitMasks> {
    let n = graph.n();
    let c = graph.c();
    if per_class * c + n_val + n_test > n {
        return Err(Error::Split(format!(
            "{per_class}x{c} train + {n_val} val + {n_test} test exceeds {n} nodes"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, 0x5911));

    let mut taken = vec![0usize; c];
    let mut train = Vec::with_capacity(per_class * c);
    let mut rest = Vec::with_capacity(n);
    for &i in &order {
        let y = graph.labels[i];
        if taken[y] < per_class {
            taken[y] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    if let Some(y) = taken.iter().position(|&t| t < per_class) {
        return Err(Error::Split(format!(
            "class {y} ({}) has only {} nodes, {per_class} requested",
            graph.class_names[y], taken[y]
        )));
    }
    let mut val = rest[..n_val].to_vec();
    let mut test = rest[n_val..n_val + n_test].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitMasks {
        train,
        val,
        test,
        per_class_train: per_class,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// The same feature columns are zeroed for every node.
    #[default]
    Columns,
    /// Each node gets its own random set of zeroed dimensions.
    PerNode,
}

pub fn mask_features(graph: &CitationGraph, ratio: f64, seed: u64) -> CitationGraph {
    mask_features_with(graph, ratio, seed, MaskMode::Columns)
}

/// Zeroes `floor(ratio * d)` feature dimensions.
pub fn mask_features_with(graph: &CitationGraph, ratio: f64, seed: u64, mode: MaskMode) -> CitationGraph {
    let d = graph.d();
    let count = ((ratio.clamp(0.0, 1.0) * d as f64).floor() as usize).min(d);
    let mut rng = seeded(seed, 0x3a5c);
    let mut features = graph.features.clone();
    let mut cols: Vec<usize> = (0..d).collect();
    match mode {
        MaskMode::Columns => {
            cols.shuffle(&mut rng);
            for i in 0..graph.n() {
                let row = features.row_mut(i);
                for &j in &cols[..count] {
                    row[j] = 0.0;
                }
            }
        }
        MaskMode::PerNode => {
            for i in 0..graph.n() {
                let (chosen, _) = cols.partial_shuffle(&mut rng, count);
                let row = features.row_mut(i);
                for &j in chosen.iter() {
                    row[j] = 0.0;
                }
            }
        }
    }
    graph.with_features(features)
}
