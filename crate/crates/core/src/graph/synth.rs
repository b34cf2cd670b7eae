//! Synthetic citation-like graphs: class-conditional bag-of-words features
//! over a homophilous random graph. Used for fixtures and offline runs.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CitationGraph;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    /// Words drawn per document (duplicates collapse, so rows are binary).
    pub words_per_node: usize,
    /// Size of each class's preferred vocabulary.
    pub topic_size: usize,
    /// Probability that a drawn word comes from the document's class topic.
    pub topic_fraction: f64,
    pub avg_degree: f64,
    /// Probability that an edge joins two nodes of the same class.
    pub homophily: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Matches Cora's node, feature and class counts.
    pub fn cora_like(seed: u64) -> Self {
        Self {
            n: 2708,
            d: 1433,
            c: 7,
            words_per_node: 18,
            topic_size: 120,
            topic_fraction: 0.22,
            avg_degree: 3.9,
            homophily: 0.8,
            seed,
        }
    }

    /// A few hundred nodes; fast enough for unit tests.
    pub fn small(seed: u64) -> Self {
        Self {
            n: 300,
            d: 120,
            c: 3,
            words_per_node: 10,
            topic_size: 20,
            topic_fraction: 0.3,
            avg_degree: 4.0,
            homophily: 0.8,
            seed,
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<CitationGraph> {
    if cfg.c == 0 || cfg.n < cfg.c || cfg.d == 0 || cfg.topic_size > cfg.d {
        return Err(Error::InvalidArgument(format!("degenerate synthetic config {cfg:?}")));
    }
    let mut rng = seeded(cfg.seed, 0x5e7);
    let labels: Vec<usize> = (0..cfg.n).map(|i| if i < cfg.c { i } else { rng.random_range(0..cfg.c) }).collect();

    let mut vocab: Vec<usize> = (0..cfg.d).collect();
    let topics: Vec<Vec<usize>> = (0..cfg.c)
        .map(|_| {
            vocab.shuffle(&mut rng);
            vocab[..cfg.topic_size].to_vec()
        })
        .collect();

    let mut features = Matrix::zeros(cfg.n, cfg.d);
    for (i, &y) in labels.iter().enumerate() {
        let row = features.row_mut(i);
        for _ in 0..cfg.words_per_node {
            let w = if rng.random::<f64>() < cfg.topic_fraction {
                *topics[y].choose(&mut rng).expect("non-empty topic")
            } else {
                rng.random_range(0..cfg.d)
            };
            row[w] = 1.0;
        }
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); cfg.c];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let target = ((cfg.n as f64 * cfg.avg_degree) / 2.0).round() as usize;
    let mut seen = HashSet::new();
    let mut edges = Vec::with_capacity(target);
    let mut attempts = 0usize;
    while edges.len() < target && attempts < target * 20 {
        attempts += 1;
        let a = rng.random_range(0..cfg.n);
        let b = if rng.random::<f64>() < cfg.homophily {
            *by_class[labels[a]].choose(&mut rng).expect("class of a is non-empty")
        } else {
            rng.random_range(0..cfg.n)
        };
        if a != b && seen.insert((a.min(b), a.max(b))) {
            edges.push((a, b));
        }
    }

    CitationGraph::new(
        features,
        labels,
        edges,
        (0..cfg.n).map(|i| format!("n{i}")).collect(),
        (0..cfg.c).map(|y| format!("topic_{y}")).collect(),
    )
}

/// Writes `<dir>/<name>.content` and `<dir>/<name>.cites`.
pub fn write_dataset(graph: &CitationGraph, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let content_path = dir.join(format!("{name}.content"));
    let cites_path = dir.join(format!("{name}.cites"));
    let mut w = BufWriter::new(fs::File::create(&content_path)?);
    for i in 0..graph.n() {
        write!(w, "{}", graph.node_ids[i])?;
        for v in graph.features.row(i) {
            write!(w, "\t{v}")?;
        }
        writeln!(w, "\t{}", graph.class_names[graph.labels[i]])?;
    }
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(&cites_path)?);
    for &(a, b) in &graph.edges {
        writeln!(w, "{}\t{}", graph.node_ids[a], graph.node_ids[b])?;
    }
    w.flush()?;
    Ok((content_path, cites_path))
}
