//! Auxiliary judgment factors built from per-node description vectors.
//!
//! Auxiliary factors never gate the consistency filter; they only add
//! `λ_acc · a` to the ranking score of nodes whose pseudo class they share.

mod provider;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CitationGraph, NormalizedAdjacency, SplitMasks};
use crate::linalg::{Csr, Matrix};
use crate::nn::{
    gcn_predict, log_softmax_slice, softmax_rows, train, Input, ModelParams, TrainConfig, TrainJob, TrainOutcome,
    Validation, WeightedTarget,
};
use crate::rng::seeded;

pub use provider::{fetch_descriptions, text_hash, CacheRecord, ProviderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Remote,
    Cache,
    Stub,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxVectorTable {
    pub node_ids: Vec<String>,
    /// One row per node, aligned with `node_ids`.
    pub vectors: Matrix<f32>,
    pub provenance: Vec<Provenance>,
    pub provider: String,
}

#[derive(Serialize, Deserialize)]
struct VectorLine {
    node_id: String,
    vector: Vec<f32>,
}

impl AuxVectorTable {
    pub fn n(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_ids.len() != self.vectors.rows() || self.provenance.len() != self.vectors.rows() {
            return Err(Error::Schema("aux table rows, ids and provenance disagree".into()));
        }
        if !self.vectors.is_finite() {
            return Err(Error::Schema("aux table contains non-finite entries".into()));
        }
        Ok(())
    }

    /// Reorders rows to follow the graph's node order.
    pub fn aligned_to(&self, graph: &CitationGraph) -> Result<AuxVectorTable> {
        let index: std::collections::HashMap<&str, usize> =
            self.node_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut vectors = Matrix::zeros(graph.n(), self.dim());
        let mut provenance = Vec::with_capacity(graph.n());
        for (v, id) in graph.node_ids.iter().enumerate() {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::Schema(format!("no auxiliary vector for node {id}")))?;
            vectors.row_mut(v).copy_from_slice(self.vectors.row(i));
            provenance.push(self.provenance[i]);
        }
        Ok(AuxVectorTable {
            node_ids: graph.node_ids.clone(),
            vectors,
            provenance,
            provider: self.provider.clone(),
        })
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for (id, i) in self.node_ids.iter().zip(0..) {
            let line = VectorLine {
                node_id: id.clone(),
                vector: self.vectors.row(i).to_vec(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }

    /// Reads `{node_id, vector}` lines, e.g. vectors produced elsewhere.
    pub fn read_jsonl(path: &Path, provider: &str) -> Result<AuxVectorTable> {
        let file = std::fs::File::open(path)?;
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let rec: VectorLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            match dim {
                None => dim = Some(rec.vector.len()),
                Some(d) if d != rec.vector.len() => {
                    return Err(parse_err(format!("vector length {} differs from {d}", rec.vector.len())))
                }
                _ => {}
            }
            ids.push(rec.node_id);
            data.extend(rec.vector);
        }
        let n = ids.len();
        let table = AuxVectorTable {
            provenance: vec![Provenance::File; n],
            vectors: Matrix::from_vec(n, dim.unwrap_or(0), data)?,
            node_ids: ids,
            provider: provider.to_string(),
        };
        table.validate()?;
        Ok(table)
    }
}

/// Synthetic description vectors with controlled class information: each
/// node embeds its true class centroid with probability `accuracy`, else a
/// uniformly drawn wrong class.
pub fn stub_descriptions(labels: &[usize], c: usize, accuracy: f64, dim: usize, seed: u64) -> Result<AuxVectorTable> {
    if c < 2 {
        return Err(Error::InvalidArgument("stub descriptions need at least two classes".into()));
    }
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(Error::InvalidArgument(format!("stub accuracy must be in [0, 1], got {accuracy}")));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("stub dimension must be >= 1".into()));
    }
    let mut rng = seeded(seed, 0x57ab);
    let centroids: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let noise = 0.5 / (dim as f64).sqrt();
    let mut data = Vec::with_capacity(labels.len() * dim);
    for &y in labels {
        if y >= c {
            return Err(Error::InvalidArgument(format!("label {y} >= {c}")));
        }
        let class = if rng.random::<f64>() < accuracy {
            y
        } else {
            let r = rng.random_range(0..c - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        };
        for &mu in &centroids[class] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((mu + noise * z) as f32);
        }
    }
    Ok(AuxVectorTable {
        node_ids: (0..labels.len()).map(|i| i.to_string()).collect(),
        vectors: Matrix::from_vec(labels.len(), dim, data)?,
        provenance: vec![Provenance::Stub; labels.len()],
        provider: format!("stub:{accuracy}"),
    })
}

/// Class distributions from one auxiliary factor, one row per node.
#[derive(Clone, Debug)]
pub struct AuxFactor {
    pub probs: Matrix<f32>,
    pub outcome: TrainOutcome,
}

impl AuxFactor {
    pub fn accuracy(&self, labels: &[usize], mask: &[usize]) -> Result<f64> {
        let predicted: Vec<usize> = (0..self.probs.rows()).map(|i| crate::factor::argmax(self.probs.row(i))).collect();
        crate::metrics::accuracy(&predicted, labels, mask)
    }
}

/// Predicted class and confidence per node for each auxiliary factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxFactorOutput {
    pub c: usize,
    /// `classes[k][node]`.
    pub classes: Vec<Vec<usize>>,
    /// `confidence[k][node]`, the max of factor `k`'s distribution.
    pub confidence: Vec<Vec<f64>>,
}

impl AuxFactorOutput {
    pub fn from_factors(factors: &[&AuxFactor]) -> Result<Self> {
        let first = factors
            .first()
            .ok_or_else(|| Error::InvalidArgument("no auxiliary factors".into()))?;
        let (n, c) = first.probs.shape();
        let mut classes = Vec::new();
        let mut confidence = Vec::new();
        for f in factors {
            if f.probs.shape() != (n, c) {
                return Err(Error::Shape {
                    op: "aux_output",
                    detail: format!("{:?} vs {:?}", f.probs.shape(), (n, c)),
                });
            }
            let ys: Vec<usize> = (0..n).map(|i| crate::factor::argmax(f.probs.row(i))).collect();
            confidence.push(ys.iter().enumerate().map(|(i, &y)| f.probs[(i, y)] as f64).collect());
            classes.push(ys);
        }
        Ok(Self { c, classes, confidence })
    }

    pub fn k_aux(&self) -> usize {
        self.classes.len()
    }

    /// `(class, confidence)` of every auxiliary factor for `node`.
    pub fn votes(&self, node: usize) -> Result<Vec<(usize, f64)>> {
        self.classes
            .iter()
            .zip(&self.confidence)
            .map(|(ys, cs)| {
                ys.get(node)
                    .map(|&y| (y, cs[node]))
                    .ok_or_else(|| Error::Contract(format!("auxiliary output has no node {node}")))
            })
            .collect()
    }
}

/// `s + λ·Σ_k [class_k = ŷ]·a_k`.
pub fn accountability_score(s: f64, y_hat: usize, votes: &[(usize, f64)], lambda_acc: f64) -> f64 {
    s + lambda_acc * votes.iter().filter(|(y, _)| *y == y_hat).map(|(_, a)| a).sum::<f64>()
}

fn supervised_targets(labels: &[usize], train: &[usize]) -> Vec<WeightedTarget> {
    let w = 1.0 / train.len() as f64;
    train
        .iter()
        .map(|&node| WeightedTarget {
            node,
            class: labels[node],
            weight: w,
        })
        .collect()
}

fn fit_and_predict(
    adj: Option<&Csr<f32>>,
    x: &Csr<f32>,
    labels: &[usize],
    c: usize,
    masks: &SplitMasks,
    config: &TrainConfig,
    stream: u64,
) -> Result<AuxFactor> {
    if masks.train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let job = TrainJob {
        adj,
        inputs: vec![Input::Sparse(x)],
        targets: vec![supervised_targets(labels, &masks.train)],
        output_dim: c,
    };
    let outcome = train(&job, config, None, stream, |p| {
        if masks.val.is_empty() {
            return Ok(None);
        }
        let (logits, _) = gcn_predict(p, adj, Input::Sparse(x), config.activation)?;
        let mut correct = 0;
        let mut loss = 0.0;
        for &v in &masks.val {
            let row = logits.row(v);
            correct += usize::from(crate::factor::argmax(row) == labels[v]);
            loss -= log_softmax_slice(row)[labels[v]] as f64;
        }
        Ok(Some(Validation {
            accuracy: correct as f64 / masks.val.len() as f64,
            loss: loss / masks.val.len() as f64,
        }))
    })?;
    let (logits, _) = gcn_predict(&outcome.params, adj, Input::Sparse(x), config.activation)?;
    Ok(AuxFactor {
        probs: softmax_rows(&logits),
        outcome,
    })
}

/// One-hidden-layer classifier on the description vectors alone.
pub fn train_desc_head(aux: &AuxVectorTable, labels: &[usize], c: usize, masks: &SplitMasks, config: &TrainConfig) -> Result<AuxFactor> {
    aux.validate()?;
    if aux.n() != labels.len() {
        return Err(Error::Shape {
            op: "train_desc_head",
            detail: format!("{} vectors for {} nodes", aux.n(), labels.len()),
        });
    }
    let config = TrainConfig { layers: 2, ..config.clone() };
    fit_and_predict(None, &Csr::from_dense(&aux.vectors), labels, c, masks, &config, 0xde5c)
}

/// GCN over `[x ‖ d]`.
pub fn train_combined_gcn(
    graph: &CitationGraph,
    adj: &NormalizedAdjacency,
    aux: &AuxVectorTable,
    masks: &SplitMasks,
    config: &TrainConfig,
) -> Result<AuxFactor> {
    aux.validate()?;
    if aux.n() != graph.n() || adj.n() != graph.n() {
        return Err(Error::Shape {
            op: "train_combined_gcn",
            detail: format!("{} vectors, {} adjacency rows, {} nodes", aux.n(), adj.n(), graph.n()),
        });
    }
    let x = Csr::from_dense(&graph.features.hconcat(&aux.vectors)?);
    fit_and_predict(Some(&adj.to_f32()), &x, &graph.labels, graph.c(), masks, config, 0xca7)
}

/// Both default auxiliary factors, description head first.
pub fn build_aux_output(
    graph: &CitationGraph,
    adj: &NormalizedAdjacency,
    aux: &AuxVectorTable,
    masks: &SplitMasks,
    config: &TrainConfig,
) -> Result<AuxFactorOutput> {
    let head = train_desc_head(aux, &graph.labels, graph.c(), masks, config)?;
    let combined = train_combined_gcn(graph, adj, aux, masks, config)?;
    AuxFactorOutput::from_factors(&[&head, &combined])
}

/// Widens layer-0 weights with zero rows for `extra` appended input columns.
pub fn pad_input_rows(params: &ModelParams<f32>, extra: usize) -> ModelParams<f32> {
    let mut out = params.clone();
    let w = &params.layers[0].weight;
    let mut data = w.as_slice().to_vec();
    data.extend(std::iter::repeat_n(0.0, extra * w.cols()));
    out.layers[0].weight = Matrix::from_vec(w.rows() + extra, w.cols(), data).expect("sized above");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synth::{generate, SynthConfig};
    use crate::graph::{normalize_adjacency, standard_split};
    use crate::nn::{initial_params, Activation};

    #[test]
    fn accountability_examples() {
        assert_eq!(accountability_score(0.6, 1, &[(0, 0.9), (2, 0.7)], 0.5), 0.6);
        assert!((accountability_score(0.6, 1, &[(1, 0.8), (1, 0.4)], 0.5) - 1.2).abs() < 1e-12);
        assert_eq!(accountability_score(0.6, 1, &[(1, 0.8)], 0.0), 0.6);
    }

    #[test]
    fn stub_is_deterministic_and_validated() {
        let labels: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let a = stub_descriptions(&labels, 3, 0.9, 16, 7).unwrap();
        let b = stub_descriptions(&labels, 3, 0.9, 16, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, stub_descriptions(&labels, 3, 0.9, 16, 8).unwrap());
        assert!(stub_descriptions(&labels, 3, -0.1, 16, 7).is_err());
        assert!(stub_descriptions(&labels, 3, 1.01, 16, 7).is_err());
    }

    fn head_accuracy(acc: f64, seed: u64) -> f64 {
        let n = 2000;
        let c = 4;
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let table = stub_descriptions(&labels, c, acc, 32, seed).unwrap();
        let masks = SplitMasks {
            train: (0..300).collect(),
            val: (300..400).collect(),
            test: (400..n).collect(),
            per_class_train: 75,
        };
        let config = TrainConfig { hidden: 32, dropout: 0.0, ..Default::default() };
        let head = train_desc_head(&table, &labels, c, &masks, &config).unwrap();
        let s = head.probs.row(0).iter().sum::<f32>();
        assert!((s - 1.0).abs() < 1e-6);
        head.accuracy(&labels, &masks.test).unwrap()
    }

    #[test]
    fn head_learns_informative_stub() {
        assert!(head_accuracy(1.0, 1) >= 0.99);
    }

    #[test]
    fn head_is_at_chance_on_uninformative_stub() {
        let acc = head_accuracy(0.25, 2);
        assert!((acc - 0.25).abs() <= 0.05, "accuracy {acc}");
    }

    #[test]
    fn zero_description_columns_leave_forward_unchanged() {
        let g = generate(&SynthConfig::small(0)).unwrap();
        let adj = normalize_adjacency(&g).to_f32();
        let zeros = Matrix::zeros(g.n(), 8);
        let config = TrainConfig::default();
        let base = initial_params(&config, g.d(), g.c(), 1);
        let widened = pad_input_rows(&base, 8);
        let x = Csr::from_dense(&g.features);
        let xd = Csr::from_dense(&g.features.hconcat(&zeros).unwrap());
        let (a, _) = gcn_predict(&base, Some(&adj), Input::Sparse(&x), Activation::Relu).unwrap();
        let (b, _) = gcn_predict(&widened, Some(&adj), Input::Sparse(&xd), Activation::Relu).unwrap();
        assert_eq!(a.max_abs_diff(&b), 0.0);
    }

    #[test]
    fn aux_output_votes() {
        let g = generate(&SynthConfig::small(1)).unwrap();
        let adj = normalize_adjacency(&g);
        let masks = standard_split(&g, 10, 50, 100, 0).unwrap();
        let table = stub_descriptions(&g.labels, g.c(), 0.9, 16, 0).unwrap();
        let config = TrainConfig { epochs: 30, hidden: 16, ..Default::default() };
        let out = build_aux_output(&g, &adj, &table, &masks, &config).unwrap();
        assert_eq!(out.k_aux(), 2);
        let votes = out.votes(3).unwrap();
        assert!(votes.iter().all(|&(y, a)| y < g.c() && a > 0.0 && a <= 1.0));
        assert!(out.votes(g.n()).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let labels = vec![0, 1, 1];
        let t = stub_descriptions(&labels, 2, 1.0, 4, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        t.write_jsonl(std::fs::File::create(&path).unwrap()).unwrap();
        let back = AuxVectorTable::read_jsonl(&path, "file").unwrap();
        assert_eq!(back.vectors, t.vectors);
        assert_eq!(back.node_ids, t.node_ids);
        std::fs::write(&path, "{\"node_id\":\"a\",\"vector\":[1.0]}\n{\"node_id\":\"b\",\"vector\":[1.0,2.0]}\n").unwrap();
        assert!(matches!(AuxVectorTable::read_jsonl(&path, "file"), Err(Error::Parse { line: 2, .. })));
    }
}
