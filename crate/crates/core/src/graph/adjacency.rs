use serde::{Deserialize, Serialize};

use super::CitationGraph;
use crate::linalg::Csr;

/// `D^-1/2 (A + I) D^-1/2` over the symmetrized edge set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAdjacency {
    matrix: Csr<f64>,
}

impl NormalizedAdjacency {
    /// The identity propagation, which turns a GCN into a plain MLP.
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: Csr::identity(n),
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Csr<f64> {
        &self.matrix
    }

    pub fn to_f32(&self) -> Csr<f32> {
        self.matrix.cast()
    }
}

pub fn normalize_adjacency(graph: &CitationGraph) -> NormalizedAdjacency {
    let n = graph.n();
    let mut pairs: Vec<(usize, usize)> = graph
        .edges
        .iter()
        .filter(|(a, b)| a != b)
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .chain((0..n).map(|i| (i, i)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();

    let mut degree = vec![0usize; n];
    for &(a, _) in &pairs {
        degree[a] += 1;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
    let triplets = pairs
        .into_iter()
        .map(|(a, b)| (a, b, inv_sqrt[a] * inv_sqrt[b]))
        .collect();
    NormalizedAdjacency {
        matrix: Csr::from_triplets(n, n, triplets).expect("edge endpoints validated by the graph"),
    }
}
