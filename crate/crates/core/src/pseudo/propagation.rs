use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            iterations: 50,
        }
    }
}

/// Iterates `Y ← αÂY + (1−α)Y₀` from one-hot rows of the seed nodes and
/// returns row-normalized class scores. Rows that received no mass stay zero.
pub fn label_propagation(
    adj: &NormalizedAdjacency,
    seeds: &[(usize, usize)],
    c: usize,
    config: &PropagationConfig,
) -> Result<Matrix<f64>> {
    if !(0.0..1.0).contains(&config.alpha) {
        return Err(Error::InvalidArgument(format!("alpha must be in [0,1), got {}", config.alpha)));
    }
    let n = adj.n();
    let mut y0 = Matrix::zeros(n, c);
    for &(v, y) in seeds {
        if v >= n || y >= c {
            return Err(Error::InvalidArgument(format!("seed ({v}, {y}) outside {n}x{c}")));
        }
        y0[(v, y)] = 1.0;
    }
    let mut y = y0.clone();
    for _ in 0..config.iterations {
        let mut next = adj.matrix().spmm(&y)?;
        next.scale(config.alpha);
        for (a, b) in next.as_mut_slice().iter_mut().zip(y0.as_slice()) {
            *a += (1.0 - config.alpha) * b;
        }
        y = next;
    }
    for i in 0..n {
        let row = y.row_mut(i);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
    Ok(y)
}
