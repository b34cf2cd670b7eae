use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real};

/// Softmax of one row, stabilized by subtracting the row maximum.
pub fn softmax_slice<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax_slice<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        out.row_mut(i).copy_from_slice(&softmax_slice(logits.row(i)));
    }
    out
}

/// One supervised term: node, target class, weight in the summed loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedTarget {
    pub node: usize,
    pub class: usize,
    pub weight: f64,
}

/// `Σ w·(−log softmax(logits_node)[class])` and its gradient. Rows not
/// referenced by any target get zero gradient.
pub fn weighted_cross_entropy<T: Real>(logits: &Matrix<T>, targets: &[WeightedTarget]) -> Result<(f64, Matrix<T>)> {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0f64;
    for t in targets {
        if t.node >= logits.rows() || t.class >= logits.cols() {
            return Err(Error::Shape {
                op: "cross_entropy",
                detail: format!(
                    "target (node {}, class {}) outside {}x{}",
                    t.node,
                    t.class,
                    logits.rows(),
                    logits.cols()
                ),
            });
        }
        let row = logits.row(t.node);
        let logp = log_softmax_slice(row);
        loss -= t.weight * logp[t.class].as_f64();
        let w = T::from_f64(t.weight);
        let g = grad.row_mut(t.node);
        for (j, (gj, lp)) in g.iter_mut().zip(&logp).enumerate() {
            let onehot = if j == t.class { T::one() } else { T::zero() };
            *gj = *gj + w * (lp.exp() - onehot);
        }
    }
    Ok((loss, grad))
}

/// Mean negative log-likelihood over `mask`.
pub fn softmax_cross_entropy<T: Real>(logits: &Matrix<T>, targets: &[usize], mask: &[usize]) -> Result<(f64, Matrix<T>)> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("cross-entropy over an empty mask".into()));
    }
    let w = 1.0 / mask.len() as f64;
    let items: Vec<WeightedTarget> = mask
        .iter()
        .map(|&node| WeightedTarget {
            node,
            class: targets[node],
            weight: w,
        })
        .collect();
    weighted_cross_entropy(logits, &items)
}
