use rand::seq::index::sample;

use super::gcn::{backward, gcn_predict, Activation, Input};
use super::loss::softmax_cross_entropy;
use super::params::ModelParams;
use crate::error::Result;
use crate::linalg::Csr;
use crate::rng::seeded;

/// Absolute gradients below this are compared absolutely rather than
/// relatively.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckProblem<'a> {
    pub adj: Option<&'a Csr<f64>>,
    pub x: Input<'a, f64>,
    pub targets: &'a [usize],
    pub mask: &'a [usize],
    pub activation: Activation,
    pub weight_decay: f64,
}

impl GradCheckProblem<'_> {
    /// Mean cross-entropy over the mask plus `wd/2·‖θ_1‖²`.
    pub fn loss(&self, params: &ModelParams<f64>) -> Result<f64> {
        let (logits, _) = gcn_predict(params, self.adj, self.x, self.activation)?;
        let (ce, _) = softmax_cross_entropy(&logits, self.targets, self.mask)?;
        Ok(ce + 0.5 * self.weight_decay * params.layers[0].weight.frobenius_sq())
    }

    pub fn analytic(&self, params: &ModelParams<f64>) -> Result<ModelParams<f64>> {
        let (logits, trace) = gcn_predict(params, self.adj, self.x, self.activation)?;
        let (_, g) = softmax_cross_entropy(&logits, self.targets, self.mask)?;
        backward(params, &trace, self.adj, &g, self.weight_decay)
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over `samples` random coordinates (all when `None`).
pub fn gradient_check(
    params: &ModelParams<f64>,
    problem: &GradCheckProblem<'_>,
    eps: f64,
    samples: Option<usize>,
    seed: u64,
) -> Result<f64> {
    let analytic: Vec<f64> = problem.analytic(params)?.tensors().concat();
    let total = analytic.len();
    let coords: Vec<usize> = match samples {
        Some(k) if k < total => {
            let mut idx = sample(&mut seeded(seed, 0x6c), total, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..total).collect(),
    };

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for &c in &coords {
        let original = flat_get(&probe, c);
        flat_set(&mut probe, c, original + eps);
        let plus = problem.loss(&probe)?;
        flat_set(&mut probe, c, original - eps);
        let minus = problem.loss(&probe)?;
        flat_set(&mut probe, c, original);
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[c];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn flat_get(p: &ModelParams<f64>, mut idx: usize) -> f64 {
    for t in p.tensors() {
        if idx < t.len() {
            return t[idx];
        }
        idx -= t.len();
    }
    panic!("coordinate out of range")
}

fn flat_set(p: &mut ModelParams<f64>, mut idx: usize, v: f64) {
    for t in p.tensors_mut() {
        if idx < t.len() {
            t[idx] = v;
            return;
        }
        idx -= t.len();
    }
    panic!("coordinate out of range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, CitationGraph};
    use crate::linalg::Matrix;
    use rand::Rng;

    struct Fixture {
        adj: Csr<f64>,
        x: Matrix<f64>,
        labels: Vec<usize>,
        params: ModelParams<f64>,
    }

    fn fixture(seed: u64, hidden: usize) -> Fixture {
        let mut rng = seeded(seed, 0);
        let n = 8;
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 4), (2, 6)];
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let g = CitationGraph::new(
            Matrix::zeros(n, 1),
            labels.clone(),
            edges,
            (0..n).map(|i| i.to_string()).collect(),
            (0..3).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let adj = normalize_adjacency(&g).matrix().clone();
        let x = Matrix::from_vec(n, 5, (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut params = ModelParams::glorot(&[5, hidden, 3], true, &mut rng);
        for b in params.layers.iter_mut().filter_map(|l| l.bias.as_mut()) {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
        Fixture { adj, x, labels, params }
    }

    #[test]
    fn relu_model_passes() {
        let f = fixture(11, 4);
        let mask = [0, 1, 2, 5, 7];
        let problem = GradCheckProblem {
            adj: Some(&f.adj),
            x: Input::Dense(&f.x),
            targets: &f.labels,
            mask: &mask,
            activation: Activation::Relu,
            weight_decay: 5e-4,
        };
        let err = gradient_check(&f.params, &problem, 1e-5, None, 0).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn linear_model_is_tighter() {
        let f = fixture(5, 4);
        let mask: Vec<usize> = (0..8).collect();
        let problem = GradCheckProblem {
            adj: Some(&f.adj),
            x: Input::Dense(&f.x),
            targets: &f.labels,
            mask: &mask,
            activation: Activation::Linear,
            weight_decay: 0.0,
        };
        let err = gradient_check(&f.params, &problem, 1e-5, None, 0).unwrap();
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn step_size_does_not_flip_verdict() {
        let f = fixture(2, 4);
        let mask = [1, 3, 4, 6];
        let problem = GradCheckProblem {
            adj: Some(&f.adj),
            x: Input::Dense(&f.x),
            targets: &f.labels,
            mask: &mask,
            activation: Activation::Tanh,
            weight_decay: 1e-3,
        };
        let a = gradient_check(&f.params, &problem, 1e-5, Some(30), 1).unwrap();
        let b = gradient_check(&f.params, &problem, 1e-6, Some(30), 1).unwrap();
        assert_eq!(a < 1e-4, b < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn mlp_and_sparse_input_pass() {
        let f = fixture(8, 3);
        let xs = Csr::from_dense(&f.x);
        let mask = [0, 2, 4, 6];
        for adj in [None, Some(&f.adj)] {
            let problem = GradCheckProblem {
                adj,
                x: Input::Sparse(&xs),
                targets: &f.labels,
                mask: &mask,
                activation: Activation::Relu,
                weight_decay: 5e-4,
            };
            let err = gradient_check(&f.params, &problem, 1e-5, None, 0).unwrap();
            assert!(err < 1e-4, "max rel err {err}");
        }
    }
}
