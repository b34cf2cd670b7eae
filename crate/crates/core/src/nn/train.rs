use super::adam::{adam_step, AdamConfig, AdamState};
use super::gcn::{backward, gcn_forward, Dropout, Input};
use super::loss::{weighted_cross_entropy, WeightedTarget};
use super::params::ModelParams;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::linalg::Csr;
use crate::rng::seeded;

/// Full-batch supervision for one shared network: each input variant comes
/// with its own weighted targets. Summing all weights to 1 gives a mean loss.
pub struct TrainJob<'a> {
    pub adj: Option<&'a Csr<f32>>,
    pub inputs: Vec<Input<'a, f32>>,
    pub targets: Vec<Vec<WeightedTarget>>,
    pub output_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validation {
    pub accuracy: f64,
    pub loss: f64,
}

impl Validation {
    fn beats(&self, other: &Validation) -> bool {
        self.accuracy > other.accuracy || (self.accuracy == other.accuracy && self.loss < other.loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    /// Training loss per epoch (train mode, regularizer included).
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
    pub best_validation: Option<Validation>,
}

pub fn initial_params(config: &TrainConfig, input_dim: usize, output_dim: usize, stream: u64) -> ModelParams<f32> {
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat_n(config.hidden, config.layers.saturating_sub(1)));
    dims.push(output_dim);
    ModelParams::glorot(&dims, config.bias, &mut seeded(config.seed, stream))
}

/// Adam on the summed weighted cross-entropy. When `validate` returns a
/// score, the best-scoring parameters are kept and training stops after
/// `patience` epochs without improvement.
pub fn train<F>(
    job: &TrainJob<'_>,
    config: &TrainConfig,
    init: Option<ModelParams<f32>>,
    stream: u64,
    mut validate: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&ModelParams<f32>) -> Result<Option<Validation>>,
{
    config.validate()?;
    if job.inputs.len() != job.targets.len() {
        return Err(Error::Shape {
            op: "train",
            detail: format!("{} inputs vs {} target groups", job.inputs.len(), job.targets.len()),
        });
    }
    let input_dim = job.inputs.first().map_or(0, |x| x.cols());
    let mut params = match init {
        Some(p) => p,
        None => initial_params(config, input_dim, job.output_dim, stream),
    };
    params.check()?;
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut rng = seeded(config.seed, stream ^ 0xd50);
    let wd = config.weight_decay as f32;

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(Validation, ModelParams<f32>, usize)> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        let mut total = params.zeros_like();
        let mut loss = 0.5 * config.weight_decay * params.layers[0].weight.frobenius_sq() as f64;
        let mut first = true;
        for (x, targets) in job.inputs.iter().zip(&job.targets) {
            if targets.is_empty() {
                continue;
            }
            let dropout = (config.dropout > 0.0).then_some(Dropout {
                rate: config.dropout,
                rng: &mut rng,
            });
            let (logits, trace) = gcn_forward(&params, job.adj, *x, config.activation, dropout)?;
            let (l, g) = weighted_cross_entropy(&logits, targets)?;
            loss += l;
            let grads = backward(&params, &trace, job.adj, &g, if first { wd } else { 0.0 })?;
            first = false;
            for (acc, g) in total.tensors_mut().into_iter().zip(grads.tensors()) {
                acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        history.push(loss);
        adam_step(&mut params, &total, &mut adam, config.lr);

        if let Some(v) = validate(&params)? {
            match &best {
                Some((b, _, _)) if !v.beats(b) => since_best += 1,
                _ => {
                    best = Some((v, params.clone(), epoch));
                    since_best = 0;
                }
            }
            if config.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    Ok(match best {
        Some((v, p, epoch)) => TrainOutcome {
            params: p,
            loss_history: history,
            best_epoch: epoch,
            best_validation: Some(v),
        },
        None => TrainOutcome {
            params,
            best_epoch: history.len().saturating_sub(1),
            loss_history: history,
            best_validation: None,
        },
    })
}
