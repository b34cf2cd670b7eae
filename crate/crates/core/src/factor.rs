//! Differentiated factors hosted in one network.
//!
//! `K` variants of the feature matrix are built from the same source (a
//! one-hot tag block, or a seeded perturbation of a few columns), and the
//! label space is extended to `K·C` classes with factor `k` owning the block
//! `[kC, (k+1)C)`. A single shared GCN trained on all variants then behaves
//! as `K` distinct classifiers selected by the input.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CitationGraph, NormalizedAdjacency, SplitMasks};
use crate::linalg::{Csr, Matrix};
use crate::nn::{
    gcn_predict, log_softmax_slice, softmax_slice, train, Activation, Input, ModelParams, TrainConfig, TrainJob,
    TrainOutcome, Validation, WeightedTarget,
};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffKind {
    /// Append a `K`-wide one-hot tag block.
    #[default]
    Marker,
    /// Reflect a random subset of columns, `v → max_col − v`.
    RandomReverse,
    /// Permute a random subset of columns, identically for all rows.
    RandomExchange,
    /// Swap random column pairs.
    PairSwap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffMethod {
    pub kind: DiffKind,
    /// Fraction of columns touched by the perturbation kinds.
    pub perturb_frac: f64,
    pub seed: u64,
}

impl Default for DiffMethod {
    fn default() -> Self {
        Self {
            kind: DiffKind::Marker,
            perturb_frac: 0.05,
            seed: 0,
        }
    }
}

/// How training targets differ between factors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Factor `k` is trained toward class `k·C + y`.
    #[default]
    Extended,
    /// Every factor shares the same `C` outputs.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorConfig {
    pub k: usize,
    pub method: DiffMethod,
    pub label_mode: LabelMode,
    /// Largest output layer the network may have.
    pub output_cap: usize,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            k: 3,
            method: DiffMethod::default(),
            label_mode: LabelMode::Extended,
            output_cap: 512,
        }
    }
}

/// Everything needed to rebuild the variants exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRecipe {
    pub k: usize,
    pub c: usize,
    pub method: DiffMethod,
    pub label_mode: LabelMode,
    pub base_dim: usize,
    /// Columns perturbed for each variant (empty for variant 0 and markers).
    pub columns: Vec<Vec<usize>>,
    /// Source column for each entry of `columns` (exchange kinds only).
    pub sources: Vec<Vec<usize>>,
}

impl FactorRecipe {
    pub fn output_dim(&self) -> usize {
        match self.label_mode {
            LabelMode::Extended => self.k * self.c,
            LabelMode::Shared => self.c,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.method.kind {
            DiffKind::Marker => self.base_dim + self.k,
            _ => self.base_dim,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug)]
pub struct FactorizedInput {
    pub variants: Vec<Csr<f32>>,
    pub recipe: FactorRecipe,
}

impl FactorizedInput {
    pub fn k(&self) -> usize {
        self.recipe.k
    }

    pub fn inputs(&self) -> Vec<Input<'_, f32>> {
        self.variants.iter().map(Input::Sparse).collect()
    }
}

pub fn build_factor_inputs(x: &Matrix<f32>, c: usize, config: &FactorConfig) -> Result<FactorizedInput> {
    let k = config.k;
    if k == 0 {
        return Err(Error::InvalidArgument("factor count must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&config.method.perturb_frac) {
        return Err(Error::InvalidArgument(format!(
            "perturb_frac must be in [0,1], got {}",
            config.method.perturb_frac
        )));
    }
    let mut recipe = FactorRecipe {
        k,
        c,
        method: config.method,
        label_mode: config.label_mode,
        base_dim: x.cols(),
        columns: vec![Vec::new(); k],
        sources: vec![Vec::new(); k],
    };
    if recipe.output_dim() > config.output_cap {
        return Err(Error::Capacity(format!(
            "{} outputs ({k} factors x {c} classes) exceed the cap of {}",
            recipe.output_dim(),
            config.output_cap
        )));
    }

    let d = x.cols();
    let count = (config.method.perturb_frac * d as f64).floor() as usize;
    for v in 1..k {
        let mut rng = seeded(config.method.seed, 0xfac0 + v as u64);
        let mut cols: Vec<usize> = (0..d).collect();
        cols.shuffle(&mut rng);
        let chosen = cols[..count].to_vec();
        let sources = match config.method.kind {
            DiffKind::RandomExchange => {
                let mut s = chosen.clone();
                s.shuffle(&mut rng);
                s
            }
            DiffKind::PairSwap => {
                let mut s = chosen.clone();
                for pair in s.chunks_exact_mut(2) {
                    pair.swap(0, 1);
                }
                s
            }
            _ => Vec::new(),
        };
        if config.method.kind != DiffKind::Marker {
            recipe.columns[v] = chosen;
            recipe.sources[v] = sources;
        }
    }
    let variants = realize(x, &recipe)?;
    Ok(FactorizedInput { variants, recipe })
}

/// Rebuilds the variant matrices from a recipe.
pub fn realize(x: &Matrix<f32>, recipe: &FactorRecipe) -> Result<Vec<Csr<f32>>> {
    if x.cols() != recipe.base_dim {
        return Err(Error::Shape {
            op: "realize",
            detail: format!("features have {} columns, recipe {}", x.cols(), recipe.base_dim),
        });
    }
    let n = x.rows();
    let col_max: Vec<f32> = (0..x.cols())
        .map(|j| (0..n).map(|i| x[(i, j)]).fold(f32::NEG_INFINITY, f32::max))
        .collect();
    (0..recipe.k)
        .map(|v| match recipe.method.kind {
            DiffKind::Marker => {
                let tagged = x.hconcat(&{
                    let mut tag = Matrix::zeros(n, recipe.k);
                    for i in 0..n {
                        tag[(i, v)] = 1.0;
                    }
                    tag
                })?;
                Ok(Csr::from_dense(&tagged))
            }
            DiffKind::RandomReverse => {
                let mut m = x.clone();
                for &j in &recipe.columns[v] {
                    for i in 0..n {
                        m[(i, j)] = col_max[j] - x[(i, j)];
                    }
                }
                Ok(Csr::from_dense(&m))
            }
            DiffKind::RandomExchange | DiffKind::PairSwap => {
                let mut m = x.clone();
                for (&dst, &src) in recipe.columns[v].iter().zip(&recipe.sources[v]) {
                    for i in 0..n {
                        m[(i, dst)] = x[(i, src)];
                    }
                }
                Ok(Csr::from_dense(&m))
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtendedLabels {
    pub k: usize,
    pub c: usize,
}

impl ExtendedLabels {
    pub fn encode(&self, factor: usize, y: usize) -> Result<usize> {
        if factor >= self.k || y >= self.c {
            return Err(Error::InvalidArgument(format!(
                "(factor {factor}, class {y}) outside K={} C={}",
                self.k, self.c
            )));
        }
        Ok(factor * self.c + y)
    }

    pub fn decode(&self, extended: usize) -> Result<(usize, usize)> {
        if extended >= self.k * self.c {
            return Err(Error::InvalidArgument(format!(
                "extended class {extended} >= {}",
                self.k * self.c
            )));
        }
        Ok((extended / self.c, extended % self.c))
    }
}

pub fn extend_labels(y: usize, factor: usize, k: usize, c: usize) -> Result<usize> {
    ExtendedLabels { k, c }.encode(factor, y)
}

#[derive(Clone, Debug)]
pub struct FactorModel {
    pub params: ModelParams<f32>,
    pub recipe: FactorRecipe,
    pub activation: Activation,
}

impl FactorModel {
    fn target_class(&self, factor: usize, y: usize) -> usize {
        match self.recipe.label_mode {
            LabelMode::Extended => factor * self.recipe.c + y,
            LabelMode::Shared => y,
        }
    }

    /// Slice of the output row holding factor `k`'s logits.
    fn block(&self, factor: usize) -> std::ops::Range<usize> {
        match self.recipe.label_mode {
            LabelMode::Extended => factor * self.recipe.c..(factor + 1) * self.recipe.c,
            LabelMode::Shared => 0..self.recipe.c,
        }
    }
}

/// Per-node, per-factor class distributions, row-major `node × K × C`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPredictions {
    pub nodes: Vec<usize>,
    pub k: usize,
    pub c: usize,
    pub probs: Vec<f32>,
}

impl FactorPredictions {
    /// Distribution of factor `k` for the `row`-th requested node.
    pub fn dist(&self, row: usize, k: usize) -> &[f32] {
        let start = (row * self.k + k) * self.c;
        &self.probs[start..start + self.c]
    }

    /// Argmax with ties broken toward the lowest class index.
    pub fn argmax(&self, row: usize, k: usize) -> usize {
        argmax(self.dist(row, k))
    }

    pub fn max_prob(&self, row: usize, k: usize) -> f32 {
        self.dist(row, k)[self.argmax(row, k)]
    }

    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.nodes.iter().position(|&v| v == node)
    }

    /// The factor whose predictions agree most often with the per-node
    /// majority vote over all factors.
    pub fn most_consistent_factor(&self) -> usize {
        let mut agree = vec![0usize; self.k];
        for row in 0..self.nodes.len() {
            let mut votes = vec![0usize; self.c];
            let picks: Vec<usize> = (0..self.k).map(|k| self.argmax(row, k)).collect();
            for &p in &picks {
                votes[p] += 1;
            }
            let majority = argmax_count(&votes);
            for (k, &p) in picks.iter().enumerate() {
                if p == majority {
                    agree[k] += 1;
                }
            }
        }
        // first maximum wins ties
        agree
            .iter()
            .enumerate()
            .fold((0, 0), |best, (k, &a)| if a > best.1 { (k, a) } else { best })
            .0
    }

    pub fn predicted_classes(&self, factor: usize) -> Vec<usize> {
        (0..self.nodes.len()).map(|r| self.argmax(r, factor)).collect()
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn argmax_count(xs: &[usize]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Labeled and pseudo-labeled supervision for one training round.
#[derive(Clone, Debug, Default)]
pub struct Supervision {
    /// `(node, class)` pairs with ground-truth labels.
    pub labeled: Vec<(usize, usize)>,
    /// `(node, class)` pairs with adopted pseudo-labels.
    pub pseudo: Vec<(usize, usize)>,
    /// Weight of the mean pseudo-label loss relative to the supervised one.
    pub lambda_pseudo: f64,
}

/// Per-(variant, node) targets realizing `L_s + λ·L_u`, each term the mean
/// cross-entropy over its `(node, factor)` pairs.
pub fn joint_targets(recipe: &FactorRecipe, sup: &Supervision) -> Result<Vec<Vec<WeightedTarget>>> {
    let labeled: std::collections::HashSet<usize> = sup.labeled.iter().map(|&(v, _)| v).collect();
    if let Some(&(v, _)) = sup.pseudo.iter().find(|(v, _)| labeled.contains(v)) {
        return Err(Error::Contract(format!("node {v} is both labeled and pseudo-labeled")));
    }
    let k = recipe.k;
    let model_like = FactorModel {
        params: ModelParams { layers: vec![] },
        recipe: recipe.clone(),
        activation: Activation::Relu,
    };
    let ws = 1.0 / (k * sup.labeled.len().max(1)) as f64;
    let wu = if sup.pseudo.is_empty() {
        0.0
    } else {
        sup.lambda_pseudo / (k * sup.pseudo.len()) as f64
    };
    Ok((0..k)
        .map(|f| {
            let mut t: Vec<WeightedTarget> = sup
                .labeled
                .iter()
                .map(|&(node, y)| WeightedTarget {
                    node,
                    class: model_like.target_class(f, y),
                    weight: ws,
                })
                .collect();
            if wu > 0.0 {
                t.extend(sup.pseudo.iter().map(|&(node, y)| WeightedTarget {
                    node,
                    class: model_like.target_class(f, y),
                    weight: wu,
                }));
            }
            t
        })
        .collect())
}

/// Joint loss of a model under the given supervision, split into its
/// supervised and pseudo-label terms: `(L_s, L_u, L_s + λ·L_u)`.
pub fn joint_loss(
    model: &FactorModel,
    adj: &NormalizedAdjacency,
    factorized: &FactorizedInput,
    sup: &Supervision,
) -> Result<(f64, f64, f64)> {
    let a = adj.to_f32();
    let mut ls = 0.0;
    let mut lu = 0.0;
    let k = factorized.k();
    for (f, x) in factorized.variants.iter().enumerate() {
        let (logits, _) = gcn_predict(&model.params, Some(&a), Input::Sparse(x), model.activation)?;
        for &(node, y) in &sup.labeled {
            ls -= log_softmax_slice(logits.row(node))[model.target_class(f, y)] as f64;
        }
        for &(node, y) in &sup.pseudo {
            lu -= log_softmax_slice(logits.row(node))[model.target_class(f, y)] as f64;
        }
    }
    ls /= (k * sup.labeled.len().max(1)) as f64;
    lu = if sup.pseudo.is_empty() {
        0.0
    } else {
        lu / (k * sup.pseudo.len()) as f64
    };
    Ok((ls, lu, ls + sup.lambda_pseudo * lu))
}

/// Trains the shared network. Validation (when `val` is non-empty) scores
/// factor 0 on variant 0.
#[allow(clippy::too_many_arguments)]
pub fn train_factor_model(
    adj: &Csr<f32>,
    factorized: &FactorizedInput,
    sup: &Supervision,
    val: &[usize],
    labels: &[usize],
    config: &TrainConfig,
    init: Option<ModelParams<f32>>,
    stream: u64,
) -> Result<(FactorModel, TrainOutcome)> {
    let recipe = &factorized.recipe;
    let targets = joint_targets(recipe, sup)?;
    let job = TrainJob {
        adj: Some(adj),
        inputs: factorized.inputs(),
        targets,
        output_dim: recipe.output_dim(),
    };
    let mut model = FactorModel {
        params: ModelParams { layers: vec![] },
        recipe: recipe.clone(),
        activation: config.activation,
    };
    let block = model.block(0);
    let outcome = train(&job, config, init, stream, |p| {
        if val.is_empty() {
            return Ok(None);
        }
        let (logits, _) = gcn_predict(p, Some(adj), Input::Sparse(&factorized.variants[0]), config.activation)?;
        let mut correct = 0usize;
        let mut loss = 0.0f64;
        for &v in val {
            let row = &logits.row(v)[block.clone()];
            if argmax(row) == labels[v] {
                correct += 1;
            }
            loss -= log_softmax_slice(row)[labels[v]] as f64;
        }
        Ok(Some(Validation {
            accuracy: correct as f64 / val.len() as f64,
            loss: loss / val.len() as f64,
        }))
    })?;
    model.params = outcome.params.clone();
    Ok((model, outcome))
}

/// Supervised factor training on the labeled split.
pub fn train_factors(
    graph: &CitationGraph,
    adj: &NormalizedAdjacency,
    factorized: &FactorizedInput,
    masks: &SplitMasks,
    config: &TrainConfig,
) -> Result<(FactorModel, TrainOutcome)> {
    if masks.train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let sup = Supervision {
        labeled: masks.train.iter().map(|&v| (v, graph.labels[v])).collect(),
        pseudo: vec![],
        lambda_pseudo: 0.0,
    };
    train_factor_model(&adj.to_f32(), factorized, &sup, &masks.val, &graph.labels, config, None, 0)
}

/// Runs the network on every variant and renormalizes each factor's block.
pub fn factor_predict(
    model: &FactorModel,
    adj: &NormalizedAdjacency,
    factorized: &FactorizedInput,
    nodes: &[usize],
) -> Result<FactorPredictions> {
    factor_predict_with(model, &adj.to_f32(), factorized, nodes)
}

pub fn factor_predict_with(
    model: &FactorModel,
    adj: &Csr<f32>,
    factorized: &FactorizedInput,
    nodes: &[usize],
) -> Result<FactorPredictions> {
    if model.recipe != factorized.recipe {
        return Err(Error::Contract("model was trained with a different factor recipe".into()));
    }
    let (k, c) = (model.recipe.k, model.recipe.c);
    let mut probs = vec![0f32; nodes.len() * k * c];
    for (f, x) in factorized.variants.iter().enumerate() {
        let (logits, _) = gcn_predict(&model.params, Some(adj), Input::Sparse(x), model.activation)?;
        let block = model.block(f);
        for (r, &v) in nodes.iter().enumerate() {
            let p = softmax_slice(&logits.row(v)[block.clone()]);
            let start = (r * k + f) * c;
            probs[start..start + c].copy_from_slice(&p);
        }
    }
    Ok(FactorPredictions {
        nodes: nodes.to_vec(),
        k,
        c,
        probs,
    })
}

/// Last-hidden-layer activations for the given variant.
pub fn factor_representations(model: &FactorModel, adj: &Csr<f32>, factorized: &FactorizedInput, variant: usize) -> Result<Matrix<f32>> {
    let (_, trace) = gcn_predict(&model.params, Some(adj), Input::Sparse(&factorized.variants[variant]), model.activation)?;
    trace
        .last_hidden()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("model has no hidden layer".into()))
}
