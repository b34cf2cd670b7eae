use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::propagation::{label_propagation, PropagationConfig};
use super::{
    apply_accountability, consistency_filter_with, jaccard, rank_select, tau_schedule, LoopConfig, PseudoEntry,
    PseudoLabelSet, Stage,
};
use crate::auxiliary::AuxFactorOutput;
use crate::error::Result;
use crate::factor::{
    build_factor_inputs, factor_predict_with, train_factor_model, FactorConfig, FactorModel, FactorPredictions,
    FactorizedInput, Supervision,
};
use crate::graph::{normalize_adjacency, CitationGraph, SplitMasks};
use crate::linalg::Csr;
use crate::metrics::{accuracy, pseudo_accuracy};
use crate::nn::TrainConfig;

/// Scores of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Factor whose predictions are reported.
    pub output_factor: usize,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub epochs: usize,
}

/// One pseudo-labeling round. `val_accuracy`/`test_accuracy` belong to the
/// model trained at the start of the round, which produced the selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub iteration: usize,
    pub tau: f64,
    pub consistent: usize,
    pub selected: usize,
    pub consistent_accuracy: Option<f64>,
    pub pseudo_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Similarity with the previous round's adopted set.
    pub jaccard: f64,
    /// Adopted `(node, class)` pairs, ordered by node.
    pub adopted: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub method: String,
    pub rounds: Vec<RoundRecord>,
    /// One entry per training run, in order.
    pub evaluations: Vec<Evaluation>,
    /// Index into `evaluations` of the returned model.
    pub best: usize,
    pub converged: bool,
}

impl LoopReport {
    pub fn final_evaluation(&self) -> &Evaluation {
        &self.evaluations[self.best]
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut out = String::from(
            "iteration,tau,consistent,selected,consistent_accuracy,pseudo_accuracy,val_accuracy,test_accuracy,jaccard\n",
        );
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "{},{:.6},{},{},{},{},{},{},{:.6}",
                r.iteration,
                r.tau,
                r.consistent,
                r.selected,
                opt(r.consistent_accuracy),
                opt(r.pseudo_accuracy),
                opt(r.val_accuracy),
                opt(r.test_accuracy),
                r.jaccard
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Picks `(S_u, S_p)` from predictions over the candidate nodes.
type Selector<'s> = dyn FnMut(&FactorPredictions, f64) -> Result<(PseudoLabelSet, PseudoLabelSet)> + 's;

struct LoopInputs<'a> {
    graph: &'a CitationGraph,
    masks: &'a SplitMasks,
    adj: &'a Csr<f32>,
    factorized: &'a FactorizedInput,
}

fn evaluate(inputs: &LoopInputs<'_>, model: &FactorModel, epochs: usize) -> Result<Evaluation> {
    let all: Vec<usize> = (0..inputs.graph.n()).collect();
    let preds = factor_predict_with(model, inputs.adj, inputs.factorized, &all)?;
    let output_factor = preds.most_consistent_factor();
    let predicted = preds.predicted_classes(output_factor);
    let score = |mask: &[usize]| (!mask.is_empty()).then(|| accuracy(&predicted, &inputs.graph.labels, mask)).transpose();
    Ok(Evaluation {
        output_factor,
        val_accuracy: score(&inputs.masks.val)?,
        test_accuracy: score(&inputs.masks.test)?,
        epochs,
    })
}

fn better(a: &Evaluation, b: &Evaluation) -> bool {
    a.val_accuracy.unwrap_or(0.0) > b.val_accuracy.unwrap_or(0.0)
}

fn run_loop(
    method: &str,
    inputs: LoopInputs<'_>,
    loop_cfg: &LoopConfig,
    train_cfg: &TrainConfig,
    select: &mut Selector<'_>,
) -> Result<(FactorModel, LoopReport)> {
    loop_cfg.validate()?;
    let graph = inputs.graph;
    let labeled: Vec<(usize, usize)> = inputs.masks.train.iter().map(|&v| (v, graph.labels[v])).collect();
    let candidates = inputs.masks.unlabeled(graph.n());

    let mut adopted: Vec<(usize, usize)> = Vec::new();
    let mut params = None;
    let mut rounds = Vec::new();
    let mut evaluations: Vec<Evaluation> = Vec::new();
    let mut best: Option<(usize, FactorModel)> = None;
    let mut converged = false;

    for t in 0..=loop_cfg.iterations {
        let sup = Supervision {
            labeled: labeled.clone(),
            pseudo: adopted.clone(),
            lambda_pseudo: loop_cfg.lambda_pseudo,
        };
        let init = if loop_cfg.retrain_from_scratch { None } else { params.take() };
        let (model, outcome) = train_factor_model(
            inputs.adj,
            inputs.factorized,
            &sup,
            &inputs.masks.val,
            &graph.labels,
            train_cfg,
            init,
            0,
        )?;
        let eval = evaluate(&inputs, &model, outcome.loss_history.len())?;
        log::debug!("{method} round {t}: val {:?} test {:?}", eval.val_accuracy, eval.test_accuracy);
        if best.as_ref().is_none_or(|(i, _)| better(&eval, &evaluations[*i])) {
            best = Some((evaluations.len(), model.clone()));
        }
        evaluations.push(eval.clone());
        params = Some(model.params.clone());
        if t == loop_cfg.iterations {
            break;
        }

        let preds = factor_predict_with(&model, inputs.adj, inputs.factorized, &candidates)?;
        let tau = tau_schedule(t, loop_cfg);
        let (su, mut sp) = select(&preds, tau)?;
        if loop_cfg.accumulate {
            let mut merged: BTreeMap<usize, usize> = adopted.iter().copied().collect();
            merged.extend(sp.pairs());
            sp = PseudoLabelSet {
                entries: merged
                    .into_iter()
                    .map(|(node, class)| {
                        sp.get(node).copied().unwrap_or(PseudoEntry { node, class, score: 0.0, adjusted: 0.0 })
                    })
                    .collect(),
                stage: Stage::Selected,
            };
        }
        let previous: Vec<usize> = adopted.iter().map(|p| p.0).collect();
        let j = jaccard(&sp.nodes(), &previous);
        rounds.push(RoundRecord {
            iteration: t,
            tau,
            consistent: su.len(),
            selected: sp.len(),
            consistent_accuracy: (!su.is_empty()).then(|| pseudo_accuracy(&su, &graph.labels)).transpose()?,
            pseudo_accuracy: (!sp.is_empty()).then(|| pseudo_accuracy(&sp, &graph.labels)).transpose()?,
            val_accuracy: eval.val_accuracy,
            test_accuracy: eval.test_accuracy,
            jaccard: j,
            adopted: sp.pairs(),
        });
        adopted = sp.pairs();
        if j >= loop_cfg.jaccard_stop {
            converged = true;
            break;
        }
    }

    let (best_idx, model) = best.expect("at least one training round");
    Ok((
        model,
        LoopReport {
            method: method.to_string(),
            rounds,
            evaluations,
            best: best_idx,
            converged,
        },
    ))
}

/// Factor training with consistency-filtered, min-confidence-ranked
/// pseudo-labels, optionally rescored by auxiliary factors.
pub fn difac_loop(
    graph: &CitationGraph,
    masks: &SplitMasks,
    factor_cfg: &FactorConfig,
    loop_cfg: &LoopConfig,
    train_cfg: &TrainConfig,
    aux: Option<&AuxFactorOutput>,
) -> Result<(FactorModel, LoopReport)> {
    let adj = normalize_adjacency(graph).to_f32();
    let factorized = build_factor_inputs(&graph.features, graph.c(), factor_cfg)?;
    let strategy = loop_cfg.rank_strategy;
    let lambda_acc = loop_cfg.lambda_acc;
    let mut select = |preds: &FactorPredictions, tau: f64| {
        let mut su = consistency_filter_with(preds, &preds.nodes, strategy)?;
        if let Some(aux) = aux {
            apply_accountability(&mut su, aux, lambda_acc)?;
        }
        let sp = rank_select(&su, tau)?;
        Ok((su, sp))
    };
    run_loop(
        "difac",
        LoopInputs { graph, masks, adj: &adj, factorized: &factorized },
        loop_cfg,
        train_cfg,
        &mut select,
    )
}

/// Every candidate scored by its single-factor max-probability.
fn max_prob_pool(preds: &FactorPredictions) -> PseudoLabelSet {
    PseudoLabelSet {
        entries: (0..preds.nodes.len())
            .map(|r| {
                let s = preds.max_prob(r, 0) as f64;
                PseudoEntry {
                    node: preds.nodes[r],
                    class: preds.argmax(r, 0),
                    score: s,
                    adjusted: s,
                }
            })
            .collect(),
        stage: Stage::Consistent,
    }
}

fn single_factor(factor_cfg: &FactorConfig) -> FactorConfig {
    FactorConfig {
        k: 1,
        ..factor_cfg.clone()
    }
}

/// Classic self-training: one factor, top-τ by max-probability.
pub fn self_training_baseline(
    graph: &CitationGraph,
    masks: &SplitMasks,
    factor_cfg: &FactorConfig,
    loop_cfg: &LoopConfig,
    train_cfg: &TrainConfig,
) -> Result<(FactorModel, LoopReport)> {
    let adj = normalize_adjacency(graph).to_f32();
    let factorized = build_factor_inputs(&graph.features, graph.c(), &single_factor(factor_cfg))?;
    let mut select = |preds: &FactorPredictions, tau: f64| {
        let pool = max_prob_pool(preds);
        let sp = rank_select(&pool, tau)?;
        Ok((pool, sp))
    };
    run_loop(
        "self_train",
        LoopInputs { graph, masks, adj: &adj, factorized: &factorized },
        loop_cfg,
        train_cfg,
        &mut select,
    )
}

/// Adopts the class-agreeing intersection of two judges' top-τ sets.
pub fn intersect_selections(a: &PseudoLabelSet, b: &PseudoLabelSet) -> PseudoLabelSet {
    let other: HashMap<usize, usize> = b.pairs().into_iter().collect();
    PseudoLabelSet {
        entries: a
            .entries
            .iter()
            .filter(|e| other.get(&e.node) == Some(&e.class))
            .copied()
            .collect(),
        stage: Stage::Selected,
    }
}

/// Self-training judge intersected with a label-propagation co-judge.
pub fn intersection_baseline(
    graph: &CitationGraph,
    masks: &SplitMasks,
    factor_cfg: &FactorConfig,
    loop_cfg: &LoopConfig,
    train_cfg: &TrainConfig,
) -> Result<(FactorModel, LoopReport)> {
    let norm = normalize_adjacency(graph);
    let adj = norm.to_f32();
    let factorized = build_factor_inputs(&graph.features, graph.c(), &single_factor(factor_cfg))?;
    let seeds: Vec<(usize, usize)> = masks.train.iter().map(|&v| (v, graph.labels[v])).collect();
    let propagated = label_propagation(&norm, &seeds, graph.c(), &PropagationConfig::default())?;
    let mut select = |preds: &FactorPredictions, tau: f64| {
        let pool = max_prob_pool(preds);
        let mine = rank_select(&pool, tau)?;
        let cojudge = PseudoLabelSet {
            entries: preds
                .nodes
                .iter()
                .filter_map(|&v| {
                    let row = propagated.row(v);
                    let y = crate::factor::argmax(row);
                    (row[y] > 0.0).then_some(PseudoEntry { node: v, class: y, score: row[y], adjusted: row[y] })
                })
                .collect(),
            stage: Stage::Consistent,
        };
        let theirs = rank_select(&cojudge, tau)?;
        Ok((mine.clone(), intersect_selections(&mine, &theirs)))
    };
    run_loop(
        "intersection",
        LoopInputs { graph, masks, adj: &adj, factorized: &factorized },
        loop_cfg,
        train_cfg,
        &mut select,
    )
}
