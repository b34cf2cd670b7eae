//! Pseudo-label selection: consistency filtering, min-confidence scoring,
//! ranked top-τ adoption, and the outer self-training loops.

mod engine;
mod propagation;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::auxiliary::{accountability_score, AuxFactorOutput};
use crate::error::{Error, Result};
use crate::factor::FactorPredictions;

pub use engine::{difac_loop, intersection_baseline, self_training_baseline, Evaluation, LoopReport, RoundRecord};
pub use propagation::{label_propagation, PropagationConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Every factor agrees (`S_u`).
    Consistent,
    /// Adopted for the next round (`S_p`).
    Selected,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoEntry {
    pub node: usize,
    pub class: usize,
    /// Confidence aggregated over factors.
    pub score: f64,
    /// Ranking key; equals `score` unless accountability was applied.
    pub adjusted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoEntry>,
    pub stage: Stage,
}

impl PseudoLabelSet {
    pub fn empty(stage: Stage) -> Self {
        Self { entries: Vec::new(), stage }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nodes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.node).collect()
    }

    /// `(node, class)` pairs in entry order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| (e.node, e.class)).collect()
    }

    pub fn get(&self, node: usize) -> Option<&PseudoEntry> {
        self.entries.iter().find(|e| e.node == node)
    }
}

/// How per-factor max-probabilities are collapsed into one score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankStrategy {
    #[default]
    Min,
    Max,
    Mean,
}

impl RankStrategy {
    pub fn aggregate(self, maxes: &[f64]) -> f64 {
        match self {
            RankStrategy::Min => maxes.iter().copied().fold(f64::INFINITY, f64::min),
            RankStrategy::Max => maxes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            RankStrategy::Mean => maxes.iter().sum::<f64>() / maxes.len() as f64,
        }
    }
}

impl std::str::FromStr for RankStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Self::Min),
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            other => Err(Error::InvalidArgument(format!("unknown rank strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Pseudo-labeling rounds `T`.
    pub iterations: usize,
    pub tau0: f64,
    pub tau_final: f64,
    pub lambda_pseudo: f64,
    pub lambda_acc: f64,
    /// Stop once consecutive adopted sets reach this Jaccard similarity.
    pub jaccard_stop: f64,
    pub retrain_from_scratch: bool,
    /// Keep earlier adoptions instead of recomputing `S_p` each round.
    pub accumulate: bool,
    pub rank_strategy: RankStrategy,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            tau0: 0.3,
            tau_final: 0.9,
            lambda_pseudo: 1.0,
            lambda_acc: 0.5,
            jaccard_stop: 0.99,
            retrain_from_scratch: false,
            accumulate: false,
            rank_strategy: RankStrategy::Min,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.tau0 > 0.0 && self.tau0 <= self.tau_final && self.tau_final <= 1.0) {
            return bad(format!(
                "need 0 < tau0 <= tau_final <= 1, got tau0={} tau_final={}",
                self.tau0, self.tau_final
            ));
        }
        if !(self.lambda_pseudo >= 0.0) || !(self.lambda_acc >= 0.0) {
            return bad("lambda_pseudo and lambda_acc must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.jaccard_stop) {
            return bad(format!("jaccard_stop must be in [0,1], got {}", self.jaccard_stop));
        }
        Ok(())
    }
}

/// Nodes whose factors all share one argmax, scored by `strategy`.
pub fn consistency_filter_with(preds: &FactorPredictions, candidates: &[usize], strategy: RankStrategy) -> Result<PseudoLabelSet> {
    let mut entries = Vec::new();
    for &node in candidates {
        let row = preds
            .row_of(node)
            .ok_or_else(|| Error::Contract(format!("predictions do not cover node {node}")))?;
        let y = preds.argmax(row, 0);
        if (1..preds.k).all(|k| preds.argmax(row, k) == y) {
            let maxes: Vec<f64> = (0..preds.k).map(|k| preds.max_prob(row, k) as f64).collect();
            let score = strategy.aggregate(&maxes);
            entries.push(PseudoEntry {
                node,
                class: y,
                score,
                adjusted: score,
            });
        }
    }
    Ok(PseudoLabelSet {
        entries,
        stage: Stage::Consistent,
    })
}

pub fn consistency_filter(preds: &FactorPredictions, candidates: &[usize]) -> Result<PseudoLabelSet> {
    consistency_filter_with(preds, candidates, RankStrategy::Min)
}

/// Smallest per-factor max-probability of a consistent node.
pub fn min_confidence(preds: &FactorPredictions, node: usize) -> Result<f64> {
    let row = preds
        .row_of(node)
        .ok_or_else(|| Error::Contract(format!("predictions do not cover node {node}")))?;
    let y = preds.argmax(row, 0);
    if (1..preds.k).any(|k| preds.argmax(row, k) != y) {
        return Err(Error::Contract(format!("node {node} is not consistent across factors")));
    }
    Ok((0..preds.k)
        .map(|k| preds.max_prob(row, k) as f64)
        .fold(f64::INFINITY, f64::min))
}

/// Rescores every entry with agreeing auxiliary confidences.
pub fn apply_accountability(su: &mut PseudoLabelSet, aux: &AuxFactorOutput, lambda_acc: f64) -> Result<()> {
    for e in &mut su.entries {
        e.adjusted = accountability_score(e.score, e.class, &aux.votes(e.node)?, lambda_acc);
    }
    Ok(())
}

/// Keeps the top `ceil(τ·|S_u|)` entries by adjusted score, ties to the lower
/// node index. The result is ordered by node.
pub fn rank_select(su: &PseudoLabelSet, tau: f64) -> Result<PseudoLabelSet> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau must be in (0,1], got {tau}")));
    }
    let mut ranked = su.entries.clone();
    ranked.sort_by(|a, b| b.adjusted.total_cmp(&a.adjusted).then(a.node.cmp(&b.node)));
    let keep = (tau * ranked.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    ranked.truncate(keep.min(ranked.len()));
    ranked.sort_by_key(|e| e.node);
    Ok(PseudoLabelSet {
        entries: ranked,
        stage: Stage::Selected,
    })
}

/// Linear ramp from `tau0` at `t = 0` to `tau_final` at `t = T − 1`.
pub fn tau_schedule(t: usize, config: &LoopConfig) -> f64 {
    if config.iterations <= 1 {
        return config.tau0;
    }
    let frac = t.min(config.iterations - 1) as f64 / (config.iterations - 1) as f64;
    config.tau0 + frac * (config.tau_final - config.tau0)
}

/// `|A ∩ B| / |A ∪ B|`, with two empty sets counted as identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: HashSet<usize> = a.iter().copied().collect();
    let b: HashSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn preds_from(maxes: &[(usize, Vec<(usize, f32)>)], c: usize) -> FactorPredictions {
        // each node: list of (argmax, max prob) per factor; rest spread evenly
        let k = maxes[0].1.len();
        let mut probs = Vec::new();
        for (_, factors) in maxes {
            for &(y, p) in factors {
                let rest = (1.0 - p) / (c - 1) as f32;
                probs.extend((0..c).map(|j| if j == y { p } else { rest }));
            }
        }
        FactorPredictions {
            nodes: maxes.iter().map(|m| m.0).collect(),
            k,
            c,
            probs,
        }
    }

    #[test]
    fn filter_keeps_unanimous_nodes() {
        let p = preds_from(
            &[
                (4, vec![(1, 0.9), (1, 0.6), (1, 0.8)]),
                (7, vec![(1, 0.9), (2, 0.6), (1, 0.8)]),
            ],
            3,
        );
        let su = consistency_filter(&p, &[4, 7]).unwrap();
        assert_eq!(su.pairs(), vec![(4, 1)]);
        assert!((su.entries[0].score - 0.6).abs() < 1e-6);
        assert!((min_confidence(&p, 4).unwrap() - 0.6).abs() < 1e-6);
        assert!(matches!(min_confidence(&p, 7), Err(Error::Contract(_))));
        assert!(consistency_filter(&p, &[5]).is_err());
    }

    #[test]
    fn single_factor_accepts_everything() {
        let p = preds_from(&[(0, vec![(2, 0.7)]), (1, vec![(0, 0.4)])], 3);
        let su = consistency_filter(&p, &[0, 1]).unwrap();
        assert_eq!(su.len(), 2);
        assert!((min_confidence(&p, 0).unwrap() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn rank_select_examples() {
        let su = PseudoLabelSet {
            entries: [0.9, 0.8, 0.7, 0.6]
                .iter()
                .enumerate()
                .map(|(i, &s)| PseudoEntry { node: 10 - i, class: 0, score: s, adjusted: s })
                .collect(),
            stage: Stage::Consistent,
        };
        assert_eq!(rank_select(&su, 0.5).unwrap().nodes(), vec![9, 10]);
        assert_eq!(rank_select(&su, 1.0).unwrap().len(), 4);
        assert_eq!(rank_select(&su, 0.3).unwrap().len(), 2);
        assert!(rank_select(&PseudoLabelSet::empty(Stage::Consistent), 0.5).unwrap().is_empty());
        assert!(rank_select(&su, 0.0).is_err());
    }

    #[test]
    fn ties_prefer_low_node_index() {
        let su = PseudoLabelSet {
            entries: [5, 2, 8]
                .iter()
                .map(|&n| PseudoEntry { node: n, class: 0, score: 0.5, adjusted: 0.5 })
                .collect(),
            stage: Stage::Consistent,
        };
        assert_eq!(rank_select(&su, 0.6).unwrap().nodes(), vec![2, 5]);
    }

    #[test]
    fn schedule() {
        let c = LoopConfig { iterations: 3, tau0: 0.3, ..Default::default() };
        assert!((tau_schedule(0, &c) - 0.3).abs() < 1e-12);
        assert!((tau_schedule(1, &c) - 0.6).abs() < 1e-12);
        assert!((tau_schedule(2, &c) - 0.9).abs() < 1e-12);
        let d = LoopConfig::default();
        assert!((tau_schedule(d.iterations - 1, &d) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(LoopConfig::default().validate().is_ok());
        assert!(LoopConfig { iterations: 0, ..Default::default() }.validate().is_err());
        assert!(LoopConfig { tau0: 0.95, ..Default::default() }.validate().is_err());
        assert!(LoopConfig { lambda_acc: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn jaccard_values() {
        assert_eq!(jaccard(&[], &[]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[]), 0.0);
        assert!((jaccard(&[1, 2, 3], &[2, 3, 4]) - 0.5).abs() < 1e-12);
    }

    fn random_preds(seed: u64, n: usize, k: usize, c: usize) -> FactorPredictions {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed, 9);
        let mut probs = Vec::with_capacity(n * k * c);
        for _ in 0..n * k {
            // few distinct raw values so argmax ties occur
            let raw: Vec<f32> = (0..c).map(|_| rng.random_range(1..4) as f32).collect();
            let sum: f32 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / sum));
        }
        FactorPredictions { nodes: (0..n).collect(), k, c, probs }
    }

    proptest! {
        #[test]
        fn filter_matches_brute_force(seed in 0u64..500) {
            let p = random_preds(seed, 50, 3, 4);
            let nodes: Vec<usize> = (0..50).collect();
            let su = consistency_filter(&p, &nodes).unwrap();
            let mut expect = Vec::new();
            for v in 0..50 {
                let mut picks = Vec::new();
                for k in 0..3 {
                    let d = p.dist(v, k);
                    let mut best = 0;
                    for j in 1..4 {
                        if d[j] > d[best] {
                            best = j;
                        }
                    }
                    picks.push(best);
                }
                if picks.iter().all(|&x| x == picks[0]) {
                    let s = (0..3).map(|k| p.dist(v, k)[picks[0]] as f64).fold(1.0, f64::min);
                    expect.push((v, picks[0], s));
                }
            }
            prop_assert_eq!(su.len(), expect.len());
            for (e, (v, y, s)) in su.entries.iter().zip(expect) {
                prop_assert_eq!((e.node, e.class), (v, y));
                prop_assert!((e.score - s).abs() < 1e-12);
            }
        }

        #[test]
        fn adding_a_factor_never_raises_min_confidence(seed in 0u64..300) {
            let p = random_preds(seed, 20, 3, 3);
            let fewer = FactorPredictions {
                nodes: p.nodes.clone(),
                k: 2,
                c: 3,
                probs: (0..20).flat_map(|r| p.probs[r * 9..r * 9 + 6].to_vec()).collect(),
            };
            for v in 0..20 {
                if let (Ok(a), Ok(b)) = (min_confidence(&fewer, v), min_confidence(&p, v)) {
                    prop_assert!(b <= a);
                }
            }
        }

        #[test]
        fn selection_is_order_invariant(scores in proptest::collection::vec(0.01f64..1.0, 1..40), tau in 0.05f64..=1.0) {
            let su = PseudoLabelSet {
                entries: scores.iter().enumerate().map(|(i, &s)| PseudoEntry { node: i, class: 0, score: s, adjusted: s }).collect(),
                stage: Stage::Consistent,
            };
            let sel = rank_select(&su, tau).unwrap();
            prop_assert_eq!(sel.len(), (tau * scores.len() as f64 - 1e-9).ceil() as usize);
            let chosen: HashSet<usize> = sel.nodes().into_iter().collect();
            let min_in = sel.entries.iter().map(|e| e.adjusted).fold(f64::INFINITY, f64::min);
            let max_out = su.entries.iter().filter(|e| !chosen.contains(&e.node)).map(|e| e.adjusted).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_in >= max_out);

            let warped = PseudoLabelSet {
                entries: su.entries.iter().map(|e| PseudoEntry { adjusted: (3.0 * e.adjusted).exp() - 7.0, ..*e }).collect(),
                stage: Stage::Consistent,
            };
            prop_assert_eq!(rank_select(&warped, tau).unwrap().nodes(), sel.nodes());
        }
    }
}
