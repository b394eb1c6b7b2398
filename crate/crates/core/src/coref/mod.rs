//! Coreference resolution over dialogue graphs: a recency rule, a
//! neighbour-mean MLP, and a relational graph network.

pub mod model;
pub mod nn;
pub mod train;
pub mod wordvec;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgraph::{DGraphConfig, DGraphError};
use crate::graph::ReferTarget;

pub use model::{CorefModel, Encoder, ModelShape};
pub use train::{evaluate, resolve_dialogue, train, CorefEval, Resolver, TrainReport};
pub use wordvec::WordVectors;

#[derive(Debug, Error)]
pub enum CorefError {
    #[error("word vectors: {0}")]
    WordVectors(String),
    #[error("vector dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("relation {0} has no weights in this model")]
    UnknownRelation(String),
    #[error("no training queries with more than one candidate")]
    EmptyTrainingSet,
    #[error("loss became non-finite in epoch {0}")]
    NonFiniteLoss(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Graph(#[from] DGraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rule,
    Mlp,
    Gnn,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rule" => Ok(ModelKind::Rule),
            "mlp" => Ok(ModelKind::Mlp),
            "gnn" => Ok(ModelKind::Gnn),
            _ => Err(format!("unknown model kind {s:?}")),
        }
    }
}

pub fn default_beta_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorefConfig {
    pub kind: ModelKind,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    /// Queries per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Used until tuning replaces it.
    pub beta: f64,
    pub beta_grid: Vec<f64>,
    pub seed: u64,
    pub dgraph: DGraphConfig,
}

impl Default for CorefConfig {
    fn default() -> Self {
        CorefConfig {
            kind: ModelKind::Gnn,
            layers: 3,
            hidden: 100,
            dropout: 0.2,
            epochs: 20,
            batch_size: 10,
            learning_rate: 1e-3,
            beta: 0.5,
            beta_grid: default_beta_grid(),
            seed: 0,
            dgraph: DGraphConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorefPrediction {
    pub turn: u32,
    pub var: crate::graph::Var,
    pub predicted: BTreeSet<ReferTarget>,
    pub probabilities: Vec<(ReferTarget, f64)>,
    pub gold: BTreeSet<ReferTarget>,
}

/// Candidates at or above `beta`, or the most probable one when none is.
pub fn select(candidates: &[ReferTarget], probs: &[f64], beta: f64) -> BTreeSet<ReferTarget> {
    let picked: BTreeSet<ReferTarget> = candidates
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p >= beta)
        .map(|(c, _)| *c)
        .collect();
    if !picked.is_empty() {
        return picked;
    }
    let best = probs
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &p)| match acc {
            Some((_, bp)) if bp >= p => acc,
            _ => Some((i, p)),
        });
    best.map(|(i, _)| candidates[i]).into_iter().collect()
}

/// Every candidate from the latest turn that has any.
pub fn rule_select(candidates: &[ReferTarget]) -> BTreeSet<ReferTarget> {
    let last = candidates.iter().map(|c| c.turn).max();
    candidates.iter().filter(|c| Some(c.turn) == last).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Var;

    fn rt(turn: u32, v: u32) -> ReferTarget {
        ReferTarget { turn, var: Var(v) }
    }

    #[test]
    fn threshold_and_fallback() {
        let c = [rt(1, 2), rt(1, 3), rt(3, 2)];
        assert_eq!(select(&c, &[0.95, 0.30, 0.91], 0.89), [rt(1, 2), rt(3, 2)].into());
        assert_eq!(select(&c, &[0.2, 0.6, 0.1], 0.89), [rt(1, 3)].into());
        assert_eq!(select(&c[..1], &[0.0], 0.89), [rt(1, 2)].into());
    }

    #[test]
    fn rule_takes_last_turn() {
        assert_eq!(rule_select(&[rt(1, 2), rt(3, 4), rt(3, 5)]), [rt(3, 4), rt(3, 5)].into());
        assert_eq!(rule_select(&[rt(1, 2)]), [rt(1, 2)].into());
    }
}
