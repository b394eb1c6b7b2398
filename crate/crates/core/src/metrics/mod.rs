//! Parser and coreference evaluation.

pub mod smatch;

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{DmrGraph, ReferTarget};
use crate::ontology::Ontology;
use crate::validate::{classify_errors, ErrorFlags, Prediction};

pub use smatch::{exact_match, exact_match_with, smatch, smatch_exhaustive, smatch_hill_climb, MatchConfig, SmatchScore};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{golds} gold items but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
}

/// Gold referents of one reference node and how many candidates it had.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldReferents {
    pub targets: BTreeSet<ReferTarget>,
    pub candidates: usize,
}

/// Share of reference nodes whose predicted referent set equals the gold
/// set. An empty evaluation set scores 0.
pub fn coref_accuracy(
    golds: &[GoldReferents],
    preds: &[BTreeSet<ReferTarget>],
    exclude_single_candidate: bool,
) -> Result<f64, MetricsError> {
    if golds.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let (mut total, mut correct) = (0usize, 0usize);
    for (g, p) in golds.iter().zip(preds) {
        if exclude_single_candidate && g.candidates == 1 {
            continue;
        }
        total += 1;
        if &g.targets == p {
            correct += 1;
        }
    }
    if total == 0 {
        log::warn!("coreference accuracy over an empty evaluation set");
        return Ok(0.0);
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub key: String,
    pub total: usize,
    pub exact: usize,
    pub accuracy: f64,
}

/// Error class shares among the pairs that did not match exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ErrorPortions {
    pub failures: usize,
    pub invalid_graph: f64,
    pub ontology_mismatch: f64,
    pub wrong_intent: f64,
    pub compositional: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub total: usize,
    pub exact_match: usize,
    pub exact_match_rate: f64,
    pub errors: ErrorPortions,
    pub by_depth: Vec<Bucket>,
    pub by_node_count: Vec<Bucket>,
    pub by_utterance_length: Vec<Bucket>,
    /// Share of wrong-intent failures whose gold holds more than one intent.
    pub multi_intent_share_of_wrong_intent: f64,
}

pub fn depth_bucket(depth: usize) -> String {
    if depth >= 4 {
        "4+".into()
    } else {
        depth.to_string()
    }
}

pub fn node_count_bucket(n: usize) -> String {
    if n >= 8 {
        "8+".into()
    } else {
        n.to_string()
    }
}

pub fn length_bucket(tokens: usize) -> String {
    match tokens {
        0..=5 => "1-5".into(),
        6..=10 => "6-10".into(),
        11..=15 => "11-15".into(),
        _ => "16+".into(),
    }
}

fn ordered(keys: &[&str]) -> Vec<Bucket> {
    keys.iter()
        .map(|k| Bucket {
            key: (*k).into(),
            total: 0,
            exact: 0,
            accuracy: 0.0,
        })
        .collect()
}

fn tally(buckets: &mut [Bucket], key: &str, exact: bool) {
    let b = buckets.iter_mut().find(|b| b.key == key).expect("bucket keys cover every value");
    b.total += 1;
    b.exact += exact as usize;
}

fn share(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

struct Outcome {
    exact: bool,
    flags: ErrorFlags,
    multi_intent: bool,
    depth: usize,
    nodes: usize,
    length: usize,
}

fn outcome(o: &Ontology, gold: &DmrGraph, pred: &Prediction, utterance: &str) -> Outcome {
    let exact = matches!(pred, Prediction::Graph(p) if exact_match(gold, p));
    let flags = if exact {
        ErrorFlags::default()
    } else {
        classify_errors(o, gold, pred)
    };
    Outcome {
        exact,
        flags,
        multi_intent: gold.nodes().iter().filter(|n| o.is_intent(&n.type_name)).count() > 1,
        depth: gold.depth(),
        nodes: gold.node_count(),
        length: utterance.split_whitespace().count(),
    }
}

/// Scores aligned `(gold, prediction, utterance)` triples.
pub fn corpus_eval(o: &Ontology, pairs: &[(DmrGraph, Prediction, String)]) -> EvalReport {
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Outcome> = {
        use rayon::prelude::*;
        pairs.par_iter().map(|(g, p, u)| outcome(o, g, p, u)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Outcome> = pairs.iter().map(|(g, p, u)| outcome(o, g, p, u)).collect();

    let mut by_depth = ordered(&["1", "2", "3", "4+"]);
    let mut by_nodes = ordered(&["1", "2", "3", "4", "5", "6", "7", "8+"]);
    let mut by_len = ordered(&["1-5", "6-10", "11-15", "16+"]);
    let mut counts = [0usize; 4];
    let (mut exact, mut wrong_intent_multi) = (0, 0);
    for r in &outcomes {
        exact += r.exact as usize;
        tally(&mut by_depth, &depth_bucket(r.depth), r.exact);
        tally(&mut by_nodes, &node_count_bucket(r.nodes), r.exact);
        tally(&mut by_len, &length_bucket(r.length), r.exact);
        let f = r.flags;
        for (i, on) in [f.invalid_graph, f.ontology_mismatch, f.wrong_intent, f.compositional].into_iter().enumerate() {
            counts[i] += on as usize;
        }
        if f.wrong_intent && r.multi_intent {
            wrong_intent_multi += 1;
        }
    }
    for b in by_depth.iter_mut().chain(&mut by_nodes).chain(&mut by_len) {
        b.accuracy = share(b.exact, b.total);
    }
    let failures = outcomes.len() - exact;
    EvalReport {
        total: outcomes.len(),
        exact_match: exact,
        exact_match_rate: share(exact, outcomes.len()),
        errors: ErrorPortions {
            failures,
            invalid_graph: share(counts[0], failures),
            ontology_mismatch: share(counts[1], failures),
            wrong_intent: share(counts[2], failures),
            compositional: share(counts[3], failures),
        },
        by_depth,
        by_node_count: by_nodes,
        by_utterance_length: by_len,
        multi_intent_share_of_wrong_intent: share(wrong_intent_multi, counts[2]),
    }
}
