//! Dialogue meaning representation (DMR) toolkit.
//!
//! DMR graphs encode one customer utterance as a rooted DAG of intents,
//! entities, operators and keywords. This crate provides the ontology
//! language, the graph text form, linearization for sequence models with a
//! repairing reader, ontology validation, Smatch scoring, the turn-connected
//! dialogue graph and coreference resolvers built on it, and corpus tooling.

pub mod coref;
pub mod corpus;
pub mod dgraph;
pub mod graph;
pub mod linearize;
pub mod metrics;
pub mod ontology;
pub mod synth;
pub mod validate;

pub use graph::{read_graph, to_triples, write_graph, DmrGraph, Edge, EdgeTarget, Node, NodeKind, ReferTarget, Var};
pub use linearize::{delinearize, linearize, TokenSeq};
pub use metrics::{exact_match, smatch, MatchConfig, SmatchScore};
pub use ontology::{parse_ontology, Ontology};
pub use validate::{classify_errors, validate, ErrorFlags, Prediction, Violation, ViolationCode};
