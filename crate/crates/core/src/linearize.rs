//! Variable-free bracket sequences for sequence-to-sequence models.
//!
//! A node is written `( payload-words edge* )` and an edge
//! `( :label node )` or `( :label keyword )`. `refer` edges and variables
//! are dropped. Shared nodes are duplicated under every parent, so graphs
//! with reentrancy do not survive a round trip.
//!
//! The reader is total. Stray closing brackets are dropped, frames left open
//! at the end are closed, anything after a complete root is ignored, and
//! sequences it still cannot interpret become the out-of-domain fallback.

use std::fmt;

use serde::Serialize;

use crate::graph::{DmrGraph, Edge, EdgeTarget, Node, Payload, Var};
use crate::ontology::{self, NEGATIVE, REFER};

pub const FALLBACK_INTENT: &str = "OutOfDomainIntent";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    /// Splits a space-joined line.
    pub fn parse(line: &str) -> Self {
        TokenSeq(line.split_whitespace().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

fn payload_words(node: &Node, out: &mut Vec<String>) {
    let payload = node.payload();
    for segment in payload.split("||").map(str::trim) {
        if !out.last().is_some_and(|t| t == "(") {
            out.push("||".into());
        }
        out.extend(segment.split_whitespace().map(str::to_string));
    }
}

fn emit(g: &DmrGraph, v: Var, out: &mut Vec<String>) {
    out.push("(".into());
    payload_words(g.node(v).expect("valid graph"), out);
    for e in g.edges_from(v) {
        match &e.target {
            EdgeTarget::Refer(_) => continue,
            EdgeTarget::Node(t) => {
                out.push("(".into());
                out.push(format!(":{}", e.label));
                emit(g, *t, out);
                out.push(")".into());
            }
            EdgeTarget::Keyword(k) => {
                out.extend(["(".into(), format!(":{}", e.label), k.clone(), ")".into()]);
            }
        }
    }
    out.push(")".into());
}

pub fn linearize(g: &DmrGraph) -> TokenSeq {
    let mut out = Vec::new();
    emit(g, g.root(), &mut out);
    TokenSeq(out)
}

/// A change the reader made to get a well-formed sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Repair {
    /// A `)` with nothing open, at token `position`, was dropped.
    RedundantBracket { position: usize },
    /// A `)` was appended to close a frame left open.
    MissingBracket,
    /// Tokens after the completed root were ignored.
    TrailingTokens { position: usize, count: usize },
}

/// Why a sequence could not be read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fault {
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delinearized {
    pub graph: DmrGraph,
    pub repairs: Vec<Repair>,
    /// Set when the graph is the fallback.
    pub fault: Option<Fault>,
}

impl Delinearized {
    pub fn is_fallback(&self) -> bool {
        self.fault.is_some()
    }
}

/// `(v1 / OutOfDomainIntent)`.
pub fn fallback_graph(turn: u32) -> DmrGraph {
    DmrGraph::new(turn, Var(1), vec![Node::new(Var(1), FALLBACK_INTENT)], Vec::new())
        .expect("single intent node is valid")
}

enum Frame {
    /// Just after `(`; the next token decides what this is.
    Open,
    Node { var: Var, words: Vec<String>, has_edges: bool, sealed: bool },
    Edge { label: String, target: Option<EdgeTarget> },
}

struct Builder {
    stack: Vec<Frame>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    root: Option<Var>,
    repairs: Vec<Repair>,
}

impl Builder {
    fn close(&mut self, pos: usize) -> Result<(), Fault> {
        let fault = |reason: &str| Fault {
            position: pos,
            reason: reason.to_string(),
        };
        match self.stack.pop() {
            None => unreachable!("callers check for an open frame"),
            Some(Frame::Open) => Err(fault("empty bracket pair")),
            Some(Frame::Node { var, .. }) => match self.stack.last_mut() {
                None => {
                    self.root = Some(var);
                    Ok(())
                }
                Some(Frame::Edge { target, .. }) if target.is_none() => {
                    *target = Some(EdgeTarget::Node(var));
                    Ok(())
                }
                _ => Err(fault("node in an unexpected position")),
            },
            Some(Frame::Edge { label, target }) => {
                let target = target.ok_or_else(|| fault("edge without a target"))?;
                match self.stack.last_mut() {
                    Some(Frame::Node { var, has_edges, .. }) => {
                        *has_edges = true;
                        self.edges.push(Edge {
                            source: *var,
                            label,
                            target,
                        });
                        Ok(())
                    }
                    _ => Err(fault("edge outside a node")),
                }
            }
        }
    }

    fn step(&mut self, pos: usize, tok: &str) -> Result<(), Fault> {
        let fault = |reason: String| Fault { position: pos, reason };
        match tok {
            "(" => match self.stack.last() {
                None if self.root.is_none() => {
                    self.stack.push(Frame::Open);
                    Ok(())
                }
                Some(Frame::Node { .. }) | Some(Frame::Edge { target: None, .. }) => {
                    self.stack.push(Frame::Open);
                    Ok(())
                }
                Some(Frame::Open) => Err(fault("frame starts with `(`".into())),
                _ => Err(fault("unexpected `(`".into())),
            },
            ")" => {
                if self.stack.is_empty() {
                    self.repairs.push(Repair::RedundantBracket { position: pos });
                    Ok(())
                } else {
                    self.close(pos)
                }
            }
            _ if tok.starts_with(':') && tok.len() > 1 => {
                let label = &tok[1..];
                if !ontology::is_edge_label(label) {
                    return Err(fault(format!("invalid edge label `{label}`")));
                }
                let parent_is_node = matches!(self.stack.iter().rev().nth(1), Some(Frame::Node { .. }));
                match self.stack.last_mut() {
                    Some(frame @ Frame::Open) if parent_is_node => {
                        *frame = Frame::Edge {
                            label: label.to_string(),
                            target: None,
                        };
                        Ok(())
                    }
                    _ => Err(fault(format!("edge `{tok}` where a payload was expected"))),
                }
            }
            word => {
                let next_var = Var(self.nodes.len() as u32 + 1);
                match self.stack.last_mut() {
                    Some(frame @ Frame::Open) => {
                        *frame = Frame::Node {
                            var: next_var,
                            words: vec![word.to_string()],
                            has_edges: false,
                            sealed: false,
                        };
                        // Reserves the preorder slot; replaced once the
                        // payload words are complete.
                        self.nodes.push(Node::new(next_var, FALLBACK_INTENT));
                        Ok(())
                    }
                    Some(Frame::Node { words, sealed: false, .. }) => {
                        words.push(word.to_string());
                        Ok(())
                    }
                    Some(Frame::Edge { target: target @ None, .. }) if word == NEGATIVE => {
                        *target = Some(EdgeTarget::Keyword(word.to_string()));
                        Ok(())
                    }
                    _ => Err(fault(format!("unexpected word `{word}`"))),
                }
            }
        }
    }

    /// Decodes the payload of the node frame on top of the stack, once its
    /// first edge or closing bracket shows the words are complete.
    fn seal_payload(&mut self, pos: usize) -> Result<(), Fault> {
        if let Some(Frame::Node { var, words, sealed: sealed @ false, .. }) = self.stack.last_mut() {
            *sealed = true;
            let text = words.join(" ");
            let payload = Payload::parse(&text).ok_or_else(|| Fault {
                position: pos,
                reason: format!("invalid payload `{text}`"),
            })?;
            self.nodes[var.0 as usize - 1] = payload.into_node(*var);
        }
        Ok(())
    }
}

/// Reads a token sequence back into a graph, numbering nodes `v1, v2, ...`
/// in depth-first preorder. Never fails; see [`Delinearized::fault`].
pub fn delinearize(tokens: &TokenSeq, turn: u32) -> Delinearized {
    let mut b = Builder {
        stack: Vec::new(),
        nodes: Vec::new(),
        edges: Vec::new(),
        root: None,
        repairs: Vec::new(),
    };
    let fallback = |fault: Fault, repairs: Vec<Repair>| Delinearized {
        graph: fallback_graph(turn),
        repairs,
        fault: Some(fault),
    };
    let toks = tokens.tokens();
    for (pos, tok) in toks.iter().enumerate() {
        if b.root.is_some() && b.stack.is_empty() && tok != ")" {
            b.repairs.push(Repair::TrailingTokens {
                position: pos,
                count: toks.len() - pos,
            });
            break;
        }
        if tok == "(" || tok == ")" || tok.starts_with(':') {
            if let Err(f) = b.seal_payload(pos) {
                return fallback(f, b.repairs);
            }
        }
        if let Err(f) = b.step(pos, tok) {
            return fallback(f, b.repairs);
        }
    }
    while !b.stack.is_empty() {
        let pos = toks.len();
        if let Err(f) = b.seal_payload(pos).and_then(|_| b.close(pos)) {
            return fallback(f, b.repairs);
        }
        b.repairs.push(Repair::MissingBracket);
    }
    let Some(root) = b.root else {
        return fallback(
            Fault {
                position: toks.len(),
                reason: "empty expression".into(),
            },
            b.repairs,
        );
    };
    if b.edges.iter().any(|e| e.label == REFER) {
        return fallback(
            Fault {
                position: 0,
                reason: "`refer` edges cannot be linearized".into(),
            },
            b.repairs,
        );
    }
    match DmrGraph::new(turn, root, b.nodes, b.edges) {
        Ok(graph) => Delinearized {
            graph,
            repairs: b.repairs,
            fault: None,
        },
        Err(e) => fallback(
            Fault {
                position: toks.len(),
                reason: e.to_string(),
            },
            b.repairs,
        ),
    }
}
