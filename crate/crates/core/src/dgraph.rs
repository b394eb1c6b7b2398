//! The dialogue graph: every turn's DMR joined through per-turn hub nodes,
//! used as the message-passing structure for coreference.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DmrGraph, EdgeTarget, NodeKind, ReferTarget, Var};

pub const TURN_EDGE: &str = "turn-edge";
pub const REFER_EDGE: &str = "refer";
pub const INVERSE_PREFIX: &str = "inv-";

pub fn hop_relation(k: usize) -> String {
    format!("{k}-hop")
}

pub fn inverse(rel: &str) -> String {
    format!("{INVERSE_PREFIX}{rel}")
}

/// Referent sets keyed by the `(turn, variable)` of each reference node.
pub type Resolutions = BTreeMap<(u32, Var), BTreeSet<ReferTarget>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DGraphConfig {
    pub k_max: usize,
    pub use_turn_nodes: bool,
    pub link_resolved_refs: bool,
}

impl Default for DGraphConfig {
    fn default() -> Self {
        DGraphConfig {
            k_max: 2,
            use_turn_nodes: true,
            link_resolved_refs: true,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DGraphError {
    #[error("k_max must be at least 1")]
    ZeroHops,
    #[error("turns out of order: {0} follows {1}")]
    TurnOrder(u32, u32),
    #[error("resolved node T:{0} N:{1} is not a reference node in the dialogue")]
    UnknownReference(u32, Var),
    #[error("referent {target} of T:{turn} N:{var} is not an earlier node")]
    TargetOutsideContext { turn: u32, var: Var, target: ReferTarget },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DNodeKind {
    Intent,
    Entity,
    Operator,
    Keyword,
    Turn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DNode {
    pub turn: u32,
    /// `None` for keyword and turn nodes.
    pub var: Option<Var>,
    pub kind: DNodeKind,
    pub type_name: String,
    pub lexical: Option<String>,
    pub canonical: Option<String>,
    pub is_reference: bool,
}

impl DNode {
    pub fn payload(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        if let Some(l) = &self.lexical {
            parts.push(l);
        }
        if let Some(c) = &self.canonical {
            parts.push(c);
        }
        parts.push(&self.type_name);
        if self.is_reference {
            parts.rotate_right(1);
        }
        parts.join(" || ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DEdge {
    pub src: usize,
    pub rel: String,
    pub dst: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EdgeCounts {
    pub intra: usize,
    pub turn: usize,
    pub hop: usize,
    pub refer: usize,
}

impl EdgeCounts {
    pub fn total_with_inverses(&self) -> usize {
        2 * (self.intra + self.turn + self.hop + self.refer)
    }
}

#[derive(Debug, Clone)]
pub struct DialogueGraph {
    pub nodes: Vec<DNode>,
    pub edges: Vec<DEdge>,
    pub counts: EdgeCounts,
    origin: HashMap<(u32, Var), usize>,
    turn_nodes: Vec<usize>,
}

impl DialogueGraph {
    /// Assembles a graph from explicit parts. Origins and hubs are derived
    /// from the nodes; edge counts are left at zero.
    pub fn from_parts(nodes: Vec<DNode>, edges: Vec<DEdge>) -> Self {
        let origin = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.var.map(|v| ((n.turn, v), i)))
            .collect();
        let turn_nodes = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == DNodeKind::Turn)
            .map(|(i, _)| i)
            .collect();
        DialogueGraph {
            nodes,
            edges,
            counts: EdgeCounts::default(),
            origin,
            turn_nodes,
        }
    }

    pub fn node_id(&self, turn: u32, var: Var) -> Option<usize> {
        self.origin.get(&(turn, var)).copied()
    }

    /// Hub node of the `i`-th DMR, when hubs are enabled.
    pub fn turn_node(&self, i: usize) -> Option<usize> {
        self.turn_nodes.get(i).copied()
    }

    pub fn turn_nodes(&self) -> &[usize] {
        &self.turn_nodes
    }

    pub fn relations(&self) -> BTreeSet<&str> {
        self.edges.iter().map(|e| e.rel.as_str()).collect()
    }

    /// Node ids adjacent to `v` ignoring direction.
    pub fn neighbours(&self, v: usize) -> BTreeSet<usize> {
        self.edges
            .iter()
            .filter_map(|e| {
                if e.src == v {
                    Some(e.dst)
                } else if e.dst == v {
                    Some(e.src)
                } else {
                    None
                }
            })
            .collect()
    }

    fn add(&mut self, src: usize, rel: &str, dst: usize) {
        self.edges.push(DEdge {
            src,
            rel: rel.to_string(),
            dst,
        });
        self.edges.push(DEdge {
            src: dst,
            rel: inverse(rel),
            dst: src,
        });
    }
}

fn dnode_kind(k: NodeKind) -> DNodeKind {
    match k {
        NodeKind::Intent => DNodeKind::Intent,
        NodeKind::Entity => DNodeKind::Entity,
        NodeKind::Operator => DNodeKind::Operator,
        NodeKind::Keyword => DNodeKind::Keyword,
    }
}

/// Builds the dialogue graph over `dmrs`, given in turn order. Refer edges
/// come from `resolved`, not from the DMRs themselves.
pub fn build_dialogue_graph(
    dmrs: &[&DmrGraph],
    resolved: &Resolutions,
    cfg: &DGraphConfig,
) -> Result<DialogueGraph, DGraphError> {
    if cfg.k_max == 0 {
        return Err(DGraphError::ZeroHops);
    }
    for w in dmrs.windows(2) {
        if w[1].turn() <= w[0].turn() {
            return Err(DGraphError::TurnOrder(w[1].turn(), w[0].turn()));
        }
    }
    let mut g = DialogueGraph {
        nodes: Vec::new(),
        edges: Vec::new(),
        counts: EdgeCounts::default(),
        origin: HashMap::new(),
        turn_nodes: Vec::new(),
    };
    let mut roots = Vec::with_capacity(dmrs.len());
    for d in dmrs {
        let turn = d.turn();
        let first = g.nodes.len();
        for v in d.preorder_vars() {
            let n = d.node(v).expect("preorder visits graph nodes");
            g.origin.insert((turn, v), g.nodes.len());
            g.nodes.push(DNode {
                turn,
                var: Some(v),
                kind: dnode_kind(n.kind),
                type_name: n.type_name.clone(),
                lexical: n.lexical.clone(),
                canonical: n.canonical.clone(),
                is_reference: n.is_reference(),
            });
        }
        roots.push(g.origin[&(turn, d.root())]);
        for v in d.preorder_vars() {
            let src = g.origin[&(turn, v)];
            for e in d.edges_from(v) {
                match &e.target {
                    EdgeTarget::Node(t) => {
                        let dst = g.origin[&(turn, *t)];
                        g.add(src, &e.label, dst);
                        g.counts.intra += 1;
                    }
                    EdgeTarget::Keyword(k) => {
                        let dst = g.nodes.len();
                        g.nodes.push(DNode {
                            turn,
                            var: None,
                            kind: DNodeKind::Keyword,
                            type_name: k.clone(),
                            lexical: None,
                            canonical: None,
                            is_reference: false,
                        });
                        g.add(src, &e.label, dst);
                        g.counts.intra += 1;
                    }
                    EdgeTarget::Refer(_) => {}
                }
            }
        }
        if cfg.use_turn_nodes {
            let hub = g.nodes.len();
            g.nodes.push(DNode {
                turn,
                var: None,
                kind: DNodeKind::Turn,
                type_name: "turn".into(),
                lexical: None,
                canonical: None,
                is_reference: false,
            });
            for n in first..hub {
                g.add(n, TURN_EDGE, hub);
                g.counts.turn += 1;
            }
            g.turn_nodes.push(hub);
        }
    }
    let hubs = if cfg.use_turn_nodes { g.turn_nodes.clone() } else { roots };
    let max_k = if cfg.use_turn_nodes { cfg.k_max } else { 1 };
    for j in 0..hubs.len() {
        for k in 1..=max_k.min(j) {
            g.add(hubs[j], &hop_relation(k), hubs[j - k]);
            g.counts.hop += 1;
        }
    }
    for ((turn, var), targets) in resolved {
        let Some(src) = g.node_id(*turn, *var).filter(|&i| g.nodes[i].is_reference) else {
            return Err(DGraphError::UnknownReference(*turn, *var));
        };
        for t in targets {
            let dst = g
                .node_id(t.turn, t.var)
                .filter(|_| t.turn < *turn)
                .ok_or(DGraphError::TargetOutsideContext {
                    turn: *turn,
                    var: *var,
                    target: *t,
                })?;
            if cfg.link_resolved_refs {
                g.add(src, REFER_EDGE, dst);
                g.counts.refer += 1;
            }
        }
    }
    Ok(g)
}

/// Context nodes that could be the referent of a reference node entered by
/// `labels`: non-reference, variable-bearing nodes entered by every one of
/// those labels, in turn then preorder.
pub fn candidates(context: &[&DmrGraph], labels: &BTreeSet<&str>) -> Vec<ReferTarget> {
    let mut out = Vec::new();
    if labels.is_empty() {
        return out;
    }
    let mut ordered: Vec<&&DmrGraph> = context.iter().collect();
    ordered.sort_by_key(|d| d.turn());
    for d in ordered {
        for v in d.preorder_vars() {
            let n = d.node(v).expect("preorder visits graph nodes");
            if n.is_reference() || n.kind == NodeKind::Keyword {
                continue;
            }
            let incoming = d.incoming_labels(v);
            if labels.iter().all(|l| incoming.contains(l)) {
                out.push(ReferTarget { turn: d.turn(), var: v });
            }
        }
    }
    out
}

/// One reference node to resolve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefQuery {
    pub turn: u32,
    pub var: Var,
    pub candidates: Vec<ReferTarget>,
    /// Gold referents; empty when unknown.
    pub gold: BTreeSet<ReferTarget>,
}

/// The refer edges written in the DMRs.
pub fn gold_resolutions(dmrs: &[&DmrGraph]) -> Resolutions {
    let mut out = Resolutions::new();
    for d in dmrs {
        for (v, t) in d.refer_edges() {
            out.entry((d.turn(), v)).or_default().insert(t);
        }
    }
    out
}

/// Queries for the reference nodes of `dmrs[j]` against `dmrs[..j]`.
/// References without candidates are skipped.
pub fn queries_at(dmrs: &[&DmrGraph], j: usize) -> Vec<CorefQuery> {
    let d = dmrs[j];
    let context = &dmrs[..j];
    let gold = gold_resolutions(&[d]);
    let mut out = Vec::new();
    for v in d.preorder_vars() {
        if !d.node(v).is_some_and(|n| n.is_reference()) {
            continue;
        }
        let cands = candidates(context, &d.incoming_labels(v));
        if cands.is_empty() {
            log::debug!("reference T:{} N:{v} has no candidates", d.turn());
            continue;
        }
        out.push(CorefQuery {
            turn: d.turn(),
            var: v,
            candidates: cands,
            gold: gold.get(&(d.turn(), v)).cloned().unwrap_or_default(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportNode {
    pub id: usize,
    pub turn: u32,
    pub var: Option<Var>,
    pub kind: DNodeKind,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportQuery {
    pub node: usize,
    pub candidates: Vec<usize>,
    pub gold: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DGraphExport {
    pub nodes: Vec<ExportNode>,
    pub relations: BTreeMap<String, Vec<[usize; 2]>>,
    pub queries: Vec<ExportQuery>,
}

pub fn export_dialogue_graph(g: &DialogueGraph, queries: &[CorefQuery]) -> DGraphExport {
    let nodes = g
        .nodes
        .iter()
        .enumerate()
        .map(|(id, n)| ExportNode {
            id,
            turn: n.turn,
            var: n.var,
            kind: n.kind,
            payload: n.payload(),
        })
        .collect();
    let mut relations: BTreeMap<String, Vec<[usize; 2]>> = BTreeMap::new();
    for e in &g.edges {
        relations.entry(e.rel.clone()).or_default().push([e.src, e.dst]);
    }
    let ids = |ts: &mut dyn Iterator<Item = &ReferTarget>| ts.filter_map(|t| g.node_id(t.turn, t.var)).collect();
    let queries = queries
        .iter()
        .filter_map(|q| {
            Some(ExportQuery {
                node: g.node_id(q.turn, q.var)?,
                candidates: ids(&mut q.candidates.iter()),
                gold: ids(&mut q.gold.iter()),
            })
        })
        .collect();
    DGraphExport {
        nodes,
        relations,
        queries,
    }
}
