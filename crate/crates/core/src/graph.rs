//! DMR graphs, their bracketed text form and Smatch triples.
//!
//! Text form:
//!
//! ```text
//! (v1 / OrderIntent
//!     :order-item (v2 / reference || it
//!         :refer (T:3 N:v1)
//!         :mod (v3 / large || Size)))
//! ```
//!
//! A payload is split on `||`. One segment is a bare type, two are
//! `lexical || type`, three are `lexical || canonical || type`, and a first
//! segment of exactly `reference` makes a reference node whose optional
//! second segment is its lexical value. Lexical values may contain spaces;
//! a payload runs until the next edge label or bracket.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ontology::{self, NEGATIVE, POLARITY, REFER, REFERENCE};

/// A node variable, written `v<n>` with `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub u32);

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl FromStr for Var {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('v')
            .filter(|n| !n.is_empty() && !n.starts_with('0') && n.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|n| n.parse().ok())
            .map(Var)
            .ok_or_else(|| GraphError::BadVariable(s.to_string()))
    }
}

impl Serialize for Var {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Var {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Intent,
    Entity,
    Operator,
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub var: Var,
    pub kind: NodeKind,
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(rename = "lex", default, skip_serializing_if = "Option::is_none")]
    pub lexical: Option<String>,
    #[serde(rename = "canon", default, skip_serializing_if = "Option::is_none")]
    pub canonical: Option<String>,
}

impl Node {
    pub fn new(var: Var, type_name: &str) -> Self {
        Node {
            var,
            kind: kind_of(type_name, false),
            type_name: type_name.to_string(),
            lexical: None,
            canonical: None,
        }
    }

    pub fn entity(var: Var, lexical: &str, type_name: &str) -> Self {
        Node {
            var,
            kind: NodeKind::Entity,
            type_name: type_name.to_string(),
            lexical: Some(lexical.to_string()),
            canonical: None,
        }
    }

    pub fn reference(var: Var, lexical: Option<&str>) -> Self {
        Node {
            var,
            kind: NodeKind::Operator,
            type_name: REFERENCE.to_string(),
            lexical: lexical.map(str::to_string),
            canonical: None,
        }
    }

    pub fn is_reference(&self) -> bool {
        self.kind == NodeKind::Operator && self.type_name == REFERENCE
    }

    /// The payload as written after `/`.
    pub fn payload(&self) -> String {
        if self.is_reference() {
            return match &self.lexical {
                Some(lex) => format!("{REFERENCE} || {lex}"),
                None => REFERENCE.to_string(),
            };
        }
        match (&self.lexical, &self.canonical) {
            (Some(l), Some(c)) => format!("{l} || {c} || {}", self.type_name),
            (Some(l), None) => format!("{l} || {}", self.type_name),
            (None, Some(c)) => format!("|| {c} || {}", self.type_name),
            (None, None) => self.type_name.clone(),
        }
    }
}

/// Kind inferred from a payload. Without an ontology at hand, bare types
/// ending in `Intent` are intents and everything else that is not an
/// operator is an entity.
fn kind_of(type_name: &str, has_value: bool) -> NodeKind {
    if !has_value && ontology::is_operator(type_name) {
        NodeKind::Operator
    } else if type_name == NEGATIVE {
        NodeKind::Keyword
    } else if !has_value && type_name.ends_with("Intent") {
        NodeKind::Intent
    } else {
        NodeKind::Entity
    }
}

/// Decoded payload text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub kind: NodeKind,
    pub type_name: String,
    pub lexical: Option<String>,
    pub canonical: Option<String>,
}

impl Payload {
    pub fn parse(text: &str) -> Option<Payload> {
        let segments: Vec<String> = text
            .split("||")
            .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
            .collect();
        let some = |s: &String| (!s.is_empty()).then(|| s.clone());
        if segments[0] == REFERENCE {
            let lexical = match segments.len() {
                1 => None,
                2 => some(&segments[1]),
                _ => return None,
            };
            return Some(Payload {
                kind: NodeKind::Operator,
                type_name: REFERENCE.into(),
                lexical,
                canonical: None,
            });
        }
        let (lexical, canonical, ty) = match segments.as_slice() {
            [t] => (None, None, t),
            [l, t] => (some(l), None, t),
            [l, c, t] => (some(l), some(c), t),
            _ => return None,
        };
        if ty.is_empty() || ty.contains(char::is_whitespace) {
            return None;
        }
        let kind = kind_of(ty, lexical.is_some() || canonical.is_some());
        if kind == NodeKind::Keyword {
            return None;
        }
        Some(Payload {
            kind,
            type_name: ty.clone(),
            lexical,
            canonical,
        })
    }

    pub fn into_node(self, var: Var) -> Node {
        Node {
            var,
            kind: self.kind,
            type_name: self.type_name,
            lexical: self.lexical,
            canonical: self.canonical,
        }
    }
}

/// Where a resolved reference points: node `var` in turn `turn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReferTarget {
    pub turn: u32,
    pub var: Var,
}

impl fmt::Display for ReferTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T:{} N:{}", self.turn, self.var)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EdgeTarget {
    Node(Var),
    Keyword(String),
    Refer(ReferTarget),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Edge {
    pub source: Var,
    pub label: String,
    pub target: EdgeTarget,
}

impl Edge {
    pub fn node(source: Var, label: &str, target: Var) -> Self {
        Edge {
            source,
            label: label.to_string(),
            target: EdgeTarget::Node(target),
        }
    }

    pub fn negation(source: Var) -> Self {
        Edge {
            source,
            label: POLARITY.to_string(),
            target: EdgeTarget::Keyword(NEGATIVE.to_string()),
        }
    }

    pub fn refer(source: Var, turn: u32, var: Var) -> Self {
        Edge {
            source,
            label: REFER.to_string(),
            target: EdgeTarget::Refer(ReferTarget { turn, var }),
        }
    }

    pub fn target_var(&self) -> Option<Var> {
        match self.target {
            EdgeTarget::Node(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unbalanced brackets")]
    Unbalanced,
    #[error("invalid variable `{0}`")]
    BadVariable(String),
    #[error("duplicate variable {0}")]
    DuplicateVariable(Var),
    #[error("undefined variable {0}")]
    UndefinedVariable(Var),
    #[error("root {0} must be an intent or `and`")]
    RootKind(Var),
    #[error("cycle through {0}")]
    Cycle(Var),
    #[error("{0} is not reachable from the root")]
    Unreachable(Var),
    #[error("`refer` edge on non-reference node {0}")]
    ReferSource(Var),
    #[error("refer target {target} is not earlier than turn {turn}")]
    ReferTurn { target: ReferTarget, turn: u32 },
    #[error("edge `{label}` from {source_var} has an invalid target")]
    BadTarget { source_var: Var, label: String },
    #[error("empty graph")]
    Empty,
}

/// One turn's DMR: a rooted DAG whose `refer` edges point into earlier turns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmrGraph {
    turn: u32,
    root: Var,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<Var, usize>,
}

impl DmrGraph {
    /// Builds a graph and checks every structural invariant.
    pub fn new(turn: u32, root: Var, nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.var.0 == 0 {
                return Err(GraphError::BadVariable(n.var.to_string()));
            }
            if index.insert(n.var, i).is_some() {
                return Err(GraphError::DuplicateVariable(n.var));
            }
        }
        let g = DmrGraph { turn, root, nodes, edges, index };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<(), GraphError> {
        let root = self.node(self.root).ok_or(GraphError::UndefinedVariable(self.root))?;
        let root_ok = root.kind == NodeKind::Intent
            || (root.kind == NodeKind::Operator && root.type_name == ontology::AND);
        if !root_ok {
            return Err(GraphError::RootKind(self.root));
        }
        for e in &self.edges {
            let src = self.node(e.source).ok_or(GraphError::UndefinedVariable(e.source))?;
            let bad = || GraphError::BadTarget {
                source_var: e.source,
                label: e.label.clone(),
            };
            match &e.target {
                EdgeTarget::Node(v) => {
                    if !self.index.contains_key(v) {
                        return Err(GraphError::UndefinedVariable(*v));
                    }
                    if e.label == REFER || e.label == POLARITY {
                        return Err(bad());
                    }
                }
                EdgeTarget::Keyword(k) => {
                    if k != NEGATIVE || e.label == REFER {
                        return Err(bad());
                    }
                }
                EdgeTarget::Refer(t) => {
                    if e.label != REFER {
                        return Err(bad());
                    }
                    if !src.is_reference() {
                        return Err(GraphError::ReferSource(e.source));
                    }
                    if t.turn >= self.turn {
                        return Err(GraphError::ReferTurn { target: *t, turn: self.turn });
                    }
                }
            }
            if e.label == REFER && !src.is_reference() {
                return Err(GraphError::ReferSource(e.source));
            }
        }
        // Acyclic and fully reachable, ignoring refer edges.
        let mut state = vec![0u8; self.nodes.len()];
        self.visit(self.root, &mut state)?;
        if let Some(i) = state.iter().position(|s| *s == 0) {
            return Err(GraphError::Unreachable(self.nodes[i].var));
        }
        Ok(())
    }

    fn visit(&self, v: Var, state: &mut [u8]) -> Result<(), GraphError> {
        let i = self.index[&v];
        match state[i] {
            1 => return Err(GraphError::Cycle(v)),
            2 => return Ok(()),
            _ => {}
        }
        state[i] = 1;
        for child in self.children(v) {
            self.visit(child, state)?;
        }
        state[i] = 2;
        Ok(())
    }

    pub fn turn(&self) -> u32 {
        self.turn
    }

    pub fn root(&self) -> Var {
        self.root
    }

    /// Nodes in definition order, which for parsed graphs is preorder.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, v: Var) -> Option<&Node> {
        self.index.get(&v).map(|&i| &self.nodes[i])
    }

    /// Position of `v` in [`DmrGraph::nodes`].
    pub fn position(&self, v: Var) -> Option<usize> {
        self.index.get(&v).copied()
    }

    pub fn root_node(&self) -> &Node {
        &self.nodes[self.index[&self.root]]
    }

    pub fn edges_from(&self, v: Var) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.source == v)
    }

    /// Variable targets of `v`'s outgoing edges, in edge order.
    pub fn children(&self, v: Var) -> impl Iterator<Item = Var> + '_ {
        self.edges_from(v).filter_map(Edge::target_var)
    }

    /// Labels of edges entering `v`.
    pub fn incoming_labels(&self, v: Var) -> BTreeSet<&str> {
        self.edges
            .iter()
            .filter(|e| e.target_var() == Some(v))
            .map(|e| e.label.as_str())
            .collect()
    }

    pub fn with_turn(mut self, turn: u32) -> Result<Self, GraphError> {
        self.turn = turn;
        self.check()?;
        Ok(self)
    }

    pub fn refer_edges(&self) -> impl Iterator<Item = (Var, ReferTarget)> + '_ {
        self.edges.iter().filter_map(|e| match e.target {
            EdgeTarget::Refer(t) => Some((e.source, t)),
            _ => None,
        })
    }

    pub fn reference_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_reference())
    }

    /// Copy without `refer` edges.
    pub fn without_refer(&self) -> DmrGraph {
        let edges = self
            .edges
            .iter()
            .filter(|e| !matches!(e.target, EdgeTarget::Refer(_)))
            .cloned()
            .collect();
        DmrGraph {
            edges,
            ..self.clone()
        }
    }

    /// Renames variables to `v1, v2, ...` in depth-first preorder, following
    /// edges in their stored order. Nodes are reordered to match.
    pub fn renumbered(&self) -> DmrGraph {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut seen = BTreeSet::new();
        self.preorder(self.root, &mut seen, &mut order);
        let map: HashMap<Var, Var> = order
            .iter()
            .enumerate()
            .map(|(i, v)| (*v, Var(i as u32 + 1)))
            .collect();
        let nodes = order
            .iter()
            .map(|v| Node {
                var: map[v],
                ..self.node(*v).unwrap().clone()
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                source: map[&e.source],
                label: e.label.clone(),
                target: match &e.target {
                    EdgeTarget::Node(v) => EdgeTarget::Node(map[v]),
                    t => t.clone(),
                },
            })
            .collect();
        DmrGraph::new(self.turn, map[&self.root], nodes, edges).expect("renaming preserves validity")
    }

    /// Variables in depth-first preorder from the root.
    pub fn preorder_vars(&self) -> Vec<Var> {
        let mut order = Vec::with_capacity(self.nodes.len());
        self.preorder(self.root, &mut BTreeSet::new(), &mut order);
        order
    }

    fn preorder(&self, v: Var, seen: &mut BTreeSet<Var>, out: &mut Vec<Var>) {
        if !seen.insert(v) {
            return;
        }
        out.push(v);
        for c in self.children(v) {
            self.preorder(c, seen, out);
        }
    }

    /// Node levels on the longest root-to-leaf path; keywords and refer
    /// edges do not count. A single node has depth 1.
    pub fn depth(&self) -> usize {
        fn go(g: &DmrGraph, v: Var, memo: &mut HashMap<Var, usize>) -> usize {
            if let Some(&d) = memo.get(&v) {
                return d;
            }
            let d = 1 + g.children(v).map(|c| go(g, c, memo)).max().unwrap_or(0);
            memo.insert(v, d);
            d
        }
        go(self, self.root, &mut HashMap::new())
    }

    /// Number of variable-bearing nodes (keywords excluded).
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_single_intent(&self) -> bool {
        self.nodes.len() == 1 && self.edges.is_empty() && self.root_node().kind == NodeKind::Intent
    }
}

impl fmt::Display for DmrGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&write_graph(self))
    }
}

// ---------------------------------------------------------------------------
// Reader

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, GraphError> {
        Err(GraphError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn expect(&mut self, c: char) -> Result<(), GraphError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else if self.peek().is_none() && c == ')' {
            Err(GraphError::Unbalanced)
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    /// A run of non-space, non-bracket characters.
    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let rest = self.rest();
        let end = rest
            .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
            .unwrap_or(rest.len());
        self.pos += end;
        &rest[..end]
    }

    /// True at `:` starting an edge label.
    fn at_label(&self) -> bool {
        let mut chars = self.rest().chars();
        chars.next() == Some(':') && chars.next().is_some_and(|c| c.is_ascii_alphabetic())
    }

    fn payload(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        while i < bytes.len() {
            let c = bytes[i];
            if c == b'(' || c == b')' {
                break;
            }
            if c == b':'
                && (i == start || bytes[i - 1].is_ascii_whitespace())
                && bytes.get(i + 1).is_some_and(|b| b.is_ascii_alphabetic())
            {
                break;
            }
            i += 1;
        }
        self.pos = i;
        self.src[start..i].trim_end()
    }
}

struct Reader<'a> {
    sc: Scanner<'a>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl<'a> Reader<'a> {
    fn node(&mut self) -> Result<Var, GraphError> {
        self.sc.expect('(')?;
        let var: Var = self.sc.word().parse()?;
        self.sc.expect('/')?;
        let at = self.sc.pos;
        let text = self.sc.payload();
        let payload = match Payload::parse(text) {
            Some(p) => p,
            None => {
                return Err(GraphError::Syntax {
                    pos: at,
                    msg: format!("invalid payload `{text}`"),
                })
            }
        };
        self.nodes.push(payload.into_node(var));
        loop {
            self.sc.skip_ws();
            if self.sc.at_label() {
                self.sc.pos += 1;
                let label = self.sc.word().to_string();
                if !ontology::is_edge_label(&label) {
                    return self.sc.err(format!("invalid edge label `{label}`"));
                }
                let target = self.target()?;
                self.edges.push(Edge {
                    source: var,
                    label,
                    target,
                });
            } else {
                break;
            }
        }
        self.sc.expect(')')?;
        Ok(var)
    }

    fn target(&mut self) -> Result<EdgeTarget, GraphError> {
        self.sc.skip_ws();
        match self.sc.peek() {
            Some('(') => {
                let after = self.sc.rest()[1..].trim_start();
                if after.starts_with("T:") {
                    self.sc.pos += 1;
                    self.refer_target().map(EdgeTarget::Refer)
                } else {
                    self.node().map(EdgeTarget::Node)
                }
            }
            Some(')') | None => self.sc.err("missing edge target"),
            _ => {
                let word = self.sc.word();
                if word == NEGATIVE {
                    Ok(EdgeTarget::Keyword(word.to_string()))
                } else {
                    word.parse().map(EdgeTarget::Node)
                }
            }
        }
    }

    fn refer_target(&mut self) -> Result<ReferTarget, GraphError> {
        let t = self.sc.word();
        let turn = t
            .strip_prefix("T:")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| GraphError::Syntax {
                pos: self.sc.pos,
                msg: format!("expected `T:<turn>`, found `{t}`"),
            })?;
        let n = self.sc.word();
        let var = n
            .strip_prefix("N:")
            .ok_or_else(|| GraphError::Syntax {
                pos: self.sc.pos,
                msg: format!("expected `N:<var>`, found `{n}`"),
            })?
            .parse()?;
        self.sc.expect(')')?;
        Ok(ReferTarget { turn, var })
    }
}

/// Strict reader: brackets must balance and every invariant must hold.
pub fn read_graph(text: &str, turn: u32) -> Result<DmrGraph, GraphError> {
    let mut reader = Reader {
        sc: Scanner { src: text, pos: 0 },
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    reader.sc.skip_ws();
    if reader.sc.peek().is_none() {
        return Err(GraphError::Empty);
    }
    let root = reader.node()?;
    reader.sc.skip_ws();
    if reader.sc.peek().is_some() {
        return if reader.sc.peek() == Some(')') {
            Err(GraphError::Unbalanced)
        } else {
            reader.sc.err("trailing input after graph")
        };
    }
    DmrGraph::new(turn, root, reader.nodes, reader.edges)
}

// ---------------------------------------------------------------------------
// Writer

fn write_node(g: &DmrGraph, v: Var, depth: usize, pretty: bool, seen: &mut BTreeSet<Var>, out: &mut String) {
    use std::fmt::Write as _;
    seen.insert(v);
    let node = g.node(v).expect("edge targets are defined");
    let _ = write!(out, "({v} / {}", node.payload());
    for e in g.edges_from(v) {
        if pretty {
            out.push('\n');
            out.push_str(&"    ".repeat(depth + 1));
        } else {
            out.push(' ');
        }
        let _ = write!(out, ":{} ", e.label);
        match &e.target {
            EdgeTarget::Node(t) if seen.contains(t) => {
                let _ = write!(out, "{t}");
            }
            EdgeTarget::Node(t) => write_node(g, *t, depth + 1, pretty, seen, out),
            EdgeTarget::Keyword(k) => out.push_str(k),
            EdgeTarget::Refer(t) => {
                let _ = write!(out, "({t})");
            }
        }
    }
    out.push(')');
}

/// Indented text form. Shared nodes are written in full once and as a bare
/// variable afterwards.
pub fn write_graph(g: &DmrGraph) -> String {
    let mut out = String::new();
    write_node(g, g.root, 0, true, &mut BTreeSet::new(), &mut out);
    out
}

/// Single-line text form.
pub fn write_graph_compact(g: &DmrGraph) -> String {
    let mut out = String::new();
    write_node(g, g.root, 0, false, &mut BTreeSet::new(), &mut out);
    out
}

// ---------------------------------------------------------------------------
// Triples

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripleKind {
    Instance,
    Top,
    Lex,
    Canon,
    Relation,
    KeywordAttr,
    ReferAttr,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TripleArg {
    Var(Var),
    Const(String),
}

/// `(relation, source, target)`; the source is always a variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub kind: TripleKind,
    pub relation: String,
    pub source: Var,
    pub target: TripleArg,
}

impl Triple {
    fn attr(kind: TripleKind, relation: &str, source: Var, value: impl Into<String>) -> Self {
        Triple {
            kind,
            relation: relation.to_string(),
            source,
            target: TripleArg::Const(value.into()),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            TripleArg::Var(v) => write!(f, "({}, {}, {})", self.relation, self.source, v),
            TripleArg::Const(c) => write!(f, "({}, {}, {c:?})", self.relation, self.source),
        }
    }
}

pub fn to_triples(g: &DmrGraph, include_refer: bool) -> Vec<Triple> {
    use TripleKind::*;
    let mut out = Vec::with_capacity(g.nodes.len() * 2 + g.edges.len() + 1);
    out.push(Triple::attr(Top, "top", g.root, "top"));
    for n in &g.nodes {
        out.push(Triple::attr(Instance, "instance", n.var, n.type_name.clone()));
        if let Some(l) = &n.lexical {
            out.push(Triple::attr(Lex, "lex", n.var, l.clone()));
        }
        if let Some(c) = &n.canonical {
            out.push(Triple::attr(Canon, "canon", n.var, c.clone()));
        }
    }
    for e in &g.edges {
        match &e.target {
            EdgeTarget::Node(t) => out.push(Triple {
                kind: Relation,
                relation: e.label.clone(),
                source: e.source,
                target: TripleArg::Var(*t),
            }),
            EdgeTarget::Keyword(k) => out.push(Triple::attr(KeywordAttr, &e.label, e.source, k.clone())),
            EdgeTarget::Refer(t) if include_refer => {
                out.push(Triple::attr(ReferAttr, &e.label, e.source, t.to_string()))
            }
            EdgeTarget::Refer(_) => {}
        }
    }
    let mut seen = BTreeSet::new();
    out.retain(|t| seen.insert(t.clone()));
    out
}

// ---------------------------------------------------------------------------
// JSON interchange

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetRecord {
    Refer { turn: u32, var: Var },
    Value(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: Var,
    pub label: String,
    pub target: TargetRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub turn: u32,
    pub root: Var,
    pub nodes: Vec<Node>,
    pub edges: Vec<EdgeRecord>,
}

impl From<&DmrGraph> for GraphRecord {
    fn from(g: &DmrGraph) -> Self {
        let edges = g
            .edges
            .iter()
            .map(|e| EdgeRecord {
                src: e.source,
                label: e.label.clone(),
                target: match &e.target {
                    EdgeTarget::Node(v) => TargetRecord::Value(v.to_string()),
                    EdgeTarget::Keyword(k) => TargetRecord::Value(k.clone()),
                    EdgeTarget::Refer(t) => TargetRecord::Refer { turn: t.turn, var: t.var },
                },
            })
            .collect();
        GraphRecord {
            turn: g.turn,
            root: g.root,
            nodes: g.nodes.clone(),
            edges,
        }
    }
}

impl TryFrom<GraphRecord> for DmrGraph {
    type Error = GraphError;

    fn try_from(r: GraphRecord) -> Result<Self, Self::Error> {
        let edges = r
            .edges
            .into_iter()
            .map(|e| {
                let target = match e.target {
                    TargetRecord::Refer { turn, var } => EdgeTarget::Refer(ReferTarget { turn, var }),
                    TargetRecord::Value(s) if s == NEGATIVE => EdgeTarget::Keyword(s),
                    TargetRecord::Value(s) => EdgeTarget::Node(s.parse()?),
                };
                Ok(Edge {
                    source: e.src,
                    label: e.label,
                    target,
                })
            })
            .collect::<Result<Vec<_>, GraphError>>()?;
        DmrGraph::new(r.turn, r.root, r.nodes, edges)
    }
}

impl Serialize for DmrGraph {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GraphRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DmrGraph {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let record = GraphRecord::deserialize(d)?;
        DmrGraph::try_from(record).map_err(serde::de::Error::custom)
    }
}

/// Nodes keyed by variable, for callers that want lookups without a graph.
pub fn node_map(g: &DmrGraph) -> BTreeMap<Var, &Node> {
    g.nodes.iter().map(|n| (n.var, n)).collect()
}
