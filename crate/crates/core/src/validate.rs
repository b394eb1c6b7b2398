//! Ontology validation of DMR graphs and parser error classification.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;

use crate::graph::{DmrGraph, Edge, EdgeTarget, Node, NodeKind, Var};
use crate::linearize::Delinearized;
use crate::metrics::smatch::exact_match;
use crate::ontology::{op_index, ArgSpec, Ontology, AND, INTENT, OR, POLARITY, REFER};

pub const ORDER_INTENT: &str = "OrderIntent";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    UnknownType,
    BadRoot,
    BadEdgeLabel,
    BadEdgeTarget,
    BadPolarityHost,
    BadRefer,
    OpLabelGap,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::UnknownType => "unknown-type",
            ViolationCode::BadRoot => "bad-root",
            ViolationCode::BadEdgeLabel => "bad-edge-label",
            ViolationCode::BadEdgeTarget => "bad-edge-target",
            ViolationCode::BadPolarityHost => "bad-polarity-host",
            ViolationCode::BadRefer => "bad-refer",
            ViolationCode::OpLabelGap => "op-label-gap",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Locus {
    Node { var: Var },
    Edge { source: Var, label: String, target: String },
}

impl Locus {
    fn edge(e: &Edge) -> Self {
        let target = match &e.target {
            EdgeTarget::Node(v) => v.to_string(),
            EdgeTarget::Keyword(k) => k.clone(),
            EdgeTarget::Refer(t) => t.to_string(),
        };
        Locus::Edge {
            source: e.source,
            label: e.label.clone(),
            target,
        }
    }
}

impl fmt::Display for Locus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Locus::Node { var } => write!(f, "{var}"),
            Locus::Edge { source, label, target } => write!(f, "{source} :{label} {target}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub locus: Locus,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.locus, self.message)
    }
}

struct Checker<'a> {
    o: &'a Ontology,
    g: &'a DmrGraph,
    out: BTreeSet<Violation>,
    reference_args: BTreeMap<String, ArgSpec>,
}

impl<'a> Checker<'a> {
    fn push(&mut self, code: ViolationCode, locus: Locus, message: String) {
        self.out.insert(Violation { code, locus, message });
    }

    fn is_coordinator(n: &Node) -> bool {
        n.kind == NodeKind::Operator && (n.type_name == AND || n.type_name == OR)
    }

    fn known(&self, n: &Node) -> bool {
        n.kind == NodeKind::Operator || self.o.contains(&n.type_name)
    }

    /// Edges at which the subgraph under `via` stops fitting `spec`. Operators
    /// are looked through to their conjuncts.
    fn inadmissible(&self, spec: &ArgSpec, via: &'a Edge, seen: &mut HashSet<Var>) -> Vec<&'a Edge> {
        let v = match &via.target {
            EdgeTarget::Keyword(k) => {
                return if spec.allows_keyword.as_deref() == Some(k) { vec![] } else { vec![via] };
            }
            EdgeTarget::Refer(_) => return vec![],
            EdgeTarget::Node(v) => *v,
        };
        let n = self.g.node(v).expect("edge targets exist");
        if Self::is_coordinator(n) {
            if !seen.insert(v) {
                return vec![];
            }
            return self
                .g
                .edges_from(v)
                .filter(|e| op_index(&e.label).is_some())
                .flat_map(|e| self.inadmissible(spec, e, seen))
                .collect();
        }
        let ok = if n.is_reference() {
            self.o.admits_entities(spec)
        } else if !self.o.contains(&n.type_name) {
            true
        } else {
            self.o.admits_type(spec, &n.type_name)
        };
        if ok {
            vec![]
        } else {
            vec![via]
        }
    }

    fn check_nodes(&mut self) {
        for n in self.g.nodes() {
            if !self.known(n) {
                self.push(
                    ViolationCode::UnknownType,
                    Locus::Node { var: n.var },
                    format!("type {} is not declared", n.type_name),
                );
            }
            if Self::is_coordinator(n) {
                let mut idx: Vec<usize> = self.g.edges_from(n.var).filter_map(|e| op_index(&e.label)).collect();
                idx.sort_unstable();
                let contiguous = !idx.is_empty() && idx.iter().enumerate().all(|(i, k)| *k == i + 1);
                if !contiguous {
                    self.push(
                        ViolationCode::OpLabelGap,
                        Locus::Node { var: n.var },
                        format!("{} operands must be labelled op1..opN without gaps", n.type_name),
                    );
                }
            }
        }
    }

    fn check_root(&mut self) {
        let root = self.g.root_node();
        if root.type_name == AND {
            let spec = ArgSpec {
                edge_label: String::new(),
                allowed_targets: [INTENT.to_string()].into(),
                allows_keyword: None,
            };
            let mut seen = HashSet::from([root.var]);
            let bad: Vec<&Edge> = self
                .g
                .edges_from(root.var)
                .filter(|e| op_index(&e.label).is_some())
                .flat_map(|e| self.inadmissible(&spec, e, &mut seen))
                .collect();
            for e in bad {
                self.push(ViolationCode::BadRoot, Locus::edge(e), "a root conjunction may only join intents".into());
            }
        } else if self.known(root) && !self.o.is_intent(&root.type_name) {
            self.push(
                ViolationCode::BadRoot,
                Locus::Node { var: root.var },
                format!("root must be an intent or a conjunction, found {}", root.type_name),
            );
        }
    }

    fn check_edges(&mut self) {
        let g = self.g;
        for n in g.nodes() {
            let args = if Self::is_coordinator(n) {
                for e in g.edges_from(n.var).filter(|e| op_index(&e.label).is_none()) {
                    self.push(
                        ViolationCode::BadEdgeLabel,
                        Locus::edge(e),
                        format!("{} takes only op-numbered edges", n.type_name),
                    );
                }
                continue;
            } else if n.is_reference() {
                self.reference_args.clone()
            } else {
                match self.o.resolve_arguments(&n.type_name) {
                    Ok(a) => a,
                    Err(_) => continue,
                }
            };
            for e in g.edges_from(n.var) {
                if e.label == REFER {
                    continue;
                }
                if e.label == POLARITY && !n.is_reference() && !self.o.is_entity(&n.type_name) {
                    self.push(
                        ViolationCode::BadPolarityHost,
                        Locus::edge(e),
                        format!("polarity is only allowed on entities, not {}", n.type_name),
                    );
                    continue;
                }
                let Some(spec) = args.get(&e.label) else {
                    self.push(
                        ViolationCode::BadEdgeLabel,
                        Locus::edge(e),
                        format!("{} has no argument :{}", n.type_name, e.label),
                    );
                    continue;
                };
                let mut seen = HashSet::new();
                for bad in self.inadmissible(spec, e, &mut seen) {
                    self.push(
                        ViolationCode::BadEdgeTarget,
                        Locus::edge(bad),
                        format!("target does not fit {}.{}", n.type_name, e.label),
                    );
                }
            }
        }
    }
}

/// All ontology violations of `g`, sorted and without duplicates. Refer
/// targets are not resolved; see [`validate_in_context`].
pub fn validate(o: &Ontology, g: &DmrGraph) -> Vec<Violation> {
    let mut c = Checker {
        o,
        g,
        out: BTreeSet::new(),
        reference_args: o.entity_argument_union(),
    };
    c.check_nodes();
    c.check_root();
    c.check_edges();
    c.out.into_iter().collect()
}

/// Like [`validate`], and also requires every refer edge to name an existing
/// variable of an earlier graph. `context` holds the preceding graphs of the
/// dialogue in any order, keyed by their turn.
pub fn validate_in_context(o: &Ontology, g: &DmrGraph, context: &[&DmrGraph]) -> Vec<Violation> {
    let mut out = validate(o, g);
    for e in g.edges() {
        let EdgeTarget::Refer(t) = &e.target else { continue };
        let found = context
            .iter()
            .find(|c| c.turn() == t.turn)
            .map(|c| c.node(t.var).is_some_and(|n| n.kind != NodeKind::Keyword));
        let message = match found {
            None => format!("no graph for turn {}", t.turn),
            Some(false) => format!("turn {} has no node {}", t.turn, t.var),
            Some(true) => continue,
        };
        out.push(Violation {
            code: ViolationCode::BadRefer,
            locus: Locus::edge(e),
            message,
        });
    }
    out.sort();
    out.dedup();
    out
}

/// Splits on whitespace and detaches punctuation, so "pizza," yields
/// "pizza" and ",". Apostrophes and hyphens inside words are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        let chars: Vec<char> = word.chars().collect();
        for (i, &c) in chars.iter().enumerate() {
            let inner = i > 0 && i + 1 < chars.len() && chars[i - 1].is_alphanumeric() && chars[i + 1].is_alphanumeric();
            if c.is_alphanumeric() || ((c == '\'' || c == '-' || c == '.') && inner) {
                cur.push(c);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Nodes whose lexical value is not a contiguous token span of the utterance.
pub fn uncopied_lexicals(g: &DmrGraph, utterance: &str) -> Vec<Var> {
    let toks = tokenize(utterance);
    g.nodes()
        .iter()
        .filter(|n| {
            n.lexical.as_ref().is_some_and(|lex| {
                let span = tokenize(lex);
                !span.is_empty() && !toks.windows(span.len()).any(|w| w == span.as_slice())
            })
        })
        .map(|n| n.var)
        .collect()
}

/// A parser output: a graph, or the fallback produced for unrecoverable text.
#[derive(Debug, Clone)]
pub enum Prediction {
    Graph(DmrGraph),
    Invalid,
}

impl From<Delinearized> for Prediction {
    fn from(d: Delinearized) -> Self {
        if d.is_fallback() {
            Prediction::Invalid
        } else {
            Prediction::Graph(d.graph)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ErrorFlags {
    pub invalid_graph: bool,
    pub ontology_mismatch: bool,
    pub wrong_intent: bool,
    pub compositional: bool,
}

impl ErrorFlags {
    pub fn any(&self) -> bool {
        self.invalid_graph || self.ontology_mismatch || self.wrong_intent || self.compositional
    }
}

fn intent_names(o: &Ontology, g: &DmrGraph) -> BTreeSet<String> {
    g.nodes()
        .iter()
        .filter(|n| o.is_intent(&n.type_name) || (!o.contains(&n.type_name) && n.kind == NodeKind::Intent))
        .map(|n| n.type_name.clone())
        .collect()
}

fn is_order(o: &Ontology, n: &Node) -> bool {
    if o.contains(ORDER_INTENT) {
        o.is_subtype(&n.type_name, ORDER_INTENT).unwrap_or(false)
    } else {
        n.type_name == ORDER_INTENT
    }
}

/// The part of `g` reachable from its order intents. Several are joined
/// under a fresh `and`.
pub fn order_subgraph(o: &Ontology, g: &DmrGraph) -> Option<DmrGraph> {
    let g = g.without_refer();
    let roots: Vec<Var> = g.nodes().iter().filter(|n| is_order(o, n)).map(|n| n.var).collect();
    if roots.is_empty() {
        return None;
    }
    let mut keep = BTreeSet::new();
    let mut stack = roots.clone();
    while let Some(v) = stack.pop() {
        if keep.insert(v) {
            stack.extend(g.children(v));
        }
    }
    let mut nodes: Vec<Node> = g.nodes().iter().filter(|n| keep.contains(&n.var)).cloned().collect();
    let mut edges: Vec<Edge> = g.edges().iter().filter(|e| keep.contains(&e.source)).cloned().collect();
    let root = if roots.len() == 1 {
        roots[0]
    } else {
        let top = Var(g.nodes().iter().map(|n| n.var.0).max().unwrap_or(0) + 1);
        nodes.insert(0, Node::new(top, AND));
        for (i, r) in roots.iter().enumerate() {
            edges.push(Edge::node(top, &format!("op{}", i + 1), *r));
        }
        top
    };
    DmrGraph::new(g.turn(), root, nodes, edges).ok()
}

/// Flags the error classes a prediction falls into. A fallback prediction
/// is only `invalid_graph`; nothing else about it is meaningful.
pub fn classify_errors(o: &Ontology, gold: &DmrGraph, pred: &Prediction) -> ErrorFlags {
    let Prediction::Graph(p) = pred else {
        return ErrorFlags {
            invalid_graph: true,
            ..Default::default()
        };
    };
    let compositional = match (order_subgraph(o, gold), order_subgraph(o, p)) {
        (None, None) => false,
        (Some(a), Some(b)) => !exact_match(&a, &b),
        _ => true,
    };
    ErrorFlags {
        invalid_graph: false,
        ontology_mismatch: !validate(o, p).is_empty(),
        wrong_intent: intent_names(o, gold) != intent_names(o, p),
        compositional,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::read_graph;

    fn g(s: &str) -> DmrGraph {
        read_graph(s, 1).unwrap()
    }

    fn codes(s: &str) -> Vec<ViolationCode> {
        validate(&Ontology::fastfood(), &g(s)).into_iter().map(|v| v.code).collect()
    }

    #[test]
    fn valid_graphs() {
        for s in [
            "(v1 / OrderIntent :order-item (v2 / pizza || Pizza :mod (v3 / large || Size) :polarity -))",
            "(v1 / and :op1 (v2 / GreetingIntent) :op2 (v3 / OrderIntent :order-item (v4 / and :op1 (v5 / coke || DrinkItem) :op2 (v6 / fries || Side))))",
            "(v1 / OrderIntent :order-item (v2 / reference || it :mod (v3 / small || Size) :polarity -))",
            "(v1 / OrderIntent :order-item (v2 / or :op1 (v3 / a || Pizza) :op2 (v4 / b || Burger)))",
        ] {
            assert!(codes(s).is_empty(), "{s}: {:?}", codes(s));
        }
    }

    #[test]
    fn each_code() {
        assert_eq!(codes("(v1 / OrderIntent :order-item (v2 / x || Taco))"), [ViolationCode::UnknownType]);
        assert_eq!(codes("(v1 / OrderIntent :size (v2 / x || Pizza))"), [ViolationCode::BadEdgeLabel]);
        assert_eq!(codes("(v1 / OrderIntent :order-item (v2 / large || Size))"), [ViolationCode::BadEdgeTarget]);
        assert_eq!(codes("(v1 / OrderIntent :polarity -)"), [ViolationCode::BadPolarityHost]);
        assert_eq!(codes("(v1 / and :op1 (v2 / OrderIntent) :op3 (v3 / ThankYouIntent))"), [ViolationCode::OpLabelGap]);
        assert_eq!(codes("(v1 / and :op1 (v2 / OrderIntent) :op2 (v3 / x || Pizza))"), [ViolationCode::BadRoot]);
    }

    #[test]
    fn entity_root_is_bad_root() {
        let root = read_graph("(v1 / x || Pizza)", 0);
        if let Ok(r) = root {
            let v = validate(&Ontology::fastfood(), &r);
            assert!(v.iter().any(|v| v.code == ViolationCode::BadRoot));
        }
    }

    #[test]
    fn conjunction_target_checked_per_conjunct() {
        let v = validate(
            &Ontology::fastfood(),
            &g("(v1 / OrderIntent :order-item (v2 / and :op1 (v3 / a || Pizza) :op2 (v4 / big || Size)))"),
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, ViolationCode::BadEdgeTarget);
        assert_eq!(
            v[0].locus,
            Locus::Edge {
                source: Var(2),
                label: "op2".into(),
                target: "v4".into()
            }
        );
    }

    #[test]
    fn refer_in_context() {
        let o = Ontology::fastfood();
        let prev = read_graph("(v1 / OrderIntent :order-item (v2 / pizza || Pizza))", 0).unwrap();
        let cur = read_graph("(v1 / OrderIntent :order-item (v2 / reference || it :refer (T:0 N:v2)))", 1).unwrap();
        assert!(validate_in_context(&o, &cur, &[&prev]).is_empty());
        let dangling = read_graph("(v1 / OrderIntent :order-item (v2 / reference || it :refer (T:0 N:v7)))", 1).unwrap();
        let v = validate_in_context(&o, &dangling, &[&prev]);
        assert_eq!(v.iter().map(|v| v.code).collect::<Vec<_>>(), [ViolationCode::BadRefer]);
    }

    #[test]
    fn token_copy() {
        assert_eq!(tokenize("I'd like a pizza, please."), ["I'd", "like", "a", "pizza", ",", "please", "."]);
        let d = g("(v1 / OrderIntent :order-item (v2 / large pizza || Pizza :quant (v3 / two || Quantity)))");
        assert!(uncopied_lexicals(&d, "two large pizza, thanks").is_empty());
        assert_eq!(uncopied_lexicals(&d, "two pizza large"), [Var(2)]);
    }

    #[test]
    fn error_classes() {
        let o = Ontology::fastfood();
        let gold = g("(v1 / and :op1 (v2 / OrderIntent :order-item (v3 / a || Pizza)) :op2 (v4 / ThankYouIntent))");
        let same = Prediction::Graph(gold.renumbered());
        assert!(!classify_errors(&o, &gold, &same).any());
        assert_eq!(
            classify_errors(&o, &gold, &Prediction::Invalid),
            ErrorFlags {
                invalid_graph: true,
                ..Default::default()
            }
        );
        let missing_thanks = Prediction::Graph(g("(v1 / OrderIntent :order-item (v2 / a || Pizza))"));
        let f = classify_errors(&o, &gold, &missing_thanks);
        assert!(f.wrong_intent && !f.compositional && !f.ontology_mismatch);
        let wrong_item = Prediction::Graph(g("(v1 / and :op1 (v2 / OrderIntent :order-item (v3 / b || Pizza)) :op2 (v4 / ThankYouIntent))"));
        let f = classify_errors(&o, &gold, &wrong_item);
        assert!(f.compositional && !f.wrong_intent);
    }
}
