//! Seeded generators: random ontology-valid graphs, graph perturbations, and
//! a synthetic coreference corpus.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Dialogue, Role, Split, Turn};
use crate::graph::{DmrGraph, Edge, EdgeTarget, Node, NodeKind, ReferTarget, Var};
use crate::ontology::{ArgSpec, Ontology, AND, OR};

/// Types without subtypes.
pub fn leaf_types(o: &Ontology) -> Vec<String> {
    let parents: BTreeSet<&str> = o.types().filter_map(|t| t.parent.as_deref()).collect();
    o.types().map(|t| t.name.as_str()).filter(|t| !parents.contains(t)).map(str::to_string).collect()
}

fn lexicon(ty: &str) -> &'static [&'static str] {
    match ty {
        "Pizza" => &["pepperoni pizza", "margherita", "veggie pizza", "hawaiian"],
        "Burger" => &["cheeseburger", "burger", "chicken burger", "whopper"],
        "Sandwich" => &["club sandwich", "blt", "sub"],
        "Side" => &["fries", "onion rings", "salad"],
        "DrinkItem" => &["coke", "lemonade", "iced tea", "sprite"],
        "Size" => &["large", "small", "medium"],
        "Quantity" => &["two", "one", "three", "a couple"],
        "Ingredient" => &["onions", "cheese", "pickles", "bacon"],
        "Address" => &["12 main street", "the office"],
        "PaymentMethod" => &["card", "cash"],
        "Name" => &["alex", "sam", "kim"],
        _ => &["thing", "stuff"],
    }
}

struct Builder<'a> {
    o: &'a Ontology,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    max: usize,
    turn: u32,
    intents: Vec<String>,
    entities: Vec<String>,
}

impl Builder<'_> {
    fn full(&self) -> bool {
        self.nodes.len() >= self.max
    }

    fn push(&mut self, make: impl FnOnce(Var) -> Node) -> Option<Var> {
        if self.full() {
            return None;
        }
        let v = Var(self.nodes.len() as u32 + 1);
        self.nodes.push(make(v));
        Some(v)
    }

    fn intent(&mut self, rng: &mut impl Rng) -> Option<Var> {
        let ty = self.intents.choose(rng).cloned()?;
        let v = self.push(|v| Node::new(v, &ty))?;
        let args = self.o.resolve_arguments(&ty).unwrap_or_default();
        self.expand(v, &args, 0, 0.6, rng);
        Some(v)
    }

    fn expand(&mut self, v: Var, args: &BTreeMap<String, ArgSpec>, depth: usize, p: f64, rng: &mut impl Rng) {
        for (label, spec) in args {
            if depth < 3 && rng.random_bool(p) {
                self.fill(v, label, spec, depth, rng);
            }
        }
    }

    fn entity(&mut self, ty: &str, depth: usize, rng: &mut impl Rng) -> Option<Var> {
        let lex = lexicon(ty).choose(rng).copied().unwrap_or("thing");
        let canon = rng.random_bool(0.15).then(|| format!("{}-{}", ty, lex.split(' ').next().unwrap_or(lex)));
        let v = self.push(|v| Node {
            canonical: canon,
            ..Node::entity(v, lex, ty)
        })?;
        let args = self.o.resolve_arguments(ty).unwrap_or_default();
        self.expand(v, &args, depth + 1, 0.2, rng);
        Some(v)
    }

    fn fill(&mut self, src: Var, label: &str, spec: &ArgSpec, depth: usize, rng: &mut impl Rng) {
        if let Some(k) = &spec.allows_keyword {
            if spec.allowed_targets.is_empty() || rng.random_bool(0.3) {
                self.edges.push(Edge {
                    source: src,
                    label: label.to_string(),
                    target: EdgeTarget::Keyword(k.clone()),
                });
                return;
            }
        }
        let fits: Vec<String> = self.entities.iter().filter(|t| self.o.admits_type(spec, t)).cloned().collect();
        if fits.is_empty() || self.full() {
            return;
        }
        let roll: f64 = rng.random();
        if roll < 0.12 && self.nodes.len() + 3 <= self.max {
            let op = if rng.random_bool(0.7) { AND } else { OR };
            let Some(c) = self.push(|v| Node::new(v, op)) else { return };
            self.edges.push(Edge::node(src, label, c));
            for i in 1..=2 {
                let ty = fits.choose(rng).expect("nonempty").clone();
                if let Some(t) = self.entity(&ty, depth + 1, rng) {
                    self.edges.push(Edge::node(c, &format!("op{i}"), t));
                }
            }
            if self.edges_from_count(c) == 0 {
                // an operator needs an operand
                self.nodes.pop();
                self.edges.retain(|e| e.target != EdgeTarget::Node(c));
            }
        } else if roll < 0.22 && self.o.admits_entities(spec) {
            let lex = *["it", "that one", "the same"].choose(rng).expect("nonempty");
            let Some(r) = self.push(|v| Node::reference(v, Some(lex))) else { return };
            self.edges.push(Edge::node(src, label, r));
            if self.turn > 0 && rng.random_bool(0.6) {
                let t = rng.random_range(0..self.turn);
                self.edges.push(Edge::refer(r, t, Var(rng.random_range(1..5))));
            }
            if depth < 2 && rng.random_bool(0.3) {
                let union = self.o.entity_argument_union();
                if let Some((label, spec)) = union.iter().find(|(l, _)| l.as_str() == crate::ontology::MOD) {
                    self.fill(r, label, spec, depth + 1, rng);
                }
            }
        } else {
            let ty = fits.choose(rng).expect("nonempty").clone();
            if let Some(t) = self.entity(&ty, depth, rng) {
                self.edges.push(Edge::node(src, label, t));
            }
        }
    }

    fn edges_from_count(&self, v: Var) -> usize {
        self.edges.iter().filter(|e| e.source == v).count()
    }
}

/// A random tree-shaped graph that passes validation against `o`, with at
/// most `max_nodes` variables. Reference nodes may carry refer edges into
/// turns before `turn`.
pub fn random_graph(o: &Ontology, rng: &mut impl Rng, max_nodes: usize, turn: u32) -> DmrGraph {
    let leaves = leaf_types(o);
    let mut b = Builder {
        o,
        nodes: Vec::new(),
        edges: Vec::new(),
        max: max_nodes.max(1),
        turn,
        intents: leaves.iter().filter(|t| o.is_intent(t)).cloned().collect(),
        entities: leaves.iter().filter(|t| o.is_entity(t)).cloned().collect(),
    };
    let root = if max_nodes >= 3 && rng.random_bool(0.25) {
        let r = b.push(|v| Node::new(v, AND)).expect("budget");
        for i in 1..=rng.random_range(2..=3) {
            if let Some(c) = b.intent(rng) {
                b.edges.push(Edge::node(r, &format!("op{i}"), c));
            }
        }
        r
    } else {
        b.intent(rng).expect("budget")
    };
    DmrGraph::new(turn, root, b.nodes, b.edges).expect("generator builds valid trees")
}

/// One random edit: retype, relexicalize, drop a leaf, relabel an edge, or
/// add a leaf. The result is a valid graph but need not fit any ontology.
pub fn mutate(g: &DmrGraph, rng: &mut impl Rng) -> DmrGraph {
    const TYPES: [&str; 6] = ["Pizza", "Burger", "Size", "DrinkItem", "OrderIntent", "Quantity"];
    const LABELS: [&str; 4] = ["mod", "quant", "order-item", "ingredient"];
    for _ in 0..16 {
        let mut nodes = g.nodes().to_vec();
        let mut edges = g.edges().to_vec();
        let pick = rng.random_range(0..nodes.len());
        match rng.random_range(0..5) {
            0 => {
                let n = &mut nodes[pick];
                if n.kind == NodeKind::Operator {
                    continue;
                }
                n.type_name = TYPES.choose(rng).expect("nonempty").to_string();
                n.kind = if n.type_name.ends_with("Intent") && n.lexical.is_none() { NodeKind::Intent } else { NodeKind::Entity };
                if n.kind == NodeKind::Entity && n.lexical.is_none() {
                    n.lexical = Some("x".into());
                }
            }
            1 => {
                let n = &mut nodes[pick];
                if n.lexical.is_none() {
                    continue;
                }
                n.lexical = Some(lexicon("Size").choose(rng).expect("nonempty").to_string());
            }
            2 => {
                let v = nodes[pick].var;
                if v == g.root() || g.children(v).next().is_some() {
                    continue;
                }
                nodes.remove(pick);
                edges.retain(|e| e.source != v && e.target != EdgeTarget::Node(v));
            }
            3 => {
                let idx: Vec<usize> = (0..edges.len()).filter(|&i| matches!(edges[i].target, EdgeTarget::Node(_))).collect();
                let Some(&i) = idx.choose(rng) else { continue };
                edges[i].label = LABELS.choose(rng).expect("nonempty").to_string();
            }
            _ => {
                let v = Var(nodes.iter().map(|n| n.var.0).max().unwrap_or(0) + 1);
                let parent = nodes[pick].var;
                nodes.push(Node::entity(v, "extra", "Size"));
                edges.push(Edge::node(parent, "mod", v));
            }
        }
        if let Ok(m) = DmrGraph::new(g.turn(), g.root(), nodes, edges) {
            return m;
        }
    }
    g.clone()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorefBenchConfig {
    pub dialogues: usize,
    pub seed: u64,
    pub min_customer_turns: usize,
    pub max_customer_turns: usize,
    /// Train and dev shares; the rest is test.
    pub train_share: f64,
    pub dev_share: f64,
}

impl Default for CorefBenchConfig {
    fn default() -> Self {
        CorefBenchConfig {
            dialogues: 200,
            seed: 7,
            min_customer_turns: 5,
            max_customer_turns: 8,
            train_share: 0.6,
            dev_share: 0.15,
        }
    }
}

const ITEM_TYPES: [&str; 5] = ["Pizza", "Burger", "Sandwich", "Side", "DrinkItem"];

fn noun(ty: &str) -> &'static str {
    match ty {
        "Pizza" => "pizza",
        "Burger" => "burger",
        "Sandwich" => "sandwich",
        "Side" => "side",
        _ => "drink",
    }
}

#[derive(Clone)]
struct Item {
    turn: u32,
    var: Var,
    ty: &'static str,
}

struct TurnBuilder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    order: Var,
    words: Vec<String>,
}

impl TurnBuilder {
    fn new(rng: &mut impl Rng) -> (Self, Var) {
        let mut t = TurnBuilder {
            nodes: Vec::new(),
            edges: Vec::new(),
            order: Var(0),
            words: Vec::new(),
        };
        let root = if rng.random_bool(0.5) {
            let greet = if rng.random_bool(0.5) { ("GreetingIntent", "hi ,") } else { ("ConfirmationIntent", "yes ,") };
            let r = t.add(Node::new(Var(0), AND));
            let g = t.add(Node::new(Var(0), greet.0));
            t.words.push(greet.1.to_string());
            t.edges.push(Edge::node(r, "op1", g));
            t.order = t.add(Node::new(Var(0), "OrderIntent"));
            t.edges.push(Edge::node(r, "op2", t.order));
            r
        } else {
            t.order = t.add(Node::new(Var(0), "OrderIntent"));
            t.order
        };
        (t, root)
    }

    fn add(&mut self, mut n: Node) -> Var {
        let v = Var(self.nodes.len() as u32 + 1);
        n.var = v;
        self.nodes.push(n);
        v
    }

    fn item(&mut self, ty: &'static str, rng: &mut impl Rng) -> Var {
        let lex = *lexicon(ty).choose(rng).expect("nonempty");
        let v = self.add(Node::entity(Var(0), lex, ty));
        self.edges.push(Edge::node(self.order, "order-item", v));
        let mut phrase = vec!["a".to_string()];
        if rng.random_bool(0.4) {
            let size = *lexicon("Size").choose(rng).expect("nonempty");
            let s = self.add(Node::entity(Var(0), size, "Size"));
            self.edges.push(Edge::node(v, "mod", s));
            phrase.push(size.into());
        }
        phrase.push(lex.into());
        self.words.push(phrase.join(" "));
        v
    }
}

/// A corpus whose customer turns order items and later refer back to them.
///
/// A typed reference ("the pizza") points at the most recent earlier item
/// of that type; a pronoun is used only when the latest turn with items has
/// exactly one. Items of a type already ordered are favoured, so same-type
/// distractors are common.
pub fn coref_benchmark(cfg: &CorefBenchConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_train = (cfg.dialogues as f64 * cfg.train_share).round() as usize;
    let n_dev = (cfg.dialogues as f64 * cfg.dev_share).round() as usize;
    let mut corpus = Corpus::default();
    for d in 0..cfg.dialogues {
        let split = if d < n_train {
            Split::Train
        } else if d < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        let customer_turns = rng.random_range(cfg.min_customer_turns..=cfg.max_customer_turns);
        let mut items: Vec<Item> = Vec::new();
        let mut turns = Vec::new();
        for c in 0..customer_turns {
            let turn = 2 * c as u32;
            if c > 0 {
                turns.push(Turn {
                    index: turn - 1,
                    role: Role::Agent,
                    text: "anything else ?".into(),
                    dmr: None,
                });
            }
            let (mut tb, root) = TurnBuilder::new(&mut rng);
            let refer = items.len() >= 2 && rng.random_bool(0.8);
            let mut new_items: Vec<Item> = Vec::new();
            if refer {
                let latest = items.iter().map(|i| i.turn).max().expect("nonempty");
                let last: Vec<&Item> = items.iter().filter(|i| i.turn == latest).collect();
                let (gold, lex) = if last.len() == 1 && rng.random_bool(0.3) {
                    (last[0].clone(), ["it", "that one"].choose(&mut rng).expect("nonempty").to_string())
                } else {
                    let types: BTreeSet<&str> = items.iter().map(|i| i.ty).collect();
                    let ty = *types.iter().collect::<Vec<_>>().choose(&mut rng).expect("nonempty");
                    let gold = items.iter().rev().find(|i| i.ty == *ty).expect("type present").clone();
                    (gold, format!("the {}", noun(ty)))
                };
                let r = tb.add(Node::reference(Var(0), Some(&lex)));
                tb.edges.push(Edge::node(tb.order, "order-item", r));
                tb.edges.push(Edge::refer(r, gold.turn, gold.var));
                let mut phrase = format!("i want {lex}");
                if rng.random_bool(0.5) {
                    let size = *lexicon("Size").choose(&mut rng).expect("nonempty");
                    let s = tb.add(Node::entity(Var(0), size, "Size"));
                    tb.edges.push(Edge::node(r, "mod", s));
                    phrase = format!("make {lex} {size}");
                }
                tb.words.push(phrase);
                if rng.random_bool(0.3) {
                    let ty = *ITEM_TYPES.choose(&mut rng).expect("nonempty");
                    let v = tb.item(ty, &mut rng);
                    new_items.push(Item { turn, var: v, ty });
                }
            } else {
                let k = if rng.random_bool(0.25) { 1 } else { 2 };
                let mut used = BTreeSet::new();
                for _ in 0..k {
                    let prior: Vec<&'static str> = items.iter().map(|i| i.ty).filter(|t| !used.contains(t)).collect();
                    let ty = if !prior.is_empty() && rng.random_bool(0.5) {
                        *prior.choose(&mut rng).expect("nonempty")
                    } else {
                        let fresh: Vec<&'static str> = ITEM_TYPES.iter().copied().filter(|t| !used.contains(t)).collect();
                        *fresh.choose(&mut rng).expect("nonempty")
                    };
                    used.insert(ty);
                    let v = tb.item(ty, &mut rng);
                    new_items.push(Item { turn, var: v, ty });
                }
            }
            items.extend(new_items);
            let text = tb.words.join(" and ").replace(", and", ",");
            let g = DmrGraph::new(turn, root, tb.nodes, tb.edges)
                .expect("benchmark turns are valid");
            turns.push(Turn {
                index: turn,
                role: Role::Customer,
                text,
                dmr: Some(g),
            });
        }
        corpus.dialogues.push(Dialogue {
            id: format!("synth-{d:04}"),
            split,
            turns,
        });
    }
    corpus
}

/// The `(turn, variable)` referents written in a dialogue's DMRs.
pub fn referents(d: &Dialogue) -> Vec<(u32, Var, ReferTarget)> {
    d.turns
        .iter()
        .filter_map(|t| t.dmr.as_ref())
        .flat_map(|g| g.refer_edges().map(move |(v, r)| (g.turn(), v, r)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgraph::queries_at;
    use crate::validate::{uncopied_lexicals, validate};

    #[test]
    fn random_graphs_validate() {
        let o = Ontology::fastfood();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..300 {
            let g = random_graph(&o, &mut rng, 12, 3);
            assert!(g.node_count() <= 12);
            assert!(validate(&o, &g).is_empty(), "case {i}: {g}\n{:?}", validate(&o, &g));
        }
    }

    #[test]
    fn mutations_stay_valid_graphs() {
        let o = Ontology::fastfood();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let g = random_graph(&o, &mut rng, 7, 0);
            let m = mutate(&g, &mut rng);
            assert!(m.node_count() <= 8);
        }
    }

    #[test]
    fn benchmark_is_consistent() {
        let o = Ontology::fastfood();
        let c = coref_benchmark(&CorefBenchConfig {
            dialogues: 30,
            ..Default::default()
        });
        assert_eq!(c.dialogues.len(), 30);
        let mut queries = 0;
        for d in &c.dialogues {
            for t in &d.turns {
                if let Some(g) = &t.dmr {
                    assert!(validate(&o, g).is_empty(), "{g}");
                    assert!(uncopied_lexicals(g, &t.text).is_empty(), "{} / {g}", t.text);
                }
            }
            let dmrs = d.dmrs();
            let refs: Vec<&DmrGraph> = dmrs.iter().collect();
            for j in 0..refs.len() {
                for q in queries_at(&refs, j) {
                    assert!(q.candidates.len() > 1);
                    assert!(q.gold.iter().all(|g| q.candidates.contains(g)));
                    queries += 1;
                }
            }
        }
        assert!(queries > 40, "{queries}");
        assert_eq!(coref_benchmark(&CorefBenchConfig::default()), coref_benchmark(&CorefBenchConfig::default()));
    }
}
