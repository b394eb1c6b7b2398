//! Smatch: the best triple overlap between two graphs over injective
//! variable mappings.
//!
//! Small graphs are matched exhaustively with branch-and-bound. Larger ones
//! use hill climbing from a type-aware greedy seed plus random restarts.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{to_triples, DmrGraph, TripleArg, TripleKind, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Hill-climbing runs; the first starts from the greedy seed.
    pub restarts: usize,
    pub seed: u64,
    /// Largest variable count on both sides still matched exhaustively.
    pub oracle_threshold: usize,
    /// Score `refer` attributes too.
    pub include_refer: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            restarts: 4,
            seed: 0,
            oracle_threshold: 10,
            include_refer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmatchScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub gold_triples: usize,
    pub pred_triples: usize,
    /// Gold variable to predicted variable.
    pub mapping: BTreeMap<Var, Var>,
    pub exhaustive: bool,
}

impl SmatchScore {
    fn new(matched: usize, gold: usize, pred: usize, mapping: BTreeMap<Var, Var>, exhaustive: bool) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(matched, pred);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SmatchScore {
            precision,
            recall,
            f1,
            matched,
            gold_triples: gold,
            pred_triples: pred,
            mapping,
            exhaustive,
        }
    }

    /// Every triple on both sides matched.
    pub fn is_perfect(&self) -> bool {
        self.matched == self.gold_triples && self.matched == self.pred_triples
    }
}

/// The matching problem with `left` no larger than `right`.
struct Problem {
    left: Vec<Var>,
    right: Vec<Var>,
    /// `unary[a][b]`: single-variable triples of `a` that `b` also has.
    unary: Vec<Vec<u32>>,
    left_rel: Vec<(u32, usize, usize)>,
    right_rel: HashSet<(u32, usize, usize)>,
    /// Instance type id per variable.
    left_type: Vec<Option<u32>>,
    right_type: Vec<Option<u32>>,
    swapped: bool,
    gold_count: usize,
    pred_count: usize,
}

struct Side {
    vars: Vec<Var>,
    attrs: Vec<HashSet<(u32, u32)>>,
    rels: Vec<(u32, usize, usize)>,
    types: Vec<Option<u32>>,
    count: usize,
}

#[derive(Default)]
struct Interner(HashMap<String, u32>);

impl Interner {
    fn id(&mut self, s: &str) -> u32 {
        let n = self.0.len() as u32;
        *self.0.entry(s.to_string()).or_insert(n)
    }
}

fn side(g: &DmrGraph, include_refer: bool, names: &mut Interner) -> Side {
    let vars: Vec<Var> = g.nodes().iter().map(|n| n.var).collect();
    let pos: HashMap<Var, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut attrs = vec![HashSet::new(); vars.len()];
    let mut types = vec![None; vars.len()];
    let mut rels = Vec::new();
    let triples = to_triples(g, include_refer);
    for t in &triples {
        let rel = names.id(&t.relation);
        let s = pos[&t.source];
        match &t.target {
            TripleArg::Var(v) => rels.push((rel, s, pos[v])),
            TripleArg::Const(c) => {
                let c = names.id(c);
                attrs[s].insert((rel, c));
                if t.kind == TripleKind::Instance {
                    types[s] = Some(c);
                }
            }
        }
    }
    Side {
        vars,
        attrs,
        rels,
        types,
        count: triples.len(),
    }
}

impl Problem {
    fn new(gold: &DmrGraph, pred: &DmrGraph, include_refer: bool) -> Self {
        let mut names = Interner::default();
        let g = side(gold, include_refer, &mut names);
        let p = side(pred, include_refer, &mut names);
        let (gold_count, pred_count) = (g.count, p.count);
        let swapped = g.vars.len() > p.vars.len();
        let (l, r) = if swapped { (p, g) } else { (g, p) };
        let unary = l
            .attrs
            .iter()
            .map(|la| r.attrs.iter().map(|ra| la.intersection(ra).count() as u32).collect())
            .collect();
        Problem {
            left: l.vars,
            right: r.vars,
            unary,
            left_rel: l.rels,
            right_rel: r.rels.into_iter().collect(),
            left_type: l.types,
            right_type: r.types,
            swapped,
            gold_count,
            pred_count,
        }
    }

    fn score(&self, m: &[Option<usize>]) -> usize {
        let mut s: usize = m
            .iter()
            .enumerate()
            .filter_map(|(a, b)| b.map(|b| self.unary[a][b] as usize))
            .sum();
        for &(l, a1, a2) in &self.left_rel {
            if let (Some(b1), Some(b2)) = (m[a1], m[a2]) {
                if self.right_rel.contains(&(l, b1, b2)) {
                    s += 1;
                }
            }
        }
        s
    }

    fn finish(&self, matched: usize, m: &[Option<usize>], exhaustive: bool) -> SmatchScore {
        let mapping = m
            .iter()
            .enumerate()
            .filter_map(|(a, b)| b.map(|b| (self.left[a], self.right[b])))
            .map(|(l, r)| if self.swapped { (r, l) } else { (l, r) })
            .collect();
        SmatchScore::new(matched, self.gold_count, self.pred_count, mapping, exhaustive)
    }

    /// Branch-and-bound over total injections left -> right. With `target`
    /// set, stops at the first mapping reaching it and prunes anything that
    /// cannot.
    fn exhaustive(&self, target: Option<usize>) -> (usize, Vec<Option<usize>>) {
        let n = self.left.len();
        let max_unary: Vec<u32> = self
            .unary
            .iter()
            .map(|row| row.iter().copied().max().unwrap_or(0))
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&a| std::cmp::Reverse(max_unary[a]));
        let mut pos = vec![0; n];
        for (i, &a) in order.iter().enumerate() {
            pos[a] = i;
        }
        let right_labels: HashSet<u32> = self.right_rel.iter().map(|r| r.0).collect();
        // Relation triples checked once their later endpoint is placed.
        let mut due: Vec<Vec<(u32, usize, usize)>> = vec![Vec::new(); n];
        let mut bound = vec![0usize; n + 1];
        for &(l, a1, a2) in &self.left_rel {
            let k = pos[a1].max(pos[a2]);
            due[k].push((l, a1, a2));
            if right_labels.contains(&l) {
                for b in bound.iter_mut().take(k + 1) {
                    *b += 1;
                }
            }
        }
        for k in (0..n).rev() {
            let mut acc = 0;
            for &a in &order[k..] {
                acc += max_unary[a] as usize;
            }
            bound[k] += acc;
        }

        struct Search<'a> {
            p: &'a Problem,
            order: &'a [usize],
            due: &'a [Vec<(u32, usize, usize)>],
            bound: &'a [usize],
            target: Option<usize>,
            cur: Vec<Option<usize>>,
            used: Vec<bool>,
            best: usize,
            best_map: Vec<Option<usize>>,
            done: bool,
        }

        impl Search<'_> {
            fn go(&mut self, k: usize, score: usize) {
                if self.done {
                    return;
                }
                if k == self.order.len() {
                    if score > self.best || self.best_map.is_empty() {
                        self.best = score;
                        self.best_map = self.cur.clone();
                    }
                    if self.target == Some(score) {
                        self.done = true;
                    }
                    return;
                }
                let limit = score + self.bound[k];
                match self.target {
                    Some(t) if limit < t => return,
                    None if limit <= self.best && !self.best_map.is_empty() => return,
                    _ => {}
                }
                let a = self.order[k];
                for b in 0..self.p.right.len() {
                    if self.used[b] {
                        continue;
                    }
                    self.used[b] = true;
                    self.cur[a] = Some(b);
                    let mut gain = self.p.unary[a][b] as usize;
                    for &(l, a1, a2) in &self.due[k] {
                        let (b1, b2) = (self.cur[a1].unwrap(), self.cur[a2].unwrap());
                        if self.p.right_rel.contains(&(l, b1, b2)) {
                            gain += 1;
                        }
                    }
                    self.go(k + 1, score + gain);
                    self.cur[a] = None;
                    self.used[b] = false;
                    if self.done {
                        return;
                    }
                }
            }
        }

        let mut s = Search {
            p: self,
            order: &order,
            due: &due,
            bound: &bound,
            target,
            cur: vec![None; n],
            used: vec![false; self.right.len()],
            best: 0,
            best_map: Vec::new(),
            done: false,
        };
        s.go(0, 0);
        if s.best_map.is_empty() {
            s.best_map = vec![None; n];
        }
        (s.best, s.best_map)
    }

    fn neighbour_signature(rels: &[(u32, usize, usize)], types: &[Option<u32>], v: usize) -> Vec<(bool, u32, Option<u32>)> {
        let mut sig: Vec<_> = rels
            .iter()
            .filter_map(|&(l, s, t)| {
                if s == v {
                    Some((true, l, types[t]))
                } else if t == v {
                    Some((false, l, types[s]))
                } else {
                    None
                }
            })
            .collect();
        sig.sort();
        sig
    }

    /// Pairs variables of identical type, preferring the candidate sharing
    /// the most neighbour triples.
    fn greedy_seed(&self) -> Vec<Option<usize>> {
        let right_rels: Vec<_> = self.right_rel.iter().copied().collect();
        let lsig: Vec<_> = (0..self.left.len())
            .map(|a| Self::neighbour_signature(&self.left_rel, &self.left_type, a))
            .collect();
        let rsig: Vec<_> = (0..self.right.len())
            .map(|b| Self::neighbour_signature(&right_rels, &self.right_type, b))
            .collect();
        let shared = |x: &[(bool, u32, Option<u32>)], y: &[(bool, u32, Option<u32>)]| {
            let (mut i, mut j, mut n) = (0, 0, 0);
            while i < x.len() && j < y.len() {
                match x[i].cmp(&y[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        n += 1;
                        i += 1;
                        j += 1;
                    }
                }
            }
            n
        };
        let mut used = vec![false; self.right.len()];
        let mut m = vec![None; self.left.len()];
        for a in 0..self.left.len() {
            let best = (0..self.right.len())
                .filter(|&b| !used[b] && self.left_type[a].is_some() && self.left_type[a] == self.right_type[b])
                .max_by_key(|&b| (self.unary[a][b], shared(&lsig[a], &rsig[b]), std::cmp::Reverse(b)));
            if let Some(b) = best {
                used[b] = true;
                m[a] = Some(b);
            }
        }
        m
    }

    /// Steepest ascent over reassignments and swaps.
    fn climb(&self, mut m: Vec<Option<usize>>) -> (usize, Vec<Option<usize>>) {
        let mut score = self.score(&m);
        loop {
            let mut used = vec![false; self.right.len()];
            for b in m.iter().flatten() {
                used[*b] = true;
            }
            let mut best: Option<(usize, Vec<Option<usize>>)> = None;
            let consider = |cand: Vec<Option<usize>>, best: &mut Option<(usize, Vec<Option<usize>>)>| {
                let s = self.score(&cand);
                if s > score && best.as_ref().is_none_or(|(bs, _)| s > *bs) {
                    *best = Some((s, cand));
                }
            };
            for a in 0..m.len() {
                for b in (0..self.right.len()).map(Some).chain([None]) {
                    if b == m[a] || b.is_some_and(|b| used[b]) {
                        continue;
                    }
                    let mut cand = m.clone();
                    cand[a] = b;
                    consider(cand, &mut best);
                }
            }
            for a1 in 0..m.len() {
                for a2 in a1 + 1..m.len() {
                    if m[a1] == m[a2] {
                        continue;
                    }
                    let mut cand = m.clone();
                    cand.swap(a1, a2);
                    consider(cand, &mut best);
                }
            }
            match best {
                Some((s, cand)) => {
                    score = s;
                    m = cand;
                }
                None => return (score, m),
            }
        }
    }

    fn hill_climb(&self, restarts: usize, seed: u64) -> (usize, Vec<Option<usize>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = self.climb(self.greedy_seed());
        for _ in 1..restarts.max(1) {
            let mut perm: Vec<usize> = (0..self.right.len()).collect();
            perm.shuffle(&mut rng);
            let init = (0..self.left.len()).map(|a| Some(perm[a])).collect();
            let run = self.climb(init);
            if run.0 > best.0 {
                best = run;
            }
        }
        best
    }
}

/// Smatch of `pred` against `gold`: precision over predicted triples,
/// recall over gold triples.
pub fn smatch(gold: &DmrGraph, pred: &DmrGraph, cfg: &MatchConfig) -> SmatchScore {
    let within = gold.node_count() <= cfg.oracle_threshold && pred.node_count() <= cfg.oracle_threshold;
    if within {
        smatch_exhaustive(gold, pred, cfg.include_refer)
    } else {
        smatch_hill_climb(gold, pred, cfg)
    }
}

pub fn smatch_exhaustive(gold: &DmrGraph, pred: &DmrGraph, include_refer: bool) -> SmatchScore {
    let p = Problem::new(gold, pred, include_refer);
    let (matched, m) = p.exhaustive(None);
    p.finish(matched, &m, true)
}

pub fn smatch_hill_climb(gold: &DmrGraph, pred: &DmrGraph, cfg: &MatchConfig) -> SmatchScore {
    let p = Problem::new(gold, pred, cfg.include_refer);
    let (matched, m) = p.hill_climb(cfg.restarts, cfg.seed);
    p.finish(matched, &m, false)
}

/// Smatch F1 of exactly 1. Decided exhaustively within the oracle threshold;
/// beyond it a hill-climbing miss can under-report a match.
pub fn exact_match_with(gold: &DmrGraph, pred: &DmrGraph, cfg: &MatchConfig) -> bool {
    let p = Problem::new(gold, pred, cfg.include_refer);
    if p.gold_count != p.pred_count || p.left.len() != p.right.len() {
        return false;
    }
    let within = gold.node_count() <= cfg.oracle_threshold && pred.node_count() <= cfg.oracle_threshold;
    if within {
        p.exhaustive(Some(p.gold_count)).0 == p.gold_count
    } else {
        let perfect = p.hill_climb(cfg.restarts, cfg.seed).0 == p.gold_count;
        if !perfect {
            log::debug!(
                "exact match decided by hill climbing over {} variables; a miss may be a search failure",
                gold.node_count()
            );
        }
        perfect
    }
}

pub fn exact_match(gold: &DmrGraph, pred: &DmrGraph) -> bool {
    exact_match_with(gold, pred, &MatchConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::read_graph;

    fn g(s: &str) -> DmrGraph {
        read_graph(s, 0).unwrap()
    }

    /// Unpruned enumeration of every partial injection.
    fn brute_force(gold: &DmrGraph, pred: &DmrGraph) -> usize {
        let p = Problem::new(gold, pred, false);
        fn go(p: &Problem, a: usize, m: &mut Vec<Option<usize>>, used: &mut Vec<bool>, best: &mut usize) {
            if a == p.left.len() {
                *best = (*best).max(p.score(m));
                return;
            }
            m[a] = None;
            go(p, a + 1, m, used, best);
            for b in 0..p.right.len() {
                if !used[b] {
                    used[b] = true;
                    m[a] = Some(b);
                    go(p, a + 1, m, used, best);
                    m[a] = None;
                    used[b] = false;
                }
            }
        }
        let mut best = 0;
        go(&p, 0, &mut vec![None; p.left.len()], &mut vec![false; p.right.len()], &mut best);
        best
    }

    #[test]
    fn identity() {
        let a = g("(v1 / OrderIntent :order-item (v2 / burger || Burger :quant (v3 / 2 || Quantity)))");
        let s = smatch(&a, &a, &MatchConfig::default());
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert!(s.is_perfect());
    }

    #[test]
    fn one_wrong_type() {
        let gold = g("(v1 / OrderIntent :order-item (v2 / burger || Burger))");
        let pred = g("(v1 / OrderIntent :order-item (v2 / burger || Pizza))");
        let s = smatch(&gold, &pred, &MatchConfig::default());
        assert_eq!((s.matched, s.gold_triples, s.pred_triples), (4, 5, 5));
        assert!((s.f1 - 0.8).abs() < 1e-12);
        assert_eq!(brute_force(&gold, &pred), 4);
    }

    #[test]
    fn different_intents_share_only_top() {
        let s = smatch(&g("(v1 / ThankYouIntent)"), &g("(v1 / PaymentIntent)"), &MatchConfig::default());
        assert_eq!(s.matched, 1);
        assert!((s.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_sizes_and_symmetry() {
        let a = g("(v1 / OrderIntent :order-item (v2 / and :op1 (v3 / coke || DrinkItem) :op2 (v4 / x || Pizza)))");
        let b = g("(v1 / OrderIntent :order-item (v2 / x || Pizza :mod (v3 / large || Size)))");
        let ab = smatch(&a, &b, &MatchConfig::default());
        let ba = smatch(&b, &a, &MatchConfig::default());
        assert_eq!(ab.matched, ba.matched);
        assert_eq!(ab.f1, ba.f1);
        assert_eq!(ab.precision, ba.recall);
        assert_eq!(ab.matched, brute_force(&a, &b));
        for (gv, pv) in &ab.mapping {
            assert!(a.node(*gv).is_some() && b.node(*pv).is_some());
        }
    }

    #[test]
    fn renaming_and_edge_order() {
        let a = g("(v1 / OrderIntent :order-item (v2 / x || Pizza :mod (v3 / large || Size) :quant (v4 / 2 || Quantity)))");
        let b = g("(v9 / OrderIntent :order-item (v4 / x || Pizza :quant (v2 / 2 || Quantity) :mod (v7 / large || Size)))");
        assert!(exact_match(&a, &b));
        let c = g("(v1 / OrderIntent :order-item (v2 / y || Pizza :mod (v3 / large || Size) :quant (v4 / 2 || Quantity)))");
        assert!(!exact_match(&a, &c));
    }

    #[test]
    fn hill_climb_agrees_on_larger_graph() {
        let a = g("(v1 / and :op1 (v2 / OrderIntent :order-item (v3 / and :op1 (v4 / a || Pizza :mod (v5 / large || Size)) \
                   :op2 (v6 / b || Pizza :mod (v7 / small || Size)) :op3 (v8 / c || DrinkItem :quant (v9 / 2 || Quantity)))) \
                   :op2 (v10 / ThankYouIntent) :op3 (v11 / PaymentIntent :payment-method (v12 / card || PaymentMethod)))");
        let b = a.renumbered();
        let cfg = MatchConfig { oracle_threshold: 4, ..Default::default() };
        let s = smatch(&a, &b, &cfg);
        assert!(!s.exhaustive);
        assert!(s.is_perfect());
        assert!(exact_match_with(&a, &b, &cfg));
    }
}
