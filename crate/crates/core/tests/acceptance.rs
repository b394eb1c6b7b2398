//! End-to-end acceptance checks. Each check prints one PASS/FAIL line.
//! Checks that need the released corpus read it from `DMR_FASTFOOD` and
//! report FAIL when it is missing; they do not fail the test run.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dmr::coref::{evaluate, train, CorefConfig, CorefModel, Encoder, ModelKind, ModelShape, WordVectors};
use dmr::coref::model::{relation_vocab, symbol_vocab};
use dmr::corpus::{export_seq2seq, load_corpus, nlu_filter, stats, Corpus, Split};
use dmr::dgraph::{build_dialogue_graph, gold_resolutions, DGraphConfig};
use dmr::linearize::{fallback_graph, Repair};
use dmr::metrics::{smatch_exhaustive, smatch_hill_climb};
use dmr::synth::{coref_benchmark, mutate, random_graph, CorefBenchConfig};
use dmr::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

const ROUND_TRIP_GRAPHS: usize = 1000;
const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(30);
const ORACLE_PAIRS: usize = 500;
const ORACLE_AGREEMENT: f64 = 0.99;
const FUZZ_SEQUENCES: usize = 10_000;
const RULE_TOLERANCE: f64 = 0.5;
const RULE_EXPECTED: [(Split, f64); 3] = [(Split::Train, 21.03), (Split::Dev, 22.77), (Split::Test, 21.19)];
const SINGLE_SHARE_EXPECTED: f64 = 31.2;
const SINGLE_SHARE_TOLERANCE: f64 = 1.0;
const MEAN_TOLERANCE: f64 = 0.02;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const MODEL_GAP: f64 = 0.05;
const TRAIN_BUDGET: Duration = Duration::from_secs(600);
const BENCH_DIALOGUES: usize = 200;
const BENCH_EPOCHS: usize = 60;
const CORPUS_VAR: &str = "DMR_FASTFOOD";

struct Outcome {
    pass: bool,
    detail: String,
    /// Set when the check cannot run in this environment.
    blocked: bool,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into(), blocked: false }
    }

    fn blocked(detail: impl Into<String>) -> Self {
        Outcome { pass: false, detail: detail.into(), blocked: true }
    }
}

fn with_refer() -> MatchConfig {
    MatchConfig { include_refer: true, ..Default::default() }
}

fn round_trip() -> Outcome {
    let o = Ontology::fastfood();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut failures = 0;
    for i in 0..ROUND_TRIP_GRAPHS {
        let g = random_graph(&o, &mut rng, 12, (i % 4) as u32);
        let read_ok = read_graph(&write_graph(&g), g.turn()).is_ok_and(|b| smatch(&b, &g, &with_refer()).f1 == 1.0);
        let stripped = g.without_refer();
        let d = delinearize(&linearize(&g), g.turn());
        let lin_ok = !d.is_fallback() && smatch(&d.graph, &stripped, &with_refer()).f1 == 1.0;
        failures += usize::from(!(read_ok && lin_ok));
    }
    let elapsed = start.elapsed();
    Outcome::new(
        failures == 0 && elapsed < ROUND_TRIP_BUDGET,
        format!("{failures} failures over {ROUND_TRIP_GRAPHS} graphs in {:.2}s", elapsed.as_secs_f64()),
    )
}

fn shifted(g: &DmrGraph) -> DmrGraph {
    let shift = |v: Var| Var(v.0 + 50);
    let nodes = g.nodes().iter().map(|n| Node { var: shift(n.var), ..n.clone() }).collect();
    let edges = g
        .edges()
        .iter()
        .map(|e| Edge {
            source: shift(e.source),
            label: e.label.clone(),
            target: match &e.target {
                EdgeTarget::Node(v) => EdgeTarget::Node(shift(*v)),
                t => t.clone(),
            },
        })
        .collect();
    DmrGraph::new(g.turn(), shift(g.root()), nodes, edges).expect("renaming keeps validity")
}

fn smatch_oracle() -> Outcome {
    let o = Ontology::fastfood();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = MatchConfig::default();
    let (mut agree, mut exceeded, mut decisions_disagree, mut exact_pairs) = (0, 0, 0, 0);
    for _ in 0..ORACLE_PAIRS {
        let a = random_graph(&o, &mut rng, 6, 1);
        let b = match rng.random_range(0..3) {
            0 => random_graph(&o, &mut rng, 7, 1),
            1 => mutate(&a, &mut rng),
            _ => shifted(&a),
        };
        let oracle = smatch_exhaustive(&a, &b, cfg.include_refer);
        let climb = smatch_hill_climb(&a, &b, &cfg);
        agree += usize::from(climb.matched == oracle.matched);
        exceeded += usize::from(climb.matched > oracle.matched);
        let oracle_exact = oracle.is_perfect();
        let climb_exact = climb.is_perfect();
        exact_pairs += usize::from(oracle_exact);
        decisions_disagree += usize::from(oracle_exact != climb_exact || oracle_exact != exact_match(&a, &b));
    }
    let rate = agree as f64 / ORACLE_PAIRS as f64;
    Outcome::new(
        rate >= ORACLE_AGREEMENT && exceeded == 0 && decisions_disagree == 0,
        format!(
            "agreement {:.1}%, {exceeded} above oracle, {decisions_disagree} exact-match disagreements ({exact_pairs} exact pairs)",
            100.0 * rate
        ),
    )
}

const FUZZ_VOCAB: [&str; 16] = [
    "(", ")", "(", ")", ":order-item", ":mod", ":op1", ":op2", ":polarity", "OrderIntent", "and", "reference", "Pizza", "large",
    "||", "-",
];

fn repair() -> Outcome {
    let printed = "( OrderIntent ( :order-item ( reference ( :mod ( large || Size ) ) ) )";
    let intended = read_graph("(v1 / OrderIntent :order-item (v2 / reference :mod (v3 / large || Size)))", 5).unwrap();
    let d = delinearize(&TokenSeq::parse(printed), 5);
    let repaired = d.repairs == [Repair::MissingBracket] && smatch(&intended, &d.graph, &with_refer()).f1 == 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut failures = 0;
    let mut fallbacks = 0;
    for _ in 0..FUZZ_SEQUENCES {
        let len = rng.random_range(0..30);
        let toks = TokenSeq((0..len).map(|_| FUZZ_VOCAB[rng.random_range(0..FUZZ_VOCAB.len())].to_string()).collect());
        match catch_unwind(AssertUnwindSafe(|| delinearize(&toks, 2))) {
            Ok(d) if d.is_fallback() => {
                fallbacks += 1;
                failures += usize::from(d.graph != fallback_graph(2));
            }
            Ok(d) => failures += usize::from(DmrGraph::new(2, d.graph.root(), d.graph.nodes().to_vec(), d.graph.edges().to_vec()).is_err()),
            Err(_) => failures += 1,
        }
    }
    Outcome::new(
        repaired && failures == 0,
        format!(
            "printed sequence repaired: {repaired}; fuzz {failures} failures, {fallbacks} fallbacks of {FUZZ_SEQUENCES}"
        ),
    )
}

fn released_corpus() -> Result<Corpus, String> {
    let path = std::env::var(CORPUS_VAR).map_err(|_| format!("dataset not available (set {CORPUS_VAR})"))?;
    let (c, issues) = load_corpus(&path).map_err(|e| format!("{path}: {e}"))?;
    if !issues.is_empty() {
        return Err(format!("{path}: {} malformed records", issues.len()));
    }
    Ok(nlu_filter(c))
}

fn rule_reproduction() -> Outcome {
    let c = match released_corpus() {
        Ok(c) => c,
        Err(e) => return Outcome::blocked(e),
    };
    let wv = WordVectors::new(1);
    let mut pass = true;
    let mut parts = Vec::new();
    let (mut single, mut all) = (0usize, 0usize);
    for (split, expected) in RULE_EXPECTED {
        let dialogues: Vec<Vec<DmrGraph>> = c.split(split).map(|d| d.dmrs()).collect();
        let eval = evaluate(&dmr::coref::Resolver::Rule, &dialogues, &wv, true).expect("rule needs no vectors");
        let acc = 100.0 * eval.accuracy;
        pass &= (acc - expected).abs() <= RULE_TOLERANCE;
        single += eval.predictions.iter().filter(|p| p.probabilities.len() == 1).count();
        all += eval.predictions.len();
        parts.push(format!("{split:?} {acc:.2} (expected {expected})"));
    }
    let share = 100.0 * single as f64 / all.max(1) as f64;
    pass &= (share - SINGLE_SHARE_EXPECTED).abs() <= SINGLE_SHARE_TOLERANCE;
    Outcome::new(pass, format!("{}; single-candidate share {share:.1}%", parts.join(", ")))
}

fn stats_reproduction() -> Outcome {
    let c = match released_corpus() {
        Ok(c) => c,
        Err(e) => return Outcome::blocked(e),
    };
    let expected: BTreeMap<Split, ([usize; 4], [f64; 2])> = [
        (Split::Train, ([5585, 6007, 430, 11770], [2.43, 3.18])),
        (Split::Dev, ([710, 802, 62, 1499], [2.66, 3.46])),
        (Split::Test, ([899, 1039, 65, 1989], [2.64, 3.43])),
    ]
    .into();
    let report = stats(&c);
    let mut pass = true;
    let mut parts = Vec::new();
    for (split, (counts, means)) in &expected {
        let s = &report.splits[split];
        let got = [s.dialogues, s.references, s.negations, s.conjunctions];
        let got_means = [s.mean_nlu_depth(), s.mean_nlu_nodes()];
        pass &= got == *counts;
        pass &= got_means.iter().zip(means).all(|(a, b)| (a - b).abs() <= MEAN_TOLERANCE);
        parts.push(format!("{split:?} {got:?} depth {:.2} nodes {:.2}", got_means[0], got_means[1]));
    }
    Outcome::new(pass, parts.join("; "))
}

fn gradient_error() -> f64 {
    let o = Ontology::fastfood();
    let turns = [
        read_graph("(v1 / OrderIntent :order-item (v2 / pepperoni pizza || Pizza))", 0).unwrap(),
        read_graph("(v1 / OrderIntent :order-item (v2 / reference || it))", 1).unwrap(),
    ];
    let refs: Vec<&DmrGraph> = turns.iter().collect();
    let g = build_dialogue_graph(&refs, &gold_resolutions(&refs), &DGraphConfig::default()).unwrap();
    assert_eq!(g.nodes.len(), 6);
    let wv = WordVectors::hashed(6, 3);
    let shape = ModelShape { encoder: Encoder::Rgcn, layers: 3, dim: 6, hidden: 5, dropout: 0.2 };
    let mut m = CorefModel::new(shape, relation_vocab(&o, 2), symbol_vocab(&o), 4);
    let inp = m.prepare(&g, &wv).unwrap();
    let r = g.node_id(1, Var(2)).unwrap();
    let pairs: Vec<(usize, usize)> = (0..6).filter(|&c| c != r).map(|c| (r, c)).collect();
    let labels: Vec<f64> = pairs.iter().map(|&(_, c)| if Some(c) == g.node_id(0, Var(2)) { 1.0 } else { 0.0 }).collect();
    let mut grads = m.params.zeros_like();
    m.accumulate(&inp, &pairs, &labels, 1.0, None, &mut grads);
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for t in 0..m.params.tensors.len() {
        for i in 0..m.params.tensors[t].len() {
            let orig = m.params.tensors[t].as_slice().unwrap()[i];
            m.params.tensors[t].as_slice_mut().unwrap()[i] = orig + eps;
            let up = m.loss(&inp, &pairs, &labels, 1.0);
            m.params.tensors[t].as_slice_mut().unwrap()[i] = orig - eps;
            let down = m.loss(&inp, &pairs, &labels, 1.0);
            m.params.tensors[t].as_slice_mut().unwrap()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.tensors[t].as_slice().unwrap()[i];
            let scale = numeric.abs().max(analytic.abs());
            if scale > 1e-6 {
                worst = worst.max((numeric - analytic).abs() / scale);
            }
        }
    }
    worst
}

fn coref_models() -> Outcome {
    let grad = gradient_error();
    let o = Ontology::fastfood();
    let bench = coref_benchmark(&CorefBenchConfig { dialogues: BENCH_DIALOGUES, ..Default::default() });
    let split = |s: Split| bench.split(s).map(|d| d.dmrs()).collect::<Vec<_>>();
    let (tr, dv, te) = (split(Split::Train), split(Split::Dev), split(Split::Test));
    let wv = WordVectors::hashed(100, 1);
    let run = |kind: ModelKind, layers: usize, turn_nodes: bool| {
        let mut cfg = CorefConfig { kind, layers, epochs: BENCH_EPOCHS, ..Default::default() };
        cfg.dgraph.use_turn_nodes = turn_nodes;
        let start = Instant::now();
        let (resolver, _) = train(&o, &tr, &dv, &wv, &cfg).expect("benchmark trains");
        let acc = evaluate(&resolver, &te, &wv, true).expect("benchmark evaluates").accuracy;
        (acc, start.elapsed())
    };
    let (rule, _) = run(ModelKind::Rule, 0, true);
    let (mlp, _) = run(ModelKind::Mlp, 0, true);
    let (gnn, gnn_time) = run(ModelKind::Gnn, 3, true);
    let (one_layer, _) = run(ModelKind::Gnn, 1, true);
    let (no_turn, _) = run(ModelKind::Gnn, 3, false);
    let pass = grad < GRADIENT_TOLERANCE
        && gnn - mlp >= MODEL_GAP
        && mlp - rule >= MODEL_GAP
        && one_layer < gnn
        && no_turn < gnn
        && gnn_time < TRAIN_BUDGET;
    Outcome::new(
        pass,
        format!(
            "gradient rel. error {grad:.1e}; test accuracy gnn {:.1} mlp {:.1} rule {:.1}, 1-layer {:.1}, no turn nodes {:.1}; gnn training {:.0}s",
            100.0 * gnn,
            100.0 * mlp,
            100.0 * rule,
            100.0 * one_layer,
            100.0 * no_turn,
            gnn_time.as_secs_f64()
        ),
    )
}

fn error_taxonomy() -> Outcome {
    let o = Ontology::fastfood();
    const PIZZA: &str = "(v1 / OrderIntent :order-item (v2 / pizza || Pizza))";
    // (gold, prediction or None for unreadable output, [invalid, ontology, intent, compositional])
    let cases: [(&str, Option<&str>, [bool; 4]); 12] = [
        (PIZZA, Some(PIZZA), [false, false, false, false]),
        (PIZZA, None, [true, false, false, false]),
        (PIZZA, Some("(v1 / OrderIntent :order-item (v2 / two || Quantity))"), [false, true, false, true]),
        (
            "(v1 / OrderIntent :order-item (v2 / pizza || Pizza) :address (v3 / the office || Address))",
            Some("(v1 / OrderIntent :order-item (v2 / pizza || Pizza :address (v3 / the office || Address)))"),
            [false, true, false, true],
        ),
        ("(v1 / PaymentIntent :payment-method (v2 / card || PaymentMethod))", Some("(v1 / ThankYouIntent)"), [false, false, true, false]),
        (
            "(v1 / and :op1 (v2 / GreetingIntent) :op2 (v3 / OrderIntent :order-item (v4 / pizza || Pizza)))",
            Some(PIZZA),
            [false, false, true, false],
        ),
        (
            "(v1 / OrderIntent :order-item (v2 / and :op1 (v3 / pizza || Pizza :mod (v4 / large || Size)) :op2 (v5 / coke || DrinkItem)))",
            Some("(v1 / OrderIntent :order-item (v2 / and :op1 (v3 / pizza || Pizza) :op2 (v5 / coke || DrinkItem :mod (v4 / large || Size))))"),
            [false, false, false, true],
        ),
        (PIZZA, Some("(v1 / OrderIntent :order-item (v2 / taco || Taco))"), [false, true, false, true]),
        (PIZZA, Some("(v1 / PaymentIntent :payment-method (v2 / card || PaymentMethod))"), [false, false, true, true]),
        ("(v1 / OrderIntent :order-item (v2 / pizza || Pizza :polarity -))", Some(PIZZA), [false, false, false, true]),
        (PIZZA, Some("(v1 / OrderIntent :polarity - :order-item (v2 / pizza || Pizza))"), [false, true, false, true]),
        (
            "(v1 / OrderIntent :order-item (v2 / reference || it :refer (T:0 N:v2)))",
            Some("(v1 / OrderIntent :order-item (v2 / reference || it))"),
            [false, false, false, false],
        ),
    ];
    let mut wrong = Vec::new();
    for (i, (gold, pred, expected)) in cases.iter().enumerate() {
        let gold = read_graph(gold, 1).unwrap();
        let pred = pred.map_or(Prediction::Invalid, |p| Prediction::Graph(read_graph(p, 1).unwrap()));
        let f = classify_errors(&o, &gold, &pred);
        if [f.invalid_graph, f.ontology_mismatch, f.wrong_intent, f.compositional] != *expected {
            wrong.push(format!("case {} got {f:?}", i + 1));
        }
    }
    Outcome::new(wrong.is_empty(), if wrong.is_empty() { "12/12 cases match".into() } else { wrong.join("; ") })
}

fn seq2seq_export() -> Outcome {
    let c = nlu_filter(coref_benchmark(&CorefBenchConfig { dialogues: 30, seed: 3, ..Default::default() }));
    let grammar = Regex::new(r"^(?:(?:customer|agent): [^:]+ )*customer: [^:]+$").unwrap();
    let tag = Regex::new(r"(?:^| )(?:customer|agent): ").unwrap();
    let gold: BTreeMap<(String, u32), DmrGraph> = c
        .dialogues
        .iter()
        .flat_map(|d| d.turns.iter().filter_map(move |t| t.dmr.clone().map(|g| ((d.id.clone(), t.index), g))))
        .collect();
    let (mut pairs, mut bad_input, mut bad_target) = (0, 0, 0);
    for size in 0..=3 {
        for p in export_seq2seq(&c, size) {
            pairs += 1;
            let tags = tag.find_iter(&p.input).count();
            bad_input += usize::from(!grammar.is_match(&p.input) || tags != size.min(p.turn as usize) + 1);
            let g = &gold[&(p.dialogue.clone(), p.turn)];
            let d = delinearize(&TokenSeq::parse(&p.target), p.turn);
            bad_target += usize::from(d.is_fallback() || smatch(&g.without_refer(), &d.graph, &with_refer()).f1 != 1.0);
        }
    }
    Outcome::new(
        pairs > 0 && bad_input == 0 && bad_target == 0,
        format!("{pairs} pairs over context sizes 0-3; {bad_input} malformed inputs, {bad_target} targets off gold"),
    )
}

#[test]
fn acceptance() {
    type Check = (&'static str, fn() -> Outcome);
    let checks: [Check; 8] = [
        ("round-trip", round_trip),
        ("smatch-oracle", smatch_oracle),
        ("repair-parser", repair),
        ("rule-baseline-reproduction", rule_reproduction),
        ("statistics-reproduction", stats_reproduction),
        ("coref-models", coref_models),
        ("error-taxonomy", error_taxonomy),
        ("seq2seq-export", seq2seq_export),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && !o.blocked {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
