use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{relation_vocab, symbol_vocab, CorefModel, Encoder, GraphInput, ModelShape};
use super::nn::Adam;
use super::{rule_select, select, CorefConfig, CorefError, CorefPrediction, ModelKind, WordVectors};
use crate::dgraph::{build_dialogue_graph, gold_resolutions, queries_at, CorefQuery, DGraphConfig, DialogueGraph, Resolutions};
use crate::graph::{DmrGraph, ReferTarget};
use crate::metrics::{coref_accuracy, GoldReferents};
use crate::ontology::Ontology;

/// A trained resolver.
#[derive(Debug, Clone)]
pub enum Resolver {
    Rule,
    Neural {
        model: Box<CorefModel>,
        beta: f64,
        dgraph: DGraphConfig,
    },
}

struct Prepared {
    query: CorefQuery,
    reference: usize,
    candidates: Vec<usize>,
    labels: Vec<f64>,
}

struct Example {
    input: GraphInput,
    queries: Vec<Prepared>,
}

impl Example {
    fn pairs(&self) -> (Vec<(usize, usize)>, Vec<f64>) {
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for q in &self.queries {
            for (c, y) in q.candidates.iter().zip(&q.labels) {
                pairs.push((q.reference, *c));
                labels.push(*y);
            }
        }
        (pairs, labels)
    }
}

fn prepare_queries(g: &DialogueGraph, queries: Vec<CorefQuery>) -> Vec<Prepared> {
    queries
        .into_iter()
        .filter_map(|q| {
            let reference = g.node_id(q.turn, q.var)?;
            let candidates: Vec<usize> = q.candidates.iter().map(|c| g.node_id(c.turn, c.var)).collect::<Option<_>>()?;
            let labels = q.candidates.iter().map(|c| if q.gold.contains(c) { 1.0 } else { 0.0 }).collect();
            Some(Prepared {
                query: q,
                reference,
                candidates,
                labels,
            })
        })
        .collect()
}

/// Teacher-forced examples: one per referring turn, with gold refer edges
/// for every earlier turn. Only multi-candidate queries with gold are kept.
fn examples(
    model: &CorefModel,
    dialogues: &[Vec<DmrGraph>],
    wv: &WordVectors,
    dg: &DGraphConfig,
) -> Result<Vec<Example>, CorefError> {
    let mut out = Vec::new();
    for dmrs in dialogues {
        let refs: Vec<&DmrGraph> = dmrs.iter().collect();
        for j in 0..refs.len() {
            let qs: Vec<CorefQuery> = queries_at(&refs, j)
                .into_iter()
                .filter(|q| q.candidates.len() > 1 && !q.gold.is_empty())
                .collect();
            if qs.is_empty() {
                continue;
            }
            let resolved = gold_resolutions(&refs[..j]);
            let g = build_dialogue_graph(&refs[..=j], &resolved, dg)?;
            let queries = prepare_queries(&g, qs);
            if queries.is_empty() {
                continue;
            }
            out.push(Example {
                input: model.prepare(&g, wv)?,
                queries,
            });
        }
    }
    Ok(out)
}

/// Per-query probabilities and gold sets for a prepared set.
fn scored(model: &CorefModel, ex: &[Example]) -> Vec<(Vec<ReferTarget>, Vec<f64>, BTreeSet<ReferTarget>)> {
    let mut out = Vec::new();
    for e in ex {
        let (pairs, _) = e.pairs();
        let probs = model.probabilities(&e.input, &pairs);
        let mut at = 0;
        for q in &e.queries {
            let n = q.candidates.len();
            out.push((q.query.candidates.clone(), probs[at..at + n].to_vec(), q.query.gold.clone()));
            at += n;
        }
    }
    out
}

fn accuracy_at(scores: &[(Vec<ReferTarget>, Vec<f64>, BTreeSet<ReferTarget>)], beta: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let right = scores.iter().filter(|(c, p, g)| &select(c, p, beta) == g).count();
    right as f64 / scores.len() as f64
}

/// The grid value with the best accuracy; the lowest wins ties.
pub fn tune_beta(scores: &[(Vec<ReferTarget>, Vec<f64>, BTreeSet<ReferTarget>)], grid: &[f64]) -> (f64, f64) {
    let mut best = (grid.first().copied().unwrap_or(0.5), f64::NEG_INFINITY);
    for &b in grid {
        let acc = accuracy_at(scores, b);
        if acc > best.1 {
            best = (b, acc);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub dev_accuracy: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub beta: f64,
    pub train_queries: usize,
    pub dev_queries: usize,
}

/// Trains a resolver. The kept parameters are those of the epoch with the
/// best teacher-forced dev accuracy, with β tuned on that epoch. Without dev
/// data the last epoch is kept and β is tuned on the training set.
pub fn train(
    o: &Ontology,
    train_set: &[Vec<DmrGraph>],
    dev_set: &[Vec<DmrGraph>],
    wv: &WordVectors,
    cfg: &CorefConfig,
) -> Result<(Resolver, TrainReport), CorefError> {
    if cfg.kind == ModelKind::Rule {
        return Ok((
            Resolver::Rule,
            TrainReport {
                epochs: Vec::new(),
                best_epoch: 0,
                beta: cfg.beta,
                train_queries: 0,
                dev_queries: 0,
            },
        ));
    }
    let shape = ModelShape {
        encoder: if cfg.kind == ModelKind::Gnn { Encoder::Rgcn } else { Encoder::NeighbourMean },
        layers: cfg.layers,
        dim: wv.dim(),
        hidden: cfg.hidden,
        dropout: cfg.dropout,
    };
    let mut model = CorefModel::new(shape, relation_vocab(o, cfg.dgraph.k_max), symbol_vocab(o), cfg.seed);
    let train_ex = examples(&model, train_set, wv, &cfg.dgraph)?;
    let dev_ex = examples(&model, dev_set, wv, &cfg.dgraph)?;
    let n_train: usize = train_ex.iter().map(|e| e.queries.len()).sum();
    let n_dev: usize = dev_ex.iter().map(|e| e.queries.len()).sum();
    if n_train == 0 {
        return Err(CorefError::EmptyTrainingSet);
    }
    let tune_on = if dev_ex.is_empty() { &train_ex } else { &dev_ex };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut grads = model.params.zeros_like();
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut stats = Vec::new();
    let mut best: Option<(f64, usize, f64, CorefModel)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut at = 0;
        while at < order.len() {
            let mut batch = Vec::new();
            let mut queries = 0;
            while at < order.len() && queries < cfg.batch_size.max(1) {
                queries += train_ex[order[at]].queries.len();
                batch.push(order[at]);
                at += 1;
            }
            let prepared: Vec<_> = batch.iter().map(|&i| train_ex[i].pairs()).collect();
            let total_pairs: usize = prepared.iter().map(|(p, _)| p.len()).sum();
            let weight = 1.0 / total_pairs as f64;
            grads.fill_zero();
            for (&i, (pairs, labels)) in batch.iter().zip(&prepared) {
                epoch_loss += model.accumulate(&train_ex[i].input, pairs, labels, weight, Some(&mut rng), &mut grads);
            }
            if !epoch_loss.is_finite() || !grads.all_finite() {
                return Err(CorefError::NonFiniteLoss(epoch));
            }
            adam.update(&mut model.params, &grads);
        }
        let (beta, acc) = tune_beta(&scored(&model, tune_on), &cfg.beta_grid);
        log::info!("epoch {epoch}: loss {epoch_loss:.4}, dev accuracy {acc:.4} at beta {beta:.2}");
        stats.push(EpochStats {
            epoch,
            loss: epoch_loss,
            dev_accuracy: acc,
            beta,
        });
        let better = match &best {
            None => true,
            Some((a, ..)) => dev_ex.is_empty() || acc > *a,
        };
        if better {
            best = Some((acc, epoch, beta, model.clone()));
        }
    }
    let (_, best_epoch, beta, model) = best.unwrap_or_else(|| {
        let (beta, acc) = tune_beta(&scored(&model, tune_on), &cfg.beta_grid);
        (acc, 0, beta, model)
    });
    Ok((
        Resolver::Neural {
            model: Box::new(model),
            beta,
            dgraph: cfg.dgraph,
        },
        TrainReport {
            epochs: stats,
            best_epoch,
            beta,
            train_queries: n_train,
            dev_queries: n_dev,
        },
    ))
}

/// Resolves every reference in a dialogue turn by turn, feeding earlier
/// predictions forward as refer edges.
pub fn resolve_dialogue(resolver: &Resolver, dmrs: &[DmrGraph], wv: &WordVectors) -> Result<Vec<CorefPrediction>, CorefError> {
    let refs: Vec<&DmrGraph> = dmrs.iter().collect();
    let mut resolved = Resolutions::new();
    let mut out = Vec::new();
    for j in 0..refs.len() {
        let qs = queries_at(&refs, j);
        if qs.is_empty() {
            continue;
        }
        let mut preds: Vec<CorefPrediction> = Vec::with_capacity(qs.len());
        match resolver {
            Resolver::Rule => {
                for q in qs {
                    let predicted = rule_select(&q.candidates);
                    let probabilities = q.candidates.iter().map(|c| (*c, if predicted.contains(c) { 1.0 } else { 0.0 })).collect();
                    preds.push(CorefPrediction {
                        turn: q.turn,
                        var: q.var,
                        predicted,
                        probabilities,
                        gold: q.gold,
                    });
                }
            }
            Resolver::Neural { model, beta, dgraph } => {
                let g = build_dialogue_graph(&refs[..=j], &resolved, dgraph)?;
                let input = model.prepare(&g, wv)?;
                for p in prepare_queries(&g, qs) {
                    let pairs: Vec<(usize, usize)> = p.candidates.iter().map(|&c| (p.reference, c)).collect();
                    let probs = model.probabilities(&input, &pairs);
                    let predicted = if p.candidates.len() == 1 {
                        p.query.candidates.iter().copied().collect()
                    } else {
                        select(&p.query.candidates, &probs, *beta)
                    };
                    preds.push(CorefPrediction {
                        turn: p.query.turn,
                        var: p.query.var,
                        predicted,
                        probabilities: p.query.candidates.iter().copied().zip(probs).collect(),
                        gold: p.query.gold,
                    });
                }
            }
        }
        for p in &preds {
            resolved.insert((p.turn, p.var), p.predicted.clone());
        }
        out.extend(preds);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorefEval {
    pub accuracy: f64,
    pub evaluated: usize,
    pub predictions: Vec<CorefPrediction>,
}

/// Sequential-inference accuracy over references with gold referents.
pub fn evaluate(
    resolver: &Resolver,
    dialogues: &[Vec<DmrGraph>],
    wv: &WordVectors,
    exclude_single_candidate: bool,
) -> Result<CorefEval, CorefError> {
    let mut predictions = Vec::new();
    for d in dialogues {
        predictions.extend(resolve_dialogue(resolver, d, wv)?.into_iter().filter(|p| !p.gold.is_empty()));
    }
    let golds: Vec<GoldReferents> = predictions
        .iter()
        .map(|p| GoldReferents {
            targets: p.gold.clone(),
            candidates: p.probabilities.len(),
        })
        .collect();
    let preds: Vec<BTreeSet<ReferTarget>> = predictions.iter().map(|p| p.predicted.clone()).collect();
    let accuracy = coref_accuracy(&golds, &preds, exclude_single_candidate).expect("aligned by construction");
    let evaluated = golds.iter().filter(|g| !exclude_single_candidate || g.candidates != 1).count();
    Ok(CorefEval {
        accuracy,
        evaluated,
        predictions,
    })
}

impl Resolver {
    pub fn kind(&self) -> ModelKind {
        match self {
            Resolver::Rule => ModelKind::Rule,
            Resolver::Neural { model, .. } => match model.shape.encoder {
                Encoder::Rgcn => ModelKind::Gnn,
                Encoder::NeighbourMean => ModelKind::Mlp,
            },
        }
    }

    pub fn to_json(&self) -> Option<String> {
        match self {
            Resolver::Rule => None,
            Resolver::Neural { model, beta, dgraph } => {
                let mut v = serde_json::to_value(model.to_checkpoint(*beta)).ok()?;
                v["dgraph"] = serde_json::to_value(dgraph).ok()?;
                serde_json::to_string(&v).ok()
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CorefError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| CorefError::Checkpoint(e.to_string()))?;
        let dgraph: DGraphConfig = match v.get("dgraph") {
            Some(d) => serde_json::from_value(d.clone()).map_err(|e| CorefError::Checkpoint(e.to_string()))?,
            None => DGraphConfig::default(),
        };
        let c = serde_json::from_value(v).map_err(|e| CorefError::Checkpoint(e.to_string()))?;
        let (model, beta) = CorefModel::from_checkpoint(c)?;
        Ok(Resolver::Neural {
            model: Box::new(model),
            beta,
            dgraph,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::read_graph;

    fn dialogue(second: &str, ref_turn: &str) -> Vec<DmrGraph> {
        vec![
            read_graph("(v1 / OrderIntent :order-item (v2 / pizza || Pizza) :order-item (v3 / coke || DrinkItem))", 0).unwrap(),
            read_graph(second, 2).unwrap(),
            read_graph(ref_turn, 4).unwrap(),
        ]
    }

    fn toy() -> Vec<Vec<DmrGraph>> {
        vec![dialogue(
            "(v1 / OrderIntent :order-item (v2 / burger || Burger))",
            "(v1 / OrderIntent :order-item (v2 / reference || the pizza :refer (T:0 N:v2) :mod (v3 / large || Size)))",
        )]
    }

    fn small_cfg(kind: ModelKind) -> CorefConfig {
        CorefConfig {
            kind,
            hidden: 16,
            dropout: 0.0,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn overfits_one_query() {
        let o = Ontology::fastfood();
        let wv = WordVectors::hashed(16, 1);
        let data = toy();
        let (r, report) = train(&o, &data, &[], &wv, &small_cfg(ModelKind::Gnn)).unwrap();
        assert_eq!(report.train_queries, 1);
        assert_eq!(evaluate(&r, &data, &wv, true).unwrap().accuracy, 1.0);
    }

    #[test]
    fn initial_loss_near_ln2() {
        let o = Ontology::fastfood();
        let wv = WordVectors::hashed(100, 1);
        let cfg = CorefConfig::default();
        let shape = ModelShape {
            encoder: Encoder::Rgcn,
            layers: 3,
            dim: 100,
            hidden: 100,
            dropout: 0.0,
        };
        let model = CorefModel::new(shape, relation_vocab(&o, 2), symbol_vocab(&o), 3);
        let ex = examples(&model, &toy(), &wv, &cfg.dgraph).unwrap();
        let (pairs, labels) = ex[0].pairs();
        let n = pairs.len();
        let per_pair = model.loss(&ex[0].input, &pairs, &labels, 1.0 / n as f64);
        assert!((per_pair - 2f64.ln()).abs() < 0.2, "{per_pair}");
    }

    #[test]
    fn deterministic_under_seed() {
        let o = Ontology::fastfood();
        let wv = WordVectors::hashed(16, 1);
        let cfg = CorefConfig {
            epochs: 3,
            dropout: 0.2,
            ..small_cfg(ModelKind::Gnn)
        };
        let a = train(&o, &toy(), &[], &wv, &cfg).unwrap().0.to_json();
        let b = train(&o, &toy(), &[], &wv, &cfg).unwrap().0.to_json();
        assert_eq!(a, b);
        let (r, _) = train(&o, &toy(), &[], &wv, &cfg).unwrap();
        let back = Resolver::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.to_json(), r.to_json());
    }

    #[test]
    fn rule_resolver_sequential() {
        let wv = WordVectors::hashed(8, 1);
        let preds = resolve_dialogue(&Resolver::Rule, &toy()[0], &wv).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].predicted.iter().map(|t| t.turn).collect::<Vec<_>>(), [2]);
        let ev = evaluate(&Resolver::Rule, &toy(), &wv, true).unwrap();
        assert_eq!(ev.accuracy, 0.0);
    }

    #[test]
    fn empty_training_set() {
        let o = Ontology::fastfood();
        let wv = WordVectors::hashed(8, 1);
        assert!(matches!(train(&o, &[], &[], &wv, &small_cfg(ModelKind::Mlp)), Err(CorefError::EmptyTrainingSet)));
    }
}
