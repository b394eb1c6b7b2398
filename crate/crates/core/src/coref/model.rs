use std::collections::{BTreeSet, HashMap};

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::nn::{bce_with_logit, glorot, leaky, leaky_grad, sigmoid, Params, TensorRecord};
use super::wordvec::{payload_words, WordVectors};
use super::CorefError;
use crate::dgraph::{hop_relation, inverse, DNodeKind, DialogueGraph, REFER_EDGE, TURN_EDGE};
use crate::ontology::{Ontology, AND, NEGATIVE, OR, POLARITY};

pub const UNKNOWN_SYMBOL: &str = "<unk>";
pub const TURN_SYMBOL: &str = "<turn>";
/// Highest `opN` label with its own relation weights.
pub const MAX_OPERANDS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    /// Relational graph convolutions.
    Rgcn,
    /// Mean over the node and its direct neighbours, no weights.
    NeighbourMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub encoder: Encoder,
    pub layers: usize,
    pub dim: usize,
    pub hidden: usize,
    pub dropout: f64,
}

/// Edge relations a model has weights for: every argument label of the
/// ontology, operand labels, the dialogue-level relations, and inverses.
pub fn relation_vocab(o: &Ontology, k_max: usize) -> Vec<String> {
    let mut base: BTreeSet<String> = o.types().flat_map(|t| t.own_args.keys().cloned()).collect();
    base.insert(POLARITY.to_string());
    base.extend((1..=MAX_OPERANDS).map(|i| format!("op{i}")));
    base.insert(TURN_EDGE.to_string());
    base.insert(REFER_EDGE.to_string());
    base.extend((1..=k_max.max(1)).map(hop_relation));
    let mut out: Vec<String> = base.iter().cloned().collect();
    out.extend(base.iter().map(|r| inverse(r)));
    out
}

/// Symbols with a learned embedding: intents, operators, the keyword and
/// the turn hub.
pub fn symbol_vocab(o: &Ontology) -> Vec<String> {
    let mut out: Vec<String> = [UNKNOWN_SYMBOL, TURN_SYMBOL, NEGATIVE, AND, OR].iter().map(|s| s.to_string()).collect();
    out.extend(o.intents().iter().cloned());
    out
}

/// Per-graph model input.
#[derive(Debug, Clone)]
pub struct GraphInput {
    /// Word-vector features; zero rows for symbol nodes.
    pub words: Array2<f64>,
    pub symbols: Vec<Option<usize>>,
    /// Per relation: receiving node and the nodes it hears from.
    by_relation: Vec<Vec<(usize, Vec<usize>)>>,
    /// Each node together with its neighbours under any relation.
    neighbourhood: Vec<Vec<usize>>,
}

impl GraphInput {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Tokens describing a word-featured node, or `None` for symbol nodes.
pub fn node_words(kind: DNodeKind, is_reference: bool, type_name: &str, lex: Option<&str>, canon: Option<&str>) -> Option<Vec<String>> {
    if kind != DNodeKind::Entity && !is_reference {
        return None;
    }
    let mut words = Vec::new();
    for part in [lex, canon, Some(type_name)].into_iter().flatten() {
        words.extend(payload_words(part));
    }
    Some(words)
}

struct LayerTrace {
    input: Array2<f64>,
    mask: Option<Array2<f64>>,
    messages: Vec<Option<Array2<f64>>>,
    z: Array2<f64>,
}

struct Trace {
    layers: Vec<LayerTrace>,
}

struct PairTrace {
    u: Array2<f64>,
    a: Array2<f64>,
    g: Array2<f64>,
    s: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorefModel {
    pub shape: ModelShape,
    pub relations: Vec<String>,
    pub symbols: Vec<String>,
    pub params: Params,
    rel_index: HashMap<String, usize>,
    sym_index: HashMap<String, usize>,
    embed: usize,
    self_w: Vec<usize>,
    rel_w: Vec<Vec<usize>>,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl CorefModel {
    pub fn new(shape: ModelShape, relations: Vec<String>, symbols: Vec<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let normal = Normal::new(0.0, 1.0 / (shape.dim as f64).sqrt()).expect("positive std");
        let embed = params.push(
            "embed",
            Array2::from_shape_simple_fn((symbols.len(), shape.dim), || normal.sample(&mut rng)),
        );
        let layers = if shape.encoder == Encoder::Rgcn { shape.layers } else { 0 };
        let (mut self_w, mut rel_w) = (Vec::new(), Vec::new());
        for l in 0..layers {
            let d_in = if l == 0 { shape.dim } else { shape.hidden };
            self_w.push(params.push(format!("layer{l}.self"), glorot(d_in, shape.hidden, &mut rng)));
            rel_w.push(
                relations
                    .iter()
                    .map(|r| params.push(format!("layer{l}.{r}"), glorot(d_in, shape.hidden, &mut rng)))
                    .collect(),
            );
        }
        let out = if layers > 0 { shape.hidden } else { shape.dim };
        let w1 = params.push("cls.w1", glorot(2 * out, shape.hidden, &mut rng));
        let b1 = params.push("cls.b1", Array2::zeros((1, shape.hidden)));
        let w2 = params.push("cls.w2", glorot(shape.hidden, 1, &mut rng) * 0.1);
        let b2 = params.push("cls.b2", Array2::zeros((1, 1)));
        CorefModel {
            shape: ModelShape { layers, ..shape },
            rel_index: relations.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect(),
            sym_index: symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect(),
            relations,
            symbols,
            params,
            embed,
            self_w,
            rel_w,
            w1,
            b1,
            w2,
            b2,
        }
    }

    fn symbol_id(&self, kind: DNodeKind, type_name: &str) -> usize {
        let key = if kind == DNodeKind::Turn { TURN_SYMBOL } else { type_name };
        self.sym_index.get(key).or_else(|| self.sym_index.get(UNKNOWN_SYMBOL)).copied().unwrap_or(0)
    }

    pub fn prepare(&self, g: &DialogueGraph, wv: &WordVectors) -> Result<GraphInput, CorefError> {
        if wv.dim() != self.shape.dim {
            return Err(CorefError::DimensionMismatch {
                expected: self.shape.dim,
                found: wv.dim(),
            });
        }
        let n = g.nodes.len();
        let mut words = Array2::zeros((n, self.shape.dim));
        let mut symbols = Vec::with_capacity(n);
        for (i, node) in g.nodes.iter().enumerate() {
            match node_words(node.kind, node.is_reference, &node.type_name, node.lexical.as_deref(), node.canonical.as_deref()) {
                Some(toks) => {
                    words.row_mut(i).assign(&wv.mean(&toks));
                    symbols.push(None);
                }
                None => symbols.push(Some(self.symbol_id(node.kind, &node.type_name))),
            }
        }
        let mut grouped: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); n]; self.relations.len()];
        let mut neighbourhood: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        for e in &g.edges {
            let r = *self
                .rel_index
                .get(&e.rel)
                .ok_or_else(|| CorefError::UnknownRelation(e.rel.clone()))?;
            grouped[r][e.dst].push(e.src);
            neighbourhood[e.dst].insert(e.src);
            neighbourhood[e.src].insert(e.dst);
        }
        let by_relation = grouped
            .into_iter()
            .map(|per_node| {
                per_node
                    .into_iter()
                    .enumerate()
                    .filter(|(_, srcs)| !srcs.is_empty())
                    .collect()
            })
            .collect();
        Ok(GraphInput {
            words,
            symbols,
            by_relation,
            neighbourhood: neighbourhood.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    fn initial(&self, inp: &GraphInput) -> Array2<f64> {
        let mut x = inp.words.clone();
        let table = &self.params.tensors[self.embed];
        for (i, s) in inp.symbols.iter().enumerate() {
            if let Some(k) = s {
                x.row_mut(i).assign(&table.row(*k));
            }
        }
        x
    }

    fn encode(&self, inp: &GraphInput, mut rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, Trace) {
        let x0 = self.initial(inp);
        let mut trace = Trace { layers: Vec::new() };
        if self.shape.encoder == Encoder::NeighbourMean {
            let mut h = Array2::zeros(x0.raw_dim());
            for (i, nb) in inp.neighbourhood.iter().enumerate() {
                let mut row = h.row_mut(i);
                for &j in nb {
                    row += &x0.row(j);
                }
                row /= nb.len() as f64;
            }
            return (h, trace);
        }
        let mut x = x0;
        for l in 0..self.shape.layers {
            let (input, mask) = match rng.as_deref_mut() {
                Some(r) if self.shape.dropout > 0.0 => {
                    let keep = 1.0 - self.shape.dropout;
                    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    (&x * &mask, Some(mask))
                }
                _ => (x, None),
            };
            let mut z = input.dot(&self.params.tensors[self.self_w[l]]);
            let mut messages = Vec::with_capacity(self.relations.len());
            for (r, rows) in inp.by_relation.iter().enumerate() {
                if rows.is_empty() {
                    messages.push(None);
                    continue;
                }
                let mut m = Array2::zeros((rows.len(), input.ncols()));
                for (t, (_, srcs)) in rows.iter().enumerate() {
                    let mut row = m.row_mut(t);
                    for &j in srcs {
                        row += &input.row(j);
                    }
                    row /= srcs.len() as f64;
                }
                let zr = m.dot(&self.params.tensors[self.rel_w[l][r]]);
                for (t, (dst, _)) in rows.iter().enumerate() {
                    let mut zrow = z.row_mut(*dst);
                    zrow += &zr.row(t);
                }
                messages.push(Some(m));
            }
            x = z.mapv(leaky);
            trace.layers.push(LayerTrace { input, mask, messages, z });
        }
        (x, trace)
    }

    /// Node embeddings in inference mode.
    pub fn embed_nodes(&self, inp: &GraphInput) -> Array2<f64> {
        self.encode(inp, None).0
    }

    fn score(&self, h: &Array2<f64>, pairs: &[(usize, usize)]) -> PairTrace {
        let d = h.ncols();
        let mut u = Array2::zeros((pairs.len(), 2 * d));
        for (p, &(r, c)) in pairs.iter().enumerate() {
            u.slice_mut(s![p, ..d]).assign(&h.row(r));
            u.slice_mut(s![p, d..]).assign(&h.row(c));
        }
        let a = u.dot(&self.params.tensors[self.w1]) + &self.params.tensors[self.b1];
        let g = a.mapv(leaky);
        let s = (g.dot(&self.params.tensors[self.w2]) + &self.params.tensors[self.b2]).column(0).to_owned();
        PairTrace { u, a, g, s }
    }

    /// Coreference probabilities for `(reference, candidate)` node pairs.
    pub fn probabilities(&self, inp: &GraphInput, pairs: &[(usize, usize)]) -> Vec<f64> {
        let h = self.embed_nodes(inp);
        self.score(&h, pairs).s.iter().map(|&x| sigmoid(x)).collect()
    }

    /// `weight` times the summed cross-entropy, without dropout.
    pub fn loss(&self, inp: &GraphInput, pairs: &[(usize, usize)], labels: &[f64], weight: f64) -> f64 {
        let h = self.embed_nodes(inp);
        let pt = self.score(&h, pairs);
        weight * pt.s.iter().zip(labels).map(|(&s, &y)| bce_with_logit(s, y)).sum::<f64>()
    }

    /// Adds the gradient of `weight` times the summed cross-entropy into
    /// `grads` and returns that loss. Dropout is applied when `rng` is given.
    pub fn accumulate(
        &self,
        inp: &GraphInput,
        pairs: &[(usize, usize)],
        labels: &[f64],
        weight: f64,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut Params,
    ) -> f64 {
        let (h, trace) = self.encode(inp, rng);
        let pt = self.score(&h, pairs);
        let loss = weight * pt.s.iter().zip(labels).map(|(&s, &y)| bce_with_logit(s, y)).sum::<f64>();
        let ds = Array2::from_shape_fn((pairs.len(), 1), |(p, _)| weight * (sigmoid(pt.s[p]) - labels[p]));

        let p = &self.params.tensors;
        grads.tensors[self.b2] += &ds.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.tensors[self.w2] += &pt.g.t().dot(&ds);
        let mut da = ds.dot(&p[self.w2].t());
        da.zip_mut_with(&pt.a, |d, &a| *d *= leaky_grad(a));
        grads.tensors[self.b1] += &da.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.tensors[self.w1] += &pt.u.t().dot(&da);
        let du = da.dot(&p[self.w1].t());
        let d = h.ncols();
        let mut dh = Array2::zeros(h.raw_dim());
        for (k, &(r, c)) in pairs.iter().enumerate() {
            let mut row = dh.row_mut(r);
            row += &du.slice(s![k, ..d]);
            let mut row = dh.row_mut(c);
            row += &du.slice(s![k, d..]);
        }

        let dx0 = match self.shape.encoder {
            Encoder::NeighbourMean => {
                let mut dx = Array2::zeros(dh.raw_dim());
                for (i, nb) in inp.neighbourhood.iter().enumerate() {
                    let share = &dh.row(i) / nb.len() as f64;
                    for &j in nb {
                        let mut row = dx.row_mut(j);
                        row += &share;
                    }
                }
                dx
            }
            Encoder::Rgcn => {
                let mut dx = dh;
                for l in (0..self.shape.layers).rev() {
                    let lt = &trace.layers[l];
                    let mut dz = dx;
                    dz.zip_mut_with(&lt.z, |d, &z| *d *= leaky_grad(z));
                    grads.tensors[self.self_w[l]] += &lt.input.t().dot(&dz);
                    let mut dinput = dz.dot(&p[self.self_w[l]].t());
                    for (r, rows) in inp.by_relation.iter().enumerate() {
                        let Some(m) = &lt.messages[r] else { continue };
                        let mut dzr = Array2::zeros((rows.len(), dz.ncols()));
                        for (t, (dst, _)) in rows.iter().enumerate() {
                            dzr.row_mut(t).assign(&dz.row(*dst));
                        }
                        grads.tensors[self.rel_w[l][r]] += &m.t().dot(&dzr);
                        let dm = dzr.dot(&p[self.rel_w[l][r]].t());
                        for (t, (_, srcs)) in rows.iter().enumerate() {
                            let share = &dm.row(t) / srcs.len() as f64;
                            for &j in srcs {
                                let mut row = dinput.row_mut(j);
                                row += &share;
                            }
                        }
                    }
                    if let Some(mask) = &lt.mask {
                        dinput *= mask;
                    }
                    dx = dinput;
                }
                dx
            }
        };
        let table = &mut grads.tensors[self.embed];
        for (i, s) in inp.symbols.iter().enumerate() {
            if let Some(k) = s {
                let mut row = table.row_mut(*k);
                row += &dx0.row(i);
            }
        }
        loss
    }

    pub fn to_checkpoint(&self, beta: f64) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: self.shape,
            relations: self.relations.clone(),
            symbols: self.symbols.clone(),
            beta,
            tensors: self.params.to_record(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<(Self, f64), CorefError> {
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(CorefError::Checkpoint(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        let mut m = CorefModel::new(c.shape, c.relations, c.symbols, 0);
        let params = Params::from_record(c.tensors).map_err(CorefError::Checkpoint)?;
        if params.names != m.params.names {
            return Err(CorefError::Checkpoint("tensor manifest does not match the model shape".into()));
        }
        for (a, b) in m.params.tensors.iter().zip(&params.tensors) {
            if a.raw_dim() != b.raw_dim() {
                return Err(CorefError::Checkpoint("tensor shape mismatch".into()));
            }
        }
        m.params = params;
        Ok((m, c.beta))
    }
}

pub const CHECKPOINT_FORMAT: &str = "dmr-coref";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: ModelShape,
    pub relations: Vec<String>,
    pub symbols: Vec<String>,
    pub beta: f64,
    pub tensors: Vec<TensorRecord>,
}
