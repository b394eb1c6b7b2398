//! Dialogue corpora: JSONL ingest, NLU turn filtering, statistics,
//! sequence-to-sequence export and inter-annotator agreement.
//!
//! One dialogue per line:
//!
//! ```text
//! {"id": "d1", "split": "train", "turns": [
//!   {"index": 0, "role": "customer", "text": "a large pizza", "dmr": "(v1 / OrderIntent ...)"},
//!   {"index": 1, "role": "agent", "text": "anything else?"}]}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{read_graph, write_graph_compact, DmrGraph, EdgeTarget, NodeKind};
use crate::linearize::linearize;
use crate::metrics::exact_match;
use crate::ontology::{AND, NEGATIVE, OR, POLARITY};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} malformed record(s); first: {}", .0.len(), .0[0])]
    Malformed(Vec<RecordIssue>),
}

#[derive(Debug, Error, PartialEq)]
pub enum KappaError {
    #[error("agreement needs at least two raters per item")]
    TooFewRaters,
    #[error("no items")]
    NoItems,
    #[error("item {0} has a different number of ratings")]
    Ragged(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Customer,
    Agent,
}

impl Role {
    pub fn tag(self) -> &'static str {
        match self {
            Role::Customer => "customer:",
            Role::Agent => "agent:",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub index: u32,
    pub role: Role,
    pub text: String,
    pub dmr: Option<DmrGraph>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub split: Split,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// DMRs in turn order.
    pub fn dmrs(&self) -> Vec<DmrGraph> {
        self.turns.iter().filter_map(|t| t.dmr.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exclusion {
    NoDmr,
    SingleIntent,
    Leakage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum NluFlag {
    Included,
    Excluded(Exclusion),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordIssue {
    pub line: usize,
    pub dialogue: Option<String>,
    pub turn: Option<u32>,
    pub message: String,
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}", self.line)?;
        if let Some(d) = &self.dialogue {
            write!(f, ", dialogue {d}")?;
        }
        if let Some(t) = self.turn {
            write!(f, ", turn {t}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    /// Set by [`nlu_filter`] for every customer turn.
    pub flags: BTreeMap<(String, u32), NluFlag>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    index: u32,
    role: Role,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dmr: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    split: Split,
    turns: Vec<TurnRecord>,
}

fn parse_record(line: &str, no: usize) -> Result<Dialogue, RecordIssue> {
    let issue = |dialogue: Option<&str>, turn: Option<u32>, message: String| RecordIssue {
        line: no,
        dialogue: dialogue.map(str::to_string),
        turn,
        message,
    };
    let rec: DialogueRecord = serde_json::from_str(line).map_err(|e| issue(None, None, e.to_string()))?;
    let mut turns = Vec::with_capacity(rec.turns.len());
    for (i, t) in rec.turns.into_iter().enumerate() {
        if t.index as usize != i {
            return Err(issue(Some(&rec.id), Some(t.index), format!("expected turn index {i}")));
        }
        let dmr = match (&t.dmr, t.role) {
            (Some(_), Role::Agent) => return Err(issue(Some(&rec.id), Some(t.index), "agent turns carry no DMR".into())),
            (Some(text), Role::Customer) => {
                Some(read_graph(text, t.index).map_err(|e| issue(Some(&rec.id), Some(t.index), e.to_string()))?)
            }
            (None, _) => None,
        };
        turns.push(Turn {
            index: t.index,
            role: t.role,
            text: t.text,
            dmr,
        });
    }
    Ok(Dialogue {
        id: rec.id,
        split: rec.split,
        turns,
    })
}

/// Parses JSONL text. Dialogues with a bad record are left out and listed.
pub fn parse_corpus(text: &str) -> (Corpus, Vec<RecordIssue>) {
    let mut corpus = Corpus::default();
    let mut issues = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line, i + 1) {
            Ok(d) => {
                if let Some(prev) = seen.insert(d.id.clone(), i + 1) {
                    issues.push(RecordIssue {
                        line: i + 1,
                        dialogue: Some(d.id.clone()),
                        turn: None,
                        message: format!("duplicate dialogue id, first on line {prev}"),
                    });
                    continue;
                }
                corpus.dialogues.push(d);
            }
            Err(e) => issues.push(e),
        }
    }
    (corpus, issues)
}

/// Reads a corpus file; malformed records are returned alongside it.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Corpus, Vec<RecordIssue>), CorpusError> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_corpus(&text))
}

/// Like [`load_corpus`], but any malformed record is an error.
pub fn load_corpus_strict(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let (c, issues) = load_corpus(path)?;
    if issues.is_empty() {
        Ok(c)
    } else {
        Err(CorpusError::Malformed(issues))
    }
}

pub fn dialogue_to_json(d: &Dialogue) -> String {
    let rec = DialogueRecord {
        id: d.id.clone(),
        split: d.split,
        turns: d
            .turns
            .iter()
            .map(|t| TurnRecord {
                index: t.index,
                role: t.role,
                text: t.text.clone(),
                dmr: t.dmr.as_ref().map(write_graph_compact),
            })
            .collect(),
    };
    serde_json::to_string(&rec).expect("records serialize")
}

pub fn corpus_to_jsonl(c: &Corpus) -> String {
    c.dialogues.iter().map(|d| dialogue_to_json(d) + "\n").collect()
}

impl Corpus {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &Dialogue> {
        self.dialogues.iter().filter(move |d| d.split == s)
    }

    pub fn flag(&self, dialogue: &str, turn: u32) -> Option<NluFlag> {
        self.flags.get(&(dialogue.to_string(), turn)).copied()
    }

    /// Whether a turn belongs to the NLU set. Before filtering, every turn
    /// with a DMR does.
    pub fn is_nlu(&self, d: &Dialogue, t: &Turn) -> bool {
        if self.flags.is_empty() {
            return t.dmr.is_some();
        }
        self.flag(&d.id, t.index) == Some(NluFlag::Included)
    }
}

/// Case-folded with whitespace runs collapsed.
pub fn normalize_utterance(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

fn single_intent(g: &DmrGraph) -> bool {
    g.root_node().kind == NodeKind::Intent && g.edges_from(g.root()).next().is_none()
}

/// Flags every customer turn. Train turns whose utterance and DMR also
/// occur in dev or test are leakage; dev and test turns holding a lone
/// argument-free intent are excluded as trivial.
pub fn nlu_filter(mut c: Corpus) -> Corpus {
    let mut held_out: HashMap<String, Vec<DmrGraph>> = HashMap::new();
    for d in c.dialogues.iter().filter(|d| d.split != Split::Train) {
        for t in &d.turns {
            if let Some(g) = &t.dmr {
                held_out.entry(normalize_utterance(&t.text)).or_default().push(g.without_refer());
            }
        }
    }
    let mut flags = BTreeMap::new();
    for d in &c.dialogues {
        for t in d.turns.iter().filter(|t| t.role == Role::Customer) {
            let flag = match &t.dmr {
                None => NluFlag::Excluded(Exclusion::NoDmr),
                Some(g) if d.split == Split::Train => {
                    let plain = g.without_refer();
                    let leaked = held_out
                        .get(&normalize_utterance(&t.text))
                        .is_some_and(|gs| gs.iter().any(|h| exact_match(h, &plain)));
                    if leaked {
                        NluFlag::Excluded(Exclusion::Leakage)
                    } else {
                        NluFlag::Included
                    }
                }
                Some(g) if single_intent(g) => NluFlag::Excluded(Exclusion::SingleIntent),
                Some(_) => NluFlag::Included,
            };
            flags.insert((d.id.clone(), t.index), flag);
        }
    }
    c.flags = flags;
    c
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SplitStats {
    pub dialogues: usize,
    pub utterances: usize,
    pub customer_utterances: usize,
    pub nlu_utterances: usize,
    pub utterance_tokens: usize,
    pub references: usize,
    pub negations: usize,
    pub conjunctions: usize,
    pub nlu_depth_sum: usize,
    pub nlu_node_sum: usize,
}

impl SplitStats {
    pub fn utterances_per_dialogue(&self) -> f64 {
        ratio(self.utterances, self.dialogues)
    }

    pub fn mean_utterance_length(&self) -> f64 {
        ratio(self.utterance_tokens, self.utterances)
    }

    pub fn mean_nlu_depth(&self) -> f64 {
        ratio(self.nlu_depth_sum, self.nlu_utterances)
    }

    pub fn mean_nlu_nodes(&self) -> f64 {
        ratio(self.nlu_node_sum, self.nlu_utterances)
    }

    pub fn merge(&mut self, o: &SplitStats) {
        self.dialogues += o.dialogues;
        self.utterances += o.utterances;
        self.customer_utterances += o.customer_utterances;
        self.nlu_utterances += o.nlu_utterances;
        self.utterance_tokens += o.utterance_tokens;
        self.references += o.references;
        self.negations += o.negations;
        self.conjunctions += o.conjunctions;
        self.nlu_depth_sum += o.nlu_depth_sum;
        self.nlu_node_sum += o.nlu_node_sum;
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn dialogue_stats(c: &Corpus, d: &Dialogue) -> SplitStats {
    let mut s = SplitStats {
        dialogues: 1,
        ..Default::default()
    };
    for t in &d.turns {
        s.utterances += 1;
        s.utterance_tokens += t.text.split_whitespace().count();
        if t.role == Role::Customer {
            s.customer_utterances += 1;
        }
        if let Some(g) = &t.dmr {
            s.references += g.reference_nodes().count();
            s.conjunctions += g
                .nodes()
                .iter()
                .filter(|n| n.kind == NodeKind::Operator && (n.type_name == AND || n.type_name == OR))
                .count();
            s.negations += g
                .edges()
                .iter()
                .filter(|e| e.label == POLARITY && e.target == EdgeTarget::Keyword(NEGATIVE.into()))
                .count();
            if c.is_nlu(d, t) {
                s.nlu_utterances += 1;
                s.nlu_depth_sum += g.depth();
                s.nlu_node_sum += g.node_count();
            }
        }
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StatsReport {
    pub splits: BTreeMap<Split, SplitStats>,
}

pub fn stats(c: &Corpus) -> StatsReport {
    let mut splits: BTreeMap<Split, SplitStats> = Split::ALL.iter().map(|s| (*s, SplitStats::default())).collect();
    for d in &c.dialogues {
        splits.get_mut(&d.split).expect("all splits present").merge(&dialogue_stats(c, d));
    }
    StatsReport { splits }
}

impl StatsReport {
    /// A plain-text table, one row per statistic and one column per split.
    pub fn table(&self) -> String {
        type Row = (&'static str, fn(&SplitStats) -> String);
        let rows: [Row; 11] = [
            ("Dialogue", |s| s.dialogues.to_string()),
            ("Utterance", |s| s.utterances.to_string()),
            ("Utterance/Dialogue", |s| format!("{:.2}", s.utterances_per_dialogue())),
            ("Customer Utterance", |s| s.customer_utterances.to_string()),
            ("Utterance for NLU", |s| s.nlu_utterances.to_string()),
            ("Utterance Length", |s| format!("{:.2}", s.mean_utterance_length())),
            ("Reference", |s| s.references.to_string()),
            ("Negation", |s| s.negations.to_string()),
            ("Conjunction", |s| s.conjunctions.to_string()),
            ("NLU DMR Depth", |s| format!("{:.2}", s.mean_nlu_depth())),
            ("NLU DMR Nodes", |s| format!("{:.2}", s.mean_nlu_nodes())),
        ];
        let mut out = format!("{:<20}{:>10}{:>10}{:>10}\n", "", "train", "dev", "test");
        for (name, f) in rows {
            out.push_str(&format!("{name:<20}"));
            for s in Split::ALL {
                out.push_str(&format!("{:>10}", f(&self.splits[&s])));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Seq2SeqPair {
    pub dialogue: String,
    pub turn: u32,
    pub input: String,
    pub target: String,
}

/// Role-tagged input of the `context_size` preceding turns and the current
/// one, paired with the linearized gold DMR, for every NLU turn.
pub fn export_seq2seq(c: &Corpus, context_size: usize) -> Vec<Seq2SeqPair> {
    let mut out = Vec::new();
    for d in &c.dialogues {
        for (i, t) in d.turns.iter().enumerate() {
            let Some(g) = &t.dmr else { continue };
            if !c.is_nlu(d, t) {
                continue;
            }
            let input = d.turns[i.saturating_sub(context_size)..=i]
                .iter()
                .map(|u| format!("{} {}", u.role.tag(), u.text))
                .collect::<Vec<_>>()
                .join(" ");
            out.push(Seq2SeqPair {
                dialogue: d.id.clone(),
                turn: t.index,
                input,
                target: linearize(g).to_string(),
            });
        }
    }
    out
}

/// Fleiss' kappa from an items x categories count matrix. Every row must
/// sum to the same number of raters.
pub fn fleiss_kappa_counts(counts: &[Vec<usize>]) -> Result<f64, KappaError> {
    let Some(first) = counts.first() else {
        return Err(KappaError::NoItems);
    };
    let n: usize = first.iter().sum();
    if n < 2 {
        return Err(KappaError::TooFewRaters);
    }
    let k = counts.iter().map(Vec::len).max().unwrap_or(0);
    let mut totals = vec![0usize; k];
    let mut p_bar = 0.0;
    for (i, row) in counts.iter().enumerate() {
        if row.iter().sum::<usize>() != n {
            return Err(KappaError::Ragged(i));
        }
        let agree: usize = row.iter().map(|&c| c * c.saturating_sub(1)).sum();
        p_bar += agree as f64 / (n * (n - 1)) as f64;
        for (j, &c) in row.iter().enumerate() {
            totals[j] += c;
        }
    }
    let items = counts.len() as f64;
    p_bar /= items;
    let all = items * n as f64;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / all).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Fleiss' kappa from an items x raters matrix of category labels.
pub fn fleiss_kappa<T: Eq + Hash + Clone>(ratings: &[Vec<T>]) -> Result<f64, KappaError> {
    let mut index: HashMap<T, usize> = HashMap::new();
    for row in ratings {
        for r in row {
            let n = index.len();
            index.entry(r.clone()).or_insert(n);
        }
    }
    let counts: Vec<Vec<usize>> = ratings
        .iter()
        .map(|row| {
            let mut c = vec![0; index.len()];
            for r in row {
                c[index[r]] += 1;
            }
            c
        })
        .collect();
    fleiss_kappa_counts(&counts)
}

/// Agreement over items annotated by several annotators. Within an item,
/// annotations that match exactly share a category; categories are numbered
/// by first appearance.
pub fn annotation_kappa(items: &[Vec<DmrGraph>]) -> Result<f64, KappaError> {
    let ratings: Vec<Vec<usize>> = items
        .iter()
        .map(|anns| {
            let mut reps: Vec<&DmrGraph> = Vec::new();
            anns.iter()
                .map(|g| match reps.iter().position(|r| exact_match(r, g)) {
                    Some(i) => i,
                    None => {
                        reps.push(g);
                        reps.len() - 1
                    }
                })
                .collect()
        })
        .collect();
    fleiss_kappa(&ratings)
}
