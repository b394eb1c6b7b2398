use std::fs;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmr::coref::{evaluate, train, CorefConfig, ModelKind, Resolver, WordVectors};
use dmr::corpus::{corpus_to_jsonl, export_seq2seq, load_corpus, nlu_filter, stats, Corpus, Split};
use dmr::dgraph::{build_dialogue_graph, export_dialogue_graph, gold_resolutions, queries_at, DGraphConfig};
use dmr::metrics::corpus_eval;
use dmr::synth::{coref_benchmark, CorefBenchConfig};
use dmr::validate::uncopied_lexicals;
use dmr::{delinearize, parse_ontology, read_graph, smatch, DmrGraph, MatchConfig, Ontology, Prediction, TokenSeq};
use serde_json::json;
use thiserror::Error;

use crate::service::{serve, Annotation, ServiceConfig};
use crate::store::Store;

pub const ONTOLOGY_ENV: &str = "DMR_ONTOLOGY";
const VECTOR_SEED_KEY: &str = "hashed_vectors_seed";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Domain(_) => "domain",
            CliError::Usage(_) => "usage",
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "dmr", version, about = "Dialogue meaning representation tools")]
pub struct Cli {
    /// Report errors on stderr as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Ontology file; the built-in fast-food ontology when absent.
    #[arg(long, global = true, env = ONTOLOGY_ENV)]
    pub ontology: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check DMR graphs (blank-line separated) against the ontology.
    Validate(ValidateArgs),
    /// Score predicted graphs against gold graphs, one per line.
    Score(ScoreArgs),
    /// Coreference accuracy of a resolver on a corpus split.
    CorefEval(CorefEvalArgs),
    /// Corpus statistics per split.
    Stats(CorpusArgs),
    /// Write tab-separated seq2seq input/target pairs.
    ExportSeq2seq(Seq2SeqArgs),
    /// Write the dialogue graph of one dialogue as JSON.
    ExportDgraph(DgraphArgs),
    /// Train a neural coreference resolver.
    TrainCoref(TrainArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
    /// Write a synthetic coreference corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub files: Vec<PathBuf>,
    /// Utterances, one per graph, for the token-copy check.
    #[arg(long)]
    pub utterances: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PredFormat {
    Dmr,
    Linearized,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Text form of both files.
    #[arg(long, value_enum, default_value = "dmr")]
    pub format: PredFormat,
    /// Utterances aligned with the gold lines, for length buckets.
    #[arg(long)]
    pub utterances: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

impl SplitArg {
    fn matches(self, s: Split) -> bool {
        match self {
            SplitArg::Train => s == Split::Train,
            SplitArg::Dev => s == Split::Dev,
            SplitArg::Test => s == Split::Test,
            SplitArg::All => true,
        }
    }
}

#[derive(Debug, Args)]
pub struct VectorArgs {
    /// Word vectors in text format (`word v1 v2 ...` per line).
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Dimension of hashed random vectors used without `--vectors`.
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct CorefEvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `rule` or the path of a trained checkpoint.
    #[arg(long)]
    pub model: String,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: SplitArg,
    /// Keep references with a single candidate.
    #[arg(long)]
    pub include_single: bool,
    #[command(flatten)]
    pub vectors: VectorArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Seq2SeqArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub context_size: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long, default_value_t = 2)]
    pub k_max: usize,
    #[arg(long)]
    pub no_turn_nodes: bool,
    #[arg(long)]
    pub no_refer_edges: bool,
}

impl GraphArgs {
    fn config(&self) -> DGraphConfig {
        DGraphConfig {
            k_max: self.k_max,
            use_turn_nodes: !self.no_turn_nodes,
            link_resolved_refs: !self.no_refer_edges,
        }
    }
}

#[derive(Debug, Args)]
pub struct DgraphArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dialogue: String,
    /// Position among the dialogue's DMRs to build up to; the last by default.
    #[arg(long)]
    pub upto: Option<usize>,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NeuralKind {
    Gnn,
    Mlp,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "gnn")]
    pub model: NeuralKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub vectors: VectorArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Allowed browser origin; repeatable.
    #[arg(long)]
    pub cors: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub dialogues: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| domain(format!("{}: {e}", path.display())))
}

pub fn load_ontology(path: Option<&Path>) -> Result<Ontology, CliError> {
    match path {
        Some(p) => parse_ontology(&read(p)?).map_err(|e| domain(format!("{}: {e}", p.display()))),
        None => Ok(Ontology::fastfood()),
    }
}

fn corpus(path: &Path) -> Result<Corpus, CliError> {
    let (c, issues) = load_corpus(path).map_err(domain)?;
    for i in &issues {
        log::warn!("{}: {i}", path.display());
    }
    Ok(nlu_filter(c))
}

fn word_vectors(args: &VectorArgs, seed: u64) -> Result<WordVectors, CliError> {
    match &args.vectors {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| domain(format!("{}: {e}", p.display())))?;
            WordVectors::from_reader(BufReader::new(f)).map_err(domain)
        }
        None => Ok(WordVectors::hashed(args.dim, seed)),
    }
}

/// Splits on blank lines; single-line graphs may also sit on consecutive lines.
fn graph_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut cur = String::new();
    let mut depth = 0i32;
    for line in text.lines() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        cur.push_str(line);
        cur.push('\n');
        depth += line.matches('(').count() as i32 - line.matches(')').count() as i32;
        if depth <= 0 {
            blocks.push(std::mem::take(&mut cur));
            depth = 0;
        }
    }
    if !cur.trim().is_empty() {
        blocks.push(cur);
    }
    blocks
}

fn lines(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read(path)?.lines().map(str::to_string).collect())
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("values serialize"));
}

fn run_validate(o: &Ontology, a: &ValidateArgs, json_out: bool) -> Result<(), CliError> {
    if a.files.is_empty() {
        return Err(CliError::Usage("no input files".into()));
    }
    let utterances = a.utterances.as_deref().map(lines).transpose()?;
    let mut index = 0;
    let mut bad = 0;
    let mut report = Vec::new();
    for f in &a.files {
        for block in graph_blocks(&read(f)?) {
            let entry = match read_graph(&block, 0) {
                Err(e) => json!({ "file": f, "graph": index, "error": e.to_string() }),
                Ok(g) => {
                    let violations = dmr::validate(o, &g);
                    let uncopied: Vec<String> = utterances
                        .as_ref()
                        .and_then(|u| u.get(index))
                        .map(|u| uncopied_lexicals(&g, u).into_iter().map(|v| v.to_string()).collect())
                        .unwrap_or_default();
                    json!({ "file": f, "graph": index, "violations": violations, "uncopied": uncopied })
                }
            };
            let ok = entry.get("error").is_none()
                && entry["violations"].as_array().is_some_and(|v| v.is_empty())
                && entry["uncopied"].as_array().is_some_and(|v| v.is_empty());
            if !ok {
                bad += 1;
                if !json_out {
                    println!("{}#{index}: {}", f.display(), entry);
                }
            }
            report.push(entry);
            index += 1;
        }
    }
    if json_out {
        print_json(&json!({ "graphs": index, "invalid": bad, "results": report }));
    } else {
        println!("{index} graphs, {bad} invalid");
    }
    if bad > 0 {
        Err(domain(format!("{bad} of {index} graphs failed validation")))
    } else {
        Ok(())
    }
}

fn run_score(o: &Ontology, a: &ScoreArgs, json_out: bool) -> Result<(), CliError> {
    let gold = lines(&a.gold)?;
    let pred = lines(&a.pred)?;
    if gold.len() != pred.len() {
        return Err(domain(format!("{} gold lines but {} predictions", gold.len(), pred.len())));
    }
    let utterances = a.utterances.as_deref().map(lines).transpose()?;
    let cfg = MatchConfig {
        restarts: a.restarts.max(1),
        seed: a.seed,
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(gold.len());
    let (mut matched, mut gold_triples, mut pred_triples) = (0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
        let g = gold_graph(g, a.format).map_err(|e| domain(format!("gold line {}: {e}", i + 1)))?;
        let p: Prediction = match a.format {
            PredFormat::Dmr => read_graph(p, 0).map_or(Prediction::Invalid, Prediction::Graph),
            PredFormat::Linearized => delinearize(&TokenSeq::parse(p), 0).into(),
        };
        let graph = match &p {
            Prediction::Graph(pg) => pg.clone(),
            Prediction::Invalid => dmr::linearize::fallback_graph(0),
        };
        let s = smatch(&g, &graph, &cfg);
        matched += s.matched;
        gold_triples += s.gold_triples;
        pred_triples += s.pred_triples;
        let u = utterances.as_ref().and_then(|u| u.get(i)).cloned().unwrap_or_default();
        pairs.push((g, p, u));
    }
    let report = corpus_eval(o, &pairs);
    let precision = ratio(matched, pred_triples);
    let recall = ratio(matched, gold_triples);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    if json_out {
        print_json(&json!({ "smatch": { "precision": precision, "recall": recall, "f1": f1 }, "report": report }));
    } else {
        println!("pairs        {}", report.total);
        println!("exact match  {:.4}", report.exact_match_rate);
        println!("smatch       P {precision:.4} R {recall:.4} F1 {f1:.4}");
        let e = &report.errors;
        println!(
            "errors       invalid {:.3} ontology {:.3} intent {:.3} compositional {:.3}",
            e.invalid_graph, e.ontology_mismatch, e.wrong_intent, e.compositional
        );
        for (name, buckets) in [("depth", &report.by_depth), ("nodes", &report.by_node_count), ("length", &report.by_utterance_length)] {
            let cells: Vec<String> = buckets.iter().map(|b| format!("{}:{}/{}", b.key, b.exact, b.total)).collect();
            println!("{name:<13}{}", cells.join("  "));
        }
    }
    Ok(())
}

fn gold_graph(line: &str, format: PredFormat) -> Result<DmrGraph, String> {
    match format {
        PredFormat::Dmr => read_graph(line, 0).map_err(|e| e.to_string()),
        PredFormat::Linearized => {
            let d = delinearize(&TokenSeq::parse(line), 0);
            match d.fault {
                Some(f) => Err(f.reason),
                None => Ok(d.graph),
            }
        }
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn dialogues_in(c: &Corpus, split: SplitArg) -> Vec<Vec<DmrGraph>> {
    c.dialogues.iter().filter(|d| split.matches(d.split)).map(|d| d.dmrs()).collect()
}

fn run_coref_eval(a: &CorefEvalArgs, json_out: bool) -> Result<(), CliError> {
    let c = corpus(&a.corpus)?;
    let (resolver, seed) = if a.model == "rule" {
        (Resolver::Rule, a.seed)
    } else {
        let text = read(Path::new(&a.model))?;
        let seed = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v.get(VECTOR_SEED_KEY).and_then(|s| s.as_u64()))
            .unwrap_or(a.seed);
        (Resolver::from_json(&text).map_err(domain)?, seed)
    };
    let wv = word_vectors(&a.vectors, seed)?;
    let eval = evaluate(&resolver, &dialogues_in(&c, a.split), &wv, !a.include_single).map_err(domain)?;
    if json_out {
        print_json(&json!({ "accuracy": eval.accuracy, "evaluated": eval.evaluated, "predictions": eval.predictions }));
    } else {
        println!("accuracy {:.2} over {} references", 100.0 * eval.accuracy, eval.evaluated);
    }
    Ok(())
}

fn run_train(o: &Ontology, a: &TrainArgs, json_out: bool) -> Result<(), CliError> {
    let c = corpus(&a.corpus)?;
    let wv = word_vectors(&a.vectors, a.seed)?;
    let cfg = CorefConfig {
        kind: match a.model {
            NeuralKind::Gnn => ModelKind::Gnn,
            NeuralKind::Mlp => ModelKind::Mlp,
        },
        layers: a.layers,
        hidden: a.hidden,
        dropout: a.dropout,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        dgraph: a.graph.config(),
        ..Default::default()
    };
    let (resolver, report) = train(o, &dialogues_in(&c, SplitArg::Train), &dialogues_in(&c, SplitArg::Dev), &wv, &cfg).map_err(domain)?;
    let mut ckpt: serde_json::Value = serde_json::from_str(&resolver.to_json().expect("neural resolvers serialize")).expect("checkpoint is JSON");
    if a.vectors.vectors.is_none() {
        ckpt[VECTOR_SEED_KEY] = json!(a.seed);
    }
    write(&a.out, &serde_json::to_string(&ckpt).expect("values serialize"))?;
    if json_out {
        print_json(&serde_json::to_value(&report).expect("reports serialize"));
    } else {
        println!(
            "best epoch {} of {}, beta {:.2}, {} train / {} dev queries",
            report.best_epoch,
            report.epochs.len(),
            report.beta,
            report.train_queries,
            report.dev_queries
        );
    }
    Ok(())
}

fn run_export_dgraph(a: &DgraphArgs) -> Result<(), CliError> {
    let c = corpus(&a.corpus)?;
    let d = c
        .dialogues
        .iter()
        .find(|d| d.id == a.dialogue)
        .ok_or_else(|| domain(format!("no dialogue {:?}", a.dialogue)))?;
    let dmrs = d.dmrs();
    let refs: Vec<&DmrGraph> = dmrs.iter().collect();
    if refs.is_empty() {
        return Err(domain("dialogue has no DMRs"));
    }
    let upto = a.upto.unwrap_or(refs.len() - 1);
    if upto >= refs.len() {
        return Err(CliError::Usage(format!("--upto must be below {}", refs.len())));
    }
    let ctx = &refs[..=upto];
    let g = build_dialogue_graph(ctx, &gold_resolutions(ctx), &a.graph.config()).map_err(domain)?;
    let queries: Vec<_> = (0..=upto).flat_map(|j| queries_at(ctx, j)).collect();
    let text = serde_json::to_string_pretty(&export_dialogue_graph(&g, &queries)).expect("exports serialize");
    match &a.out {
        Some(p) => write(p, &text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run_serve(o: Ontology, ontology_path: Option<PathBuf>, a: &ServeArgs) -> Result<(), CliError> {
    if !a.corpus.exists() {
        return Err(domain(format!("{}: no such file", a.corpus.display())));
    }
    if let Some(dir) = a.store.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !dir.is_dir() {
            return Err(domain(format!("{}: no such directory", dir.display())));
        }
    }
    let c = corpus(&a.corpus)?;
    let store = Store::open(&a.store).map_err(domain)?;
    let cfg = ServiceConfig {
        bind: a.bind,
        ontology: ontology_path,
        corpus: a.corpus.clone(),
        store: a.store.clone(),
        cors: a.cors.clone(),
    };
    let state = Arc::new(Annotation::new(o, c.dialogues, store));
    let rt = tokio::runtime::Runtime::new().map_err(domain)?;
    rt.block_on(serve(state, &cfg)).map_err(domain)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let o = load_ontology(cli.ontology.as_deref())?;
    let json_out = cli.json;
    match &cli.command {
        Command::Validate(a) => run_validate(&o, a, json_out),
        Command::Score(a) => run_score(&o, a, json_out),
        Command::CorefEval(a) => run_coref_eval(a, json_out),
        Command::Stats(a) => {
            let report = stats(&corpus(&a.corpus)?);
            if json_out {
                print_json(&serde_json::to_value(&report.splits).expect("stats serialize"));
            } else {
                print!("{}", report.table());
            }
            Ok(())
        }
        Command::ExportSeq2seq(a) => {
            let c = corpus(&a.corpus)?;
            let split_of: std::collections::HashMap<&str, Split> = c.dialogues.iter().map(|d| (d.id.as_str(), d.split)).collect();
            let mut out = String::new();
            let mut n = 0;
            for p in export_seq2seq(&c, a.context_size) {
                if a.split.matches(split_of[p.dialogue.as_str()]) {
                    out.push_str(&format!("{}\t{}\n", p.input.replace('\t', " "), p.target));
                    n += 1;
                }
            }
            write(&a.out, &out)?;
            eprintln!("wrote {n} pairs");
            Ok(())
        }
        Command::ExportDgraph(a) => run_export_dgraph(a),
        Command::TrainCoref(a) => run_train(&o, a, json_out),
        Command::Serve(a) => run_serve(o, cli.ontology.clone(), a),
        Command::Synth(a) => {
            let c = coref_benchmark(&CorefBenchConfig {
                dialogues: a.dialogues,
                seed: a.seed,
                ..Default::default()
            });
            write(&a.out, &corpus_to_jsonl(&c))
        }
    }
}
