//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export takes plain strings and returns a JSON document, so the page
//! needs no generated TypeScript types. The `*_json` functions hold the logic
//! and are usable natively.

use dmr::linearize::Delinearized;
use dmr::{delinearize, linearize, parse_ontology, read_graph, smatch, write_graph, MatchConfig, Ontology, TokenSeq};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn ontology(source: &str) -> Result<Ontology, String> {
    if source.trim().is_empty() {
        Ok(Ontology::fastfood())
    } else {
        parse_ontology(source).map_err(|e| format!("ontology: {e}"))
    }
}

/// Linearizes a graph in text form, or reads a token sequence back into a
/// graph with bracket repair when the input starts with `( ` tokens.
pub fn convert_json(input: &str) -> Result<String, String> {
    let text = input.trim();
    if text.is_empty() {
        return Err("empty input".into());
    }
    if let Ok(g) = read_graph(text, 0) {
        let tokens = linearize(&g);
        return Ok(json!({ "direction": "linearize", "tokens": tokens.to_string() }).to_string());
    }
    let Delinearized { graph, repairs, fault } = delinearize(&TokenSeq::parse(text), 0);
    Ok(json!({
        "direction": "delinearize",
        "graph": write_graph(&graph),
        "repairs": repairs,
        "fault": fault,
    })
    .to_string())
}

pub fn smatch_json(gold: &str, pred: &str, include_refer: bool) -> Result<String, String> {
    let g = read_graph(gold, 0).map_err(|e| format!("gold: {e}"))?;
    let p = read_graph(pred, 0).map_err(|e| format!("prediction: {e}"))?;
    let cfg = MatchConfig {
        include_refer,
        ..MatchConfig::default()
    };
    let s = smatch(&g, &p, &cfg);
    Ok(json!({
        "precision": s.precision,
        "recall": s.recall,
        "f1": s.f1,
        "matched": s.matched,
        "gold_triples": s.gold_triples,
        "pred_triples": s.pred_triples,
        "exact": s.is_perfect(),
        "mapping": s.mapping,
    })
    .to_string())
}

/// An empty `ontology_source` selects the built-in fast-food ontology.
pub fn validate_json(dmr_text: &str, utterance: &str, ontology_source: &str) -> Result<String, String> {
    let o = ontology(ontology_source)?;
    let g = read_graph(dmr_text, 0).map_err(|e| e.to_string())?;
    let violations = dmr::validate(&o, &g);
    let uncopied: Vec<String> = if utterance.trim().is_empty() {
        Vec::new()
    } else {
        dmr::validate::uncopied_lexicals(&g, utterance).iter().map(|v| v.to_string()).collect()
    };
    Ok(json!({ "valid": violations.is_empty() && uncopied.is_empty(), "violations": violations, "uncopied": uncopied }).to_string())
}

#[wasm_bindgen]
pub fn convert(input: &str) -> Result<String, JsError> {
    convert_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = smatch)]
pub fn smatch_js(gold: &str, pred: &str, include_refer: bool) -> Result<String, JsError> {
    smatch_json(gold, pred, include_refer).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn validate(dmr_text: &str, utterance: &str, ontology_source: &str) -> Result<String, JsError> {
    validate_json(dmr_text, utterance, ontology_source).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = ontologySource)]
pub fn ontology_source() -> String {
    dmr::ontology::FASTFOOD_SOURCE.to_string()
}
