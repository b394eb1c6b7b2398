use dmr_demo::{convert_json, smatch_json, validate_json};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

const PIZZA: &str = "(v1 / OrderIntent :order-item (v2 / pizza || Pizza :mod (v3 / large || Size)))";

#[test]
fn linearize_then_read_back() {
    let out = parse(convert_json(PIZZA).unwrap());
    assert_eq!(out["direction"], "linearize");
    let tokens = out["tokens"].as_str().unwrap();
    assert_eq!(tokens, "( OrderIntent ( :order-item ( pizza || Pizza ( :mod ( large || Size ) ) ) ) )");

    let back = parse(convert_json(tokens).unwrap());
    assert_eq!(back["direction"], "delinearize");
    assert!(back["repairs"].as_array().unwrap().is_empty());
    let exact = parse(smatch_json(PIZZA, back["graph"].as_str().unwrap(), false).unwrap());
    assert_eq!(exact["exact"], true);
}

#[test]
fn repairs_missing_bracket() {
    let out = parse(convert_json("( OrderIntent ( :order-item ( pizza || Pizza ) )").unwrap());
    assert_eq!(out["repairs"][0]["kind"], "missing-bracket");
    assert!(out["fault"].is_null());
}

#[test]
fn smatch_partial_credit() {
    let pred = "(v1 / OrderIntent :order-item (v2 / pizza || Pizza :mod (v3 / small || Size)))";
    let s = parse(smatch_json(PIZZA, pred, false).unwrap());
    assert_eq!(s["exact"], false);
    let f1 = s["f1"].as_f64().unwrap();
    assert!(f1 > 0.5 && f1 < 1.0, "{f1}");
    assert!(smatch_json("(v1 / ", PIZZA, false).unwrap_err().starts_with("gold"));
}

#[test]
fn validation_results() {
    let ok = parse(validate_json(PIZZA, "a large pizza", "").unwrap());
    assert_eq!(ok["valid"], true);
    let bad = parse(validate_json("(v1 / PaymentIntent :order-item (v2 / pizza || Pizza))", "", "").unwrap());
    assert_eq!(bad["valid"], false);
    assert_eq!(bad["violations"][0]["code"], "bad-edge-label");
    let uncopied = parse(validate_json(PIZZA, "a pizza", "").unwrap());
    assert_eq!(uncopied["uncopied"], serde_json::json!(["v3"]));
    assert!(validate_json(PIZZA, "", "Intent <- ").is_err());
}
