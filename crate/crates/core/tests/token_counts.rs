//! The default token counter against counts frozen from an external
//! subword tokenizer.

use serde::Deserialize;

use refinery::backend::tokens::count_tokens;

#[derive(Deserialize)]
struct Reference {
    name: String,
    text: String,
    tokens: usize,
}

#[test]
fn approximation_within_fifteen_percent_of_reference() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tokens/reference.json");
    let refs: Vec<Reference> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(!refs.is_empty());
    for r in refs {
        let got = count_tokens(&r.text) as f64;
        let rel = (got - r.tokens as f64).abs() / r.tokens as f64;
        assert!(rel <= 0.15, "{}: {got} vs reference {} ({:.1}% off)", r.name, r.tokens, rel * 100.0);
    }
}
