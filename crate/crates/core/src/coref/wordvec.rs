use std::collections::HashMap;
use std::io::BufRead;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::CorefError;

/// Token embeddings. Unknown tokens map to the zero vector.
#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    table: HashMap<String, Array1<f64>>,
    hashed_seed: Option<u64>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            table: HashMap::new(),
            hashed_seed: None,
        }
    }

    /// Every token gets a deterministic pseudo-random vector derived from its
    /// hash, so nothing is out of vocabulary.
    pub fn hashed(dim: usize, seed: u64) -> Self {
        WordVectors {
            hashed_seed: Some(seed),
            ..Self::new(dim)
        }
    }

    /// Reads the whitespace text format: a token, then its values, per line.
    pub fn from_reader(r: impl BufRead) -> Result<Self, CorefError> {
        let mut wv: Option<WordVectors> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vals: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CorefError::WordVectors(format!("line {}: {e}", i + 1)))?;
            let w = wv.get_or_insert_with(|| WordVectors::new(vals.len()));
            if vals.len() != w.dim {
                return Err(CorefError::DimensionMismatch {
                    expected: w.dim,
                    found: vals.len(),
                });
            }
            w.table.insert(tok.to_string(), Array1::from(vals));
        }
        wv.ok_or_else(|| CorefError::WordVectors("no vectors".into()))
    }

    pub fn insert(&mut self, token: &str, v: Array1<f64>) -> Result<(), CorefError> {
        if v.len() != self.dim {
            return Err(CorefError::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        self.table.insert(token.to_string(), v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Array1<f64> {
        if let Some(v) = self.table.get(token) {
            return v.clone();
        }
        match self.hashed_seed {
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token) ^ seed);
                let normal = Normal::new(0.0, 1.0 / (self.dim as f64).sqrt()).expect("positive std");
                Array1::from_iter((0..self.dim).map(|_| normal.sample(&mut rng)))
            }
            None => Array1::zeros(self.dim),
        }
    }

    pub fn mean(&self, tokens: &[String]) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim);
        if tokens.is_empty() {
            return acc;
        }
        for t in tokens {
            acc += &self.get(t);
        }
        acc / tokens.len() as f64
    }

    /// Draws from the same distribution as hashed vectors; used for tests.
    pub fn random(dim: usize, rng: &mut impl Rng) -> Array1<f64> {
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
        Array1::from_iter((0..dim).map(|_| normal.sample(rng)))
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Lowercased words of a payload part. Type names are split at case
/// boundaries: `DrinkItem` gives `drink`, `item`.
pub fn payload_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric() && c != '\'') {
        let mut cur = String::new();
        let mut prev_lower = false;
        for c in word.chars() {
            if c.is_uppercase() && prev_lower && !cur.is_empty() {
                out.push(std::mem::take(&mut cur).to_lowercase());
            }
            prev_lower = c.is_lowercase() || c.is_numeric();
            cur.push(c);
        }
        if !cur.is_empty() {
            out.push(cur.to_lowercase());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn splits_type_names() {
        assert_eq!(payload_words("DrinkItem"), ["drink", "item"]);
        assert_eq!(payload_words("large"), ["large"]);
        assert_eq!(payload_words("that one"), ["that", "one"]);
        assert_eq!(payload_words("Coca-Cola"), ["coca", "cola"]);
    }

    #[test]
    fn text_format() {
        let wv = WordVectors::from_reader("large 1 2\nsize 3 4\n".as_bytes()).unwrap();
        assert_eq!(wv.dim(), 2);
        assert_eq!(wv.mean(&["large".into(), "size".into()]), array![2.0, 3.0]);
        assert_eq!(wv.get("zzz"), array![0.0, 0.0]);
        assert!(WordVectors::from_reader("a 1 2\nb 1\n".as_bytes()).is_err());
    }

    #[test]
    fn hashed_is_stable() {
        let a = WordVectors::hashed(8, 3);
        let b = WordVectors::hashed(8, 3);
        assert_eq!(a.get("pizza"), b.get("pizza"));
        assert_ne!(a.get("pizza"), a.get("burger"));
    }
}
