use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved index for right-padding.
pub const PAD: usize = 0;
/// Reserved index for out-of-vocabulary tokens.
pub const UNK: usize = 1;

/// Token-to-index map with contiguous indices. Index 0 is padding and
/// index 1 is the unknown token; real tokens start at 2.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Vocabulary {
    // ordered map so serialized checkpoints are byte-deterministic
    index: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of `token`, or [`UNK`] for unseen tokens.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(|s| s.as_str())
    }
}

/// Builds a vocabulary over every token with frequency >= `min_count`,
/// ordered by frequency (descending) then lexicographically.
pub fn build_vocab(corpus: &[String], min_count: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Config("empty corpus for vocabulary".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        for tok in normalize_expression(line) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend(entries.into_iter().map(|(t, _)| t));
    let index = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary { index, tokens })
}

/// Lowercases, strips punctuation and splits on whitespace.
pub fn normalize_expression(expr: &str) -> Vec<String> {
    expr.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(|s| s.to_string())
        .collect()
}

/// A padded index sequence of fixed length `max_len` with the pre-padding
/// length recorded.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TokenSequence {
    pub indices: Vec<usize>,
    pub true_length: usize,
}

/// Tokenizes an expression: normalize, truncate to `max_len`, right-pad.
pub fn tokenize(expression: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    let words = normalize_expression(expression);
    if words.is_empty() {
        return Err(Error::Data(format!(
            "expression {expression:?} is empty after normalization"
        )));
    }
    let true_length = words.len().min(max_len);
    let mut indices: Vec<usize> = words
        .iter()
        .take(true_length)
        .map(|w| vocab.lookup(w))
        .collect();
    indices.resize(max_len, PAD);
    Ok(TokenSequence {
        indices,
        true_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_frequency_ordering() {
        let corpus = vec!["a b".to_string(), "a".to_string()];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.lookup("a"), 2);
        assert_eq!(v.lookup("b"), 3);
        assert_eq!(v.len(), 4);
        assert_eq!(v.lookup("zzz"), UNK);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(build_vocab(&[], 1).is_err());
    }

    #[test]
    fn frequency_then_lexicographic() {
        let corpus = vec!["b a".to_string(), "b a c".to_string()];
        let v = build_vocab(&corpus, 1).unwrap();
        // a and b tie at 2, a wins lexicographically; c trails.
        assert_eq!(v.lookup("a"), 2);
        assert_eq!(v.lookup("b"), 3);
        assert_eq!(v.lookup("c"), 4);
    }

    #[test]
    fn min_count_filters() {
        let corpus = vec!["a a b".to_string()];
        let v = build_vocab(&corpus, 2).unwrap();
        assert_eq!(v.lookup("a"), 2);
        assert_eq!(v.lookup("b"), UNK);
    }

    #[test]
    fn tokenize_pads_and_records_length() {
        let corpus = vec!["the red circle".to_string()];
        let v = build_vocab(&corpus, 1).unwrap();
        let seq = tokenize("the Red circle", &v, 5).unwrap();
        assert_eq!(seq.true_length, 3);
        assert_eq!(seq.indices.len(), 5);
        assert_eq!(&seq.indices[3..], &[PAD, PAD]);
        assert_ne!(seq.indices[0], UNK);
    }

    #[test]
    fn tokenize_truncates_to_max_len() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let corpus = vec![words.join(" ")];
        let v = build_vocab(&corpus, 1).unwrap();
        let seq = tokenize(&corpus[0], &v, 15).unwrap();
        assert_eq!(seq.true_length, 15);
        assert_eq!(seq.indices.len(), 15);
        assert_eq!(seq.indices[14], v.lookup("w14"));
    }

    #[test]
    fn punctuation_only_is_an_error() {
        let v = build_vocab(&["a".to_string()], 1).unwrap();
        assert!(tokenize("!!!", &v, 5).is_err());
    }
}
