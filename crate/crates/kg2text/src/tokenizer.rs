//! Byte-pair-encoding subword vocabulary trained on the corpus at hand.
//!
//! Merges are learned at character level inside whitespace words, so a word
//! always maps to a contiguous subword run and word-indexed mention spans
//! convert deterministically. A dedicated space token separates words, which
//! makes decode an exact inverse of encode on whitespace-normalized text.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::MASK_TOKEN;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const SEP_TOKEN: &str = "<sep>";
pub const SPACE_TOKEN: &str = " ";

pub const PAD_TOKEN_ID: u32 = 0;
pub const BOS_TOKEN_ID: u32 = 1;
pub const EOS_TOKEN_ID: u32 = 2;
pub const MASK_TOKEN_ID: u32 = 3;
pub const SEP_TOKEN_ID: u32 = 4;

/// Ids of the reserved tokens. These are never produced by merges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub mask: u32,
    pub sep: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubwordVocab {
    /// Base symbols (single characters plus the space token), sorted.
    base: Vec<String>,
    /// Ordered merge list; merge i produces token id `first_merged_id + i`.
    merges: Vec<(String, String)>,
    pub specials: SpecialIds,
    #[serde(skip)]
    by_token: HashMap<String, u32>,
    #[serde(skip)]
    tokens: Vec<String>,
}

const N_SPECIALS: u32 = 5;

impl SubwordVocab {
    fn build_tables(&mut self) {
        let mut tokens = vec![
            PAD_TOKEN.to_string(),
            BOS_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
            MASK_TOKEN.to_string(),
            SEP_TOKEN.to_string(),
        ];
        tokens.extend(self.base.iter().cloned());
        for (a, b) in &self.merges {
            tokens.push(format!("{a}{b}"));
        }
        self.by_token = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        self.tokens = tokens;
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of base symbols (characters plus the space token).
    pub fn base_size(&self) -> usize {
        self.base.len()
    }

    pub fn n_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn space_id(&self) -> u32 {
        self.by_token[SPACE_TOKEN]
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < N_SPECIALS
    }

    /// Encodes a single whitespace-free word into subword ids.
    pub fn encode_word(&self, word: &str) -> Result<Vec<u32>> {
        if word == MASK_TOKEN {
            return Ok(vec![self.specials.mask]);
        }
        let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        if symbols.is_empty() {
            return Err(Error::Tokenizer("cannot encode an empty word".into()));
        }
        for s in &symbols {
            if !self.by_token.contains_key(s) {
                return Err(Error::UnknownChar(s.chars().next().unwrap()));
            }
        }
        let rank: HashMap<(&str, &str), usize> = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ((a.as_str(), b.as_str()), i))
            .collect();
        loop {
            let mut best: Option<(usize, (String, String))> = None;
            for pair in symbols.windows(2) {
                if let Some(&r) = rank.get(&(pair[0].as_str(), pair[1].as_str())) {
                    if best.as_ref().map_or(true, |(br, _)| r < *br) {
                        best = Some((r, (pair[0].clone(), pair[1].clone())));
                    }
                }
            }
            let Some((_, (a, b))) = best else { break };
            symbols = merge_in_place(&symbols, &a, &b);
        }
        Ok(symbols.iter().map(|s| self.by_token[s]).collect())
    }

    /// Encodes whitespace-pretokenized text, inserting the space token
    /// between words.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for (i, word) in text.split_whitespace().enumerate() {
            if i > 0 {
                out.push(self.space_id());
            }
            out.extend(self.encode_word(word)?);
        }
        Ok(out)
    }

    /// Inverse of `encode` on its image; special tokens are dropped.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let Some(tok) = self.token(id) else {
                return Err(Error::Tokenizer(format!("invalid token id {id}")));
            };
            if self.is_special(id) {
                continue;
            }
            out.push_str(tok);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocab serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut v: SubwordVocab = serde_json::from_str(s)?;
        v.build_tables();
        Ok(v)
    }
}

fn merge_in_place(symbols: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns a BPE vocabulary from the corpus. `target_size` budgets the
/// non-special vocabulary (base symbols plus merged tokens); merges stop
/// early when no pair occurs at least twice. Frequency ties break by
/// lexicographic pair order.
pub fn train_bpe(corpus: &[String], target_size: usize) -> Result<SubwordVocab> {
    if corpus.is_empty() {
        return Err(Error::Tokenizer("cannot train on an empty corpus".into()));
    }
    let mut word_counts: HashMap<Vec<String>, u64> = HashMap::new();
    let mut base: Vec<String> = vec![SPACE_TOKEN.to_string()];
    for text in corpus {
        for word in text.split_whitespace() {
            if word == MASK_TOKEN {
                continue;
            }
            let symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
            for s in &symbols {
                if !base.contains(s) {
                    base.push(s.clone());
                }
            }
            *word_counts.entry(symbols).or_insert(0) += 1;
        }
    }
    base.sort();
    if target_size <= base.len() {
        let mut vocab = SubwordVocab {
            base,
            merges: Vec::new(),
            specials: specials(),
            by_token: HashMap::new(),
            tokens: Vec::new(),
        };
        vocab.build_tables();
        return Ok(vocab);
    }

    let budget = target_size - base.len();
    let mut merges = Vec::new();
    let mut words: Vec<(Vec<String>, u64)> = {
        let mut v: Vec<_> = word_counts.into_iter().collect();
        v.sort(); // deterministic iteration order
        v
    };
    for _ in 0..budget {
        let mut pair_counts: HashMap<(String, String), u64> = HashMap::new();
        for (symbols, count) in &words {
            for pair in symbols.windows(2) {
                *pair_counts.entry((pair[0].clone(), pair[1].clone())).or_insert(0) += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((a, b), count)) = best else { break };
        if count < 2 {
            break;
        }
        for (symbols, _) in words.iter_mut() {
            *symbols = merge_in_place(symbols, &a, &b);
        }
        merges.push((a, b));
    }

    let mut vocab = SubwordVocab {
        base,
        merges,
        specials: specials(),
        by_token: HashMap::new(),
        tokens: Vec::new(),
    };
    vocab.build_tables();
    Ok(vocab)
}

fn specials() -> SpecialIds {
    SpecialIds {
        pad: PAD_TOKEN_ID,
        bos: BOS_TOKEN_ID,
        eos: EOS_TOKEN_ID,
        mask: MASK_TOKEN_ID,
        sep: SEP_TOKEN_ID,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn train(corpus: &[&str], target: usize) -> SubwordVocab {
        let corpus: Vec<String> = corpus.iter().map(|s| s.to_string()).collect();
        train_bpe(&corpus, target).unwrap()
    }

    #[test]
    fn single_merge_on_aaab() {
        let vocab = train(&["aaab"], 0);
        let base = vocab.base_size(); // {" ", "a", "b"}
        assert_eq!(base, 3);
        let vocab = train(&["aaab"], base + 1);
        assert_eq!(vocab.n_merges(), 1);
        assert_eq!(vocab.merges[0], ("a".to_string(), "a".to_string()));
        assert_eq!(vocab.encode_word("aaab").unwrap().len(), 3); // aa, a, b
    }

    #[test]
    fn no_budget_means_character_vocab() {
        let vocab = train(&["the cat"], 0);
        assert_eq!(vocab.n_merges(), 0);
        assert_eq!(vocab.encode_word("cat").unwrap().len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = vec!["the cat sat on the mat".to_string(), "a cat and a hat".to_string()];
        let a = train_bpe(&corpus, 40).unwrap();
        let b = train_bpe(&corpus, 40).unwrap();
        assert_eq!(a.merges, b.merges);
        assert_eq!(a.base, b.base);
    }

    #[test]
    fn learned_token_encodes_to_length_one() {
        // "aa" occurs often enough to become a single token.
        let vocab = train(&["aa aa aa ab"], 10);
        assert_eq!(vocab.encode_word("aa").unwrap().len(), 1);
    }

    #[test]
    fn unseen_word_falls_back_to_characters() {
        let vocab = train(&["xyzzy abc"], 6); // base chars only
        let ids = vocab.encode_word("zzz").unwrap();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn unknown_character_errors() {
        let vocab = train(&["abc"], 5);
        match vocab.encode_word("aqc") {
            Err(Error::UnknownChar(c)) => assert_eq!(c, 'q'),
            other => panic!("expected unknown char error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_identity() {
        let vocab = train(&["iron man was created by stan lee"], 30);
        let text = "iron man";
        assert_eq!(vocab.decode(&vocab.encode(text).unwrap()).unwrap(), text);
        assert_eq!(vocab.decode(&[]).unwrap(), "");
        let pad = vocab.specials.pad;
        assert_eq!(vocab.decode(&[pad, pad]).unwrap(), "");
    }

    #[test]
    fn mask_word_maps_to_mask_id() {
        let vocab = train(&["a b"], 5);
        let ids = vocab.encode("a [MASK] b").unwrap();
        assert!(ids.contains(&vocab.specials.mask));
    }

    #[test]
    fn no_special_ids_in_plain_encoding() {
        let vocab = train(&["some words to encode here"], 40);
        let ids = vocab.encode("words to encode").unwrap();
        assert!(ids.iter().all(|&id| !vocab.is_special(id)));
    }

    #[test]
    fn vocab_json_round_trip() {
        let vocab = train(&["the cat sat on the mat"], 30);
        let json = vocab.to_json();
        let back = SubwordVocab::from_json(&json).unwrap();
        assert_eq!(vocab, back);
        assert_eq!(back.encode("the cat").unwrap(), vocab.encode("the cat").unwrap());
    }

    proptest! {
        #[test]
        fn round_trip_over_base_alphabet(words in proptest::collection::vec("[a-e]{1,6}", 1..6)) {
            let corpus = vec!["abcde aa bb cc dd ee abc cde".to_string()];
            let vocab = train_bpe(&corpus, 20).unwrap();
            let text = words.join(" ");
            let decoded = vocab.decode(&vocab.encode(&text).unwrap()).unwrap();
            prop_assert_eq!(decoded, text);
        }
    }
}
