//! Closed word-level vocabulary covering the caption and question grammar.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::{Result, WorldError};

pub type Token = u16;

pub const PAD: Token = 0;
pub const BOS: Token = 1;
pub const EOS: Token = 2;
pub const SEP: Token = 3;
pub const IMG: Token = 4;
pub const ANS: Token = 5;

const WORDS: &[&str] = &[
    "<pad>", "<bos>", "<eos>", "<sep>", "<img>", "<ans>",
    // colors
    "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple",
    // digits
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    // distance bins
    "near", "mid", "far",
    // caption grammar
    "a", "room", "with", "and", "cube", "tower", "slab",
    // question grammar
    "how", "many", "objects", "are", "in", "the", "which", "object", "is", "closer", "to", "or", "from",
    "appears", "first",
];

#[derive(Debug)]
pub struct Vocabulary {
    index: HashMap<&'static str, Token>,
}

impl Vocabulary {
    /// The shared vocabulary; token ids are stable across runs and files.
    pub fn standard() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| Vocabulary {
            index: WORDS.iter().enumerate().map(|(i, w)| (*w, i as Token)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        WORDS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, word: &str) -> Result<Token> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| WorldError::InvalidInput(format!("word {word:?} is not in the vocabulary")))
    }

    pub fn word(&self, token: Token) -> Option<&'static str> {
        WORDS.get(token as usize).copied()
    }

    /// Whitespace tokenization; unknown words are an error.
    pub fn encode(&self, text: &str) -> Result<Vec<Token>> {
        text.split_whitespace().map(|w| self.token(w)).collect()
    }

    pub fn decode(&self, tokens: &[Token]) -> Result<String> {
        let words = tokens
            .iter()
            .map(|&t| self.word(t).ok_or_else(|| WorldError::InvalidInput(format!("token id {t} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}
