//! Character-level vocabulary shared by the policy, the discriminator and the tasks.

use crate::error::{Error, Result};

/// Printable symbols in id order. Specials follow at the end.
const SYMBOLS: &str = "0123456789abcdefghijklmnopqrstuvwxyz .,%-'?:=";

pub const BOS: usize = 45;
pub const EOS: usize = 46;
pub const PAD: usize = 47;
/// Total vocabulary size, specials included.
pub const VOCAB_SIZE: usize = 48;

/// Token that closes a prompt in the policy context.
pub const PROMPT_END: char = '?';

/// Dense token table: `symbols` take ids `0..symbols.len()`, then BOS, EOS, PAD.
#[derive(Debug, Clone)]
pub struct Vocab {
    symbols: Vec<char>,
    lookup: [Option<u8>; 128],
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let symbols: Vec<char> = SYMBOLS.chars().collect();
        let mut lookup = [None; 128];
        for (id, &c) in symbols.iter().enumerate() {
            lookup[c as usize] = Some(id as u8);
        }
        debug_assert_eq!(symbols.len() + 3, VOCAB_SIZE);
        Self { symbols, lookup }
    }

    pub fn size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> Result<usize> {
        let folded = c.to_ascii_lowercase();
        if folded.is_ascii() {
            if let Some(id) = self.lookup[folded as usize] {
                return Ok(id as usize);
            }
        }
        Err(Error::UnknownSymbol(c))
    }

    /// Case-folds and maps every character; fails on the first out-of-alphabet one.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Inverse of [`Vocab::encode`]. Special tokens are dropped.
    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .filter_map(|&t| self.symbols.get(t).copied())
            .collect()
    }

    pub fn is_special(&self, token: usize) -> bool {
        token >= self.symbols.len()
    }
}
