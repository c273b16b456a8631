//! Token ids shared by every model.
//!
//! Content symbols occupy ids `0..symbols`; the control tokens follow in the
//! fixed order EOS, BOS, PAD. Models emit only content symbols and EOS, so the
//! output distribution has `symbols + 1` entries and an output index equals
//! the token id it produces. For the counting task (`symbols = 10`) the ids are
//! digits `0..=9`, EOS = 10, BOS = 11, PAD = 12.

use serde::{Deserialize, Serialize};

pub type Token = usize;
pub type TokenSequence = Vec<Token>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    symbols: usize,
}

impl Vocabulary {
    pub const fn new(symbols: usize) -> Self {
        Self { symbols }
    }

    /// Digits 0-9 plus the three control tokens.
    pub const fn digits() -> Self {
        Self::new(10)
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn eos(&self) -> Token {
        self.symbols
    }

    pub fn bos(&self) -> Token {
        self.symbols + 1
    }

    pub fn pad(&self) -> Token {
        self.symbols + 2
    }

    /// Rows of the embedding table.
    pub fn size(&self) -> usize {
        self.symbols + 3
    }

    /// Width of the generator's output distribution (symbols and EOS).
    pub fn output_size(&self) -> usize {
        self.symbols + 1
    }

    pub fn is_symbol(&self, token: Token) -> bool {
        token < self.symbols
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::digits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digit_ids_are_stable() {
        let v = Vocabulary::digits();
        assert_eq!((v.eos(), v.bos(), v.pad(), v.size()), (10, 11, 12, 13));
        assert_eq!(v.output_size(), 11);
        assert!(v.is_symbol(9) && !v.is_symbol(10));
    }
}
