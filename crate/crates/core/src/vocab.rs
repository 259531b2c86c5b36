use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;

/// Characters of the default set, after the three special tokens.
pub const DEFAULT_CHARS: &str = "abcdefghijklmnopqrstuvwxyz '.";

/// Character inventory with `PAD`, `SOS`, `EOS` at indices 0, 1, 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(DEFAULT_CHARS).expect("default characters are distinct")
    }
}

impl Vocabulary {
    pub fn new(chars: &str) -> Result<Self> {
        let chars: Vec<char> = chars.chars().collect();
        let mut index = HashMap::new();
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i + 3).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary character {c:?}")));
            }
        }
        Ok(Self { chars, index })
    }

    pub fn len(&self) -> usize {
        self.chars.len() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn token(&self, c: char) -> Result<usize> {
        self.index.get(&c).copied().ok_or(Error::UnknownChar(c))
    }

    pub fn char_of(&self, token: usize) -> Option<char> {
        token.checked_sub(3).and_then(|i| self.chars.get(i).copied())
    }

    pub fn contains(&self, token: usize) -> bool {
        token < self.len()
    }

    /// Transcript to tokens, terminated with `EOS`.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = text.chars().map(|c| self.token(c)).collect::<Result<_>>()?;
        out.push(EOS);
        Ok(out)
    }

    /// Tokens to text, stopping at `EOS` and dropping other specials.
    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .take_while(|&&t| t != EOS)
            .filter_map(|&t| self.char_of(t))
            .collect()
    }
}
