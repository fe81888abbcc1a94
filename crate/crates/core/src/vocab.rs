//! Token inventory with reserved specials.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::CONTINUATION;

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const EOS: &str = "</s>";
pub const SEP: &str = "<sep>";
/// Rendered surface of the unknown token. Post-processing searches for this
/// exact string.
pub const UNK: &str = "⟨unk⟩";

/// Ids of the reserved tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: TokenId,
    pub eos: TokenId,
    pub sep: TokenId,
    pub unk: TokenId,
}

impl Specials {
    pub fn contains(&self, id: TokenId) -> bool {
        id == self.pad || id == self.eos || id == self.sep || id == self.unk
    }
}

/// Bidirectional surface/id map. Ids are dense `0..len`; corpus tokens come
/// first in order of first occurrence, followed by the four specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    specials: Specials,
    /// `continuation[id]`: the token glues onto the next one when detokenized.
    continuation: Arc<[bool]>,
}

fn continuation_mask(tokens: &[String]) -> Arc<[bool]> {
    tokens.iter().map(|t| t.len() > CONTINUATION.len() && t.ends_with(CONTINUATION)).collect()
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    tokens: Vec<String>,
    specials: Specials,
}

fn is_special_surface(s: &str) -> bool {
    matches!(s, PAD | EOS | SEP | UNK)
}

/// Build a vocabulary over every whitespace-delimited token of `corpus`.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S]) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::config("cannot build a vocabulary from an empty corpus"));
    }
    let mut tokens = Vec::new();
    let mut index = HashMap::new();
    for line in corpus {
        for tok in line.as_ref().split_whitespace() {
            if is_special_surface(tok) || index.contains_key(tok) {
                continue;
            }
            index.insert(tok.to_string(), tokens.len() as TokenId);
            tokens.push(tok.to_string());
        }
    }
    let mut push = |s: &str| {
        let id = tokens.len() as TokenId;
        index.insert(s.to_string(), id);
        tokens.push(s.to_string());
        id
    };
    let specials = Specials { pad: push(PAD), eos: push(EOS), sep: push(SEP), unk: push(UNK) };
    let continuation = continuation_mask(&tokens);
    Ok(Vocabulary { tokens, index, specials, continuation })
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn eos(&self) -> TokenId {
        self.specials.eos
    }

    pub fn sep(&self) -> TokenId {
        self.specials.sep
    }

    pub fn unk(&self) -> TokenId {
        self.specials.unk
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Per-id flag: the token is a word piece that joins the next token.
    pub fn continuation_mask(&self) -> Arc<[bool]> {
        Arc::clone(&self.continuation)
    }

    /// Whitespace-split `text`; unseen surfaces map to unk. No eos is appended.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|tok| self.id(tok).unwrap_or(self.specials.unk)).collect()
    }

    /// Space-join surfaces, dropping pad/eos/sep and rendering unk as [`UNK`].
    pub fn decode_tokens(&self, seq: &[TokenId]) -> Result<String> {
        let mut parts = Vec::with_capacity(seq.len());
        for &id in seq {
            let surface = self
                .surface(id)
                .ok_or_else(|| Error::data(format!("token id {id} out of range for vocabulary of {}", self.len())))?;
            if id == self.specials.unk {
                parts.push(UNK);
            } else if !self.specials.contains(id) {
                parts.push(surface);
            }
        }
        Ok(parts.join(" "))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = VocabFile { version: 1, tokens: self.tokens.clone(), specials: self.specials };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: VocabFile = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_parts(file.tokens, file.specials)
    }

    fn from_parts(tokens: Vec<String>, specials: Specials) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::data(format!("duplicate surface {tok:?} in vocabulary")));
            }
        }
        let expect = [(specials.pad, PAD), (specials.eos, EOS), (specials.sep, SEP), (specials.unk, UNK)];
        for (id, surface) in expect {
            if tokens.get(id as usize).map(String::as_str) != Some(surface) {
                return Err(Error::data(format!("special {surface} does not sit at id {id}")));
            }
        }
        let continuation = continuation_mask(&tokens);
        Ok(Vocabulary { tokens, index, specials, continuation })
    }
}
