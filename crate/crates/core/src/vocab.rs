//! Closed-alphabet tokenizer with atomic marker tokens.
//!
//! The alphabet is character-level: every printable ASCII character except
//! `<`, `>`, and `|`, plus newline. Multi-character symbols are all markers
//! of the form `<...>` (`<think>`, `</think>`, the cue tokens, and the
//! trainable continuation token). Because `<` and `>` never occur outside
//! markers and every marker ends at its only `>`, encoding has exactly one
//! parse and `encode`/`decode` are mutually inverse.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

pub type TokenId = u32;

/// Marker string for the trainable continuation token.
pub const CONTINUE_SYMBOL: &str = "<|continue-thinking|>";

/// Ids of the structural marker tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub bos: TokenId,
    pub eos: TokenId,
    pub think_open: TokenId,
    pub think_close: TokenId,
    /// The trainable continuation token; absent until registered via
    /// [`Vocab::add_continuation`].
    pub continuation: Option<TokenId>,
}

/// Ids of the fixed continuation cues used as baselines and in the
/// pretraining corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedCues {
    pub wait: TokenId,
    pub alt: TokenId,
    pub hmm: TokenId,
    pub critique: TokenId,
}

/// Immutable-after-setup symbol table. Ids are dense indices into the
/// symbol list; growth appends, so existing ids never move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    ids: BTreeMap<String, TokenId>,
    pub special: SpecialTokens,
    pub cues: FixedCues,
}

impl Vocab {
    /// Builds the standard alphabet: newline, printable ASCII without
    /// `<`/`>`/`|`, then the marker tokens. The continuation token is not
    /// included; call [`Vocab::add_continuation`] to register it.
    pub fn core_alphabet() -> Vocab {
        let mut symbols = Vec::new();
        let mut ids = BTreeMap::new();
        let push = |symbols: &mut Vec<String>, ids: &mut BTreeMap<String, TokenId>, s: String| {
            let id = symbols.len() as TokenId;
            ids.insert(s.clone(), id);
            symbols.push(s);
            id
        };
        push(&mut symbols, &mut ids, "\n".to_string());
        for b in 0x20u8..=0x7e {
            let c = b as char;
            if matches!(c, '<' | '>' | '|') {
                continue;
            }
            push(&mut symbols, &mut ids, c.to_string());
        }
        let bos = push(&mut symbols, &mut ids, "<bos>".to_string());
        let eos = push(&mut symbols, &mut ids, "<eos>".to_string());
        let think_open = push(&mut symbols, &mut ids, "<think>".to_string());
        let think_close = push(&mut symbols, &mut ids, "</think>".to_string());
        let wait = push(&mut symbols, &mut ids, "<wait>".to_string());
        let alt = push(&mut symbols, &mut ids, "<alt>".to_string());
        let hmm = push(&mut symbols, &mut ids, "<hmm>".to_string());
        let critique = push(&mut symbols, &mut ids, "<critique>".to_string());
        Vocab {
            symbols,
            ids,
            special: SpecialTokens {
                bos,
                eos,
                think_open,
                think_close,
                continuation: None,
            },
            cues: FixedCues {
                wait,
                alt,
                hmm,
                critique,
            },
        }
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// The symbol string for `id`.
    pub fn symbol(&self, id: TokenId) -> Result<&str> {
        self.symbols
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::IdOutOfRange {
                id,
                vocab_size: self.symbols.len(),
            })
    }

    pub fn id_of(&self, symbol: &str) -> Option<TokenId> {
        self.ids.get(symbol).copied()
    }

    /// Tokenizes `text`. Single characters map to single ids; `<...>`
    /// substrings must match a registered marker exactly.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'<' {
                let close = bytes[i..]
                    .iter()
                    .position(|&b| b == b'>')
                    .ok_or(Error::UnknownSymbol { position: i })?;
                let marker = &text[i..i + close + 1];
                let id = self
                    .ids
                    .get(marker)
                    .ok_or(Error::UnknownSymbol { position: i })?;
                out.push(*id);
                i += close + 1;
            } else {
                let ch_len = utf8_len(bytes[i]);
                let sym = &text[i..i + ch_len];
                let id = self
                    .ids
                    .get(sym)
                    .ok_or(Error::UnknownSymbol { position: i })?;
                out.push(*id);
                i += ch_len;
            }
        }
        Ok(out)
    }

    /// Concatenates the symbol strings for `tokens`.
    pub fn decode(&self, tokens: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in tokens {
            out.push_str(self.symbol(id)?);
        }
        Ok(out)
    }

    /// Registers a new marker token, returning its id. The id equals the
    /// vocabulary size before the call; no existing id changes.
    pub fn add_special(&mut self, name: &str) -> Result<TokenId> {
        if !is_marker(name) {
            return Err(Error::Unsupported("special tokens must look like <...>"));
        }
        if self.ids.contains_key(name) {
            return Err(Error::DuplicateToken(name.to_string()));
        }
        let id = self.symbols.len() as TokenId;
        self.ids.insert(name.to_string(), id);
        self.symbols.push(name.to_string());
        Ok(id)
    }

    /// Registers the continuation token and records its id.
    pub fn add_continuation(&mut self) -> Result<TokenId> {
        let id = self.add_special(CONTINUE_SYMBOL)?;
        self.special.continuation = Some(id);
        Ok(id)
    }

    /// One line per symbol: id, the symbol with newline escaped, and an
    /// annotation for marker tokens.
    pub fn dump_annotated(&self) -> String {
        let mut out = String::new();
        for (i, sym) in self.symbols.iter().enumerate() {
            let shown = if sym == "\n" { "\\n".to_string() } else { sym.clone() };
            let note = if self.special.continuation == Some(i as TokenId) {
                "\tcontinuation"
            } else if is_marker(sym) {
                "\tmarker"
            } else {
                ""
            };
            out.push_str(&alloc::format!("{i}\t{shown}{note}\n"));
        }
        out
    }

    /// Iterates `(id, symbol)` pairs in id order.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (i as TokenId, s.as_str()))
    }
}

fn is_marker(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() >= 3
        && b[0] == b'<'
        && b[b.len() - 1] == b'>'
        && b[1..b.len() - 1]
            .iter()
            .all(|&c| (0x20..=0x7e).contains(&c) && c != b'<' && c != b'>')
}

fn utf8_len(first_byte: u8) -> usize {
    match first_byte {
        0x00..=0x7f => 1,
        0xc0..=0xdf => 2,
        0xe0..=0xef => 3,
        _ => 4,
    }
}
