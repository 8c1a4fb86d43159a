//! Lexical tokenizer for Java-like source and a frequency-ranked vocabulary.
//!
//! Identifiers are split at camelCase and snake_case boundaries and
//! lowercased; numeric and string/char literals collapse to `<NUM>` / `<STR>`;
//! comments and whitespace are dropped.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Corpus;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const EOS: u32 = 3;
pub const NUM_SPECIALS: usize = 4;
pub const DEFAULT_VOCAB_SIZE: usize = 8192;

pub const NUM_SENTINEL: &str = "<NUM>";
pub const STR_SENTINEL: &str = "<STR>";

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<cls>", "<eos>"];

// Longest first; matching takes the first hit.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=",
    ">=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>",
];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRangeId { id: u32, size: usize },
    #[error("vocabulary size must be at least {min} (got {got})")]
    VocabTooSmall { min: usize, got: usize },
    #[error("vocabulary file line {line}: {reason}")]
    BadVocabFile { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

/// Splits an identifier into lowercase fragments.
fn split_identifier(ident: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = ident.chars().collect();
    let mut frags: Vec<String> = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' {
            if !cur.is_empty() {
                frags.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if c.is_ascii_uppercase() && !cur.is_empty() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
            let boundary = prev.is_ascii_lowercase()
                || prev.is_ascii_digit()
                || (prev.is_ascii_uppercase() && next_lower);
            if boundary {
                frags.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c.to_ascii_lowercase());
    }
    if !cur.is_empty() {
        frags.push(cur);
    }
    if frags.is_empty() {
        out.push(ident.to_string());
        return;
    }
    // Digit-led fragments would re-lex as numbers; glue them to their
    // neighbour instead.
    let start = out.len();
    for frag in frags {
        if frag.starts_with(|c: char| c.is_ascii_digit()) {
            if out.len() > start {
                out.last_mut().expect("non-empty").push_str(&frag);
            } else {
                out.push(format!("_{frag}"));
            }
        } else {
            out.push(frag);
        }
    }
}

/// Lexes source text into surface tokens. Total: any input lexes.
pub fn lex(code: &str) -> Vec<String> {
    let chars: Vec<char> = code.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        // comments
        if c == '/' && i + 1 < n && chars[i + 1] == '/' {
            while i < n && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && i + 1 < n && chars[i + 1] == '*' {
            i += 2;
            while i < n && !(chars[i] == '*' && i + 1 < n && chars[i + 1] == '/') {
                i += 1;
            }
            i = (i + 2).min(n);
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < n && is_ident_continue(chars[i]) {
                i += 1;
            }
            let ident: String = chars[start..i].iter().collect();
            split_identifier(&ident, &mut out);
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && i + 1 < n && chars[i + 1].is_ascii_digit()) {
            let start = i;
            i += 1;
            while i < n {
                let d = chars[i];
                let exp_sign = (d == '+' || d == '-')
                    && matches!(chars[i - 1], 'e' | 'E')
                    && !chars[start..i].iter().any(|x| matches!(x, 'x' | 'X'));
                if d.is_ascii_alphanumeric() || d == '_' || d == '.' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(NUM_SENTINEL.to_string());
            continue;
        }
        if c == '"' || c == '\'' {
            // Text blocks and ordinary literals both end at the next
            // unescaped quote of the same kind; unterminated literals run to
            // end of line.
            let quote = c;
            let triple = quote == '"' && i + 2 < n && chars[i + 1] == '"' && chars[i + 2] == '"';
            if triple {
                i += 3;
                while i < n && !(i + 2 < n && chars[i] == '"' && chars[i + 1] == '"' && chars[i + 2] == '"') {
                    i += if chars[i] == '\\' { 2 } else { 1 };
                }
                i = (i + 3).min(n);
            } else {
                i += 1;
                while i < n && chars[i] != quote && chars[i] != '\n' {
                    i += if chars[i] == '\\' { 2 } else { 1 };
                }
                i = (i + 1).min(n);
            }
            out.push(STR_SENTINEL.to_string());
            continue;
        }
        if let Some(op) = OPERATORS.iter().find(|op| {
            let len = op.chars().count();
            i + len <= n && op.chars().zip(&chars[i..i + len]).all(|(a, &b)| a == b)
        }) {
            out.push(op.to_string());
            i += op.chars().count();
            continue;
        }
        out.push(c.to_string());
        i += 1;
    }
    out
}

/// Token ↔ id mapping. Ids 0..4 are the reserved specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_size: usize,
}

impl Vocab {
    /// Builds a vocabulary from an ordered list of non-special tokens.
    pub fn from_tokens(tokens: Vec<String>, max_size: usize) -> Result<Self, TokenizerError> {
        if max_size < NUM_SPECIALS + 1 {
            return Err(TokenizerError::VocabTooSmall {
                min: NUM_SPECIALS + 1,
                got: max_size,
            });
        }
        let mut all: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        all.truncate(max_size);
        let index = all
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocab {
            tokens: all,
            index,
            max_size,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    /// File form: one token per line, line n holds id n + 4.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in self.entries() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str, max_size: usize) -> Result<Self, TokenizerError> {
        let mut tokens = Vec::new();
        if !text.is_empty() {
            let body = text.strip_suffix('\n').ok_or(TokenizerError::BadVocabFile {
                line: text.lines().count(),
                reason: "missing trailing newline".into(),
            })?;
            for (i, line) in body.split('\n').enumerate() {
                if line.is_empty() {
                    return Err(TokenizerError::BadVocabFile {
                        line: i + 1,
                        reason: "empty token".into(),
                    });
                }
                tokens.push(line.to_string());
            }
        }
        let max_size = max_size.max(tokens.len() + NUM_SPECIALS);
        let vocab = Vocab::from_tokens(tokens, max_size)?;
        if vocab.index.len() != vocab.len() - NUM_SPECIALS {
            return Err(TokenizerError::BadVocabFile {
                line: 0,
                reason: "duplicate token".into(),
            });
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let text = fs::read_to_string(path)?;
        Vocab::from_file_string(&text, DEFAULT_VOCAB_SIZE)
    }

    /// SHA-256 of the file form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Ranks tokens by corpus frequency (descending, ties lexicographic) and keeps
/// as many as fit under `max_size` including the specials.
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocab, TokenizerError> {
    let mut freq: HashMap<String, usize> = HashMap::new();
    for s in corpus.samples() {
        for t in lex(&s.code) {
            *freq.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let budget = max_size.saturating_sub(NUM_SPECIALS);
    Vocab::from_tokens(
        ranked.into_iter().take(budget).map(|(t, _)| t).collect(),
        max_size,
    )
}

/// An encoded snippet: `[CLS] tokens… [EOS]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn encode(code: &str, vocab: &Vocab) -> TokenSeq {
    let mut ids = vec![CLS];
    ids.extend(lex(code).iter().map(|t| vocab.id(t).unwrap_or(UNK)));
    ids.push(EOS);
    TokenSeq { ids }
}

pub fn decode(seq: &TokenSeq, vocab: &Vocab) -> Result<String, TokenizerError> {
    let parts = seq
        .ids
        .iter()
        .map(|&id| {
            vocab.token(id).ok_or(TokenizerError::OutOfRangeId {
                id,
                size: vocab.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parts.join(" "))
}
