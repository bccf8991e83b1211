use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use super::DecoderError;
use crate::prompt::templates::TEMPLATES;
use crate::store::Database;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const MASK: usize = 3;
pub const OPEN: usize = 4;
pub const CLOSE: usize = 5;
pub const YES: usize = 6;
pub const NO: usize = 7;
pub const UNK: usize = 8;

/// Tokens occupying ids `0..RESERVED.len()`, in id order.
pub const RESERVED: [&str; 9] = ["[PAD]", "[BOS]", "[EOS]", "[MASK]", "[OPEN]", "[CLOSE]", "yes", "no", "[UNK]"];

/// Stand-in for whitespace inside character-split values.
pub const SPACE: &str = "\u{2581}";

/// Words every vocabulary carries besides the reserved block.
const BASE_WORDS: &[&str] = &["is", ",", ".", ":", "missing", "example", "answer", "-", "{", "}", "[", "]", "\""];

/// Lowercased word tokens; every other non-space character is its own token.
/// Bracketed reserved names such as `[MASK]` stay intact.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '[' {
            if let Some(len) = chars[i..].iter().position(|&x| x == ']') {
                let cand: String = chars[i..=i + len].iter().collect();
                if RESERVED.contains(&cand.as_str()) && cand.starts_with("[") {
                    flush(&mut word, &mut out);
                    out.push(cand);
                    i += len + 1;
                    continue;
                }
            }
        }
        if c.is_alphanumeric() || c == '_' {
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, &mut out);
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
        i += 1;
    }
    flush(&mut word, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn reserved() -> Self {
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string())).expect("reserved block is valid")
    }

    /// Tokens in id order; the reserved block must come first.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self, DecoderError> {
        let tokens: Vec<String> = tokens.into_iter().collect();
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(DecoderError::Vocab("reserved block missing or out of order".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(['\n', '\r']) {
                return Err(DecoderError::Vocab(format!("invalid token at id {i}")));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(DecoderError::Vocab(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// Reserved tokens, template words, schema names and attribute values of
    /// `db`. The `max_values` most frequent attribute values become atomic
    /// tokens; every character of every value is also a token so that any
    /// value can be spelled out.
    pub fn build(db: &Database, extra_texts: &[&str], max_values: usize) -> Self {
        let mut words: BTreeSet<String> = BASE_WORDS.iter().map(|s| s.to_string()).collect();
        for c in '0'..='9' {
            words.insert(c.to_string());
        }
        words.insert(SPACE.to_string());
        for (_, d, q) in TEMPLATES {
            words.extend(tokenize(d));
            words.extend(tokenize(q));
        }
        for t in extra_texts {
            words.extend(tokenize(t));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in &db.tables {
            words.extend(tokenize(t.name()));
            for col in &t.spec.columns {
                words.extend(tokenize(&col.name));
            }
            for c in t.attribute_columns() {
                for e in &t.entities {
                    if let Some(s) = e.attrs[c].render() {
                        for ch in s.chars().filter(|ch| !ch.is_whitespace()) {
                            words.insert(ch.to_string());
                        }
                        *counts.entry(s).or_default() += 1;
                    }
                }
            }
        }
        let mut by_freq: Vec<(String, usize)> =
            counts.into_iter().filter(|(s, _)| !s.is_empty() && !s.contains(['\n', '\r'])).collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        words.extend(by_freq.into_iter().take(max_values).map(|(s, _)| s));
        for r in RESERVED {
            words.remove(r);
        }
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).chain(words)).expect("built vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        self.encode_tokens(&tokenize(text))
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    /// An attribute value: one token if the exact string is in the
    /// vocabulary, otherwise one token per character.
    pub fn encode_value(&self, value: &str) -> Vec<usize> {
        if let Some(id) = self.id(value) {
            return vec![id];
        }
        value
            .chars()
            .map(|c| if c.is_whitespace() { self.id(SPACE) } else { self.id(&c.to_string()) }.unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// One token per line; the line number (from 0) is the id.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DecoderError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(f)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DecoderError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let lines = f.lines().collect::<std::io::Result<Vec<String>>>()?;
        Self::from_tokens(lines)
    }
}
