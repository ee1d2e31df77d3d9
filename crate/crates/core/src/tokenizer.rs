//! Word-level tokenizer with a fixed vocabulary.
//!
//! Pieces are special tokens, `[ ]word` (alphanumeric run with at most one
//! leading space), `[ ]punct` (one non-space non-alphanumeric char with an
//! optional leading space), or a run of whitespace. Concatenating the pieces
//! gives back the input, so decoding is exact whenever every piece is in the
//! vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const MUSIC: &str = "<Music>";
pub const IMAGE: &str = "<Image>";
pub const VIDEO: &str = "<Video>";
pub const SPECIALS: [&str; 7] = [PAD, BOS, EOS, UNK, MUSIC, IMAGE, VIDEO];
pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Splits text into pieces; see the module docs.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let b = text.as_bytes();
    let mut i = 0;
    'outer: while i < text.len() {
        if b[i] == b'<' {
            for s in &SPECIALS {
                if text[i..].starts_with(s) {
                    out.push(&text[i..i + s.len()]);
                    i += s.len();
                    continue 'outer;
                }
            }
        }
        let start = i;
        let mut chars = text[i..].char_indices();
        let (_, c0) = chars.next().expect("non-empty");
        let (lead, c) = if c0 == ' ' {
            match chars.next() {
                Some((_, c1)) if !c1.is_whitespace() && !(c1 == '<' && starts_special(&text[i + 1..])) => (1, c1),
                _ => (0, c0),
            }
        } else {
            (0, c0)
        };
        let body = i + lead;
        if c.is_ascii_alphanumeric() {
            let len = text[body..].bytes().take_while(|b| b.is_ascii_alphanumeric()).count();
            i = body + len;
        } else if c.is_whitespace() {
            let len: usize = text[body..].chars().take_while(|ch| ch.is_whitespace()).map(char::len_utf8).sum();
            // leave one space for a following word, as in "a  b" → "a", " ", " b"
            let mut end = body + len;
            if len > 1 && end < text.len() && text[end - 1..].starts_with(' ') {
                let next = text[end..].chars().next().unwrap();
                if !next.is_whitespace() && !(next == '<' && starts_special(&text[end..])) {
                    end -= 1;
                }
            }
            i = end;
        } else {
            i = body + c.len_utf8();
        }
        out.push(&text[start..i]);
    }
    out
}

fn starts_special(s: &str) -> bool {
    SPECIALS.iter().any(|sp| s.starts_with(sp))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tokenizer {
    /// Specials first (ids 0..7), then the given tokens in order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = all.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for t in tokens {
            if t.is_empty() {
                return Err(invalid("tokenizer", "empty token"));
            }
            if index.contains_key(&t) {
                if SPECIALS.contains(&t.as_str()) {
                    continue;
                }
                return Err(invalid("tokenizer", format!("duplicate token {t:?}")));
            }
            index.insert(t.clone(), all.len());
            all.push(t);
        }
        Ok(Self { tokens: all, index })
    }

    /// Vocabulary of the most frequent pieces of `corpus` (ties broken
    /// lexicographically), capped at `max_size` entries including specials.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(corpus: I, max_size: usize) -> Result<Self> {
        if max_size < SPECIALS.len() {
            return Err(invalid("tokenizer", format!("vocabulary cap {max_size} below the special-token count")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in corpus {
            for p in pretokenize(text) {
                if !SPECIALS.contains(&p) {
                    *counts.entry(p).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn pad(&self) -> usize {
        PAD_ID
    }
    pub fn bos(&self) -> usize {
        BOS_ID
    }
    pub fn eos(&self) -> usize {
        EOS_ID
    }
    pub fn unk(&self) -> usize {
        UNK_ID
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        pretokenize(text).into_iter().map(|p| self.id(p).unwrap_or(self.unk())).collect()
    }

    /// True when every piece of `text` is in the vocabulary.
    pub fn covers(&self, text: &str) -> bool {
        pretokenize(text).into_iter().all(|p| self.index.contains_key(p))
    }

    /// Concatenates token strings (special tokens included).
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK)).collect()
    }

    /// One token per line, line number = id. Backslashes and line breaks
    /// inside tokens are written as `\\`, `\n` and `\r`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            for c in t.chars() {
                match c {
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    c => out.push(c),
                }
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut tokens = Vec::new();
        for (n, line) in text.split_terminator('\n').enumerate() {
            let mut t = String::new();
            let mut chars = line.chars();
            while let Some(c) = chars.next() {
                if c != '\\' {
                    t.push(c);
                    continue;
                }
                match chars.next() {
                    Some('\\') => t.push('\\'),
                    Some('n') => t.push('\n'),
                    Some('r') => t.push('\r'),
                    other => {
                        return Err(Error::Config(format!("{} line {}: bad escape {:?}", path.display(), n + 1, other)))
                    }
                }
            }
            tokens.push(t);
        }
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Config(format!("{}: vocabulary must start with the special tokens", path.display())));
        }
        Self::from_tokens(tokens.into_iter().skip(SPECIALS.len()))
    }
}
