//! Fixed-vocabulary tokenizer for the toy decoder.
//!
//! Text is split into words (alphanumeric runs) and single punctuation
//! characters; whitespace only separates. Each word is then cut greedily into
//! the longest vocabulary entries, falling back to single characters and
//! finally to `<unk>`. Every token keeps the byte span it came from so
//! character-level markup can be mapped onto token positions.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::ops::Range;

use thiserror::Error;

pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary needs {needed} entries, limit is {limit}")]
    VocabTooSmall { needed: usize, limit: usize },
    #[error("invalid vocabulary entry on line {line}: {reason}")]
    BadEntry { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    /// Byte range in the source text.
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn overlaps(&self, span: &Range<usize>) -> bool {
        self.start < span.end && span.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    longest: usize,
}

/// Splits text into word and punctuation pieces with their byte spans.
pub fn pre_tokenize(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push((s, i));
        }
        if !c.is_whitespace() {
            out.push((i, i + c.len_utf8()));
        }
    }
    if let Some(s) = word_start {
        out.push((s, text.len()));
    }
    out
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizerError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(TokenizerError::BadEntry {
                    line: i + 1,
                    reason: "empty or multi-line token".into(),
                });
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::BadEntry {
                    line: i + 1,
                    reason: format!("duplicate token {t:?}"),
                });
            }
        }
        if !index.contains_key(UNK) {
            return Err(TokenizerError::BadEntry {
                line: 0,
                reason: format!("vocabulary lacks {UNK}"),
            });
        }
        let longest = tokens.iter().map(|t| t.len()).max().unwrap_or(0);
        Ok(Vocab {
            tokens,
            index,
            longest,
        })
    }

    /// Builds a vocabulary of at most `limit` entries covering every
    /// character in `texts`. `required` words are always whole tokens; the
    /// remaining room goes to the most frequent words (ties alphabetical).
    pub fn build<'a>(
        required: impl IntoIterator<Item = &'a str>,
        texts: impl IntoIterator<Item = &'a str>,
        limit: usize,
    ) -> Result<Self, TokenizerError> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut chars: BTreeMap<char, ()> = BTreeMap::new();
        let mut note = |text: &str, counts: &mut BTreeMap<String, usize>| {
            for (s, e) in pre_tokenize(text) {
                let piece = &text[s..e];
                for c in piece.chars() {
                    chars.insert(c, ());
                }
                *counts.entry(piece.to_string()).or_default() += 1;
            }
        };
        let mut required_words: Vec<String> = Vec::new();
        for r in required {
            let mut local = BTreeMap::new();
            note(r, &mut local);
            for (s, e) in pre_tokenize(r) {
                required_words.push(r[s..e].to_string());
            }
        }
        for t in texts {
            note(t, &mut counts);
        }
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(chars.keys().map(|c| c.to_string()));
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for w in required_words {
            if seen.insert(w.clone()) {
                tokens.push(w);
            }
        }
        if tokens.len() > limit {
            return Err(TokenizerError::VocabTooSmall {
                needed: tokens.len(),
                limit,
            });
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !seen.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = limit - tokens.len();
        tokens.extend(ranked.into_iter().take(room).map(|(w, _)| w));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn unk(&self) -> u32 {
        self.index[UNK]
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(UNK, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self, TokenizerError> {
        let tokens = source.lines().collect::<Result<Vec<_>, _>>()?;
        Self::from_tokens(tokens)
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<(), TokenizerError> {
        for t in &self.tokens {
            writeln!(sink, "{t}")?;
        }
        Ok(())
    }

    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for (s, e) in pre_tokenize(text) {
            let mut pos = s;
            while pos < e {
                let piece = &text[pos..e];
                let mut found = None;
                let max = piece.len().min(self.longest);
                for len in (1..=max).rev() {
                    if !piece.is_char_boundary(len) {
                        continue;
                    }
                    if let Some(&id) = self.index.get(&piece[..len]) {
                        found = Some((id, len));
                        break;
                    }
                }
                let (id, len) = found.unwrap_or_else(|| {
                    let c = piece.chars().next().unwrap();
                    (self.unk(), c.len_utf8())
                });
                out.push(Token {
                    id,
                    start: pos,
                    end: pos + len,
                });
                pos += len;
            }
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.tokenize(text).into_iter().map(|t| t.id).collect()
    }

    /// Space-joined token strings.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_tokens(
            [
                UNK, "What", "is", "the", "capital", "of", "?", "Ire", "land", "I", "r", "e",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
        .unwrap()
    }

    #[test]
    fn splits_words_and_punctuation() {
        let v = vocab();
        let toks = v.tokenize("What is the capital of Ireland?");
        let words: Vec<&str> = toks.iter().map(|t| v.token(t.id)).collect();
        assert_eq!(
            words,
            ["What", "is", "the", "capital", "of", "Ire", "land", "?"]
        );
        assert_eq!((toks[5].start, toks[5].end), (23, 26));
    }

    #[test]
    fn unknown_chars_map_to_unk() {
        let v = vocab();
        assert_eq!(v.encode("Éx"), vec![0, 0]);
    }

    #[test]
    fn build_covers_all_characters() {
        let texts = [
            "What is the capital of Ireland?",
            "What is the capital of France?",
        ];
        let v = Vocab::build(["Dublin"], texts, 40).unwrap();
        assert!(v.id("Dublin").is_some());
        assert!(v.id("What").is_some());
        for text in texts {
            assert!(!v.encode(text).contains(&v.unk()));
        }
        let small = Vocab::build(["Dublin"], texts, 28);
        assert!(small.is_ok() || matches!(small, Err(TokenizerError::VocabTooSmall { .. })));
    }

    #[test]
    fn build_rejects_tiny_limit() {
        assert!(matches!(
            Vocab::build([], ["abcdef"], 3),
            Err(TokenizerError::VocabTooSmall { .. })
        ));
    }

    #[test]
    fn file_roundtrip() {
        let v = vocab();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(Vocab::read(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn rejects_duplicates() {
        let toks = vec![UNK.to_string(), "a".into(), "a".into()];
        assert!(Vocab::from_tokens(toks).is_err());
    }
}
