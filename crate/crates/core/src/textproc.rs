//! Tokenization, stop-word filtering and the frequency-thresholded vocabulary
//! shared by descriptions and story sentences.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const SOS: TokenId = 2;
pub const EOS: TokenId = 3;

/// Surface forms of the reserved ids, in id order.
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Splits raw text into lowercase tokens.
///
/// Punctuation characters become standalone tokens, except apostrophes and
/// hyphens joining two alphanumeric characters. Bracketed anonymization
/// markers such as `[male]` survive as a single token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut i = 0;

    let flush = |word: &mut String, tokens: &mut Vec<String>| {
        if !word.is_empty() {
            tokens.push(std::mem::take(word));
        }
    };

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            flush(&mut word, &mut tokens);
            i += 1;
        } else if c.is_alphanumeric() || c == '_' {
            word.push(c);
            i += 1;
        } else if c == '[' {
            flush(&mut word, &mut tokens);
            match bracket_marker(&chars[i..]) {
                Some(len) => {
                    tokens.push(chars[i..i + len].iter().collect());
                    i += len;
                }
                None => {
                    tokens.push(c.to_string());
                    i += 1;
                }
            }
        } else if (c == '\'' || c == '-')
            && !word.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            word.push(c);
            i += 1;
        } else {
            flush(&mut word, &mut tokens);
            tokens.push(c.to_string());
            i += 1;
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

/// Length of a `[word]` marker at the start of `chars`, if there is one.
fn bracket_marker(chars: &[char]) -> Option<usize> {
    let close = chars.iter().position(|&c| c == ']')?;
    if close < 2 {
        return None;
    }
    chars[1..close]
        .iter()
        .all(|c| c.is_alphanumeric() || *c == '_' || *c == '-')
        .then_some(close + 1)
}

/// Order-preserving filter. Only descriptions go through this; story text
/// keeps its function words.
pub fn remove_stop_words(tokens: &[String], stoplist: &HashSet<String>) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !stoplist.contains(t.as_str()))
        .cloned()
        .collect()
}

pub fn default_stoplist() -> HashSet<String> {
    parse_stoplist(DEFAULT_STOPWORDS)
}

/// Reads a stop-word file: one token per line, blank lines ignored.
pub fn load_stoplist(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stoplist(&text))
}

fn parse_stoplist(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Token substitution table applied after tokenization. Empty by default,
/// in which case it is a pass-through.
#[derive(Debug, Clone, Default)]
pub struct SpellingFixer {
    table: HashMap<String, String>,
}

impl SpellingFixer {
    pub fn new(table: HashMap<String, String>) -> Self {
        Self { table }
    }

    /// Loads a JSON object mapping misspelled token to replacement.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok(Self { table })
    }

    pub fn apply(&self, tokens: Vec<String>) -> Vec<String> {
        if self.table.is_empty() {
            return tokens;
        }
        tokens
            .into_iter()
            .map(|t| self.table.get(&t).cloned().unwrap_or(t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    min_count: usize,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Keeps every token seen at least `min_count` times. Non-special ids are
    /// assigned by descending frequency, ties broken lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in corpus {
            for tok in sentence {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count && !SPECIALS.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens, min_count)
    }

    fn from_tokens(id_to_token: Vec<String>, min_count: usize) -> Result<Self> {
        if id_to_token.len() < SPECIALS.len()
            || id_to_token[..SPECIALS.len()]
                .iter()
                .zip(SPECIALS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Config(
                "vocabulary must start with the four special symbols".into(),
            ));
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self {
            token_to_id,
            id_to_token,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.id_to_token[SPECIALS.len()..]
    }

    /// Out-of-vocabulary tokens map to UNK.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], add_boundaries: bool) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        if add_boundaries {
            ids.push(SOS);
        }
        ids.extend(tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)));
        if add_boundaries {
            ids.push(EOS);
        }
        ids
    }

    /// Inverse of [`encode`](Self::encode); PAD, SOS and EOS are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != PAD && id != SOS && id != EOS)
            .map(|&id| self.token(id).unwrap_or(SPECIALS[UNK as usize]).to_string())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VocabularyFile {
            min_count: self.min_count,
            tokens: self.id_to_token.clone(),
        })
        .expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let file: VocabularyFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::from_tokens(file.tokens, file.min_count).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabularyFile =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_tokens(file.tokens, file.min_count)
    }
}
