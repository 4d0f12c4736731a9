//! Caption normalisation, vocabulary and token sequences.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const SOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").expect("valid regex"));

/// Lowercase, drop every Unicode punctuation character and split on
/// whitespace.
pub fn normalize_caption(raw: &str) -> Vec<String> {
    let lowered = raw.to_lowercase();
    PUNCT
        .replace_all(&lowered, "")
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn is_normalized(token: &str) -> bool {
    !token.is_empty()
        && !token.chars().any(char::is_whitespace)
        && token.to_lowercase() == token
        && !PUNCT.is_match(token)
}

/// Bijection between word tokens and ids, with ids 0..4 reserved for
/// `<pad>`, `<sos>`, `<eos>` and `<unk>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary over `words` in the given order, after the reserved ids.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().map(Into::into));
        Self::try_from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Config(
                "vocabulary must start with <pad>, <sos>, <eos>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if i >= RESERVED.len() && !is_normalized(t) {
                return Err(Error::Config(format!("vocabulary token {t:?} is not normalized")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Assign ids to tokens seen at least `min_count` times, most frequent first
/// and lexicographic among equal counts.
pub fn build_vocabulary<T: AsRef<[String]>>(corpus: &[T], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    if corpus.iter().all(|c| c.as_ref().is_empty()) {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for caption in corpus {
        for tok in caption.as_ref() {
            if !is_normalized(tok) {
                return Err(Error::Config(format!("corpus token {tok:?} is not normalized")));
            }
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && !RESERVED.contains(&t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(t, _)| t.to_string()))
}

/// Fixed-length id sequence: `<sos> words… <eos>` followed by padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Number of ids before the padding, `<sos>` and `<eos>` included.
    pub len: usize,
}

/// Encode to exactly `max_len` ids. Over-long captions lose words from the
/// tail; `<sos>` and `<eos>` are always kept.
pub fn encode_caption<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len < 3 {
        return Err(Error::Config(format!("max_len {max_len} < 3")));
    }
    let keep = tokens.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(SOS_ID);
    ids.extend(tokens[..keep].iter().map(|t| vocab.id(t.as_ref())));
    ids.push(EOS_ID);
    let len = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(TokenSequence { ids, len })
}

/// Words of an id sequence: everything after a leading `<sos>` up to the
/// first `<eos>`, with padding skipped.
pub fn decode_ids(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    let start = usize::from(ids.first() == Some(&SOS_ID));
    ids[start..]
        .iter()
        .take_while(|&&id| id != EOS_ID)
        .filter(|&&id| id != PAD_ID)
        .map(|&id| vocab.token(id).unwrap_or("<unk>").to_string())
        .collect()
}
