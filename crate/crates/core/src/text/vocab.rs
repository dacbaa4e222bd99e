use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::digest_hex;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
const RESERVED: [&str; 4] = [PAD, UNK, BOS, EOS];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabProvenance {
    /// SHA-256 over the sorted token-frequency table of the source corpus.
    pub corpus_digest: String,
    pub min_freq: usize,
    pub max_size: usize,
}

/// Token ↔ id bijection with the four reserved entries at ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    provenance: VocabProvenance,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Keeps tokens seen at least `min_freq` times, most frequent first with
/// lexicographic tie-breaks, until the vocabulary (reserved entries
/// included) holds `max_size` entries.
pub fn build_vocab<S: AsRef<str>>(sentences: &[Vec<S>], min_freq: usize, max_size: usize) -> Result<Vocab> {
    if max_size < RESERVED.len() + 1 {
        return Err(Error::Input(format!("max_size {max_size} must be at least 5")));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for t in s {
            *freq.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut table: Vec<(&str, usize)> = freq.into_iter().collect();
    table.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut digest_src = String::new();
    for (t, n) in &table {
        digest_src.push_str(&format!("{t}\t{n}\n"));
    }

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        table
            .iter()
            .filter(|(t, n)| *n >= min_freq && !RESERVED.contains(t))
            .map(|(t, _)| t.to_string())
            .take(max_size - RESERVED.len()),
    );
    Ok(Vocab::from_parts(
        tokens,
        VocabProvenance {
            corpus_digest: digest_hex(digest_src.as_bytes()),
            min_freq,
            max_size,
        },
    ))
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, provenance: VocabProvenance) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            provenance,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn provenance(&self) -> &VocabProvenance {
        &self.provenance
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK_ID)).collect()
    }

    /// `[BOS, ids.., EOS]`
    pub fn wrap(&self, ids: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(ids.len() + 2);
        out.push(BOS_ID);
        out.extend_from_slice(ids);
        out.push(EOS_ID);
        out
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| {
                self.tokens.get(i).cloned().ok_or(Error::Index {
                    index: i,
                    size: self.tokens.len(),
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vocab = serde_json::from_str(text)?;
        if raw.tokens.len() < RESERVED.len() || raw.tokens[..4] != RESERVED {
            return Err(Error::Input("vocabulary lacks the reserved prefix".into()));
        }
        let v = Self::from_parts(raw.tokens, raw.provenance);
        if v.index.len() != v.tokens.len() {
            return Err(Error::Input("vocabulary has duplicate tokens".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Identity of this vocabulary (digest of its JSON form).
    pub fn digest(&self) -> String {
        digest_hex(self.to_json().as_bytes())
    }
}
