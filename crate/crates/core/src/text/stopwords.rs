use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_LIST: &str = include_str!("../../data/stopwords.txt");

/// Tokens excluded from content-word scoring.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stopwords(BTreeSet<String>);

impl Stopwords {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Self(words.into_iter().map(Into::into).collect())
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_lowercase),
        )
    }
}

/// English function words plus conversational fillers.
pub fn default_stopwords() -> Stopwords {
    Stopwords::parse(DEFAULT_LIST)
}

/// One token per line; blank lines ignored, tokens lowercased.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<Stopwords> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Stopwords::parse(&text))
}
