use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{tokenize, Vocab};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

/// One value per split role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits<T> {
    pub train: T,
    pub dev: T,
    pub test: T,
}

impl<T> Splits<T> {
    pub fn get(&self, split: Split) -> &T {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(Split, T) -> U) -> Splits<U> {
        Splits {
            train: f(Split::Train, self.train),
            dev: f(Split::Dev, self.dev),
            test: f(Split::Test, self.test),
        }
    }
}

/// Encoded sentences of one split of one domain. BOS/EOS are not stored.
#[derive(Clone, Debug)]
pub struct TokenizedCorpus {
    vocab: Arc<Vocab>,
    sentences: Vec<Vec<usize>>,
    split: Split,
    domain: String,
}

impl TokenizedCorpus {
    pub fn new(vocab: Arc<Vocab>, sentences: Vec<Vec<usize>>, split: Split, domain: impl Into<String>) -> Result<Self> {
        for (i, s) in sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Input(format!("sentence {i} is empty")));
            }
            if let Some(&bad) = s.iter().find(|&&id| id >= vocab.len()) {
                return Err(Error::Index {
                    index: bad,
                    size: vocab.len(),
                });
            }
        }
        Ok(Self {
            vocab,
            sentences,
            split,
            domain: domain.into(),
        })
    }

    /// Tokenizes and encodes raw sentences; blank ones are dropped.
    pub fn encode<S: AsRef<str>>(vocab: Arc<Vocab>, lines: &[S], split: Split, domain: impl Into<String>) -> Self {
        let sentences = lines
            .iter()
            .map(|l| vocab.encode(&tokenize(l.as_ref())))
            .filter(|s| !s.is_empty())
            .collect();
        Self {
            vocab,
            sentences,
            split,
            domain: domain.into(),
        }
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn sentences(&self) -> &[Vec<usize>] {
        &self.sentences
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.sentences.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of predicted tokens (words plus EOS per sentence).
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len() + 1).sum()
    }

    pub fn take(&self, n: usize) -> Self {
        Self {
            sentences: self.sentences.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Non-blank lines of a UTF-8 file, trimmed.
pub fn read_sentences(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::Input(format!(
            "{}: invalid UTF-8 at byte {}",
            path.display(),
            e.utf8_error().valid_up_to()
        ))
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Seeded shuffle followed by a contiguous train/dev/test cut. Train and
/// dev sizes are `floor(n·frac)`; test takes the remainder.
pub fn split_sentences<T: Clone>(items: &[T], fracs: [f64; 3], seed: u64) -> Result<Splits<Vec<T>>> {
    if fracs.iter().any(|f| !f.is_finite() || *f < 0.0) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "split fractions {fracs:?} must be non-negative and sum to 1"
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(seed, "split")));
    let n = items.len();
    let cut = |f: f64| ((n as f64 * f + 1e-9).floor() as usize).min(n);
    let n_train = cut(fracs[0]);
    let n_dev = cut(fracs[1]).min(n - n_train);
    let pick = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect();
    Ok(Splits {
        train: pick(0..n_train),
        dev: pick(n_train..n_train + n_dev),
        test: pick(n_train + n_dev..n),
    })
}

/// Reads `path`, splits it, and encodes every split with `vocab`.
pub fn load_corpus(
    path: impl AsRef<Path>,
    fracs: [f64; 3],
    seed: u64,
    vocab: Arc<Vocab>,
    domain: &str,
) -> Result<Splits<TokenizedCorpus>> {
    let lines = read_sentences(path)?;
    let splits = split_sentences(&lines, fracs, seed)?;
    Ok(splits.map(|role, lines| TokenizedCorpus::encode(vocab.clone(), &lines, role, domain)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_floor() {
        let items: Vec<u32> = (0..10).collect();
        let s = split_sentences(&items, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (8, 1, 1));
        let s = split_sentences(&items, [0.75, 0.15, 0.1], 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn bad_fracs_rejected() {
        assert!(split_sentences(&[1, 2], [0.5, 0.5, 0.5], 0).is_err());
        assert!(split_sentences(&[1, 2], [1.2, -0.1, -0.1], 0).is_err());
    }

    #[test]
    fn split_parses() {
        for s in Split::ALL {
            assert_eq!(s.as_str().parse::<Split>().unwrap(), s);
        }
        assert!("eval".parse::<Split>().is_err());
    }
}
