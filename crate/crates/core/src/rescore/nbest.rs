use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::text::{tokenize, Stopwords};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    /// Log-domain acoustic score.
    pub am: f64,
}

/// One utterance: its reference transcript and competing hypotheses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub id: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub hyps: Vec<Hypothesis>,
}

impl NBestEntry {
    pub fn validate(&self) -> Result<()> {
        if self.hyps.is_empty() {
            return Err(Error::Input(format!("utterance {} has no hypotheses", self.id)));
        }
        if let Some(h) = self.hyps.iter().find(|h| !h.am.is_finite()) {
            return Err(Error::Input(format!(
                "utterance {}: non-finite am score for {:?}",
                self.id, h.text
            )));
        }
        Ok(())
    }
}

/// JSON Lines, one utterance per line.
pub fn nbest_to_jsonl(entries: &[NBestEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
        .collect()
}

pub fn parse_nbest(text: &str) -> Result<Vec<NBestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let e: NBestEntry =
                serde_json::from_str(l).map_err(|err| Error::Input(format!("n-best line {}: {err}", i + 1)))?;
            e.validate()?;
            Ok(e)
        })
        .collect()
}

pub fn read_nbest(path: impl AsRef<Path>) -> Result<Vec<NBestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_nbest(&text)
}

pub fn write_nbest(entries: &[NBestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, nbest_to_jsonl(entries)).map_err(|e| Error::io(path, e))
}

pub const BUILTIN_CONFUSIONS: &[(&str, &str)] = &[
    (
        "fastfood-orders",
        include_str!("../../data/confusions/fastfood-orders.json"),
    ),
    (
        "banking-queries",
        include_str!("../../data/confusions/banking-queries.json"),
    ),
];

/// Words a recognizer may mistake each content word for.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionTable(BTreeMap<String, Vec<String>>);

impl ConfusionTable {
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if let Some((w, _)) = map.iter().find(|(_, alts)| alts.is_empty()) {
            return Err(Error::Input(format!("confusion entry {w:?} has no alternatives")));
        }
        Ok(Self(map))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match BUILTIN_CONFUSIONS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => Self::from_json(text),
            None => Err(Error::Input(format!("no confusion table for {name:?}"))),
        }
    }

    pub fn alternatives(&self, word: &str) -> Option<&[String]> {
        self.0.get(word).map(Vec::as_slice)
    }
}

/// Applies up to `k` substitutions at distinct content positions and
/// returns the new tokens with the number actually substituted.
fn corrupt<R: Rng>(
    rng: &mut R,
    words: &[String],
    content: &[usize],
    k: usize,
    table: &ConfusionTable,
) -> (Vec<String>, usize) {
    let mut out = words.to_vec();
    let picked: Vec<usize> = content.choose_multiple(rng, k.min(content.len())).copied().collect();
    let mut done = 0;
    for pos in picked {
        if let Some(alts) = table.alternatives(&words[pos]) {
            out[pos] = alts.choose(rng).expect("non-empty").clone();
            done += 1;
        }
    }
    (out, done)
}

/// Synthetic n-best lists for `sentences`: each list holds the verbatim
/// transcript and `n_hyps − 1` variants with `k ~ U{0..3}` content-word
/// confusions, scored `am = −k + N(0, noise_sd)` with `k` the substitutions
/// actually made. Hypothesis order is shuffled.
pub fn synth_nbest<S: AsRef<str>>(
    sentences: &[S],
    id_prefix: &str,
    confusion: &ConfusionTable,
    stopwords: &Stopwords,
    n_hyps: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<NBestEntry>> {
    if n_hyps < 2 {
        return Err(Error::Input(format!("n_hyps must be at least 2, got {n_hyps}")));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Input(format!("noise_sd {noise_sd}: {e}")))?;
    let mut rng = rng::seeded(rng::derive_seed(seed, "synth-nbest"));
    let mut out = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        let words = tokenize(s.as_ref());
        let content: Vec<usize> = (0..words.len()).filter(|&p| !stopwords.contains(&words[p])).collect();
        let mut hyps = vec![Hypothesis {
            text: words.join(" "),
            am: noise.sample(&mut rng),
        }];
        for _ in 1..n_hyps {
            let k = rng.random_range(0..=3);
            let (tokens, done) = corrupt(&mut rng, &words, &content, k, confusion);
            hyps.push(Hypothesis {
                text: tokens.join(" "),
                am: -(done as f64) + noise.sample(&mut rng),
            });
        }
        hyps.shuffle(&mut rng);
        out.push(NBestEntry {
            id: format!("{id_prefix}{i:05}"),
            reference: words.join(" "),
            hyps,
        });
    }
    Ok(out)
}
