use std::collections::HashMap;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::lm::{digest_hex, ParameterSet, Reader};
use crate::rng;
use crate::text::TokenizedCorpus;

pub const PROMPT_MAGIC: &[u8; 4] = b"PTPX";
pub const PROMPT_VERSION: u32 = 1;
const RESERVED_IDS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Random,
    FrequentWords,
    VocabSample,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Random => "random",
            InitMode::FrequentWords => "frequent_words",
            InitMode::VocabSample => "vocab_sample",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    domain: String,
    #[serde(rename = "P")]
    p: usize,
    d: usize,
    base_model_hash: String,
    init_mode: InitMode,
    seed: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    fallback_rows: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// `P` learned input embeddings bound to one base checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPrompt {
    pub domain: String,
    pub matrix: Tensor,
    pub base_model_hash: String,
    pub init_mode: InitMode,
    pub seed: u64,
    /// Rows a `frequent_words` initialization had to fill by vocabulary
    /// sampling because the corpus had too few distinct tokens.
    pub fallback_rows: usize,
}

impl SoftPrompt {
    pub fn len(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        prompt_bytes(self) == prompt_bytes(other)
    }
}

/// Builds the initial prompt matrix for `p` rows on top of `base`.
pub fn init_prompt(
    mode: InitMode,
    p: usize,
    base: &ParameterSet,
    base_hash: &str,
    train: &TokenizedCorpus,
    seed: u64,
) -> Result<SoftPrompt> {
    let cfg = base.config();
    let room = cfg.max_positions.saturating_sub(train.max_len() + 2);
    if p > room {
        return Err(Error::Capacity {
            needed: p + train.max_len() + 2,
            capacity: cfg.max_positions,
        });
    }
    let d = cfg.d_model;
    let wte = base
        .get("wte")
        .ok_or_else(|| Error::Contract("base has no token embedding".into()))?;
    let mut rng = rng::seeded(rng::derive_seed(seed, "prompt-init"));
    let rows_of = |ids: &[usize]| -> Tensor {
        let data = ids.iter().flat_map(|&i| wte.row(i).iter().copied()).collect();
        Tensor::new(vec![ids.len(), d], data).expect("row count matches")
    };
    let sample_ids = |rng: &mut rng::DetRng, k: usize, exclude: &[usize]| -> Result<Vec<usize>> {
        let pool: Vec<usize> = (RESERVED_IDS..cfg.vocab_size)
            .filter(|i| !exclude.contains(i))
            .collect();
        if pool.len() < k {
            return Err(Error::Input(format!(
                "cannot sample {k} distinct tokens from a pool of {}",
                pool.len()
            )));
        }
        Ok(sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
    };

    let (matrix, fallback_rows) = match mode {
        InitMode::Random => {
            use rand_distr::{Distribution, Normal};
            let normal = Normal::new(0.0f32, 0.02).expect("valid std");
            let data = (0..p * d).map(|_| normal.sample(&mut rng)).collect();
            (Tensor::new(vec![p, d], data)?, 0)
        }
        InitMode::VocabSample => (rows_of(&sample_ids(&mut rng, p, &[])?), 0),
        InitMode::FrequentWords => {
            let vocab = train.vocab();
            let mut freq: HashMap<usize, usize> = HashMap::new();
            for &id in train.sentences().iter().flatten() {
                if id >= RESERVED_IDS {
                    *freq.entry(id).or_default() += 1;
                }
            }
            let mut ranked: Vec<(usize, usize)> = freq.into_iter().collect();
            ranked.sort_by(|a, b| {
                b.1.cmp(&a.1)
                    .then_with(|| vocab.tokens()[a.0].cmp(&vocab.tokens()[b.0]))
            });
            let mut ids: Vec<usize> = ranked.into_iter().take(p).map(|(id, _)| id).collect();
            let missing = p - ids.len();
            let extra = sample_ids(&mut rng, missing, &ids)?;
            ids.extend(extra);
            (rows_of(&ids), missing)
        }
    };
    Ok(SoftPrompt {
        domain: train.domain().to_string(),
        matrix,
        base_model_hash: base_hash.to_string(),
        init_mode: mode,
        seed,
        fallback_rows,
    })
}

pub fn prompt_bytes(prompt: &SoftPrompt) -> Vec<u8> {
    let header = Header {
        domain: prompt.domain.clone(),
        p: prompt.len(),
        d: prompt.width(),
        base_model_hash: prompt.base_model_hash.clone(),
        init_mode: prompt.init_mode,
        seed: prompt.seed,
        fallback_rows: prompt.fallback_rows,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * prompt.matrix.numel());
    out.extend_from_slice(PROMPT_MAGIC);
    out.extend_from_slice(&PROMPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for x in prompt.matrix.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Writes the artifact (creating parent directories) and returns its digest.
pub fn save_prompt(prompt: &SoftPrompt, path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes = prompt_bytes(prompt);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(digest_hex(&bytes))
}

pub fn parse_prompt(bytes: &[u8]) -> Result<SoftPrompt> {
    let mut r = Reader::new(bytes);
    let header = r.preamble(PROMPT_MAGIC, PROMPT_VERSION)?;
    let header: Header = serde_json::from_slice(header).map_err(|e| Error::format(12, format!("bad header: {e}")))?;
    let numel = header
        .p
        .checked_mul(header.d)
        .ok_or_else(|| Error::format(12, "prompt size overflows"))?;
    let data = r.f32s(numel, "prompt payload")?;
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes after payload"));
    }
    Ok(SoftPrompt {
        domain: header.domain,
        matrix: Tensor::new(vec![header.p, header.d], data)?,
        base_model_hash: header.base_model_hash,
        init_mode: header.init_mode,
        seed: header.seed,
        fallback_rows: header.fallback_rows,
    })
}

/// What to do when a prompt was trained against a different base.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HashCheck {
    Strict,
    Warn,
}

#[derive(Clone, Debug)]
pub struct LoadedPrompt {
    pub prompt: SoftPrompt,
    /// Set when the base digest differs and the check only warns.
    pub warning: Option<String>,
}

/// Reads a prompt artifact and checks it against the digest of the base
/// checkpoint it will be used with.
pub fn load_prompt(path: impl AsRef<Path>, base_hash: &str, check: HashCheck) -> Result<LoadedPrompt> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let prompt = parse_prompt(&bytes)?;
    let mut warning = None;
    if prompt.base_model_hash != base_hash {
        let err = Error::Compatibility {
            expected: base_hash.to_string(),
            found: prompt.base_model_hash.clone(),
        };
        match check {
            HashCheck::Strict => return Err(err),
            HashCheck::Warn => warning = Some(format!("{}: {err}", path.display())),
        }
    }
    Ok(LoadedPrompt { prompt, warning })
}
