use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ptune_core::rescore::ConfusionTable;
use ptune_core::rng::derive_seed;
use ptune_core::text::{
    build_vocab, builtin_grammar, default_stopwords, generate_domain, load_stopwords, read_sentences, split_sentences,
    tokenize, DomainGrammar, Splits, Stopwords, TokenizedCorpus, Vocab,
};

use crate::config::{ExperimentConfig, SourceSpec};

/// A shipped grammar by name, or a grammar JSON file.
pub fn resolve_grammar(name: &str) -> Result<DomainGrammar> {
    if name.ends_with(".json") || Path::new(name).is_file() {
        return DomainGrammar::load(name).with_context(|| format!("loading grammar {name}"));
    }
    Ok(builtin_grammar(name)?)
}

pub fn resolve_confusion(name: &str) -> Result<ConfusionTable> {
    if name.ends_with(".json") || Path::new(name).is_file() {
        return ConfusionTable::load(name).with_context(|| format!("loading confusion table {name}"));
    }
    Ok(ConfusionTable::builtin(name)?)
}

pub fn resolve_stopwords(path: Option<&Path>) -> Result<Stopwords> {
    match path {
        Some(p) => Ok(load_stopwords(p)?),
        None => Ok(default_stopwords()),
    }
}

/// Raw sentences of one source. Grammar sources are sampled with a seed
/// derived from the master seed and `label`.
pub fn source_sentences(spec: &SourceSpec, seed: u64, label: &str) -> Result<Vec<String>> {
    match (&spec.grammar, &spec.path) {
        (Some(g), None) => {
            let grammar = resolve_grammar(g)?;
            let n = spec.sentences.context("grammar source without a sentence count")?;
            Ok(generate_domain(&grammar, n, derive_seed(seed, label))?)
        }
        (None, Some(p)) => {
            let mut lines = read_sentences(p)?;
            if let Some(n) = spec.sentences {
                lines.truncate(n);
            }
            Ok(lines)
        }
        _ => bail!("data source {} needs exactly one of grammar or path", spec.domain),
    }
}

/// Every corpus an experiment needs, rebuilt from the config alone.
pub struct Prepared {
    pub vocab: Arc<Vocab>,
    pub pretrain_text: Vec<Vec<String>>,
    pub pretrain: Vec<TokenizedCorpus>,
    pub target_text: Splits<Vec<String>>,
    pub target: Splits<TokenizedCorpus>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let pretrain_text: Vec<Vec<String>> = cfg
        .data
        .pretrain
        .iter()
        .enumerate()
        .map(|(i, s)| source_sentences(s, cfg.seed, &format!("corpus-pretrain-{i}-{}", s.domain)))
        .collect::<Result<_>>()?;
    let tokens: Vec<Vec<String>> = pretrain_text.iter().flatten().map(|s| tokenize(s)).collect();
    let vocab = Arc::new(build_vocab(&tokens, cfg.data.vocab_min_freq, cfg.data.vocab_max_size)?);
    let pretrain = cfg
        .data
        .pretrain
        .iter()
        .zip(&pretrain_text)
        .map(|(s, lines)| {
            TokenizedCorpus::encode(vocab.clone(), lines, ptune_core::text::Split::Train, s.domain.as_str())
        })
        .collect();
    let target_spec = &cfg.data.target;
    let lines = source_sentences(target_spec, cfg.seed, &format!("corpus-target-{}", target_spec.domain))?;
    let lines: Vec<String> = lines.into_iter().filter(|l| !tokenize(l).is_empty()).collect();
    let target_text = split_sentences(&lines, cfg.data.split_fracs, derive_seed(cfg.seed, "split"))?;
    let target = target_text
        .clone()
        .map(|role, l| TokenizedCorpus::encode(vocab.clone(), &l, role, target_spec.domain.as_str()));
    Ok(Prepared {
        vocab,
        pretrain_text,
        pretrain,
        target_text,
        target,
    })
}
