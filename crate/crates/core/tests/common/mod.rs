#![allow(dead_code)]

use std::sync::Arc;

use ptune_core::autodiff::Tensor;
use ptune_core::lm::{init_params, ModelConfig, ParameterSet};
use ptune_core::text::{build_vocab, tokenize, Split, TokenizedCorpus, Vocab};

pub fn config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size,
        max_positions: 24,
    }
}

pub fn vocab(lines: &[&str]) -> Arc<Vocab> {
    let toks: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l)).collect();
    Arc::new(build_vocab(&toks, 1, 1000).unwrap())
}

pub fn corpus(vocab: &Arc<Vocab>, lines: &[&str], split: Split) -> TokenizedCorpus {
    TokenizedCorpus::encode(vocab.clone(), lines, split, "toy")
}

pub fn zeroed(cfg: &ModelConfig) -> ParameterSet {
    init_params(cfg, 0)
        .unwrap()
        .map_values(|_, t| Tensor::zeros(t.shape().to_vec()))
}

pub const TOY: [&str; 8] = [
    "large fries please",
    "two burgers and a coke",
    "a small coke",
    "large burger",
    "fries and a coke please",
    "two small fries",
    "a burger please",
    "large coke and fries",
];
