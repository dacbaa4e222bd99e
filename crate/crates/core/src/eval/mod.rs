//! Sentence scoring, corpus perplexity, and strategy comparison tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptStrategy, Adapted, TrainReport};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::lm::{forward, ParameterSet};
use crate::table::{fmt_real, Csv};
use crate::text::{TokenizedCorpus, BOS_ID, EOS_ID};

/// Negative log-likelihood of one sentence's predicted tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SentenceNll {
    pub nll_sum: f64,
    /// Words plus EOS.
    pub token_count: usize,
}

/// `−Σ log p` over `w1..wT, EOS` given the prompt, BOS, and the preceding
/// words. `words` excludes BOS/EOS.
pub fn sentence_nll(params: &ParameterSet, prompt: Option<&Tensor>, words: &[usize]) -> Result<SentenceNll> {
    if words.is_empty() {
        return Err(Error::Input("cannot score an empty sentence".into()));
    }
    let mut ids = Vec::with_capacity(words.len() + 2);
    ids.push(BOS_ID);
    ids.extend_from_slice(words);
    ids.push(EOS_ID);
    let out = forward(params, &ids, prompt)?;
    let p = out.prefix_len;
    let mut nll = 0.0;
    for t in 0..ids.len() - 1 {
        let row = out.logits.row(p + t);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(f64::from(x)));
        let sum: f64 = row.iter().map(|&x| (f64::from(x) - max).exp()).sum();
        let lse = max + sum.ln();
        nll += lse - f64::from(row[ids[t + 1]]);
    }
    Ok(SentenceNll {
        nll_sum: nll,
        token_count: ids.len() - 1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResult {
    pub corpus: String,
    pub strategy: String,
    pub token_count: usize,
    pub total_nll: f64,
    pub perplexity: f64,
}

/// Token-weighted perplexity `exp(Σ nll / Σ tokens)`. Sentences are scored
/// in parallel and summed in corpus order.
pub fn corpus_perplexity(
    params: &ParameterSet,
    prompt: Option<&Tensor>,
    corpus: &TokenizedCorpus,
    strategy: &str,
) -> Result<PerplexityResult> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot compute perplexity of an empty corpus".into()));
    }
    let scores: Vec<SentenceNll> = corpus
        .sentences()
        .par_iter()
        .map(|s| sentence_nll(params, prompt, s))
        .collect::<Result<_>>()?;
    let total_nll: f64 = scores.iter().map(|s| s.nll_sum).sum();
    let token_count: usize = scores.iter().map(|s| s.token_count).sum();
    Ok(PerplexityResult {
        corpus: format!("{}/{}", corpus.domain(), corpus.split()),
        strategy: strategy.to_string(),
        token_count,
        total_nll,
        perplexity: (total_nll / token_count as f64).exp(),
    })
}

/// One adapted system to compare.
#[derive(Clone, Debug)]
pub struct StrategyRun {
    pub strategy: AdaptStrategy,
    pub artifact: Adapted,
    pub report: Option<TrainReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub strategy: AdaptStrategy,
    pub trainable_params: usize,
    pub trainable_fraction: f64,
    pub wall_time_s: Option<f64>,
    pub dev_ppl: Option<f64>,
    pub test: PerplexityResult,
}

/// Scores every run on `test` and orders the rows: none, prompt tuning by
/// ascending prompt size, fine tuning.
pub fn compare_strategies(
    base: &ParameterSet,
    base_hash: &str,
    runs: &[StrategyRun],
    test: &TokenizedCorpus,
) -> Result<Vec<ComparisonRow>> {
    let mut order: Vec<&StrategyRun> = runs.iter().collect();
    order.sort_by_key(|r| r.strategy.order_key());
    order
        .into_iter()
        .map(|run| {
            run.artifact.check_compatible(base_hash)?;
            let label = run.strategy.label();
            let test = corpus_perplexity(run.artifact.params(base), run.artifact.prompt(), test, &label)?;
            let trainable = run.strategy.trainable_params(base.config());
            Ok(ComparisonRow {
                strategy: run.strategy.clone(),
                trainable_params: trainable,
                trainable_fraction: run.strategy.trainable_fraction(base.config()),
                wall_time_s: run.report.as_ref().map(|r| r.wall_time_seconds),
                dev_ppl: run.report.as_ref().map(|r| r.best_dev_perplexity),
                test,
            })
        })
        .collect()
}

pub const COMPARISON_COLUMNS: [&str; 7] = [
    "strategy",
    "prompt_size",
    "trainable_params",
    "trainable_fraction",
    "wall_time_s",
    "dev_ppl",
    "test_ppl",
];

/// Cells of one comparison row in [`COMPARISON_COLUMNS`] order. Wall time
/// is left blank unless `with_wall_time`, since it varies between runs.
pub fn comparison_cells(row: &ComparisonRow, with_wall_time: bool) -> Vec<String> {
    let opt = |x: Option<f64>| x.map(fmt_real).unwrap_or_default();
    vec![
        row.strategy.kind().to_string(),
        row.strategy.prompt_size().map(|p| p.to_string()).unwrap_or_default(),
        row.trainable_params.to_string(),
        fmt_real(row.trainable_fraction),
        if with_wall_time {
            opt(row.wall_time_s)
        } else {
            String::new()
        },
        opt(row.dev_ppl),
        fmt_real(row.test.perplexity),
    ]
}

pub fn comparison_csv(rows: &[ComparisonRow], with_wall_time: bool) -> String {
    let mut csv = Csv::new(&COMPARISON_COLUMNS);
    for row in rows {
        csv.row(comparison_cells(row, with_wall_time));
    }
    csv.finish()
}
