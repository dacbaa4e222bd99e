use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cwer, wer, ErrorCounts, NBestEntry};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::sentence_nll;
use crate::lm::ParameterSet;
use crate::table::{fmt_real, Csv};
use crate::text::{tokenize, Stopwords, Vocab};

/// Log-linear combination weights and the grids they are tuned over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescoreConfig {
    pub lm_weight: f64,
    pub length_bonus: f64,
    pub lambda_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.mu_grid.is_empty() {
            return Err(Error::Config("rescoring grids must be non-empty".into()));
        }
        let all = self
            .lambda_grid
            .iter()
            .chain(&self.mu_grid)
            .chain([&self.lm_weight, &self.length_bonus]);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::Config("rescoring weights must be finite".into()));
        }
        if self.lm_weight < 0.0 || self.lambda_grid.iter().any(|&l| l < 0.0) {
            return Err(Error::Config("lm weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Total log probability of `text` (words and EOS) under the model.
pub fn lm_logprob(params: &ParameterSet, prompt: Option<&Tensor>, vocab: &Vocab, text: &str) -> Result<f64> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Input("cannot score empty text".into()));
    }
    Ok(-sentence_nll(params, prompt, &vocab.encode(&tokens))?.nll_sum)
}

/// `am + λ·lm + μ·tokens`
pub fn combined_score(am: f64, lm: f64, lambda: f64, mu: f64, token_count: usize) -> f64 {
    am + lambda * lm + mu * token_count as f64
}

/// Acoustic and language-model scores of one hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HypScore {
    pub am: f64,
    pub lm: f64,
    pub tokens: usize,
}

/// Index of the highest combined score; ties go to the lowest index.
pub fn select_from_scores(scores: &[HypScore], lambda: f64, mu: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.iter().enumerate() {
        let c = combined_score(s.am, s.lm, lambda, mu, s.tokens);
        if c > best_score {
            best = i;
            best_score = c;
        }
    }
    best
}

pub fn score_entry(
    entry: &NBestEntry,
    params: &ParameterSet,
    prompt: Option<&Tensor>,
    vocab: &Vocab,
) -> Result<Vec<HypScore>> {
    entry.validate()?;
    entry
        .hyps
        .iter()
        .map(|h| {
            Ok(HypScore {
                am: h.am,
                lm: lm_logprob(params, prompt, vocab, &h.text)?,
                tokens: tokenize(&h.text).len(),
            })
        })
        .collect()
}

/// Scores of every hypothesis of every utterance, computed in parallel.
pub fn score_nbest(
    set: &[NBestEntry],
    params: &ParameterSet,
    prompt: Option<&Tensor>,
    vocab: &Vocab,
) -> Result<Vec<Vec<HypScore>>> {
    set.par_iter().map(|e| score_entry(e, params, prompt, vocab)).collect()
}

pub fn select_best(
    entry: &NBestEntry,
    params: &ParameterSet,
    prompt: Option<&Tensor>,
    vocab: &Vocab,
    config: &RescoreConfig,
) -> Result<usize> {
    let scores = score_entry(entry, params, prompt, vocab)?;
    Ok(select_from_scores(&scores, config.lm_weight, config.length_bonus))
}

/// Summed error counts of one set of choices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemErrors {
    pub cwer: ErrorCounts,
    pub wer: ErrorCounts,
}

impl SystemErrors {
    pub fn cwer_rate(&self) -> f64 {
        self.cwer.rate()
    }

    pub fn wer_rate(&self) -> f64 {
        self.wer.rate()
    }
}

fn errors_for(set: &[NBestEntry], choices: &[usize], stopwords: &Stopwords) -> Result<SystemErrors> {
    let mut total = SystemErrors::default();
    for (e, &c) in set.iter().zip(choices) {
        let r = tokenize(&e.reference);
        let h = tokenize(&e.hyps[c].text);
        total.cwer += cwer(&r, &h, stopwords)?;
        total.wer += wer(&r, &h)?;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescoreReport {
    pub lambda: f64,
    pub mu: f64,
    pub system: SystemErrors,
    /// Acoustic scores alone (λ = 0, μ = 0).
    pub baseline: SystemErrors,
    pub choices: Vec<usize>,
}

impl RescoreReport {
    /// `(baseline − system) / baseline` on CWER; `None` when the baseline
    /// makes no errors.
    pub fn relative_improvement(&self) -> Option<f64> {
        let b = self.baseline.cwer_rate();
        (b > 0.0).then(|| (b - self.system.cwer_rate()) / b)
    }
}

/// Corpus-level rescoring outcome over precomputed scores.
pub fn evaluate_scored(
    set: &[NBestEntry],
    scores: &[Vec<HypScore>],
    lambda: f64,
    mu: f64,
    stopwords: &Stopwords,
) -> Result<RescoreReport> {
    if set.is_empty() {
        return Err(Error::Input("n-best set is empty".into()));
    }
    let choices: Vec<usize> = scores.iter().map(|s| select_from_scores(s, lambda, mu)).collect();
    let baseline: Vec<usize> = scores.iter().map(|s| select_from_scores(s, 0.0, 0.0)).collect();
    Ok(RescoreReport {
        lambda,
        mu,
        system: errors_for(set, &choices, stopwords)?,
        baseline: errors_for(set, &baseline, stopwords)?,
        choices,
    })
}

pub fn evaluate_rescoring(
    set: &[NBestEntry],
    params: &ParameterSet,
    prompt: Option<&Tensor>,
    vocab: &Vocab,
    lambda: f64,
    mu: f64,
    stopwords: &Stopwords,
) -> Result<RescoreReport> {
    let scores = score_nbest(set, params, prompt, vocab)?;
    evaluate_scored(set, &scores, lambda, mu, stopwords)
}

fn sorted_unique(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Grid point with the lowest dev CWER over precomputed scores; ties go to
/// the smaller λ, then the smaller μ.
pub fn tune_scored(
    set: &[NBestEntry],
    scores: &[Vec<HypScore>],
    config: &RescoreConfig,
    stopwords: &Stopwords,
) -> Result<(f64, f64)> {
    config.validate()?;
    let mut best: Option<(f64, f64, f64)> = None;
    for &l in &sorted_unique(&config.lambda_grid) {
        for &m in &sorted_unique(&config.mu_grid) {
            let rate = evaluate_scored(set, scores, l, m, stopwords)?.system.cwer_rate();
            if best.is_none_or(|(r, _, _)| rate < r) {
                best = Some((rate, l, m));
            }
        }
    }
    let (_, l, m) = best.expect("grids are non-empty");
    Ok((l, m))
}

pub fn tune_weights(
    dev: &[NBestEntry],
    params: &ParameterSet,
    prompt: Option<&Tensor>,
    vocab: &Vocab,
    config: &RescoreConfig,
    stopwords: &Stopwords,
) -> Result<(f64, f64)> {
    let scores = score_nbest(dev, params, prompt, vocab)?;
    tune_scored(dev, &scores, config, stopwords)
}

/// One line of the rescoring report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescoreRow {
    pub system: String,
    pub lambda: f64,
    pub mu: f64,
    pub cwer: f64,
    pub wer: f64,
    pub rel_improvement_pct: Option<f64>,
}

impl RescoreRow {
    pub fn from_report(system: &str, report: &RescoreReport) -> Self {
        Self {
            system: system.to_string(),
            lambda: report.lambda,
            mu: report.mu,
            cwer: report.system.cwer_rate(),
            wer: report.system.wer_rate(),
            rel_improvement_pct: report.relative_improvement().map(|r| 100.0 * r),
        }
    }

    /// The acoustic-only selection of `report`.
    pub fn baseline_of(report: &RescoreReport) -> Self {
        Self {
            system: "am_only".into(),
            lambda: 0.0,
            mu: 0.0,
            cwer: report.baseline.cwer_rate(),
            wer: report.baseline.wer_rate(),
            rel_improvement_pct: (report.baseline.cwer_rate() > 0.0).then_some(0.0),
        }
    }
}

pub const RESCORE_COLUMNS: [&str; 6] = ["system", "lambda", "mu", "cwer", "wer", "rel_improvement_pct"];

pub fn rescore_csv(rows: &[RescoreRow]) -> String {
    let mut csv = Csv::new(&RESCORE_COLUMNS);
    for r in rows {
        csv.row([
            r.system.clone(),
            fmt_real(r.lambda),
            fmt_real(r.mu),
            fmt_real(r.cwer),
            fmt_real(r.wer),
            r.rel_improvement_pct.map(fmt_real).unwrap_or_default(),
        ]);
    }
    csv.finish()
}
