use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, init_prompt, AdamState, AdaptStrategy, Hyperparams, SoftPrompt};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::corpus_perplexity;
use crate::lm::{count_params, loss_and_grads, LossAndGrads, ParameterSet, Selector};
use crate::rng;
use crate::text::{batch_iter, TokenizedCorpus, BOS_ID, EOS_ID};

/// Result of adapting a base model.
#[derive(Clone, Debug)]
pub enum Adapted {
    Base,
    FineTuned {
        params: ParameterSet,
        base_model_hash: String,
    },
    Prompt(SoftPrompt),
}

impl Adapted {
    /// Parameters to score with: the fine-tuned set, or the base otherwise.
    pub fn params<'a>(&'a self, base: &'a ParameterSet) -> &'a ParameterSet {
        match self {
            Adapted::FineTuned { params, .. } => params,
            _ => base,
        }
    }

    pub fn prompt(&self) -> Option<&Tensor> {
        match self {
            Adapted::Prompt(p) => Some(&p.matrix),
            _ => None,
        }
    }

    pub fn check_compatible(&self, base_hash: &str) -> Result<()> {
        let found = match self {
            Adapted::Base => return Ok(()),
            Adapted::FineTuned { base_model_hash, .. } => base_model_hash,
            Adapted::Prompt(p) => &p.base_model_hash,
        };
        if found == base_hash {
            Ok(())
        } else {
            Err(Error::Compatibility {
                expected: base_hash.to_string(),
                found: found.clone(),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub strategy: String,
    pub trainable_param_count: usize,
    pub total_param_count: usize,
    pub trainable_fraction: f64,
    pub epochs_run: usize,
    pub optimizer_steps: u64,
    pub wall_time_seconds: f64,
    pub best_dev_perplexity: f64,
    /// Dev perplexity after each epoch.
    pub dev_trace: Vec<f64>,
    /// Trainable values plus the two Adam moments for each of them.
    pub optimizer_memory_values: usize,
}

fn wrap(words: &[usize]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(words.len() + 2);
    ids.push(BOS_ID);
    ids.extend_from_slice(words);
    ids.push(EOS_ID);
    ids
}

/// Per-token batch gradient: each sentence's mean-loss gradient weighted by
/// its predicted-token count, summed in batch order, divided by the total.
fn token_weighted(grads: &[(&[f32], usize)], len: usize) -> Vec<f32> {
    let total: usize = grads.iter().map(|(_, n)| n).sum();
    let mut acc = vec![0f64; len];
    for (g, n) in grads {
        let w = *n as f64;
        for (a, &x) in acc.iter_mut().zip(g.iter()) {
            *a += w * f64::from(x);
        }
    }
    acc.into_iter().map(|a| (a / total as f64) as f32).collect()
}

fn batch_losses(
    params: &ParameterSet,
    prompt: Option<&Tensor>,
    batch: &[&[usize]],
    selector: &Selector,
) -> Result<Vec<LossAndGrads>> {
    let out: Vec<LossAndGrads> = batch
        .par_iter()
        .map(|s| loss_and_grads(params, &wrap(s), prompt, selector))
        .collect::<Result<_>>()?;
    if out.iter().any(|r| !r.loss.is_finite()) {
        return Err(Error::NonFinite("training loss"));
    }
    Ok(out)
}

/// Adapts `base` to the domain of `train`. Prompt tuning only ever reads
/// the base; fine tuning works on a copy. The returned artifact is the one
/// with the lowest dev perplexity over the epochs run.
pub fn train(
    base: &ParameterSet,
    base_hash: &str,
    strategy: &AdaptStrategy,
    train: &TokenizedCorpus,
    dev: &TokenizedCorpus,
    hyper: &Hyperparams,
) -> Result<(Adapted, TrainReport)> {
    hyper.validate()?;
    let cfg = *base.config();
    let trainable = strategy.trainable_params(&cfg);
    let mut report = TrainReport {
        strategy: strategy.label(),
        trainable_param_count: trainable,
        total_param_count: count_params(&cfg).total,
        trainable_fraction: strategy.trainable_fraction(&cfg),
        epochs_run: 0,
        optimizer_steps: 0,
        wall_time_seconds: 0.0,
        best_dev_perplexity: f64::NAN,
        dev_trace: Vec::new(),
        optimizer_memory_values: 3 * trainable,
    };
    let label = strategy.label();

    let mut prompt = match strategy {
        AdaptStrategy::None => {
            report.best_dev_perplexity = corpus_perplexity(base, None, dev, &label)?.perplexity;
            return Ok((Adapted::Base, report));
        }
        _ if train.is_empty() => return Err(Error::Input("training corpus is empty".into())),
        AdaptStrategy::PromptTune { prompt_size, init } => {
            let p = init_prompt(*init, *prompt_size, base, base_hash, train, hyper.seed)?;
            if *prompt_size == 0 {
                // Nothing is trainable, so the base scores are final.
                report.best_dev_perplexity = corpus_perplexity(base, Some(&p.matrix), dev, &label)?.perplexity;
                return Ok((Adapted::Prompt(p), report));
            }
            Some(p)
        }
        AdaptStrategy::FineTune => None,
    };
    let mut params = base.clone();
    let selector = if prompt.is_some() {
        Selector::prefix_only()
    } else {
        Selector::all_params()
    };
    let adam = hyper.adam();
    let mut prompt_state = prompt.as_ref().map(|p| AdamState::new(p.matrix.numel()));
    let mut param_state: BTreeMap<String, AdamState> = if prompt.is_none() {
        params
            .iter()
            .map(|(n, t)| (n.to_string(), AdamState::new(t.numel())))
            .collect()
    } else {
        BTreeMap::new()
    };

    let started = Instant::now();
    let mut best: Option<(f64, Adapted)> = None;
    let mut stale = 0;
    for epoch in 0..hyper.max_epochs {
        let epoch_seed = rng::derive_seed(hyper.seed, &format!("epoch-{epoch}"));
        for batch in batch_iter(train, hyper.batch_size, epoch_seed) {
            report.optimizer_steps += 1;
            let step = report.optimizer_steps;
            let results = batch_losses(&params, prompt.as_ref().map(|p| &p.matrix), &batch, &selector)?;
            if let (Some(p), Some(state)) = (prompt.as_mut(), prompt_state.as_mut()) {
                let grads: Vec<(&[f32], usize)> = results
                    .iter()
                    .map(|r| (r.prefix_grad.as_deref().expect("prefix selected"), r.token_count))
                    .collect();
                let g = token_weighted(&grads, p.matrix.numel());
                adam_step(p.matrix.data_mut(), &g, state, &adam, step)?;
            } else {
                for (name, state) in param_state.iter_mut() {
                    let grads: Vec<(&[f32], usize)> = results
                        .iter()
                        .map(|r| (r.param_grads[name].as_slice(), r.token_count))
                        .collect();
                    let t = params.get_mut(name).expect("same names");
                    let g = token_weighted(&grads, t.numel());
                    adam_step(t.data_mut(), &g, state, &adam, step)?;
                }
            }
        }
        report.epochs_run += 1;
        let prompt_matrix = prompt.as_ref().map(|p| &p.matrix);
        let ppl = corpus_perplexity(&params, prompt_matrix, dev, &label)?.perplexity;
        report.dev_trace.push(ppl);
        if best.as_ref().is_none_or(|(b, _)| ppl < *b) {
            let artifact = match &prompt {
                Some(p) => Adapted::Prompt(p.clone()),
                None => Adapted::FineTuned {
                    params: params.clone(),
                    base_model_hash: base_hash.to_string(),
                },
            };
            best = Some((ppl, artifact));
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    report.wall_time_seconds = started.elapsed().as_secs_f64();
    let (ppl, artifact) = best.expect("at least one epoch runs");
    report.best_dev_perplexity = ppl;
    Ok((artifact, report))
}
