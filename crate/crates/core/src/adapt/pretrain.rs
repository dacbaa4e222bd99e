use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamState, Hyperparams};
use crate::error::{Error, Result};
use crate::lm::{context_loss_and_grads, init_params, LossAndGrads, ModelConfig, ParameterSet, Selector};
use crate::rng;
use crate::text::{TokenizedCorpus, BOS_ID, EOS_ID};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub hyper: Hyperparams,
    /// Each training sentence is preceded by up to this many tokens of other
    /// sentences from the same domain, as in running text.
    pub context_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs_run: usize,
    pub optimizer_steps: u64,
    /// Token-weighted mean training loss per epoch.
    pub train_loss_trace: Vec<f64>,
    pub wall_time_seconds: f64,
}

fn wrap(words: &[usize]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(words.len() + 2);
    ids.push(BOS_ID);
    ids.extend_from_slice(words);
    ids.push(EOS_ID);
    ids
}

/// The last `len` tokens of a run of randomly drawn same-domain sentences.
fn sample_context<R: Rng>(rng: &mut R, corpus: &TokenizedCorpus, len: usize) -> Vec<usize> {
    let mut ctx = Vec::new();
    while ctx.len() < len {
        let s = &corpus.sentences()[rng.random_range(0..corpus.len())];
        let mut next = wrap(s);
        next.extend_from_slice(&ctx);
        ctx = next;
    }
    ctx.split_off(ctx.len() - len)
}

/// Trains a fresh model on the union of `domains`.
pub fn pretrain(
    model: &ModelConfig,
    domains: &[TokenizedCorpus],
    cfg: &PretrainConfig,
) -> Result<(ParameterSet, PretrainReport)> {
    cfg.hyper.validate()?;
    model.validate()?;
    let longest = domains.iter().map(TokenizedCorpus::max_len).max().unwrap_or(0);
    if domains.iter().all(TokenizedCorpus::is_empty) {
        return Err(Error::Input("pretraining corpus is empty".into()));
    }
    if cfg.context_max + longest + 2 > model.max_positions {
        return Err(Error::Capacity {
            needed: cfg.context_max + longest + 2,
            capacity: model.max_positions,
        });
    }
    let hyper = &cfg.hyper;
    let mut params = init_params(model, rng::derive_seed(hyper.seed, "pretrain-init"))?;
    let mut state: BTreeMap<String, AdamState> = params
        .iter()
        .map(|(n, t)| (n.to_string(), AdamState::new(t.numel())))
        .collect();
    let adam = hyper.adam();
    let selector = Selector::all_params();
    let items: Vec<(usize, usize)> = domains
        .iter()
        .enumerate()
        .flat_map(|(k, c)| (0..c.len()).map(move |i| (k, i)))
        .collect();

    let started = Instant::now();
    let mut report = PretrainReport {
        epochs_run: 0,
        optimizer_steps: 0,
        train_loss_trace: Vec::new(),
        wall_time_seconds: 0.0,
    };
    for epoch in 0..hyper.max_epochs {
        let mut rng = rng::seeded(rng::derive_seed(hyper.seed, &format!("pretrain-epoch-{epoch}")));
        let mut order = items.clone();
        order.shuffle(&mut rng);
        let examples: Vec<(Vec<usize>, Vec<usize>)> = order
            .iter()
            .map(|&(k, i)| {
                let len = rng.random_range(0..=cfg.context_max);
                let ctx = sample_context(&mut rng, &domains[k], len);
                (ctx, wrap(&domains[k].sentences()[i]))
            })
            .collect();

        let (mut nll, mut tokens) = (0f64, 0usize);
        for batch in examples.chunks(hyper.batch_size) {
            report.optimizer_steps += 1;
            let results: Vec<LossAndGrads> = batch
                .par_iter()
                .map(|(ctx, ids)| context_loss_and_grads(&params, ctx, ids, &selector))
                .collect::<Result<_>>()?;
            if results.iter().any(|r| !r.loss.is_finite()) {
                return Err(Error::NonFinite("pretraining loss"));
            }
            let total: usize = results.iter().map(|r| r.token_count).sum();
            for r in &results {
                nll += f64::from(r.loss) * r.token_count as f64;
            }
            tokens += total;
            for (name, st) in state.iter_mut() {
                let t = params.get_mut(name).expect("same names");
                let mut acc = vec![0f64; t.numel()];
                for r in &results {
                    let w = r.token_count as f64;
                    for (a, &g) in acc.iter_mut().zip(&r.param_grads[name]) {
                        *a += w * f64::from(g);
                    }
                }
                let g: Vec<f32> = acc.into_iter().map(|a| (a / total as f64) as f32).collect();
                adam_step(t.data_mut(), &g, st, &adam, report.optimizer_steps)?;
            }
        }
        report.epochs_run += 1;
        report.train_loss_trace.push(nll / tokens as f64);
    }
    report.wall_time_seconds = started.elapsed().as_secs_f64();
    Ok((params, report))
}
