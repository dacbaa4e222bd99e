//! N-best rescoring with a (possibly prompt-adapted) language model, word
//! and content-word error rates, and synthetic n-best generation.

mod metrics;
mod nbest;
mod score;

pub use metrics::{cwer, edit_counts, wer, ErrorCounts};
pub use nbest::{
    nbest_to_jsonl, parse_nbest, read_nbest, synth_nbest, write_nbest, ConfusionTable, Hypothesis, NBestEntry,
    BUILTIN_CONFUSIONS,
};
pub use score::{
    combined_score, evaluate_rescoring, evaluate_scored, lm_logprob, rescore_csv, score_entry, score_nbest,
    select_best, select_from_scores, tune_scored, tune_weights, HypScore, RescoreConfig, RescoreReport, RescoreRow,
    SystemErrors, RESCORE_COLUMNS,
};
