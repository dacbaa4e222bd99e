//! GPT-2 style pre-norm decoder with an optional learned prefix injected in
//! front of the token embeddings.

mod checkpoint;
mod config;
mod model;
mod params;

pub(crate) use checkpoint::Reader;
pub use checkpoint::{
    checkpoint_bytes, digest_hex, load_checkpoint, parse_checkpoint, save_checkpoint, LoadedCheckpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::ModelConfig;
pub use model::{
    build_logits, context_loss_and_grads, forward, loss_and_grads, sentence_targets, BoundParams, ForwardOutput,
    LossAndGrads, Selector, LN_EPS,
};
pub use params::{count_params, init_params, ParamCount, ParameterSet};
