//! Soft-prompt and fine-tuning adaptation of a frozen or trainable base.

mod adam;
mod pretrain;
mod prompt;
mod strategy;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use pretrain::{pretrain, PretrainConfig, PretrainReport};
pub use prompt::{
    init_prompt, load_prompt, parse_prompt, prompt_bytes, save_prompt, HashCheck, InitMode, LoadedPrompt, SoftPrompt,
    PROMPT_MAGIC, PROMPT_VERSION,
};
pub use strategy::{trainable_fraction, AdaptStrategy, Hyperparams};
pub use train::{train, Adapted, TrainReport};
