use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ptune_core::adapt::{Hyperparams, InitMode};
use ptune_core::lm::ModelConfig;
use ptune_core::rescore::RescoreConfig;
use serde::{Deserialize, Serialize};

/// Architecture minus the vocabulary size, which comes from the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
}

impl ModelShape {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_positions: self.max_positions,
        }
    }
}

/// Where a domain's sentences come from: a shipped or file grammar
/// sampled `sentences` times, or a text file with one sentence per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grammar: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Mixed-domain corpus for the generic base model.
    pub pretrain: Vec<SourceSpec>,
    /// Domain corpus that is split into train/dev/test for adaptation.
    pub target: SourceSpec,
    pub split_fracs: [f64; 3],
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub context_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    pub prompt_sizes: Vec<usize>,
    pub prompt_init: InitMode,
    pub prompt_tuning: Hyperparams,
    pub fine_tuning: Hyperparams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescoreSettings {
    /// Shipped confusion table name or a JSON file path.
    pub confusion: String,
    pub n_hyps: usize,
    pub noise_sd: f64,
    pub test_utterances: usize,
    pub dev_utterances: usize,
    /// Prompt sizes whose prompt-tuned LMs are compared with the base LM.
    pub prompt_sizes: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    /// Optional stopword file; the built-in list otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
}

impl RescoreSettings {
    pub fn grids(&self) -> RescoreConfig {
        RescoreConfig {
            lm_weight: 0.0,
            length_bonus: 0.0,
            lambda_grid: self.lambda_grid.clone(),
            mu_grid: self.mu_grid.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; every random stream is derived from it by label.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelShape,
    pub data: DataConfig,
    pub pretrain: PretrainSettings,
    pub adaptation: AdaptationConfig,
    pub rescore: RescoreSettings,
    /// Write measured wall times into the ablation table. Off keeps the
    /// table byte-identical between runs; timings.csv always has them.
    pub record_wall_time: bool,
    pub strict_hash: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes corpus, grammar, confusion and stopword file paths relative to
    /// `dir`. Shipped grammar and confusion names are left alone.
    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        let fix_name = |name: &mut String| {
            if name.ends_with(".json") && Path::new(name.as_str()).is_relative() {
                *name = dir.join(name.as_str()).to_string_lossy().into_owned();
            }
        };
        for s in self.data.pretrain.iter_mut().chain([&mut self.data.target]) {
            if let Some(p) = s.path.as_mut() {
                fix(p);
            }
            if let Some(g) = s.grammar.as_mut() {
                fix_name(g);
            }
        }
        fix_name(&mut self.rescore.confusion);
        if let Some(p) = self.rescore.stopwords.as_mut() {
            fix(p);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let m = &self.model;
        if m.n_layers == 0 || m.d_model == 0 || m.n_heads == 0 || m.d_ff == 0 || m.max_positions == 0 {
            p.push("model dimensions must be at least 1".to_string());
        } else if !m.d_model.is_multiple_of(m.n_heads) {
            p.push(format!(
                "model.d_model {} is not divisible by n_heads {}",
                m.d_model, m.n_heads
            ));
        }
        let d = &self.data;
        if d.pretrain.is_empty() {
            p.push("data.pretrain lists no sources".into());
        }
        for (i, s) in d.pretrain.iter().chain([&d.target]).enumerate() {
            match (&s.grammar, &s.path) {
                (Some(_), None) if s.sentences.is_none() => p.push(format!(
                    "data source {i} ({}) names a grammar but no sentence count",
                    s.domain
                )),
                (Some(_), Some(_)) | (None, None) => p.push(format!(
                    "data source {i} ({}) needs exactly one of grammar or path",
                    s.domain
                )),
                _ => {}
            }
        }
        let fracs = d.split_fracs;
        if fracs.iter().any(|f| !f.is_finite() || *f < 0.0) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            p.push(format!("data.split_fracs {fracs:?} must be non-negative and sum to 1"));
        }
        if d.vocab_max_size < 5 {
            p.push("data.vocab_max_size must be at least 5".into());
        }
        let pt = &self.pretrain;
        if !(pt.learning_rate.is_finite() && pt.learning_rate > 0.0) || pt.batch_size == 0 || pt.epochs == 0 {
            p.push("pretrain learning_rate, batch_size and epochs must be positive".into());
        }
        let a = &self.adaptation;
        if a.prompt_sizes.windows(2).any(|w| w[0] >= w[1]) {
            p.push(format!(
                "adaptation.prompt_sizes {:?} must be strictly increasing",
                a.prompt_sizes
            ));
        }
        for (name, h) in [("prompt_tuning", &a.prompt_tuning), ("fine_tuning", &a.fine_tuning)] {
            if let Err(e) = h.validate() {
                p.push(format!("adaptation.{name}: {e}"));
            }
        }
        let r = &self.rescore;
        if r.n_hyps < 2 {
            p.push("rescore.n_hyps must be at least 2".into());
        }
        if !(r.noise_sd.is_finite() && r.noise_sd >= 0.0) {
            p.push("rescore.noise_sd must be a non-negative number".into());
        }
        if let Err(e) = r.grids().validate() {
            p.push(format!("rescore grids: {e}"));
        }
        if r.test_utterances == 0 || r.dev_utterances == 0 {
            p.push("rescore utterance counts must be positive".into());
        }
        for size in &r.prompt_sizes {
            if !a.prompt_sizes.contains(size) {
                p.push(format!(
                    "rescore prompt size {size} is not among adaptation.prompt_sizes"
                ));
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  - {}", problems.join("\n  - "))
        }
    }
}
