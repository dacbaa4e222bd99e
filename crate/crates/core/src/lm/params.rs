use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng;

const INIT_STD: f64 = 0.02;

/// Every weight of the base model, keyed by name. Names sort
/// lexicographically in checkpoint order. The output head is tied to `wte`
/// and has no entry of its own.
#[derive(Clone, Debug)]
pub struct ParameterSet<T: Scalar = f32> {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Weight,
    Bias,
    Gain,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Kind)> {
    let (d, f) = (cfg.d_model, cfg.d_ff);
    let mut out = vec![
        ("wte".to_string(), vec![cfg.vocab_size, d], Kind::Weight),
        ("wpe".to_string(), vec![cfg.max_positions, d], Kind::Weight),
    ];
    for i in 0..cfg.n_layers {
        let p = |s: &str| format!("h.{i}.{s}");
        out.extend([
            (p("ln_1.gamma"), vec![d], Kind::Gain),
            (p("ln_1.beta"), vec![d], Kind::Bias),
            (p("attn.qkv.weight"), vec![d, 3 * d], Kind::Weight),
            (p("attn.qkv.bias"), vec![3 * d], Kind::Bias),
            (p("attn.proj.weight"), vec![d, d], Kind::Weight),
            (p("attn.proj.bias"), vec![d], Kind::Bias),
            (p("ln_2.gamma"), vec![d], Kind::Gain),
            (p("ln_2.beta"), vec![d], Kind::Bias),
            (p("mlp.fc.weight"), vec![d, f], Kind::Weight),
            (p("mlp.fc.bias"), vec![f], Kind::Bias),
            (p("mlp.proj.weight"), vec![f, d], Kind::Weight),
            (p("mlp.proj.bias"), vec![d], Kind::Bias),
        ]);
    }
    out.push(("ln_f.gamma".to_string(), vec![d], Kind::Gain));
    out.push(("ln_f.beta".to_string(), vec![d], Kind::Bias));
    out
}

/// Closed-form parameter count with its per-tensor breakdown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub breakdown: Vec<(String, usize)>,
}

pub fn count_params(config: &ModelConfig) -> ParamCount {
    let (v, d, f, l) = (config.vocab_size, config.d_model, config.d_ff, config.n_layers);
    let per_layer = [
        ("ln_1", 2 * d),
        ("attn.qkv", d * 3 * d + 3 * d),
        ("attn.proj", d * d + d),
        ("ln_2", 2 * d),
        ("mlp.fc", d * f + f),
        ("mlp.proj", f * d + d),
    ];
    let mut breakdown = vec![
        ("wte".to_string(), v * d),
        ("wpe".to_string(), config.max_positions * d),
    ];
    for (name, n) in per_layer {
        breakdown.push((format!("h.*.{name}"), l * n));
    }
    breakdown.push(("ln_f".to_string(), 2 * d));
    breakdown.push(("lm_head (tied to wte)".to_string(), 0));
    let total = breakdown.iter().map(|(_, n)| n).sum();
    ParamCount { total, breakdown }
}

/// Fresh base-model weights: `Normal(0, 0.02)` for matrices and embedding
/// tables, zero biases, unit layer-norm gains. Tensors are drawn from one
/// stream in name order, so a seed fixes every value.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParameterSet<f32>> {
    config.validate()?;
    let mut specs = layout(config);
    specs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut r = rng::seeded(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut tensors = BTreeMap::new();
    for (name, shape, kind) in specs {
        let n = shape.iter().product();
        let data: Vec<f32> = match kind {
            Kind::Weight => (0..n).map(|_| normal.sample(&mut r) as f32).collect(),
            Kind::Bias => vec![0.0; n],
            Kind::Gain => vec![1.0; n],
        };
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    Ok(ParameterSet {
        config: *config,
        tensors,
    })
}

impl<T: Scalar> ParameterSet<T> {
    /// Assembles a set from named tensors, checking names and shapes
    /// against `config`.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != tensors.len() {
            return Err(Error::Input(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &expected {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Shape {
                        op: "parameter",
                        lhs: shape.clone(),
                        rhs: t.shape().to_vec(),
                    })
                }
                None => return Err(Error::Input(format!("missing tensor {name}"))),
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// `(name, tensor)` pairs in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            config: self.config,
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Same shapes, every value replaced.
    pub fn map_values(&self, mut f: impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        ParameterSet {
            config: self.config,
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), f(k, v))).collect(),
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }
}
