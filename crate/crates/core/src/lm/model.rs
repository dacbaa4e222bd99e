use std::collections::{BTreeMap, BTreeSet};

use super::{ModelConfig, ParameterSet};
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// Which tensors receive gradients in [`loss_and_grads`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Selector {
    prefix: bool,
    all_params: bool,
    params: BTreeSet<String>,
}

impl Selector {
    pub fn nothing() -> Self {
        Self::default()
    }

    pub fn prefix_only() -> Self {
        Self {
            prefix: true,
            ..Self::default()
        }
    }

    pub fn all_params() -> Self {
        Self {
            all_params: true,
            ..Self::default()
        }
    }

    pub fn everything() -> Self {
        Self {
            prefix: true,
            all_params: true,
            params: BTreeSet::new(),
        }
    }

    pub fn with_param(mut self, name: impl Into<String>) -> Self {
        self.params.insert(name.into());
        self
    }

    pub fn wants_prefix(&self) -> bool {
        self.prefix
    }

    pub fn wants_param(&self, name: &str) -> bool {
        self.all_params || self.params.contains(name)
    }
}

struct LayerVars {
    ln1_gamma: Var,
    ln1_beta: Var,
    qkv_weight: Var,
    qkv_bias: Var,
    attn_proj_weight: Var,
    attn_proj_bias: Var,
    ln2_gamma: Var,
    ln2_beta: Var,
    fc_weight: Var,
    fc_bias: Var,
    mlp_proj_weight: Var,
    mlp_proj_bias: Var,
}

/// Parameter tensors recorded as leaves of one graph.
pub struct BoundParams {
    config: ModelConfig,
    wte: Var,
    wpe: Var,
    layers: Vec<LayerVars>,
    lnf_gamma: Var,
    lnf_beta: Var,
}

impl BoundParams {
    /// Records every tensor of `params` as a leaf; those named by `selector`
    /// are marked as requiring gradients. Returns the name → leaf map too.
    pub fn bind<T: Scalar>(
        g: &mut Graph<T>,
        params: &ParameterSet<T>,
        selector: &Selector,
    ) -> (Self, BTreeMap<String, Var>) {
        let vars: BTreeMap<String, Var> = params
            .iter()
            .map(|(name, t)| (name.to_string(), g.leaf(t.clone(), selector.wants_param(name))))
            .collect();
        let bound = Self::from_lookup(*params.config(), |n| vars[n]);
        (bound, vars)
    }

    /// Builds the binding from leaves the caller already recorded.
    pub fn from_lookup(config: ModelConfig, lookup: impl Fn(&str) -> Var) -> Self {
        let layers = (0..config.n_layers)
            .map(|i| {
                let v = |s: &str| lookup(&format!("h.{i}.{s}"));
                LayerVars {
                    ln1_gamma: v("ln_1.gamma"),
                    ln1_beta: v("ln_1.beta"),
                    qkv_weight: v("attn.qkv.weight"),
                    qkv_bias: v("attn.qkv.bias"),
                    attn_proj_weight: v("attn.proj.weight"),
                    attn_proj_bias: v("attn.proj.bias"),
                    ln2_gamma: v("ln_2.gamma"),
                    ln2_beta: v("ln_2.beta"),
                    fc_weight: v("mlp.fc.weight"),
                    fc_bias: v("mlp.fc.bias"),
                    mlp_proj_weight: v("mlp.proj.weight"),
                    mlp_proj_bias: v("mlp.proj.bias"),
                }
            })
            .collect();
        Self {
            config,
            wte: lookup("wte"),
            wpe: lookup("wpe"),
            layers,
            lnf_gamma: lookup("ln_f.gamma"),
            lnf_beta: lookup("ln_f.beta"),
        }
    }
}

fn attention<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, lv: &LayerVars, x: Var) -> Result<Var> {
    let d = cfg.d_model;
    let hs = cfg.head_dim();
    let qkv = g.matmul(x, lv.qkv_weight)?;
    let qkv = g.add_bias(qkv, lv.qkv_bias)?;
    let scale = T::from_real(1.0 / (hs as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let q = g.slice_cols(qkv, h * hs, hs)?;
        let k = g.slice_cols(qkv, d + h * hs, hs)?;
        let v = g.slice_cols(qkv, 2 * d + h * hs, hs)?;
        let scores = g.matmul_nt(q, k)?;
        let scores = g.scale(scores, scale);
        let scores = g.causal_mask(scores)?;
        let att = g.softmax_rows(scores)?;
        heads.push(g.matmul(att, v)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let out = g.matmul(merged, lv.attn_proj_weight)?;
    g.add_bias(out, lv.attn_proj_bias)
}

fn mlp<T: Scalar>(g: &mut Graph<T>, lv: &LayerVars, x: Var) -> Result<Var> {
    let h = g.matmul(x, lv.fc_weight)?;
    let h = g.add_bias(h, lv.fc_bias)?;
    let h = g.gelu(h);
    let out = g.matmul(h, lv.mlp_proj_weight)?;
    g.add_bias(out, lv.mlp_proj_bias)
}

/// Records the decoder on `g` and returns the `[(P+T) × V]` logits.
///
/// The prefix rows (if any) take positions `0..P`, the tokens positions
/// `P..P+T`, and every position receives its learned position embedding.
/// A prefix with zero rows is treated exactly like no prefix.
pub fn build_logits<T: Scalar>(
    g: &mut Graph<T>,
    bound: &BoundParams,
    ids: &[usize],
    prefix: Option<Var>,
) -> Result<Var> {
    let cfg = bound.config;
    if ids.is_empty() {
        return Err(Error::Input("forward needs at least one token".into()));
    }
    let prefix = prefix.filter(|&p| g.shape(p).first().copied().unwrap_or(0) > 0);
    let prefix_len = match prefix {
        Some(p) => {
            let shape = g.shape(p);
            if shape.len() != 2 || shape[1] != cfg.d_model {
                return Err(Error::Shape {
                    op: "prefix",
                    lhs: shape.to_vec(),
                    rhs: vec![cfg.d_model],
                });
            }
            shape[0]
        }
        None => 0,
    };
    let n = prefix_len + ids.len();
    if n > cfg.max_positions {
        return Err(Error::Capacity {
            needed: n,
            capacity: cfg.max_positions,
        });
    }

    let tok = g.embedding(bound.wte, ids)?;
    let x = match prefix {
        Some(p) => g.concat_rows(&[p, tok])?,
        None => tok,
    };
    let positions: Vec<usize> = (0..n).collect();
    let pos = g.embedding(bound.wpe, &positions)?;
    let mut x = g.add(x, pos)?;

    for lv in &bound.layers {
        let a = g.layer_norm(x, lv.ln1_gamma, lv.ln1_beta, LN_EPS)?;
        let a = attention(g, &cfg, lv, a)?;
        x = g.add(x, a)?;
        let m = g.layer_norm(x, lv.ln2_gamma, lv.ln2_beta, LN_EPS)?;
        let m = mlp(g, lv, m)?;
        x = g.add(x, m)?;
    }
    let h = g.layer_norm(x, bound.lnf_gamma, bound.lnf_beta, LN_EPS)?;
    g.matmul_nt(h, bound.wte)
}

/// Next-token targets and loss mask for an encoded `[BOS, w1..wT, EOS]`
/// behind `prefix_len` prompt rows. Position `P+t` predicts `ids[t+1]`;
/// prompt positions and the final position predict nothing.
pub fn sentence_targets(prefix_len: usize, ids: &[usize]) -> (Vec<usize>, Vec<bool>) {
    let n = prefix_len + ids.len();
    let mut targets = vec![0; n];
    let mut mask = vec![false; n];
    for t in 0..ids.len().saturating_sub(1) {
        targets[prefix_len + t] = ids[t + 1];
        mask[prefix_len + t] = true;
    }
    (targets, mask)
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T: Scalar = f32> {
    pub logits: Tensor<T>,
    /// `true` at positions whose prediction is scored.
    pub loss_mask: Vec<bool>,
    pub prefix_len: usize,
}

/// Logits for every position of `[prefix; ids]`.
pub fn forward<T: Scalar>(
    params: &ParameterSet<T>,
    ids: &[usize],
    prefix: Option<&Tensor<T>>,
) -> Result<ForwardOutput<T>> {
    let mut g = Graph::new();
    let (bound, _) = BoundParams::bind(&mut g, params, &Selector::nothing());
    let pv = prefix.map(|p| g.constant(p.clone()));
    let logits = build_logits(&mut g, &bound, ids, pv)?;
    let prefix_len = prefix.map_or(0, |p| p.shape().first().copied().unwrap_or(0));
    let (_, loss_mask) = sentence_targets(prefix_len, ids);
    Ok(ForwardOutput {
        logits: g.value(logits).clone(),
        loss_mask,
        prefix_len,
    })
}

#[derive(Clone, Debug)]
pub struct LossAndGrads<T: Scalar = f32> {
    /// Mean next-token cross entropy over the predicted tokens.
    pub loss: T,
    /// Number of predicted tokens (words plus EOS).
    pub token_count: usize,
    /// Gradients of `loss` for every selected parameter, by name.
    pub param_grads: BTreeMap<String, Vec<T>>,
    pub prefix_grad: Option<Vec<T>>,
}

enum PrefixInput<'a, T: Scalar> {
    None,
    Matrix(&'a Tensor<T>),
    Tokens(&'a [usize]),
}

/// One sentence's training objective and its gradients. `ids` must be the
/// full `[BOS, w1..wT, EOS]` encoding with `T >= 1`.
pub fn loss_and_grads<T: Scalar>(
    params: &ParameterSet<T>,
    ids: &[usize],
    prefix: Option<&Tensor<T>>,
    selector: &Selector,
) -> Result<LossAndGrads<T>> {
    let prefix = prefix.map_or(PrefixInput::None, PrefixInput::Matrix);
    loss_with_prefix(params, ids, prefix, selector)
}

/// Like [`loss_and_grads`], but the prefix rows are the token embeddings of
/// `context` (looked up through the graph, so `wte` receives their
/// gradient). Context positions are never prediction targets.
pub fn context_loss_and_grads<T: Scalar>(
    params: &ParameterSet<T>,
    context: &[usize],
    ids: &[usize],
    selector: &Selector,
) -> Result<LossAndGrads<T>> {
    loss_with_prefix(params, ids, PrefixInput::Tokens(context), selector)
}

fn loss_with_prefix<T: Scalar>(
    params: &ParameterSet<T>,
    ids: &[usize],
    prefix: PrefixInput<'_, T>,
    selector: &Selector,
) -> Result<LossAndGrads<T>> {
    if ids.len() < 3 {
        return Err(Error::EmptyLoss);
    }
    let mut g = Graph::new();
    let (bound, vars) = BoundParams::bind(&mut g, params, selector);
    let (pv, prefix_len) = match prefix {
        PrefixInput::None => (None, 0),
        PrefixInput::Matrix(p) => (
            Some(g.leaf(p.clone(), selector.wants_prefix())),
            p.shape().first().copied().unwrap_or(0),
        ),
        PrefixInput::Tokens([]) => (None, 0),
        PrefixInput::Tokens(ctx) => (Some(g.embedding(bound.wte, ctx)?), ctx.len()),
    };
    let logits = build_logits(&mut g, &bound, ids, pv)?;
    let (targets, mask) = sentence_targets(prefix_len, ids);
    let loss = g.cross_entropy_mean(logits, &targets, &mask)?;
    g.backward(loss)?;

    let param_grads = vars
        .iter()
        .filter(|(name, _)| selector.wants_param(name))
        .map(|(name, &v)| {
            let grad = g
                .grad(v)
                .map_or_else(|| vec![T::zero(); g.value(v).numel()], <[T]>::to_vec);
            (name.clone(), grad)
        })
        .collect();
    let prefix_grad = match (prefix, pv, selector.wants_prefix()) {
        (PrefixInput::Matrix(_), Some(v), true) => Some(
            g.grad(v)
                .map_or_else(|| vec![T::zero(); g.value(v).numel()], <[T]>::to_vec),
        ),
        (PrefixInput::Matrix(p), None, true) => Some(vec![T::zero(); p.numel()]),
        _ => None,
    };
    Ok(LossAndGrads {
        loss: g.value(loss).data()[0],
        token_count: ids.len() - 1,
        param_grads,
        prefix_grad,
    })
}
