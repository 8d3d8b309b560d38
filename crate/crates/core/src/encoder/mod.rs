//! Transformer classifier on top of SeqShort: `[CLS]` concatenation, learned
//! positional embeddings, post-norm encoder blocks and a classification head.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_load, checkpoint_load_into, checkpoint_save, checkpoint_to_bytes};

use crate::error::{Error, Result};
use crate::numerics::{
    Gradients, Graph, ParamId, ParamRole, ParamStore, Scalar, Tensor, Var,
    DEFAULT_LAYER_NORM_EPS,
};
use crate::seqshort::{mean_of, seqshort_param_count, SeqShortAttention, SeqShortConfig, SeqShortLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Every parameter trainable.
    None,
    /// Encoder-block attention and feed-forward weights frozen; everything else trains.
    FrozenExceptLayernorm,
}

impl FreezePolicy {
    pub fn is_trainable(self, role: ParamRole) -> bool {
        match self {
            FreezePolicy::None => true,
            FreezePolicy::FrozenExceptLayernorm => role != ParamRole::BlockWeight,
        }
    }
}

impl fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FreezePolicy::None => "none",
            FreezePolicy::FrozenExceptLayernorm => "frozen_except_layernorm",
        })
    }
}

impl FromStr for FreezePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FreezePolicy::None),
            "frozen_except_layernorm" => Ok(FreezePolicy::FrozenExceptLayernorm),
            other => Err(Error::Config(format!("unknown freeze policy `{other}`"))),
        }
    }
}

/// Where the `[CLS]` row sits in the encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsPosition {
    First,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Single `h → C` linear layer.
    Linear,
    /// `h → h`, gelu, `h → C`.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub num_classes: usize,
    pub use_positional_embeddings: bool,
    pub freeze_policy: FreezePolicy,
    /// Length `S` of the SeqShort output; the blocks see `S + 1` rows.
    pub seq_len: usize,
    pub cls_position: ClsPosition,
    pub head: HeadKind,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Base-size encoder: 12 layers of 12 heads, 768 hidden units, 3072 FFN.
    pub fn base(seq_len: usize, num_classes: usize) -> Self {
        Self {
            num_layers: 12,
            num_heads: 12,
            hidden_dim: 768,
            ffn_dim: 3072,
            num_classes,
            use_positional_embeddings: true,
            freeze_policy: FreezePolicy::FrozenExceptLayernorm,
            seq_len,
            cls_position: ClsPosition::First,
            head: HeadKind::Linear,
            layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // Zero layers is allowed: the head then reads the [CLS] token directly.
        let fields = [
            ("num_heads", self.num_heads),
            ("hidden_dim", self.hidden_dim),
            ("ffn_dim", self.ffn_dim),
            ("num_classes", self.num_classes),
            ("seq_len", self.seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be positive")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "encoder hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn cls_index(&self) -> usize {
        match self.cls_position {
            ClsPosition::First => 0,
            ClsPosition::Last => self.seq_len,
        }
    }

    /// Parameters inside one encoder block, split into (layer norm, other).
    pub fn block_param_counts(&self) -> (usize, usize) {
        let (h, f) = (self.hidden_dim, self.ffn_dim);
        let ln = 2 * (h + h);
        let weights = 4 * (h * h + h) + (h * f + f) + (f * h + h);
        (ln, weights)
    }
}

/// Full pipeline configuration: SeqShort front end plus encoder classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub seqshort: SeqShortConfig,
    pub encoder: EncoderConfig,
    /// Standard deviation of the N(0, σ²) weight initialisation.
    pub init_std: f64,
}

/// Parameter totals per role, derived from a configuration alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub seqshort: usize,
    pub cls_token: usize,
    pub positional: usize,
    pub block_layer_norm: usize,
    pub block_weights: usize,
    pub head: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.seqshort
            + self.cls_token
            + self.positional
            + self.block_layer_norm
            + self.block_weights
            + self.head
    }

    pub fn trainable(&self, policy: FreezePolicy) -> usize {
        match policy {
            FreezePolicy::None => self.total(),
            FreezePolicy::FrozenExceptLayernorm => self.total() - self.block_weights,
        }
    }

    /// All encoder-block parameters (attention, FFN and layer norms).
    pub fn blocks_total(&self) -> usize {
        self.block_layer_norm + self.block_weights
    }
}

impl ModelConfig {
    pub fn new(seqshort: SeqShortConfig, encoder: EncoderConfig) -> Self {
        Self {
            seqshort,
            encoder,
            init_std: 0.02,
        }
    }

    /// Full-size pipeline: SeqShort with h=768 and k=4 heads in front of a
    /// base-size encoder with all block weights frozen.
    pub fn full(input_dim: usize, seq_len: usize, num_classes: usize) -> Self {
        Self::new(
            SeqShortConfig::new(input_dim, 768, 4, seq_len),
            EncoderConfig::base(seq_len, num_classes),
        )
    }

    /// Desk-scale model: L=2, 4 encoder heads, h=64, S=8, k=2.
    pub fn toy(input_dim: usize, num_classes: usize) -> Self {
        let h = 64;
        let s = 8;
        Self::new(
            SeqShortConfig::new(input_dim, h, 2, s),
            EncoderConfig {
                num_layers: 2,
                num_heads: 4,
                hidden_dim: h,
                ffn_dim: 4 * h,
                num_classes,
                use_positional_embeddings: true,
                freeze_policy: FreezePolicy::None,
                seq_len: s,
                cls_position: ClsPosition::First,
                head: HeadKind::Linear,
                layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.seqshort.validate()?;
        self.encoder.validate()?;
        if self.seqshort.hidden_dim != self.encoder.hidden_dim {
            return Err(Error::Config(format!(
                "seqshort hidden_dim {} differs from encoder hidden_dim {}",
                self.seqshort.hidden_dim, self.encoder.hidden_dim
            )));
        }
        if self.seqshort.output_len != self.encoder.seq_len {
            return Err(Error::Config(format!(
                "seqshort output_len {} differs from encoder seq_len {}",
                self.seqshort.output_len, self.encoder.seq_len
            )));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn param_counts(&self) -> Result<ParamCounts> {
        self.validate()?;
        let e = &self.encoder;
        let h = e.hidden_dim;
        let (ln, weights) = e.block_param_counts();
        let head = match e.head {
            HeadKind::Linear => h * e.num_classes + e.num_classes,
            HeadKind::Mlp => h * h + h + h * e.num_classes + e.num_classes,
        };
        Ok(ParamCounts {
            seqshort: seqshort_param_count(&self.seqshort)?,
            cls_token: h,
            positional: if e.use_positional_embeddings {
                (e.seq_len + 1) * h
            } else {
                0
            },
            block_layer_norm: e.num_layers * ln,
            block_weights: e.num_layers * weights,
            head,
        })
    }
}

#[derive(Debug, Clone)]
struct BlockParams {
    w_q: ParamId,
    b_q: ParamId,
    w_k: ParamId,
    b_k: ParamId,
    w_v: ParamId,
    b_v: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln1: (ParamId, ParamId),
    w_ff1: ParamId,
    b_ff1: ParamId,
    w_ff2: ParamId,
    b_ff2: ParamId,
    ln2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
enum HeadParams {
    Linear {
        w: ParamId,
        b: ParamId,
    },
    Mlp {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
}

/// Attention maps of one forward pass, input to rollout and entropy analyses.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub seqshort: SeqShortAttention<f64>,
    /// One `(S+1) × (S+1)` head-averaged matrix per encoder block.
    pub blocks: Vec<Tensor<f64>>,
    /// Row of the `[CLS]` token in the encoder sequence.
    pub cls_index: usize,
    /// Block count of the model that produced the trace.
    pub num_layers: usize,
}

#[derive(Debug, Clone)]
pub struct ModelOutput<T> {
    /// Length-C logits.
    pub logits: Tensor<T>,
    pub trace: AttentionTrace,
    pub matmul_flops: u64,
}

/// Test and analysis hooks applied during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Reorders the SeqShort output rows before `[CLS]` and positions are added.
    pub summary_permutation: Option<Vec<usize>>,
}

struct BuiltForward {
    logits: Var,
    seqshort_attn: Vec<Var>,
    block_attn: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    seqshort: SeqShortLayer,
    cls_token: ParamId,
    positional: Option<ParamId>,
    blocks: Vec<BlockParams>,
    head: HeadParams,
}

impl<T: Scalar> ClassifierModel<T> {
    /// Builds and initialises a model, then applies the configured freeze policy.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let std = config.init_std;
        let e = config.encoder;
        let (h, f) = (e.hidden_dim, e.ffn_dim);

        let seqshort = SeqShortLayer::init(config.seqshort, &mut store, &mut rng, "seqshort", std)?;
        let cls_token = store.add_normal("cls_token", &[1, h], std, ParamRole::ClsToken, &mut rng);
        let positional = e.use_positional_embeddings.then(|| {
            store.add_normal(
                "pos_embeddings",
                &[e.seq_len + 1, h],
                std,
                ParamRole::Positional,
                &mut rng,
            )
        });

        let mut blocks = Vec::with_capacity(e.num_layers);
        for l in 0..e.num_layers {
            let p = format!("encoder.layer{l:02}");
            let w = ParamRole::BlockWeight;
            let mut weight = |store: &mut ParamStore<T>, name: &str, shape: &[usize]| {
                store.add_normal(format!("{p}.{name}"), shape, std, w, &mut rng)
            };
            let w_q = weight(&mut store, "attn.w_q", &[h, h]);
            let w_k = weight(&mut store, "attn.w_k", &[h, h]);
            let w_v = weight(&mut store, "attn.w_v", &[h, h]);
            let w_o = weight(&mut store, "attn.w_o", &[h, h]);
            let w_ff1 = weight(&mut store, "ffn.w1", &[h, f]);
            let w_ff2 = weight(&mut store, "ffn.w2", &[f, h]);
            let zeros = |store: &mut ParamStore<T>, name: &str, n: usize| {
                store.add(format!("{p}.{name}"), Tensor::zeros(&[n]), w)
            };
            let b_q = zeros(&mut store, "attn.b_q", h);
            let b_k = zeros(&mut store, "attn.b_k", h);
            let b_v = zeros(&mut store, "attn.b_v", h);
            let b_o = zeros(&mut store, "attn.b_o", h);
            let b_ff1 = zeros(&mut store, "ffn.b1", f);
            let b_ff2 = zeros(&mut store, "ffn.b2", h);
            let norm = |store: &mut ParamStore<T>, name: &str| {
                let ln = ParamRole::BlockLayerNorm;
                (
                    store.add(format!("{p}.{name}.gamma"), Tensor::filled(&[h], T::one()), ln),
                    store.add(format!("{p}.{name}.beta"), Tensor::zeros(&[h]), ln),
                )
            };
            let ln1 = norm(&mut store, "ln1");
            let ln2 = norm(&mut store, "ln2");
            blocks.push(BlockParams {
                w_q,
                b_q,
                w_k,
                b_k,
                w_v,
                b_v,
                w_o,
                b_o,
                ln1,
                w_ff1,
                b_ff1,
                w_ff2,
                b_ff2,
                ln2,
            });
        }

        let c = e.num_classes;
        let role = ParamRole::Head;
        let head = match e.head {
            HeadKind::Linear => HeadParams::Linear {
                w: store.add_normal("head.w", &[h, c], std, role, &mut rng),
                b: store.add("head.b", Tensor::zeros(&[c]), role),
            },
            HeadKind::Mlp => HeadParams::Mlp {
                w1: store.add_normal("head.w1", &[h, h], std, role, &mut rng),
                b1: store.add("head.b1", Tensor::zeros(&[h]), role),
                w2: store.add_normal("head.w2", &[h, c], std, role, &mut rng),
                b2: store.add("head.b2", Tensor::zeros(&[c]), role),
            },
        };

        let mut model = Self {
            config,
            store,
            seqshort,
            cls_token,
            positional,
            blocks,
            head,
        };
        model.apply_freeze_policy(config.encoder.freeze_policy);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn seqshort(&self) -> &SeqShortLayer {
        &self.seqshort
    }

    /// Sets every parameter's trainable flag from `policy`. Idempotent.
    pub fn apply_freeze_policy(&mut self, policy: FreezePolicy) {
        self.config.encoder.freeze_policy = policy;
        for p in self.store.iter_mut() {
            p.trainable = policy.is_trainable(p.role);
        }
    }

    pub fn count_parameters(&self, only_trainable: bool) -> usize {
        self.store.count(only_trainable)
    }

    fn build<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        x: Var,
        opts: &ForwardOptions,
    ) -> Result<BuiltForward> {
        let e = &self.config.encoder;
        let store = &self.store;
        let ss = self.seqshort.build(g, store, x)?;
        let mut summary = ss.output;
        if let Some(perm) = &opts.summary_permutation {
            check_permutation(perm, e.seq_len)?;
            summary = g.gather_rows(summary, perm)?;
        }
        let cls = g.param(store, self.cls_token);
        let mut seq = match e.cls_position {
            ClsPosition::First => g.concat_rows(cls, summary)?,
            ClsPosition::Last => g.concat_rows(summary, cls)?,
        };
        if let Some(pos) = self.positional {
            let pos = g.param(store, pos);
            seq = g.add(seq, pos)?;
        }

        let heads = e.num_heads;
        let dh = e.hidden_dim / heads;
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let mut block_attn = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let linear = |g: &mut Graph<'a, T>, x: Var, w: ParamId, bias: ParamId| -> Result<Var> {
                let w = g.param(store, w);
                let bias = g.param(store, bias);
                let y = g.matmul(x, w)?;
                g.add_row(y, bias)
            };
            let q = linear(g, seq, b.w_q, b.b_q)?;
            let k = linear(g, seq, b.w_k, b.b_k)?;
            let v = linear(g, seq, b.w_v, b.b_v)?;
            let mut outs = Vec::with_capacity(heads);
            let mut attn = Vec::with_capacity(heads);
            for i in 0..heads {
                let qh = g.slice_cols(q, i * dh, dh)?;
                let kh = g.slice_cols(k, i * dh, dh)?;
                let vh = g.slice_cols(v, i * dh, dh)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, scale);
                let a = g.softmax_rows(scores)?;
                attn.push(a);
                outs.push(g.matmul(a, vh)?);
            }
            let cat = g.concat_cols(&outs)?;
            let attn_out = linear(g, cat, b.w_o, b.b_o)?;
            let res = g.add(seq, attn_out)?;
            let (g1, b1) = (g.param(store, b.ln1.0), g.param(store, b.ln1.1));
            let x1 = g.layer_norm(res, g1, b1, e.layer_norm_eps)?;
            let hid = linear(g, x1, b.w_ff1, b.b_ff1)?;
            let hid = g.gelu(hid);
            let ff = linear(g, hid, b.w_ff2, b.b_ff2)?;
            let res = g.add(x1, ff)?;
            let (g2, b2) = (g.param(store, b.ln2.0), g.param(store, b.ln2.1));
            seq = g.layer_norm(res, g2, b2, e.layer_norm_eps)?;
            block_attn.push(attn);
        }

        let cls_out = g.gather_rows(seq, &[e.cls_index()])?;
        let logits = match &self.head {
            HeadParams::Linear { w, b } => {
                let (w, b) = (g.param(store, *w), g.param(store, *b));
                let y = g.matmul(cls_out, w)?;
                g.add_row(y, b)?
            }
            HeadParams::Mlp { w1, b1, w2, b2 } => {
                let (w1, b1) = (g.param(store, *w1), g.param(store, *b1));
                let y = g.matmul(cls_out, w1)?;
                let y = g.add_row(y, b1)?;
                let y = g.gelu(y);
                let (w2, b2) = (g.param(store, *w2), g.param(store, *b2));
                let y = g.matmul(y, w2)?;
                g.add_row(y, b2)?
            }
        };
        Ok(BuiltForward {
            logits,
            seqshort_attn: ss.attention,
            block_attn,
        })
    }

    fn trace(&self, g: &Graph<'_, T>, built: &BuiltForward) -> AttentionTrace {
        AttentionTrace {
            seqshort: SeqShortAttention {
                per_head: built.seqshort_attn.iter().map(|&a| g.value(a).to_f64()).collect(),
            },
            blocks: built
                .block_attn
                .iter()
                .map(|heads| {
                    let mats: Vec<Tensor<T>> = heads.iter().map(|&a| g.value(a).clone()).collect();
                    mean_of(&mats)
                })
                .collect(),
            cls_index: self.config.encoder.cls_index(),
            num_layers: self.config.encoder.num_layers,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<ModelOutput<T>> {
        self.forward_with(x, &ForwardOptions::default())
    }

    pub fn forward_with(&self, x: &Tensor<T>, opts: &ForwardOptions) -> Result<ModelOutput<T>> {
        let mut g = Graph::new();
        let xv = g.input(x.clone(), false);
        let built = self.build(&mut g, xv, opts)?;
        let logits = g.value(built.logits).clone().reshape(&[self.config.encoder.num_classes])?;
        Ok(ModelOutput {
            logits,
            trace: self.trace(&g, &built),
            matmul_flops: g.matmul_flops(),
        })
    }

    /// Cross-entropy loss of one bag, with gradients for every trainable parameter.
    pub fn loss_and_grads(&self, x: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>, Gradients<T>)> {
        self.loss_and_grads_with(x, label, &ForwardOptions::default())
    }

    pub fn loss_and_grads_with(
        &self,
        x: &Tensor<T>,
        label: usize,
        opts: &ForwardOptions,
    ) -> Result<(T, Tensor<T>, Gradients<T>)> {
        let mut g = Graph::new();
        let xv = g.input(x.clone(), false);
        let built = self.build(&mut g, xv, opts)?;
        let loss = g.cross_entropy(built.logits, label)?;
        let grads = g.backward(loss)?;
        let logits = g.value(built.logits).clone().reshape(&[self.config.encoder.num_classes])?;
        Ok((g.value(loss).data()[0], logits, grads))
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Config(format!("permutation of length {} for {n} rows", perm.len())));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Config(format!("invalid row permutation {perm:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}
