//! Learned-query multi-head attention that shortens a bag of `M` instance
//! vectors into a fixed sequence of `S` rows.
//!
//! ```text
//! X_S = Concat(head_1, ..., head_k) · W_O + Q_l
//! head_i = softmax((Q_l W_i^Q)(X W_i^K)ᵀ / sqrt(h/k)) · X W_i^V
//! ```
//!
//! The queries are parameters, so the output length is `S` whatever the bag
//! size, and the result does not depend on the order of the bag's rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamRole, ParamStore, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqShortConfig {
    /// Instance feature width `d`.
    pub input_dim: usize,
    /// Output width `h`.
    pub hidden_dim: usize,
    /// Attention heads `k`; must divide `hidden_dim`.
    pub num_heads: usize,
    /// Output sequence length `S`.
    pub output_len: usize,
    /// Bias terms on the four projections.
    #[serde(default)]
    pub bias: bool,
}

impl SeqShortConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, num_heads: usize, output_len: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            num_heads,
            output_len,
            bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("output_len", self.output_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("seqshort {name} must be positive")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "seqshort hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// Number of scalars in a SeqShort layer built from `config`.
pub fn seqshort_param_count(config: &SeqShortConfig) -> Result<usize> {
    config.validate()?;
    let (s, h, d) = (config.output_len, config.hidden_dim, config.input_dim);
    let bias = if config.bias { 4 * h } else { 0 };
    Ok(s * h + h * h + 2 * d * h + h * h + bias)
}

#[derive(Debug, Clone)]
struct HeadParams {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    biases: Option<[ParamId; 3]>,
}

#[derive(Debug, Clone)]
pub struct SeqShortLayer {
    config: SeqShortConfig,
    queries: ParamId,
    heads: Vec<HeadParams>,
    w_o: ParamId,
    b_o: Option<ParamId>,
}

/// Per-head softmax matrices of one forward pass, each `S × M`.
#[derive(Debug, Clone)]
pub struct SeqShortAttention<T> {
    pub per_head: Vec<Tensor<T>>,
}

impl<T: Scalar> SeqShortAttention<T> {
    pub fn num_queries(&self) -> usize {
        self.per_head[0].rows()
    }

    pub fn bag_len(&self) -> usize {
        self.per_head[0].cols()
    }

    /// Mean over heads, in f64.
    pub fn head_mean(&self) -> Tensor<f64> {
        mean_of(&self.per_head)
    }
}

pub(crate) fn mean_of<T: Scalar>(mats: &[Tensor<T>]) -> Tensor<f64> {
    let mut acc = Tensor::<f64>::zeros(mats[0].shape());
    for m in mats {
        for (a, v) in acc.data_mut().iter_mut().zip(m.data()) {
            *a += v.as_f64();
        }
    }
    let k = mats.len() as f64;
    acc.map(|v| v / k)
}

/// Graph handles produced by [`SeqShortLayer::build`].
pub struct SeqShortVars {
    pub output: Var,
    pub attention: Vec<Var>,
}

impl SeqShortLayer {
    /// Registers the layer's parameters under `prefix`, drawing weights from
    /// N(0, init_std²); biases start at zero.
    pub fn init<T: Scalar, R: Rng>(
        config: SeqShortConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        init_std: f64,
    ) -> Result<Self> {
        config.validate()?;
        let (s, h, d, dh) = (
            config.output_len,
            config.hidden_dim,
            config.input_dim,
            config.head_dim(),
        );
        let role = ParamRole::SeqShort;
        let queries = store.add_normal(format!("{prefix}.queries"), &[s, h], init_std, role, rng);
        let mut heads = Vec::with_capacity(config.num_heads);
        for i in 0..config.num_heads {
            let p = format!("{prefix}.head{i}");
            let w_q = store.add_normal(format!("{p}.w_q"), &[h, dh], init_std, role, rng);
            let w_k = store.add_normal(format!("{p}.w_k"), &[d, dh], init_std, role, rng);
            let w_v = store.add_normal(format!("{p}.w_v"), &[d, dh], init_std, role, rng);
            let biases = config.bias.then(|| {
                [
                    store.add(format!("{p}.b_q"), Tensor::zeros(&[dh]), role),
                    store.add(format!("{p}.b_k"), Tensor::zeros(&[dh]), role),
                    store.add(format!("{p}.b_v"), Tensor::zeros(&[dh]), role),
                ]
            });
            heads.push(HeadParams {
                w_q,
                w_k,
                w_v,
                biases,
            });
        }
        let w_o = store.add_normal(format!("{prefix}.w_o"), &[h, h], init_std, role, rng);
        let b_o = config
            .bias
            .then(|| store.add(format!("{prefix}.b_o"), Tensor::zeros(&[h]), role));
        Ok(Self {
            config,
            queries,
            heads,
            w_o,
            b_o,
        })
    }

    pub fn config(&self) -> &SeqShortConfig {
        &self.config
    }

    pub fn queries(&self) -> ParamId {
        self.queries
    }

    /// Records the layer on `g`. `x` must be `M × d` with `M ≥ 1`.
    pub fn build<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<SeqShortVars> {
        let xv = g.value(x);
        if xv.shape().len() != 2 || xv.cols() != self.config.input_dim {
            return Err(Error::Dimension {
                op: "seqshort_forward",
                lhs: xv.shape().to_vec(),
                rhs: vec![xv.rows(), self.config.input_dim],
            });
        }
        let scale = T::from_f64_lossy(1.0 / (self.config.head_dim() as f64).sqrt());
        let q_l = g.param(store, self.queries);
        let mut heads = Vec::with_capacity(self.heads.len());
        let mut attention = Vec::with_capacity(self.heads.len());
        for hp in &self.heads {
            let w_q = g.param(store, hp.w_q);
            let w_k = g.param(store, hp.w_k);
            let w_v = g.param(store, hp.w_v);
            let mut q = g.matmul(q_l, w_q)?;
            let mut k = g.matmul(x, w_k)?;
            let mut v = g.matmul(x, w_v)?;
            if let Some([b_q, b_k, b_v]) = hp.biases {
                let (b_q, b_k, b_v) = (g.param(store, b_q), g.param(store, b_k), g.param(store, b_v));
                q = g.add_row(q, b_q)?;
                k = g.add_row(k, b_k)?;
                v = g.add_row(v, b_v)?;
            }
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores)?;
            attention.push(attn);
            heads.push(g.matmul(attn, v)?);
        }
        let cat = g.concat_cols(&heads)?;
        let w_o = g.param(store, self.w_o);
        let mut out = g.matmul(cat, w_o)?;
        if let Some(b_o) = self.b_o {
            let b_o = g.param(store, b_o);
            out = g.add_row(out, b_o)?;
        }
        let output = g.add(out, q_l)?;
        Ok(SeqShortVars { output, attention })
    }

    /// Stand-alone forward pass: returns `X_S` (`S × h`) and the attention maps.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, SeqShortAttention<T>)> {
        let mut g = Graph::new();
        let xv = g.input(x.clone(), false);
        let vars = self.build(&mut g, store, xv)?;
        let attn = SeqShortAttention {
            per_head: vars.attention.iter().map(|&a| g.value(a).clone()).collect(),
        };
        Ok((g.value(vars.output).clone(), attn))
    }
}

/// Builds an `M × d` bag tensor from row-major features.
pub fn bag_tensor<T: Scalar>(features: Vec<T>, dim: usize) -> Result<Tensor<T>> {
    if features.is_empty() {
        return Err(Error::EmptyBag);
    }
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::Dimension {
            op: "bag_tensor",
            lhs: vec![features.len()],
            rhs: vec![dim],
        });
    }
    Tensor::matrix(features.len() / dim, dim, features)
}
