//! The parameter-shared dual transformer encoder.
//!
//! Both languages run through one [`EncoderParams`] set: token and learned
//! positional embeddings, a stack of transformer layers, and mean pooling over
//! non-pad positions. The generative head is a fully-connected layer on the
//! pooled representation followed by the transposed token embedding matrix.

use rand::Rng;
use thiserror::Error;

use crate::corpus::SideBatch;
use crate::tensor::{Float, Graph, Tensor, TensorError, Var};
use crate::tokenizer::TokenId;

const LN_EPS: f64 = 1e-5;
const MASK_FILL: f64 = -1e9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sequence length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: TokenId, vocab: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadActivation {
    Tanh,
    Linear,
}

/// Where the generative head reads from on the masked side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenSource {
    Pooled,
    MaskedState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub pre_norm: bool,
    pub head_activation: HeadActivation,
    pub gen_source: GenSource,
}

impl EncoderConfig {
    /// Small default that keeps the ratios of the full-size model.
    pub fn desk() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            d_ff: 128,
            n_heads: 2,
            vocab_size: 1000,
            max_len: 64,
            dropout_p: 0.1,
            pre_norm: false,
            head_activation: HeadActivation::Tanh,
            gen_source: GenSource::Pooled,
        }
    }

    /// 2 layers, 8 heads, hidden 512, filter 1024, 50k shared vocabulary.
    pub fn paper() -> Self {
        Self {
            n_layers: 2,
            d_model: 512,
            d_ff: 1024,
            n_heads: 8,
            vocab_size: 50_000,
            max_len: 128,
            dropout_p: 0.1,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if [self.n_layers, self.d_model, self.d_ff, self.n_heads, self.vocab_size, self.max_len].contains(&0) {
            return bad("all sizes must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0,1)", self.dropout_p));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Trainable scalars in one transformer layer.
pub fn layer_param_count(cfg: &EncoderConfig) -> usize {
    let (d, ff) = (cfg.d_model, cfg.d_ff);
    4 * (d * d + d) + (d * ff + ff) + (ff * d + d) + 2 * (2 * d)
}

/// Exact number of trainable scalars.
pub fn count_params(cfg: &EncoderConfig) -> usize {
    let d = cfg.d_model;
    cfg.vocab_size * d + cfg.max_len * d + cfg.n_layers * layer_param_count(cfg) + d * d + d
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
}

const LAYER_NAMES: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
];

impl<T: Float> LayerParams<T> {
    fn fields(&self) -> [&Tensor<T>; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.ln1_g, &self.ln1_b,
            &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_g, &self.ln2_b,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor<T>; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }
}

/// Every trainable weight of the shared encoder. The output vocabulary
/// projection is `tok_emb` transposed; there is no separate output matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub tok_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub gen_w: Tensor<T>,
    pub gen_b: Tensor<T>,
}

fn uniform<T: Float, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let a = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect()).expect("shape matches data")
}

impl<T: Float> EncoderParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        let tok_emb = uniform(rng, &[cfg.vocab_size, d], d);
        let pos_emb = uniform(rng, &[cfg.max_len, d], d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                wq: uniform(rng, &[d, d], d),
                bq: Tensor::zeros(&[d]),
                wk: uniform(rng, &[d, d], d),
                bk: Tensor::zeros(&[d]),
                wv: uniform(rng, &[d, d], d),
                bv: Tensor::zeros(&[d]),
                wo: uniform(rng, &[d, d], d),
                bo: Tensor::zeros(&[d]),
                ln1_g: Tensor::full(&[d], T::one()),
                ln1_b: Tensor::zeros(&[d]),
                w1: uniform(rng, &[d, ff], d),
                b1: Tensor::zeros(&[ff]),
                w2: uniform(rng, &[ff, d], ff),
                b2: Tensor::zeros(&[d]),
                ln2_g: Tensor::full(&[d], T::one()),
                ln2_b: Tensor::zeros(&[d]),
            })
            .collect();
        Ok(Self {
            tok_emb,
            pos_emb,
            layers,
            gen_w: uniform(rng, &[d, d], d),
            gen_b: Tensor::zeros(&[d]),
        })
    }

    /// Tensors in canonical order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_NAMES.iter().zip(l.fields()) {
                out.push((format!("layer{i}.{name}"), t));
            }
        }
        out.push(("gen_w".into(), &self.gen_w));
        out.push(("gen_b".into(), &self.gen_b));
        out
    }

    /// Mutable tensors in the same order as [`EncoderParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend(l.fields_mut());
        }
        out.push(&mut self.gen_w);
        out.push(&mut self.gen_b);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Float>(&self) -> EncoderParams<U> {
        EncoderParams {
            tok_emb: self.tok_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: l.wq.cast(),
                    bq: l.bq.cast(),
                    wk: l.wk.cast(),
                    bk: l.bk.cast(),
                    wv: l.wv.cast(),
                    bv: l.bv.cast(),
                    wo: l.wo.cast(),
                    bo: l.bo.cast(),
                    ln1_g: l.ln1_g.cast(),
                    ln1_b: l.ln1_b.cast(),
                    w1: l.w1.cast(),
                    b1: l.b1.cast(),
                    w2: l.w2.cast(),
                    b2: l.b2.cast(),
                    ln2_g: l.ln2_g.cast(),
                    ln2_b: l.ln2_b.cast(),
                })
                .collect(),
            gen_w: self.gen_w.cast(),
            gen_b: self.gen_b.cast(),
        }
    }

    /// Records every tensor as a graph input, trainable or fixed.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<BoundParams, TensorError> {
        let mut vars = Vec::new();
        for (_, t) in self.named() {
            let v = if trainable { g.param(t.clone())? } else { g.constant(t.clone())? };
            vars.push(v);
        }
        Ok(BoundParams::from_vars(vars, self.layers.len()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    v: [Var; 16],
}

impl BoundLayer {
    fn wq(&self) -> Var {
        self.v[0]
    }
}

/// Graph handles for an [`EncoderParams`], in canonical order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub all: Vec<Var>,
    pub tok_emb: Var,
    pub pos_emb: Var,
    layers: Vec<BoundLayer>,
    pub gen_w: Var,
    pub gen_b: Var,
}

impl BoundParams {
    /// Rebuilds handles from vars listed in canonical order.
    pub fn from_vars(all: Vec<Var>, n_layers: usize) -> Self {
        let layers = (0..n_layers)
            .map(|i| {
                let mut v = [all[0]; 16];
                v.copy_from_slice(&all[2 + 16 * i..2 + 16 * (i + 1)]);
                BoundLayer { v }
            })
            .collect();
        let n = all.len();
        Self {
            tok_emb: all[0],
            pos_emb: all[1],
            layers,
            gen_w: all[n - 2],
            gen_b: all[n - 1],
            all,
        }
    }
}

/// Output of one encoder pass over a padded batch.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// Final hidden states, `[batch * len, d_model]`.
    pub states: Var,
    /// Mean-pooled sentence representations, `[batch, d_model]`.
    pub reps: Var,
}

fn linear<T: Float>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
    let h = g.matmul(x, w)?;
    g.add_bias(h, b)
}

fn attention<T: Float>(
    g: &mut Graph<T>,
    cfg: &EncoderConfig,
    l: &BoundLayer,
    x: Var,
    batch: usize,
    len: usize,
    key_mask: Option<Var>,
) -> Result<Var, TensorError> {
    let (d, h) = (cfg.d_model, cfg.n_heads);
    let dh = cfg.head_dim();
    let split = |g: &mut Graph<T>, w: Var, b: Var| -> Result<Var, TensorError> {
        let p = linear(g, x, w, b)?;
        let p = g.reshape(p, &[batch, len, h, dh])?;
        let p = g.permute(p, &[0, 2, 1, 3])?;
        g.reshape(p, &[batch * h, len, dh])
    };
    let q = split(g, l.wq(), l.v[1])?;
    let k = split(g, l.v[2], l.v[3])?;
    let v = split(g, l.v[4], l.v[5])?;
    let scores = g.batch_matmul(q, k, true)?;
    let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    if let Some(m) = key_mask {
        scores = g.add(scores, m)?;
    }
    let att = g.softmax(scores, 2)?;
    let ctx = g.batch_matmul(att, v, false)?;
    let ctx = g.reshape(ctx, &[batch, h, len, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[batch * len, d])?;
    linear(g, ctx, l.v[6], l.v[7])
}

fn feed_forward<T: Float>(g: &mut Graph<T>, l: &BoundLayer, x: Var) -> Result<Var, TensorError> {
    let h = linear(g, x, l.v[10], l.v[11])?;
    let h = g.relu(h)?;
    linear(g, h, l.v[12], l.v[13])
}

/// Runs one side of a batch through the shared encoder. Dropout is active
/// only when `rng` is provided.
pub fn encode<T: Float, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: &BoundParams,
    cfg: &EncoderConfig,
    side: &SideBatch,
    mut rng: Option<&mut R>,
) -> Result<Encoded, ModelError> {
    let (batch, len, d) = (side.batch, side.len, cfg.d_model);
    if len > cfg.max_len {
        return Err(ModelError::TooLong { len, max: cfg.max_len });
    }
    if let Some(&id) = side.ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange { id, vocab: cfg.vocab_size });
    }
    let positions: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();
    let tok = g.gather_rows(p.tok_emb, &side.ids)?;
    let pos = g.gather_rows(p.pos_emb, &positions)?;
    let x = g.add(tok, pos)?;
    let mut x = g.dropout(x, cfg.dropout_p, rng.as_deref_mut())?;

    let key_mask = if side.attn.iter().all(|&a| a) {
        None
    } else {
        let h = cfg.n_heads;
        let mut m = Vec::with_capacity(batch * h * len * len);
        for b in 0..batch {
            let row: Vec<T> = side.attn[b * len..(b + 1) * len]
                .iter()
                .map(|&a| if a { T::zero() } else { T::of(MASK_FILL) })
                .collect();
            for _ in 0..h * len {
                m.extend_from_slice(&row);
            }
        }
        Some(g.constant(Tensor::new(&[batch * h, len, len], m)?)?)
    };

    for l in &p.layers {
        if cfg.pre_norm {
            let n = g.layer_norm(x, l.v[8], l.v[9], LN_EPS)?;
            let a = attention(g, cfg, l, n, batch, len, key_mask)?;
            let a = g.dropout(a, cfg.dropout_p, rng.as_deref_mut())?;
            x = g.add(x, a)?;
            let n = g.layer_norm(x, l.v[14], l.v[15], LN_EPS)?;
            let f = feed_forward(g, l, n)?;
            let f = g.dropout(f, cfg.dropout_p, rng.as_deref_mut())?;
            x = g.add(x, f)?;
        } else {
            let a = attention(g, cfg, l, x, batch, len, key_mask)?;
            let a = g.dropout(a, cfg.dropout_p, rng.as_deref_mut())?;
            let r = g.add(x, a)?;
            x = g.layer_norm(r, l.v[8], l.v[9], LN_EPS)?;
            let f = feed_forward(g, l, x)?;
            let f = g.dropout(f, cfg.dropout_p, rng.as_deref_mut())?;
            let r = g.add(x, f)?;
            x = g.layer_norm(r, l.v[14], l.v[15], LN_EPS)?;
        }
    }
    let states = x;
    let x3 = g.reshape(states, &[batch, len, d])?;
    let reps = g.masked_mean(x3, &side.attn)?;
    Ok(Encoded { states, reps })
}

/// Vocabulary logits `act(h W_g + b_g) E^T` for rows of `h` (`[n, d_model]`).
pub fn generative_logits<T: Float>(
    g: &mut Graph<T>,
    p: &BoundParams,
    cfg: &EncoderConfig,
    h: Var,
) -> Result<Var, TensorError> {
    let z = linear(g, h, p.gen_w, p.gen_b)?;
    let z = match cfg.head_activation {
        HeadActivation::Tanh => g.tanh(z)?,
        HeadActivation::Linear => z,
    };
    g.matmul_nt(z, p.tok_emb)
}

/// Parameters plus their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: EncoderConfig,
    pub params: EncoderParams<T>,
}

impl<T: Float> Model<T> {
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self, ModelError> {
        let params = EncoderParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    /// Evaluation-mode sentence representations, encoded in chunks of
    /// `batch_size`.
    pub fn embed(&self, seqs: &[Vec<TokenId>], batch_size: usize) -> Result<Vec<Vec<T>>, ModelError> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(batch_size.max(1)) {
            if let Some(i) = chunk.iter().position(|s| s.is_empty()) {
                return Err(ModelError::InvalidConfig(format!("cannot embed empty sequence at chunk row {i}")));
            }
            let mut g = Graph::new();
            let bound = self.params.bind(&mut g, false)?;
            let side = SideBatch::from_seqs(chunk);
            let enc = encode::<T, rand_chacha::ChaCha8Rng>(&mut g, &bound, &self.config, &side, None)?;
            let d = self.config.d_model;
            out.extend(g.value(enc.reps).data().chunks(d).map(|r| r.to_vec()));
        }
        Ok(out)
    }
}
