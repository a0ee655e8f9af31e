//! Transformer encoder layer.
//!
//! Post-norm arrangement:
//!
//! ```text
//! O_r = LayerNorm(Z + MultiHead(Z))
//! O   = LayerNorm(O_r + FFN(O_r)),   FFN(x) = GELU(x W1 + b1) W2 + b2
//! ```
//!
//! Tokens are rows, so a head projects with `Q_h = Z W_Qh`. Each head keeps
//! its own `d x d_h` projection matrices.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tensor::{Mask, ParameterStore, Tape, Var};

use crate::error::{Error, Result};

/// Whether a forward pass samples dropout masks.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Shape of one encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl LayerShape {
    pub fn new(dim: usize, heads: usize, ffn_dim: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide embedding dimension {dim}"
            )));
        }
        if dim < 2 {
            return Err(Error::Config("embedding dimension must be at least 2".into()));
        }
        if ffn_dim == 0 {
            return Err(Error::Config("feed-forward dimension must be positive".into()));
        }
        Ok(Self { dim, heads, ffn_dim })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `(name suffix, shape)` for every tensor of a layer, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        let (d, dh, f) = (self.dim, self.head_dim(), self.ffn_dim);
        let mut out = Vec::new();
        for h in 0..self.heads {
            out.push((format!("attn.w_q{h}"), vec![d, dh]));
            out.push((format!("attn.w_k{h}"), vec![d, dh]));
            out.push((format!("attn.w_v{h}"), vec![d, dh]));
        }
        out.push(("attn.w_a".into(), vec![d, d]));
        out.push(("ffn.w1".into(), vec![d, f]));
        out.push(("ffn.b1".into(), vec![f]));
        out.push(("ffn.w2".into(), vec![f, d]));
        out.push(("ffn.b2".into(), vec![d]));
        out.push(("norm1.gain".into(), vec![d]));
        out.push(("norm1.shift".into(), vec![d]));
        out.push(("norm2.gain".into(), vec![d]));
        out.push(("norm2.shift".into(), vec![d]));
        out
    }
}

/// One encoder layer's parameters bound to a tape.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    shape: LayerShape,
    w_q: Vec<Var>,
    w_k: Vec<Var>,
    w_v: Vec<Var>,
    w_a: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    norm1: (Var, Var),
    norm2: (Var, Var),
}

impl EncoderLayer {
    /// Registers the layer stored under `prefix` on `tape`.
    pub fn bind(tape: &mut Tape, store: &ParameterStore, prefix: &str, shape: LayerShape) -> Result<Self> {
        let mut get = |suffix: &str| tape.param_from(store, &format!("{prefix}.{suffix}"));
        let mut w_q = Vec::with_capacity(shape.heads);
        let mut w_k = Vec::with_capacity(shape.heads);
        let mut w_v = Vec::with_capacity(shape.heads);
        for h in 0..shape.heads {
            w_q.push(get(&format!("attn.w_q{h}"))?);
            w_k.push(get(&format!("attn.w_k{h}"))?);
            w_v.push(get(&format!("attn.w_v{h}"))?);
        }
        Ok(Self {
            shape,
            w_q,
            w_k,
            w_v,
            w_a: get("attn.w_a")?,
            w1: get("ffn.w1")?,
            b1: get("ffn.b1")?,
            w2: get("ffn.w2")?,
            b2: get("ffn.b2")?,
            norm1: (get("norm1.gain")?, get("norm1.shift")?),
            norm2: (get("norm2.gain")?, get("norm2.shift")?),
        })
    }

    pub fn shape(&self) -> LayerShape {
        self.shape
    }
}

/// Lower-triangular mask: position `i` sees positions `0..=i`.
pub fn make_causal_mask(n: usize) -> Mask {
    Mask::causal(n)
}

/// `Concat(head_0, ..., head_{H-1}) W_A` with
/// `head_h = softmax(Q_h K_h^T / sqrt(d_h)) V_h`.
pub fn multi_head_attention(tape: &mut Tape, z: Var, layer: &EncoderLayer, mask: Option<&Mask>) -> Result<Var> {
    let scale = 1.0 / (layer.shape.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(layer.shape.heads);
    for h in 0..layer.shape.heads {
        let q = tape.matmul(z, layer.w_q[h])?;
        let k = tape.matmul(z, layer.w_k[h])?;
        let v = tape.matmul(z, layer.w_v[h])?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale)?;
        let weights = tape.masked_softmax(scores, mask)?;
        heads.push(tape.matmul(weights, v)?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    Ok(tape.matmul(joined, layer.w_a)?)
}

pub fn encoder_layer_forward(
    tape: &mut Tape,
    z: Var,
    layer: &EncoderLayer,
    mask: Option<&Mask>,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let attn = multi_head_attention(tape, z, layer, mask)?;
    let residual = tape.add(z, attn)?;
    let o_r = tape.layer_norm(residual, layer.norm1.0, layer.norm1.1)?;

    let hidden = tape.matmul(o_r, layer.w1)?;
    let hidden = tape.add_row(hidden, layer.b1)?;
    let hidden = tape.gelu(hidden)?;
    let ffn = tape.matmul(hidden, layer.w2)?;
    let mut ffn = tape.add_row(ffn, layer.b2)?;
    if let Mode::Train { dropout, rng } = mode {
        if *dropout > 0.0 {
            let keep = 1.0 / (1.0 - *dropout);
            let n = tape.value(ffn).len();
            let scales = (0..n)
                .map(|_| if rng.random::<f64>() < *dropout { 0.0 } else { keep })
                .collect();
            ffn = tape.dropout(ffn, scales)?;
        }
    }
    let out = tape.add(o_r, ffn)?;
    Ok(tape.layer_norm(out, layer.norm2.0, layer.norm2.1)?)
}

/// Inserts a layer's tensors under `prefix`, drawing each with `fill`.
#[cfg(test)]
fn insert_layer(
    store: &mut ParameterStore,
    prefix: &str,
    shape: LayerShape,
    mut fill: impl FnMut(&str, &[usize]) -> tensor::Tensor,
) {
    for (suffix, dims) in shape.tensors() {
        let name = format!("{prefix}.{suffix}");
        let t = fill(&name, &dims);
        store.insert(name, t);
    }
}
