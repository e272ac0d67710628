//! Reusable Transformer building blocks over a [`Session`]: linear layers,
//! multi-head attention, feed-forward blocks and post-norm encoder/decoder
//! layers. Init functions and forward functions pair up through the same
//! parameter-name prefixes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{ParamStore, Session};
use crate::tensor::TensorId;

pub const LEAKY_SLOPE: f32 = 0.2;
const NEG_INF_MASK: f32 = -1e9;

pub fn init_linear<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut R,
) {
    store.insert_xavier(format!("{prefix}.w"), d_in, d_out, rng);
    store.insert_zeros(format!("{prefix}.b"), vec![d_out]);
}

pub fn linear(sess: &mut Session, prefix: &str, x: TensorId) -> Result<TensorId> {
    let w = sess.param(&format!("{prefix}.w"))?;
    let b = sess.param(&format!("{prefix}.b"))?;
    let xw = sess.tape.matmul(x, w)?;
    sess.tape.add_bias(xw, b)
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert_ones(format!("{prefix}.g"), vec![d]);
    store.insert_zeros(format!("{prefix}.b"), vec![d]);
}

pub fn layer_norm(sess: &mut Session, prefix: &str, x: TensorId) -> Result<TensorId> {
    let g = sess.param(&format!("{prefix}.g"))?;
    let b = sess.param(&format!("{prefix}.b"))?;
    sess.tape.layer_norm(x, g, b)
}

pub fn init_attention<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) {
    for name in ["wq", "wk", "wv", "wo"] {
        init_linear(store, &format!("{prefix}.{name}"), d, d, rng);
    }
}

/// Multi-head scaled dot-product attention. Queries come from `q_input`
/// (`[Lq, d]`), keys and values from `kv_input` (`[Lk, d]`). With `causal`
/// set, position i attends to positions <= i (requires `Lq == Lk`).
pub fn attention(
    sess: &mut Session,
    prefix: &str,
    q_input: TensorId,
    kv_input: TensorId,
    heads: usize,
    causal: bool,
) -> Result<TensorId> {
    let d = sess.tape.shape(q_input)[1];
    debug_assert_eq!(d % heads, 0);
    let dh = d / heads;
    let lq = sess.tape.shape(q_input)[0];
    let lk = sess.tape.shape(kv_input)[0];

    let q_full = linear(sess, &format!("{prefix}.wq"), q_input)?;
    let k_full = linear(sess, &format!("{prefix}.wk"), kv_input)?;
    let v_full = linear(sess, &format!("{prefix}.wv"), kv_input)?;

    let mask = if causal {
        debug_assert_eq!(lq, lk, "causal attention needs square scores");
        let mut m = vec![0.0f32; lq * lk];
        for i in 0..lq {
            for j in (i + 1)..lk {
                m[i * lk + j] = NEG_INF_MASK;
            }
        }
        Some(sess.tape.leaf(m, vec![lq, lk], false))
    } else {
        None
    };

    let scale = 1.0 / (dh as f32).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = sess.tape.slice_cols(q_full, h * dh, dh)?;
        let k = sess.tape.slice_cols(k_full, h * dh, dh)?;
        let v = sess.tape.slice_cols(v_full, h * dh, dh)?;
        let kt = sess.tape.transpose(k)?;
        let scores = sess.tape.matmul(q, kt)?;
        let scores = sess.tape.scale(scores, scale);
        let scores = match mask {
            Some(m) => sess.tape.add(scores, m)?,
            None => scores,
        };
        let attn = sess.tape.softmax_rows(scores)?;
        head_outs.push(sess.tape.matmul(attn, v)?);
    }
    let cat = sess.tape.concat_cols(&head_outs)?;
    linear(sess, &format!("{prefix}.wo"), cat)
}

pub fn init_feed_forward<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    ff: usize,
    rng: &mut R,
) {
    init_linear(store, &format!("{prefix}.w1"), d, ff, rng);
    init_linear(store, &format!("{prefix}.w2"), ff, d, rng);
}

pub fn feed_forward(sess: &mut Session, prefix: &str, x: TensorId) -> Result<TensorId> {
    let hidden = linear(sess, &format!("{prefix}.w1"), x)?;
    let hidden = sess.tape.gelu(hidden);
    linear(sess, &format!("{prefix}.w2"), hidden)
}

pub fn init_encoder_layer<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    ff: usize,
    rng: &mut R,
) {
    init_attention(store, &format!("{prefix}.attn"), d, rng);
    init_layer_norm(store, &format!("{prefix}.ln1"), d);
    init_feed_forward(store, &format!("{prefix}.ff"), d, ff, rng);
    init_layer_norm(store, &format!("{prefix}.ln2"), d);
}

/// Post-norm encoder layer: `x = LN(x + Attn(x)); x = LN(x + FF(x))`.
pub fn encoder_layer(
    sess: &mut Session,
    prefix: &str,
    x: TensorId,
    heads: usize,
    dropout: f32,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let attn = attention(sess, &format!("{prefix}.attn"), x, x, heads, false)?;
    let attn = sess.tape.dropout(attn, dropout, rng);
    let x = sess.tape.add(x, attn)?;
    let x = layer_norm(sess, &format!("{prefix}.ln1"), x)?;
    let ff = feed_forward(sess, &format!("{prefix}.ff"), x)?;
    let ff = sess.tape.dropout(ff, dropout, rng);
    let x2 = sess.tape.add(x, ff)?;
    layer_norm(sess, &format!("{prefix}.ln2"), x2)
}

pub fn init_decoder_layer<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    ff: usize,
    rng: &mut R,
) {
    init_attention(store, &format!("{prefix}.self"), d, rng);
    init_layer_norm(store, &format!("{prefix}.ln1"), d);
    init_attention(store, &format!("{prefix}.cross"), d, rng);
    init_layer_norm(store, &format!("{prefix}.ln2"), d);
    init_feed_forward(store, &format!("{prefix}.ff"), d, ff, rng);
    init_layer_norm(store, &format!("{prefix}.ln3"), d);
}

/// Post-norm decoder layer: causal self-attention, cross-attention over the
/// encoder memory, then feed-forward, each with a residual + layer norm.
pub fn decoder_layer(
    sess: &mut Session,
    prefix: &str,
    x: TensorId,
    memory: TensorId,
    heads: usize,
    dropout: f32,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let self_attn = attention(sess, &format!("{prefix}.self"), x, x, heads, true)?;
    let self_attn = sess.tape.dropout(self_attn, dropout, rng);
    let x = sess.tape.add(x, self_attn)?;
    let x = layer_norm(sess, &format!("{prefix}.ln1"), x)?;

    let cross = attention(sess, &format!("{prefix}.cross"), x, memory, heads, false)?;
    let cross = sess.tape.dropout(cross, dropout, rng);
    let x = sess.tape.add(x, cross)?;
    let x = layer_norm(sess, &format!("{prefix}.ln2"), x)?;

    let ff = feed_forward(sess, &format!("{prefix}.ff"), x)?;
    let ff = sess.tape.dropout(ff, dropout, rng);
    let x2 = sess.tape.add(x, ff)?;
    layer_norm(sess, &format!("{prefix}.ln3"), x2)
}

/// Embedding-table init: uniform in a small fixed range.
pub fn init_embedding<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    d: usize,
    rng: &mut R,
) {
    let data = (0..rows * d).map(|_| rng.gen_range(-0.1..0.1)).collect();
    store.insert(name, data, vec![rows, d]);
}
