//! Contrastive example generation, the contrastive encoder and its loss.
//!
//! The positive example keeps key-token rows of the fused representation and
//! replaces every other row with the constant mask vector; the negative
//! example does the opposite. Masking is a constant substitution, so no
//! gradient flows into a replaced row through that branch. Each sample
//! contributes one positive and one negative — other instances in the batch
//! are never used as negatives.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::config::{ContrastiveConfig, Pooling};
use crate::error::{Error, Result};
use crate::graph::RelationGraph;
use crate::nn;
use crate::params::{ParamStore, Session};
use crate::tensor::TensorId;

/// Every element of the mask vector m.
pub const MASK_VALUE: f32 = 1e-6;

/// Masked positive/negative representation pair.
pub struct ContrastivePair {
    pub s_p: TensorId,
    pub s_n: TensorId,
    /// Key-token indices that drove the masking.
    pub key: Vec<u32>,
}

/// Build s^p (non-key rows masked) and s^n (key rows masked) from the fused
/// representation `s`.
pub fn generate_examples(
    sess: &mut Session,
    s: TensorId,
    graph: &RelationGraph,
) -> Result<ContrastivePair> {
    let n = sess.tape.shape(s)[0];
    if n != graph.n {
        return Err(Error::ShapeMismatch {
            op: "generate_examples",
            lhs: sess.tape.shape(s).to_vec(),
            rhs: vec![graph.n],
        });
    }
    let is_key: Vec<bool> = (0..n).map(|j| graph.is_key(j)).collect();
    let mask_p: Rc<Vec<bool>> = Rc::new(is_key.iter().map(|&k| !k).collect());
    let mask_n: Rc<Vec<bool>> = Rc::new(is_key);
    let s_p = sess.tape.mask_rows(s, mask_p, MASK_VALUE)?;
    let s_n = sess.tape.mask_rows(s, mask_n, MASK_VALUE)?;
    Ok(ContrastivePair {
        s_p,
        s_n,
        key: graph.key.clone(),
    })
}

pub fn init_contrastive_encoder<R: rand::Rng>(
    store: &mut ParamStore,
    cfg: &ContrastiveConfig,
    d: usize,
    max_seq_len: usize,
    rng: &mut R,
) {
    nn::init_embedding(store, "ce.pos", max_seq_len, d, rng);
    for l in 0..cfg.layers {
        nn::init_encoder_layer(store, &format!("ce.l{l}"), d, cfg.ff, rng);
    }
}

/// Randomly initialized Transformer encoder over a representation sequence,
/// pooled to a single d-vector. The same parameters encode s, s^p and s^n.
pub fn contrastive_encode(
    sess: &mut Session,
    cfg: &ContrastiveConfig,
    x: TensorId,
    dropout: f32,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let n = sess.tape.shape(x)[0];
    if n == 0 {
        return Err(Error::EmptySequence {
            what: "contrastive_encode",
        });
    }
    let pos_table = sess.param("ce.pos")?;
    let positions: Vec<u32> = (0..n as u32).collect();
    let pos = sess.tape.embedding(pos_table, &positions)?;
    let mut h = sess.tape.add(x, pos)?;
    for l in 0..cfg.layers {
        h = nn::encoder_layer(sess, &format!("ce.l{l}"), h, cfg.heads, dropout, rng)?;
    }
    match cfg.pooling {
        Pooling::Mean => sess.tape.mean_rows(h),
        Pooling::First => {
            let t = sess.tape.transpose(h)?;
            let col = sess.tape.slice_cols(t, 0, 1)?;
            sess.tape.transpose(col)
        }
    }
}

/// Two-term contrastive loss: with s+ = sim(b, b_p) and s- = sim(b, b_n),
/// l_con = -log(e^{s+/tau} / (e^{s+/tau} + e^{s-/tau}))
///       = softplus((s- - s+) / tau).
pub fn contrastive_loss(
    sess: &mut Session,
    b: TensorId,
    b_p: TensorId,
    b_n: TensorId,
    tau: f32,
) -> Result<TensorId> {
    if tau <= 0.0 {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    let sim_p = sess.tape.cosine_similarity(b, b_p)?;
    let sim_n = sess.tape.cosine_similarity(b, b_n)?;
    let diff = sess.tape.sub(sim_n, sim_p)?;
    let scaled = sess.tape.scale(diff, 1.0 / tau);
    Ok(sess.tape.softplus(scaled))
}
