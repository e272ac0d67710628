//! Transformer decoder over the fused findings representation, teacher-forced
//! generation loss, and greedy/beam inference.
//!
//! Teacher forcing is BOS-prefixed with EOS appended to references: for
//! targets `y_0..y_{L-1}` the decoder input is `[BOS, y_0, .., y_{L-2}]` and
//! logits row i predicts `y_i`, so row i depends only on earlier targets and
//! the encoder memory.

use rand_chacha::ChaCha8Rng;

use crate::config::{DecoderConfig, GenerationParams};
use crate::error::{Error, Result};
use crate::nn;
use crate::params::{ParamStore, Session};
use crate::tensor::TensorId;
use crate::tokenizer::{BOS, EOS};

pub fn init_decoder<R: rand::Rng>(
    store: &mut ParamStore,
    cfg: &DecoderConfig,
    d: usize,
    vocab_size: usize,
    rng: &mut R,
) {
    nn::init_embedding(store, "dec.tok", vocab_size, d, rng);
    // +1 position for the BOS prefix
    nn::init_embedding(store, "dec.pos", cfg.max_out_len + 1, d, rng);
    for l in 0..cfg.layers {
        nn::init_decoder_layer(store, &format!("dec.l{l}"), d, cfg.ff, rng);
    }
    nn::init_linear(store, "dec.out", d, vocab_size, rng);
}

/// Causal decoder forward: `input_ids` (BOS-prefixed) against the encoder
/// memory `s`, producing `[L, vocab]` logits.
pub fn decoder_forward(
    sess: &mut Session,
    cfg: &DecoderConfig,
    s: TensorId,
    input_ids: &[u32],
    dropout: f32,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    if input_ids.is_empty() {
        return Err(Error::EmptySequence {
            what: "decoder_forward",
        });
    }
    if input_ids.len() > cfg.max_out_len + 1 {
        return Err(Error::SequenceTooLong {
            len: input_ids.len(),
            max: cfg.max_out_len + 1,
        });
    }
    let tok_table = sess.param("dec.tok")?;
    let tok = sess.tape.embedding(tok_table, input_ids)?;
    let pos_table = sess.param("dec.pos")?;
    let positions: Vec<u32> = (0..input_ids.len() as u32).collect();
    let pos = sess.tape.embedding(pos_table, &positions)?;
    let mut x = sess.tape.add(tok, pos)?;
    x = sess.tape.dropout(x, dropout, rng);
    for l in 0..cfg.layers {
        x = nn::decoder_layer(sess, &format!("dec.l{l}"), x, s, cfg.heads, dropout, rng)?;
    }
    nn::linear(sess, "dec.out", x)
}

/// Teacher-forced sequence loss: mean NLL of the (EOS-terminated) targets.
pub fn generation_loss(
    sess: &mut Session,
    logits: TensorId,
    targets: &[u32],
    pad_id: u32,
) -> Result<TensorId> {
    sess.tape.cross_entropy_nll(logits, targets, pad_id)
}

/// Log-softmax of the last logits row, computed outside the tape.
fn last_row_logprobs(sess: &Session, logits: TensorId) -> Vec<f32> {
    let shape = sess.tape.shape(logits);
    let (l, v) = (shape[0], shape[1]);
    let row = &sess.tape.data(logits)[(l - 1) * v..l * v];
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let lse = row.iter().map(|x| (x - max).exp()).sum::<f32>().ln() + max;
    row.iter().map(|x| x - max - lse).collect()
}

/// Step-by-step argmax decoding; ties break toward the lower token id.
/// Returns generated content tokens (no BOS, no EOS).
pub fn greedy_decode(
    sess: &mut Session,
    cfg: &DecoderConfig,
    s: TensorId,
    max_len: usize,
) -> Result<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut toks = vec![BOS];
    let mut out = Vec::new();
    while out.len() < max_len.min(cfg.max_out_len) {
        let logits = decoder_forward(sess, cfg, s, &toks, 0.0, &mut rng)?;
        let lp = last_row_logprobs(sess, logits);
        let mut best = 0usize;
        for (i, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = i;
            }
        }
        if best as u32 == EOS {
            break;
        }
        out.push(best as u32);
        toks.push(best as u32);
    }
    Ok(out)
}

#[derive(Clone)]
struct Beam {
    toks: Vec<u32>,
    logp: f32,
}

impl Beam {
    fn normalized(&self, exp: f32) -> f32 {
        // length = generated tokens (everything after BOS), at least 1
        let len = (self.toks.len() - 1).max(1) as f32;
        self.logp / len.powf(exp)
    }
}

/// Beam search with length normalization `score / len^exp`. Starts from BOS,
/// stops at EOS or the length cap; deterministic ties break toward the lower
/// token id. `beam = 1` reproduces greedy decoding exactly.
pub fn beam_decode(
    sess: &mut Session,
    cfg: &DecoderConfig,
    s: TensorId,
    gen: &GenerationParams,
) -> Result<Vec<u32>> {
    gen.validate()?;
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let max_content = gen.max_len.min(cfg.max_out_len);
    let mut live = vec![Beam {
        toks: vec![BOS],
        logp: 0.0,
    }];
    let mut finished: Vec<Beam> = Vec::new();

    for _ in 0..max_content {
        if live.is_empty() {
            break;
        }
        // (cumulative score, beam index, token)
        let mut candidates: Vec<(f32, usize, u32)> = Vec::new();
        for (bi, beam) in live.iter().enumerate() {
            let logits = decoder_forward(sess, cfg, s, &beam.toks, 0.0, &mut rng)?;
            let lp = last_row_logprobs(sess, logits);
            for (tok, &l) in lp.iter().enumerate() {
                candidates.push((beam.logp + l, bi, tok as u32));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.2.cmp(&b.2))
                .then(a.1.cmp(&b.1))
        });
        let mut next = Vec::with_capacity(gen.beam);
        for &(score, bi, tok) in candidates.iter().take(gen.beam) {
            let mut toks = live[bi].toks.clone();
            toks.push(tok);
            let beam = Beam { toks, logp: score };
            if tok == EOS {
                finished.push(beam);
            } else {
                next.push(beam);
            }
        }
        live = next;
    }
    finished.extend(live);

    let exp = gen.len_norm;
    finished
        .into_iter()
        .max_by(|a, b| {
            a.normalized(exp)
                .partial_cmp(&b.normalized(exp))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.toks.cmp(&a.toks))
        })
        .map(|beam| {
            let mut toks = beam.toks;
            toks.remove(0); // BOS
            if toks.last() == Some(&EOS) {
                toks.pop();
            }
            toks
        })
        .ok_or(Error::EmptySequence {
            what: "beam_decode",
        })
}
