//! Graph-enhanced encoder: a compact Transformer produces token features h,
//! a multi-head graph attention network produces relation features z over the
//! subword graph, and a two-layer MLP fuses the concatenation back to width d.
//!
//! GAT details: node i attends over its in-neighborhood plus a self-loop
//! (isolated subwords still have defined attention, with weight 1 on
//! themselves). Attention logits are LeakyReLU(a_self . W h_i + a_neigh .
//! W h_j), normalized by softmax over the neighborhood. Hidden layers apply
//! ELU per head and concatenate; the output layer averages heads and then
//! applies ELU.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::RelationGraph;
use crate::nn;
use crate::params::{ParamStore, Session};
use crate::tensor::TensorId;

pub fn init_text_encoder<R: Rng>(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    vocab_size: usize,
    rng: &mut R,
) {
    nn::init_embedding(store, "te.tok", vocab_size, cfg.d, rng);
    nn::init_embedding(store, "te.pos", cfg.max_seq_len, cfg.d, rng);
    for l in 0..cfg.text_layers {
        nn::init_encoder_layer(store, &format!("te.l{l}"), cfg.d, cfg.ff, rng);
    }
}

/// Transformer text encoder over subword ids: token + learned position
/// embeddings, then `text_layers` post-norm blocks. `[N] -> [N, d]`.
pub fn encode_text(
    sess: &mut Session,
    cfg: &EncoderConfig,
    ids: &[u32],
    dropout: f32,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    if ids.is_empty() {
        return Err(Error::EmptySequence {
            what: "encode_text",
        });
    }
    if ids.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max: cfg.max_seq_len,
        });
    }
    let tok_table = sess.param("te.tok")?;
    let tok = sess.tape.embedding(tok_table, ids)?;
    let pos_table = sess.param("te.pos")?;
    let positions: Vec<u32> = (0..ids.len() as u32).collect();
    let pos = sess.tape.embedding(pos_table, &positions)?;
    let mut x = sess.tape.add(tok, pos)?;
    x = sess.tape.dropout(x, dropout, rng);
    for l in 0..cfg.text_layers {
        x = nn::encoder_layer(sess, &format!("te.l{l}"), x, cfg.heads, dropout, rng)?;
    }
    Ok(x)
}

fn gat_head_dims(cfg: &EncoderConfig, layer: usize) -> usize {
    if layer + 1 == cfg.gat_layers {
        cfg.d // output layer: heads are averaged at full width
    } else {
        cfg.d / cfg.gat_heads // hidden layer: heads are concatenated
    }
}

pub fn init_gat<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) {
    for l in 0..cfg.gat_layers {
        let dh = gat_head_dims(cfg, l);
        for h in 0..cfg.gat_heads {
            let p = format!("gat.l{l}.h{h}");
            store.insert_xavier(format!("{p}.w"), cfg.d, dh, rng);
            store.insert_xavier(format!("{p}.a_self"), dh, 1, rng);
            store.insert_xavier(format!("{p}.a_neigh"), dh, 1, rng);
        }
    }
}

/// In-edges grouped by destination, each group extended with a self-loop,
/// flattened in destination order. `segments[i]` is the edge range of node i.
struct EdgeLayout {
    edges: Rc<Vec<(u32, u32)>>,
    segments: Rc<Vec<(usize, usize)>>,
}

fn edge_layout(graph: &RelationGraph) -> EdgeLayout {
    let mut per_node: Vec<Vec<u32>> = vec![Vec::new(); graph.n];
    for &(s, t) in &graph.edges {
        per_node[t as usize].push(s);
    }
    let mut edges = Vec::with_capacity(graph.edges.len() + graph.n);
    let mut segments = Vec::with_capacity(graph.n);
    for (i, srcs) in per_node.iter_mut().enumerate() {
        let start = edges.len();
        srcs.push(i as u32); // self-loop
        srcs.sort_unstable();
        for &s in srcs.iter() {
            edges.push((s, i as u32));
        }
        segments.push((start, edges.len()));
    }
    EdgeLayout {
        edges: Rc::new(edges),
        segments: Rc::new(segments),
    }
}

/// Per-head attention weights recorded for inspection, one `[E]` vector per
/// (layer, head) in layer-major order.
pub struct GatTrace {
    pub alphas: Vec<TensorId>,
    pub segments: Rc<Vec<(usize, usize)>>,
}

/// 2-layer (configurable) multi-head GAT over the relation graph.
/// `h: [N, d] -> z: [N, d]`.
pub fn encode_graph(
    sess: &mut Session,
    cfg: &EncoderConfig,
    h: TensorId,
    graph: &RelationGraph,
) -> Result<TensorId> {
    encode_graph_traced(sess, cfg, h, graph).map(|(z, _)| z)
}

pub fn encode_graph_traced(
    sess: &mut Session,
    cfg: &EncoderConfig,
    h: TensorId,
    graph: &RelationGraph,
) -> Result<(TensorId, GatTrace)> {
    let n = sess.tape.shape(h)[0];
    if n != graph.n {
        return Err(Error::ShapeMismatch {
            op: "encode_graph",
            lhs: sess.tape.shape(h).to_vec(),
            rhs: vec![graph.n],
        });
    }
    let layout = edge_layout(graph);
    let mut trace = GatTrace {
        alphas: Vec::new(),
        segments: layout.segments.clone(),
    };
    let mut x = h;
    for l in 0..cfg.gat_layers {
        let output_layer = l + 1 == cfg.gat_layers;
        let mut head_outs = Vec::with_capacity(cfg.gat_heads);
        for head in 0..cfg.gat_heads {
            let p = format!("gat.l{l}.h{head}");
            let w = sess.param(&format!("{p}.w"))?;
            let a_self = sess.param(&format!("{p}.a_self"))?;
            let a_neigh = sess.param(&format!("{p}.a_neigh"))?;
            let proj = sess.tape.matmul(x, w)?;
            let self_scores = sess.tape.matmul(proj, a_self)?;
            let neigh_scores = sess.tape.matmul(proj, a_neigh)?;
            let logits =
                sess.tape
                    .edge_gather_sum(self_scores, neigh_scores, layout.edges.clone())?;
            let logits = sess.tape.leaky_relu(logits, nn::LEAKY_SLOPE);
            let alpha = sess
                .tape
                .segment_softmax(logits, layout.segments.clone())?;
            trace.alphas.push(alpha);
            let agg = sess
                .tape
                .edge_weighted_sum(alpha, proj, layout.edges.clone(), n)?;
            head_outs.push(agg);
        }
        x = if output_layer {
            let mut sum = head_outs[0];
            for &o in &head_outs[1..] {
                sum = sess.tape.add(sum, o)?;
            }
            let mean = sess.tape.scale(sum, 1.0 / cfg.gat_heads as f32);
            sess.tape.elu(mean)
        } else {
            let activated: Vec<TensorId> =
                head_outs.into_iter().map(|o| sess.tape.elu(o)).collect();
            sess.tape.concat_cols(&activated)?
        };
    }
    Ok((x, trace))
}

pub fn init_fusion<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) {
    nn::init_linear(store, "fuse.w1", 2 * cfg.d, cfg.d, rng);
    nn::init_linear(store, "fuse.w2", cfg.d, cfg.d, rng);
}

/// Per-position fusion MLP: `s_i = W2 GELU(W1 [h_i ++ z_i] + b1) + b2`,
/// mapping `2d -> d`.
pub fn fuse(sess: &mut Session, h: TensorId, z: TensorId) -> Result<TensorId> {
    if sess.tape.shape(h) != sess.tape.shape(z) {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            lhs: sess.tape.shape(h).to_vec(),
            rhs: sess.tape.shape(z).to_vec(),
        });
    }
    let cat = sess.tape.concat_cols(&[h, z])?;
    let hidden = nn::linear(sess, "fuse.w1", cat)?;
    let hidden = sess.tape.gelu(hidden);
    nn::linear(sess, "fuse.w2", hidden)
}
