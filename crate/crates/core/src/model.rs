//! Full model assembly: parameter initialization and the forward paths the
//! training loop and inference share. One [`Model`] owns the parameter store;
//! each forward pass opens a fresh [`Session`] against it, so read-only
//! inference can run concurrently over clones of a frozen store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{GenerationParams, ModelConfig};
use crate::contrastive;
use crate::decoder;
use crate::encoder;
use crate::error::{Error, Result};
use crate::graph::RelationGraph;
use crate::params::{ParamStore, Session};
use crate::tensor::TensorId;
use crate::tokenizer::{BOS, EOS};

/// Text features h, relation features z and fused representation s for one
/// findings section; all `[N, d]` and finite.
pub struct EncodedFindings {
    pub h: TensorId,
    pub z: TensorId,
    pub s: TensorId,
}

/// Contrastive pooled vectors for (s, s^p, s^n).
pub struct ContrastiveTriplet {
    pub b: TensorId,
    pub b_p: TensorId,
    pub b_n: TensorId,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub vocab_size: usize,
    pub params: ParamStore,
}

impl Model {
    /// Deterministically initialize all components from one seed.
    pub fn init(cfg: ModelConfig, vocab_size: usize, seed: u64) -> Result<Model> {
        cfg.validate()?;
        if vocab_size == 0 {
            return Err(Error::InvalidConfig("empty vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        encoder::init_text_encoder(&mut params, &cfg.encoder, vocab_size, &mut rng);
        encoder::init_gat(&mut params, &cfg.encoder, &mut rng);
        encoder::init_fusion(&mut params, &cfg.encoder, &mut rng);
        contrastive::init_contrastive_encoder(
            &mut params,
            &cfg.contrastive,
            cfg.encoder.d,
            cfg.encoder.max_seq_len,
            &mut rng,
        );
        decoder::init_decoder(&mut params, &cfg.decoder, cfg.encoder.d, vocab_size, &mut rng);
        Ok(Model {
            cfg,
            vocab_size,
            params,
        })
    }

    pub fn session(&self) -> Session<'_> {
        Session::new(&self.params)
    }

    /// h, z and s for one subword sequence. With `use_graph` off, z is the
    /// zero matrix and the graph encoder is never touched (its parameters
    /// receive no gradient), keeping parameter shapes identical across
    /// ablations.
    pub fn encode_findings(
        &self,
        sess: &mut Session,
        ids: &[u32],
        graph: &RelationGraph,
        use_graph: bool,
        dropout: f32,
        rng: &mut ChaCha8Rng,
    ) -> Result<EncodedFindings> {
        let h = encoder::encode_text(sess, &self.cfg.encoder, ids, dropout, rng)?;
        let z = if use_graph {
            encoder::encode_graph(sess, &self.cfg.encoder, h, graph)?
        } else {
            sess.tape
                .constant(0.0, vec![ids.len(), self.cfg.encoder.d])
        };
        let s = encoder::fuse(sess, h, z)?;
        for id in [h, z, s] {
            if let Some(bad) = sess.tape.data(id).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: "encode_findings",
                    index: bad,
                });
            }
        }
        Ok(EncodedFindings { h, z, s })
    }

    /// Inference-path encoding: no dropout, so no RNG to thread.
    pub fn encode_findings_eval(
        &self,
        sess: &mut Session,
        ids: &[u32],
        graph: &RelationGraph,
        use_graph: bool,
    ) -> Result<EncodedFindings> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.encode_findings(sess, ids, graph, use_graph, 0.0, &mut rng)
    }

    /// Pooled contrastive vectors, or `None` when the key set is empty or
    /// covers every position (a fully masked branch carries no signal; such
    /// samples are skipped and counted by the training loop).
    pub fn contrastive_triplet(
        &self,
        sess: &mut Session,
        s: TensorId,
        graph: &RelationGraph,
        dropout: f32,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<ContrastiveTriplet>> {
        let k = graph.key.len();
        if k == 0 || k == graph.n {
            return Ok(None);
        }
        let pair = contrastive::generate_examples(sess, s, graph)?;
        let ccfg = &self.cfg.contrastive;
        let b = contrastive::contrastive_encode(sess, ccfg, s, dropout, rng)?;
        let b_p = contrastive::contrastive_encode(sess, ccfg, pair.s_p, dropout, rng)?;
        let b_n = contrastive::contrastive_encode(sess, ccfg, pair.s_n, dropout, rng)?;
        Ok(Some(ContrastiveTriplet { b, b_p, b_n }))
    }

    pub fn contrastive_loss(
        &self,
        sess: &mut Session,
        triplet: &ContrastiveTriplet,
    ) -> Result<TensorId> {
        contrastive::contrastive_loss(
            sess,
            triplet.b,
            triplet.b_p,
            triplet.b_n,
            self.cfg.contrastive.tau,
        )
    }

    /// Teacher-forced logits and loss for one impression.
    pub fn generation_loss(
        &self,
        sess: &mut Session,
        s: TensorId,
        target_ids: &[u32],
        dropout: f32,
        rng: &mut ChaCha8Rng,
    ) -> Result<TensorId> {
        let (input, targets) = teacher_pair(target_ids);
        let logits = decoder::decoder_forward(sess, &self.cfg.decoder, s, &input, dropout, rng)?;
        decoder::generation_loss(sess, logits, &targets, crate::tokenizer::PAD)
    }

    pub fn generate(
        &self,
        sess: &mut Session,
        s: TensorId,
        gen: &GenerationParams,
    ) -> Result<Vec<u32>> {
        decoder::beam_decode(sess, &self.cfg.decoder, s, gen)
    }

    pub fn generate_greedy(
        &self,
        sess: &mut Session,
        s: TensorId,
        max_len: usize,
    ) -> Result<Vec<u32>> {
        decoder::greedy_decode(sess, &self.cfg.decoder, s, max_len)
    }
}

/// BOS-prefixed decoder input and EOS-terminated targets for a reference
/// token sequence.
pub fn teacher_pair(target_ids: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(target_ids.len() + 1);
    input.push(BOS);
    input.extend_from_slice(target_ids);
    let mut targets = Vec::with_capacity(target_ids.len() + 1);
    targets.extend_from_slice(target_ids);
    targets.push(EOS);
    (input, targets)
}
