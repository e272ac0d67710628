//! Joint training loop: per step, encode a batch, build contrastive pairs,
//! combine the generation and contrastive losses as L = l_ge + lambda *
//! l_con, run backward once, clip the global gradient norm, and apply Adam.
//! Everything is a deterministic function of (seed, step), so a run resumed
//! from a checkpoint reproduces the in-memory trajectory bit-exactly.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::corpus::{split_words, CorpusRecord};
use crate::error::{Error, Result};
use crate::graph::{build_relation_graph, RelationGraph};
use crate::model::Model;
use crate::params::Session;
use crate::tensor::{adam_step, clip_global_norm, AdamConfig, AdamState, TensorId};
use crate::tokenizer::{encode_words, Vocab};

/// A corpus record tokenized and graphed once, ready for many steps.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub id: String,
    /// Findings subword ids (node order matches `graph`).
    pub input_ids: Vec<u32>,
    /// Impression subword ids, truncated to the decoder budget.
    pub target_ids: Vec<u32>,
    pub graph: RelationGraph,
    /// Word count of the original findings (length-bucket key).
    pub findings_words: usize,
    /// Reference impression text for scoring.
    pub reference: String,
}

/// Tokenize and graph every record. Findings longer than the encoder budget
/// are truncated at a word boundary, dropping annotations past the cut.
pub fn prepare_records(
    records: &[CorpusRecord],
    vocab: &Vocab,
    cfg: &ModelConfig,
) -> Result<Vec<PreparedRecord>> {
    let max_sub = cfg.encoder.max_seq_len;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let full = encode_words(&rec.words, vocab)?;
        let (enc, n_words) = if full.n_subwords() <= max_sub {
            let n = rec.words.len();
            (full, n)
        } else {
            let mut keep = 0;
            while keep < rec.words.len() && full.spans[keep].1 <= max_sub {
                keep += 1;
            }
            (encode_words(&rec.words[..keep], vocab)?, keep)
        };
        let entities: Vec<_> = rec
            .entities
            .iter()
            .filter(|e| e.end <= n_words)
            .copied()
            .collect();
        let dependencies: Vec<_> = rec
            .dependencies
            .iter()
            .filter(|d| d.dep < n_words && d.head < n_words as i64)
            .cloned()
            .collect();
        let graph = build_relation_graph(&enc, &entities, &dependencies, &cfg.graph)?;

        let imp_words = split_words(&rec.impression);
        let imp = encode_words(&imp_words, vocab)?;
        let mut target_ids = imp.ids;
        target_ids.truncate(cfg.decoder.max_out_len);

        out.push(PreparedRecord {
            id: rec.id.clone(),
            input_ids: enc.ids,
            target_ids,
            graph,
            findings_words: rec.words.len(),
            reference: rec.impression.clone(),
        });
    }
    Ok(out)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub l_ge: f32,
    pub l_con: f32,
    #[serde(rename = "L")]
    pub loss: f32,
    pub skipped_contrastive: usize,
}

impl StepMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// L = l_ge + lambda * l_con (generation loss alone when there is no
/// contrastive term).
pub fn joint_loss(
    sess: &mut Session,
    l_ge: TensorId,
    l_con: Option<TensorId>,
    lambda: f32,
) -> Result<TensorId> {
    match l_con {
        Some(con) => {
            let scaled = sess.tape.scale(con, lambda);
            sess.tape.add(l_ge, scaled)
        }
        None => Ok(l_ge),
    }
}

/// Deterministic batch for a given step: a seeded partial shuffle of the
/// record indices, depending only on (seed, step, n).
pub fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..batch {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(batch);
    pool
}

/// Owns the model, optimizer state and step counter.
#[derive(Debug)]
pub struct Trainer {
    pub model: Model,
    pub train_cfg: TrainConfig,
    pub vocab: Vocab,
    pub adam: BTreeMap<String, AdamState>,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: Model, train_cfg: TrainConfig, vocab: Vocab) -> Result<Trainer> {
        train_cfg.validate()?;
        Ok(Trainer {
            model,
            train_cfg,
            vocab,
            adam: BTreeMap::new(),
            step: 0,
        })
    }

    fn adam_cfg(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train_cfg.lr,
            ..AdamConfig::default()
        }
    }

    /// One optimizer step over a batch. Loss and gradients must be finite or
    /// the step aborts before touching any parameter, so the in-memory state
    /// stays at the last good step.
    pub fn train_step(&mut self, batch: &[&PreparedRecord]) -> Result<StepMetrics> {
        assert!(!batch.is_empty(), "empty batch");
        let cfg = self.train_cfg;
        let attempted = self.step + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ attempted.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let dropout = self.model.cfg.encoder.dropout;

        let mut sess = self.model.session();
        let mut ge_terms: Vec<TensorId> = Vec::with_capacity(batch.len());
        let mut con_terms: Vec<TensorId> = Vec::new();
        let mut skipped = 0usize;
        for rec in batch {
            let enc = self.model.encode_findings(
                &mut sess,
                &rec.input_ids,
                &rec.graph,
                cfg.use_graph,
                dropout,
                &mut rng,
            )?;
            let l_ge = self.model.generation_loss(
                &mut sess,
                enc.s,
                &rec.target_ids,
                dropout,
                &mut rng,
            )?;
            ge_terms.push(l_ge);
            if cfg.use_contrastive {
                match self
                    .model
                    .contrastive_triplet(&mut sess, enc.s, &rec.graph, dropout, &mut rng)?
                {
                    Some(triplet) => {
                        con_terms.push(self.model.contrastive_loss(&mut sess, &triplet)?)
                    }
                    None => skipped += 1,
                }
            }
        }

        let l_ge = mean_of(&mut sess, &ge_terms)?;
        let l_con = if con_terms.is_empty() {
            None
        } else {
            Some(mean_of(&mut sess, &con_terms)?)
        };
        let loss = joint_loss(&mut sess, l_ge, l_con, cfg.lambda)?;

        let loss_val = sess.tape.data(loss)[0];
        let ge_val = sess.tape.data(l_ge)[0];
        let con_val = l_con.map(|id| sess.tape.data(id)[0]).unwrap_or(0.0);
        if !loss_val.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: attempted,
                which: "loss",
            });
        }

        sess.tape.backward(loss)?;
        let mut grads = sess.collect_grads();
        drop(sess);
        let norm = clip_global_norm(&mut grads, cfg.clip_norm);
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: attempted,
                which: "gradient",
            });
        }

        let adam_cfg = self.adam_cfg();
        for (name, grad) in &grads {
            let param = self.model.params.get_mut(name)?;
            let state = self
                .adam
                .entry(name.clone())
                .or_insert_with(|| AdamState::new(param.numel(), adam_cfg));
            adam_step(&mut param.data, grad, state)?;
        }

        self.step = attempted;
        Ok(StepMetrics {
            step: attempted,
            l_ge: ge_val,
            l_con: con_val,
            loss: loss_val,
            skipped_contrastive: skipped,
        })
    }

    /// Run until `max_steps`, calling `on_step` after each step (metrics
    /// logging). Returns every step's metrics.
    pub fn run(
        &mut self,
        corpus: &[PreparedRecord],
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<Vec<StepMetrics>> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut all = Vec::new();
        while self.step < self.train_cfg.max_steps {
            let idx = batch_indices(
                self.train_cfg.seed,
                self.step,
                corpus.len(),
                self.train_cfg.batch_size,
            );
            let batch: Vec<&PreparedRecord> = idx.iter().map(|&i| &corpus[i]).collect();
            let metrics = self.train_step(&batch)?;
            on_step(&metrics);
            all.push(metrics);
        }
        Ok(all)
    }
}

fn mean_of(sess: &mut Session, terms: &[TensorId]) -> Result<TensorId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = sess.tape.add(acc, t)?;
    }
    Ok(sess.tape.scale(acc, 1.0 / terms.len() as f32))
}
