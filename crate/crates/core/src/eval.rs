//! ROUGE-1/2/L F1 scoring, corpus-level aggregation with findings-length
//! buckets, and the four-variant ablation harness.
//!
//! Scoring tokenization is lowercase with punctuation split off and no
//! stemming, so absolute numbers are not comparable against stemmed ROUGE
//! implementations. N-gram counting is clipped (multiset intersection).

use std::collections::HashMap;

use serde::Serialize;

use crate::config::{GenerationParams, PipelineConfig};
use crate::corpus::{split_words, CorpusRecord};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::Session;
use crate::tokenizer::{decode_ids, Vocab};
use crate::training::{prepare_records, PreparedRecord, Trainer};

/// Precision / recall / F1 on a 0..100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> RougeScore {
        let precision = if candidate == 0 {
            0.0
        } else {
            100.0 * overlap as f64 / candidate as f64
        };
        let recall = if reference == 0 {
            0.0
        } else {
            100.0 * overlap as f64 / reference as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts<'a>(words: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if words.len() >= n {
        for gram in words.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap F1.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    assert!(n >= 1);
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(*refs.get(gram).unwrap_or(&0)))
        .sum();
    let cand_total = candidate.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    RougeScore::from_counts(overlap, cand_total, ref_total)
}

/// Longest-common-subsequence F1.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> RougeScore {
    let (a, b) = (candidate, reference);
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let lcs = prev[b.len()];
    RougeScore::from_counts(lcs, a.len(), b.len())
}

/// R-1 / R-2 / R-L for a candidate and reference text.
pub fn score_texts(candidate: &str, reference: &str) -> (RougeScore, RougeScore, RougeScore) {
    let c = split_words(candidate);
    let r = split_words(reference);
    (rouge_n(&c, &r, 1), rouge_n(&c, &r, 2), rouge_l(&c, &r))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleScore {
    pub id: String,
    pub findings_words: usize,
    pub generated: String,
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

#[derive(Debug, Clone, Serialize)]
pub struct BucketReport {
    pub lo: usize,
    /// Exclusive upper edge; `None` for the open last bucket.
    pub hi: Option<usize>,
    pub count: usize,
    pub mean_r1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub count: usize,
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
    pub buckets: Vec<BucketReport>,
    pub per_example: Vec<ExampleScore>,
}

impl EvalReport {
    /// Line-delimited records: one aggregate line, one line per non-empty
    /// bucket, and per-example lines when requested.
    pub fn to_json_lines(&self, dump_per_example: bool) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{{\"kind\":\"aggregate\",\"count\":{},\"r1\":{:.2},\"r2\":{:.2},\"rl\":{:.2}}}\n",
            self.count, self.r1, self.r2, self.rl
        ));
        for b in &self.buckets {
            let hi = b.hi.map(|h| h.to_string()).unwrap_or_else(|| "null".into());
            out.push_str(&format!(
                "{{\"kind\":\"bucket\",\"lo\":{},\"hi\":{},\"count\":{},\"mean_r1\":{:.2}}}\n",
                b.lo, hi, b.count, b.mean_r1
            ));
        }
        if dump_per_example {
            for e in &self.per_example {
                out.push_str(&serde_json::to_string(e).expect("example serialize"));
                out.push('\n');
            }
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "examples {:>5}   R-1 {:6.2}   R-2 {:6.2}   R-L {:6.2}\n",
            self.count, self.r1, self.r2, self.rl
        ));
        out.push_str("findings-length buckets (mean R-1):\n");
        for b in &self.buckets {
            let range = match b.hi {
                Some(hi) => format!("[{:>3}, {:>3})", b.lo, hi),
                None => format!("[{:>3},  + )", b.lo),
            };
            out.push_str(&format!("  {range}  n={:<5} R-1 {:6.2}\n", b.count, b.mean_r1));
        }
        out
    }
}

fn bucket_of(words: usize, edges: &[usize]) -> usize {
    edges.iter().position(|&e| words < e).unwrap_or(edges.len())
}

/// Score a generator closure over prepared records and aggregate.
pub fn evaluate_with<F>(
    mut generate: F,
    records: &[PreparedRecord],
    bucket_edges: &[usize],
) -> Result<EvalReport>
where
    F: FnMut(&PreparedRecord) -> Result<String>,
{
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut per_example = Vec::with_capacity(records.len());
    for rec in records {
        let generated = generate(rec)?;
        let (r1, r2, rl) = score_texts(&generated, &rec.reference);
        per_example.push(ExampleScore {
            id: rec.id.clone(),
            findings_words: rec.findings_words,
            generated,
            r1,
            r2,
            rl,
        });
    }
    let n = per_example.len() as f64;
    let r1 = per_example.iter().map(|e| e.r1.f1).sum::<f64>() / n;
    let r2 = per_example.iter().map(|e| e.r2.f1).sum::<f64>() / n;
    let rl = per_example.iter().map(|e| e.rl.f1).sum::<f64>() / n;

    let n_buckets = bucket_edges.len() + 1;
    let mut sums = vec![0.0f64; n_buckets];
    let mut counts = vec![0usize; n_buckets];
    for e in &per_example {
        let b = bucket_of(e.findings_words, bucket_edges);
        sums[b] += e.r1.f1;
        counts[b] += 1;
    }
    let mut buckets = Vec::new();
    for b in 0..n_buckets {
        if counts[b] == 0 {
            continue; // empty buckets are absent, not zero
        }
        buckets.push(BucketReport {
            lo: if b == 0 { 0 } else { bucket_edges[b - 1] },
            hi: bucket_edges.get(b).copied(),
            count: counts[b],
            mean_r1: sums[b] / counts[b] as f64,
        });
    }
    Ok(EvalReport {
        count: per_example.len(),
        r1,
        r2,
        rl,
        buckets,
        per_example,
    })
}

/// Generate with the model (beam search; the training ablation flags decide
/// whether the graph encoder runs) and score against references.
pub fn evaluate_model(
    model: &Model,
    vocab: &Vocab,
    use_graph: bool,
    records: &[PreparedRecord],
    gen: &GenerationParams,
    bucket_edges: &[usize],
) -> Result<EvalReport> {
    gen.validate()?;
    if model.vocab_size != vocab.len() {
        return Err(Error::VocabMismatch(format!(
            "model was built over {} tokens, vocabulary has {}",
            model.vocab_size,
            vocab.len()
        )));
    }
    evaluate_with(
        |rec| {
            let mut sess = Session::new(&model.params);
            let enc =
                model.encode_findings_eval(&mut sess, &rec.input_ids, &rec.graph, use_graph)?;
            let ids = model.generate(&mut sess, enc.s, gen)?;
            decode_ids(&ids, vocab)
        },
        records,
        bucket_edges,
    )
}

pub fn evaluate_trainer(
    trainer: &Trainer,
    records: &[PreparedRecord],
    gen: &GenerationParams,
    bucket_edges: &[usize],
) -> Result<EvalReport> {
    evaluate_model(
        &trainer.model,
        &trainer.vocab,
        trainer.train_cfg.use_graph,
        records,
        gen,
        bucket_edges,
    )
}

// ── Ablation harness ─────────────────────────────────────────────────

pub const ABLATION_VARIANTS: [(&str, bool, bool); 4] = [
    ("Base", false, false),
    ("Base+CL", false, true),
    ("Base+graph", true, false),
    ("Base+graph+CL", true, true),
];

#[derive(Debug, Clone, Serialize)]
pub struct SeedScore {
    pub seed: u64,
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub use_graph: bool,
    pub use_contrastive: bool,
    pub per_seed: Vec<SeedScore>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub rl: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("row serialize"));
            out.push('\n');
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>8}\n",
            "Model", "R-1", "R-2", "R-L"
        ));
        for row in &self.rows {
            match (&row.failure, row.r1, row.r2, row.rl) {
                (None, Some(r1), Some(r2), Some(rl)) => {
                    out.push_str(&format!(
                        "{:<16} {:>8.2} {:>8.2} {:>8.2}\n",
                        row.variant, r1, r2, rl
                    ));
                }
                _ => {
                    let why = row.failure.as_deref().unwrap_or("unknown");
                    out.push_str(&format!("{:<16} FAILED: {why}\n", row.variant));
                }
            }
        }
        out
    }
}

/// Train the four {graph, contrastive} variants with identical seeds and
/// budgets and score each on the held-out tail of the corpus. A failing
/// variant is reported in place, without sinking the table.
pub fn run_ablation(
    records: &[CorpusRecord],
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    use crate::tokenizer::build_vocab;
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    cfg.validate()?;
    let holdout = ((records.len() as f32 * cfg.eval_holdout).ceil() as usize).min(records.len() - 1);
    let split = records.len() - holdout;
    let (train_recs, eval_recs) = records.split_at(split);
    let eval_recs = if eval_recs.is_empty() {
        train_recs
    } else {
        eval_recs
    };

    let word_lists: Vec<Vec<String>> = train_recs
        .iter()
        .map(|r| {
            let mut w = r.words.clone();
            w.extend(split_words(&r.impression));
            w
        })
        .collect();
    let vocab = build_vocab(word_lists, 8192, 1)?;
    let train_prepared = prepare_records(train_recs, &vocab, &cfg.model)?;
    let eval_prepared = prepare_records(eval_recs, &vocab, &cfg.model)?;

    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for (name, use_graph, use_contrastive) in ABLATION_VARIANTS {
        let mut per_seed = Vec::new();
        let mut failure = None;
        for &seed in seeds {
            let outcome = (|| -> Result<SeedScore> {
                let mut train_cfg = cfg.train;
                train_cfg.seed = seed;
                train_cfg.use_graph = use_graph;
                train_cfg.use_contrastive = use_contrastive;
                let model = Model::init(cfg.model, vocab.len(), seed)?;
                let mut trainer = Trainer::new(model, train_cfg, vocab.clone())?;
                trainer.run(&train_prepared, |_| {})?;
                let report =
                    evaluate_trainer(&trainer, &eval_prepared, &cfg.gen, &cfg.bucket_edges)?;
                Ok(SeedScore {
                    seed,
                    r1: report.r1,
                    r2: report.r2,
                    rl: report.rl,
                })
            })();
            match outcome {
                Ok(score) => per_seed.push(score),
                Err(e) => {
                    failure = Some(format!("seed {seed}: {e}"));
                    break;
                }
            }
        }
        let mean = |f: fn(&SeedScore) -> f64| -> Option<f64> {
            if failure.is_some() || per_seed.is_empty() {
                None
            } else {
                Some(per_seed.iter().map(f).sum::<f64>() / per_seed.len() as f64)
            }
        };
        rows.push(AblationRow {
            variant: name.to_string(),
            use_graph,
            use_contrastive,
            r1: mean(|s| s.r1),
            r2: mean(|s| s.r2),
            rl: mean(|s| s.rl),
            per_seed,
            failure,
        });
    }
    Ok(AblationReport { rows })
}
