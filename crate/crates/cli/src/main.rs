//! `radsum` command-line surface: corpus utilities, training, generation,
//! evaluation and the ablation harness.
//!
//! Exit codes: 0 success, 1 input validation failure, 2 runtime failure.

use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use radsum_core::checkpoint::{load_checkpoint, save_checkpoint};
use radsum_core::config::{GenerationParams, PipelineConfig};
use radsum_core::corpus::{
    generate_synthetic_corpus, heuristic_annotate, ingest_corpus, split_words, write_corpus,
    CorpusRecord, Lexicon,
};
use radsum_core::error::Error;
use radsum_core::eval::{evaluate_trainer, run_ablation};
use radsum_core::graph::{build_relation_graph, export_dot, GraphConfig};
use radsum_core::model::Model;
use radsum_core::tokenizer::{build_vocab, decode_ids, encode_words, Vocab};
use radsum_core::training::{prepare_records, Trainer};

#[derive(Parser)]
#[command(
    name = "radsum",
    about = "Graph-enhanced contrastive summarization of radiology findings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a WordPiece vocabulary from a corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8192)]
        max_size: usize,
        #[arg(long, default_value_t = 1)]
        min_freq: u64,
    },
    /// Build and export the relation graph of one record.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        dot: PathBuf,
        /// Also dump the graph as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Vocabulary file; built from the corpus when omitted.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log (JSON lines), one record per step.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate impressions for a corpus.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Score generated impressions against references.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        /// Include per-example scores in the report.
        #[arg(long)]
        dump_per_example: bool,
    },
    /// Train and score the four {graph, contrastive} variants.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate a synthetic annotated corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Annotate records with a term lexicon (heuristic fallback annotator).
    Annotate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::NonFiniteLoss { .. } => 2,
        _ => 1,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

/// Load a corpus, failing on structural problems and reporting filter counts.
fn load_validated(path: &PathBuf) -> Result<Vec<CorpusRecord>, Error> {
    let report = ingest_corpus(path)?;
    if let Some(rej) = report.first_structural() {
        return Err(Error::RecordInvalid {
            id: rej.id.clone(),
            field: rej.field.clone(),
            reason: rej.reason.clone(),
        });
    }
    eprintln!(
        "corpus: accepted {} records, rejected {}",
        report.records.len(),
        report.rejected.len()
    );
    if report.records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(report.records)
}

fn vocab_corpus(records: &[CorpusRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            let mut words = r.words.clone();
            words.extend(split_words(&r.impression));
            words
        })
        .collect()
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::BuildVocab {
            corpus,
            out,
            max_size,
            min_freq,
        } => {
            let records = load_validated(&corpus)?;
            let vocab = build_vocab(vocab_corpus(&records), max_size, min_freq)?;
            vocab.save(&out)?;
            println!("wrote {} tokens to {}", vocab.len(), out.display());
            Ok(())
        }

        Command::BuildGraph {
            corpus,
            id,
            dot,
            json,
            vocab,
        } => {
            let records = load_validated(&corpus)?;
            let vocab = match vocab {
                Some(path) => Vocab::load(&path)?,
                None => build_vocab(vocab_corpus(&records), 8192, 1)?,
            };
            let rec = records
                .iter()
                .find(|r| r.id == id)
                .ok_or_else(|| Error::NoSuchRecord(id.clone()))?;
            let enc = encode_words(&rec.words, &vocab)?;
            let graph = build_relation_graph(
                &enc,
                &rec.entities,
                &rec.dependencies,
                &GraphConfig::default(),
            )?;
            std::fs::write(&dot, export_dot(&graph, &enc))?;
            if let Some(json_path) = json {
                std::fs::write(&json_path, serde_json::to_string(&graph.to_json())?)?;
            }
            println!(
                "record {id}: {} subwords, {} edges, {} key tokens",
                graph.n,
                graph.n_edges(),
                graph.key.len()
            );
            Ok(())
        }

        Command::Train {
            corpus,
            vocab,
            config,
            out,
            log,
            resume,
        } => {
            let records = load_validated(&corpus)?;
            let cfg = PipelineConfig::from_file(&config)?;
            let mut trainer = match resume {
                Some(path) => load_checkpoint(&path)?,
                None => {
                    let vocab = Vocab::load(&vocab)?;
                    let model = Model::init(cfg.model, vocab.len(), cfg.train.seed)?;
                    Trainer::new(model, cfg.train, vocab)?
                }
            };
            trainer.train_cfg.max_steps = cfg.train.max_steps;
            let prepared = prepare_records(&records, &trainer.vocab, &trainer.model.cfg)?;

            let mut log_file = match &log {
                Some(path) => Some(std::io::BufWriter::new(std::fs::File::create(path)?)),
                None => None,
            };
            let interval = trainer.train_cfg.val_interval.max(1);
            let max_steps = trainer.train_cfg.max_steps;
            let outcome = trainer.run(&prepared, |m| {
                if let Some(f) = log_file.as_mut() {
                    let _ = writeln!(f, "{}", m.to_json_line());
                }
                if m.step % interval == 0 || m.step == max_steps {
                    eprintln!(
                        "step {}/{max_steps} l_ge={:.4} l_con={:.4} L={:.4} skipped={}",
                        m.step, m.l_ge, m.l_con, m.loss, m.skipped_contrastive
                    );
                }
            });
            if let Some(f) = log_file.as_mut() {
                f.flush()?;
            }
            match outcome {
                Ok(_) => {
                    save_checkpoint(&trainer, &out)?;
                    println!("saved checkpoint to {}", out.display());
                    Ok(())
                }
                Err(e) => {
                    // the trainer still holds the last good step
                    save_checkpoint(&trainer, &out)?;
                    eprintln!(
                        "aborted; last-good checkpoint ({} steps) kept at {}",
                        trainer.step,
                        out.display()
                    );
                    Err(e)
                }
            }
        }

        Command::Generate {
            ckpt,
            corpus,
            beam,
            out,
            max_len,
        } => {
            let trainer = load_checkpoint(&ckpt)?;
            let records = load_validated(&corpus)?;
            let prepared = prepare_records(&records, &trainer.vocab, &trainer.model.cfg)?;
            let mut gen = GenerationParams {
                beam,
                ..Default::default()
            };
            if let Some(m) = max_len {
                gen.max_len = m;
            }
            gen.validate()?;
            let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
            for rec in &prepared {
                let mut sess = trainer.model.session();
                let enc = trainer.model.encode_findings_eval(
                    &mut sess,
                    &rec.input_ids,
                    &rec.graph,
                    trainer.train_cfg.use_graph,
                )?;
                let ids = trainer.model.generate(&mut sess, enc.s, &gen)?;
                let text = decode_ids(&ids, &trainer.vocab)?;
                writeln!(
                    file,
                    "{}",
                    serde_json::json!({ "id": rec.id, "generated": text })
                )?;
            }
            file.flush()?;
            println!("wrote {} generations to {}", prepared.len(), out.display());
            Ok(())
        }

        Command::Evaluate {
            ckpt,
            corpus,
            report,
            beam,
            dump_per_example,
        } => {
            let trainer = load_checkpoint(&ckpt)?;
            let records = load_validated(&corpus)?;
            let prepared = prepare_records(&records, &trainer.vocab, &trainer.model.cfg)?;
            let gen = GenerationParams {
                beam,
                ..Default::default()
            };
            let edges = PipelineConfig::default().bucket_edges;
            let result = evaluate_trainer(&trainer, &prepared, &gen, &edges)?;
            std::fs::write(&report, result.to_json_lines(dump_per_example))?;
            print!("{}", result.render_text());
            Ok(())
        }

        Command::Ablate {
            corpus,
            config,
            seeds,
            report,
        } => {
            let records = load_validated(&corpus)?;
            let cfg = PipelineConfig::from_file(&config)?;
            let seed_list: Vec<u64> = (0..seeds).map(|k| cfg.train.seed + k).collect();
            let result = run_ablation(&records, &cfg, &seed_list)?;
            std::fs::write(&report, result.to_json_lines())?;
            print!("{}", result.render_text());
            Ok(())
        }

        Command::Synth { out, count, seed } => {
            if count == 0 {
                return Err(Error::InvalidConfig("count must be >= 1".into()));
            }
            let records = generate_synthetic_corpus(count, seed);
            write_corpus(&out, &records)?;
            println!("wrote {count} records to {}", out.display());
            Ok(())
        }

        Command::Annotate {
            input,
            lexicon,
            out,
        } => {
            let lexicon = Lexicon::load(&lexicon)?;
            // records are annotated as-is; validation is the consumer's job
            let text = std::fs::read_to_string(&input)?;
            let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
            let mut count = 0usize;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let mut rec: CorpusRecord =
                    serde_json::from_str(line).map_err(|e| Error::CorpusParse {
                        path: input.display().to_string(),
                        line: lineno + 1,
                        reason: e.to_string(),
                    })?;
                let (entities, dependencies) = heuristic_annotate(&rec.words, &lexicon);
                rec.entities = entities;
                rec.dependencies = dependencies;
                rec.annotation_source = Some("heuristic".into());
                serde_json::to_writer(&mut file, &rec)?;
                file.write_all(b"\n")?;
                count += 1;
            }
            file.flush()?;
            println!("annotated {count} records into {}", out.display());
            Ok(())
        }
    }
}
