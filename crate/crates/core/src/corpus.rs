//! Corpus records, JSONL ingestion with validation, the synthetic corpus
//! generator, and the heuristic lexicon annotator.
//!
//! Records arrive annotated: entity and dependency extraction is an external
//! concern, and the annotations ship with the data. The heuristic annotator
//! exists so the pipeline can run end-to-end without any external tool; its
//! output is flagged as heuristic in the record metadata.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DependencyEdge, EntityAnnotation, EntityType};

/// Findings sections shorter than this many words are rejected at ingestion.
pub const MIN_FINDINGS_WORDS: usize = 10;
/// Impressions shorter than this many words are rejected at ingestion.
pub const MIN_IMPRESSION_WORDS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub findings: String,
    pub impression: String,
    /// Pre-split word list of the findings; all annotation indices refer to
    /// this list.
    pub words: Vec<String>,
    #[serde(default)]
    pub entities: Vec<EntityAnnotation>,
    #[serde(default)]
    pub dependencies: Vec<DependencyEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_source: Option<String>,
}

/// Lowercase and split on whitespace, with punctuation as standalone tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(ch.to_string());
        } else {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Why a record was rejected. Structural problems (invalid annotation
/// indices) are CLI-fatal; length filtering is expected and only counted.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub id: String,
    pub field: String,
    pub reason: String,
    pub structural: bool,
}

/// Validate one record against the corpus invariants.
pub fn validate_record(rec: &CorpusRecord) -> std::result::Result<(), Rejection> {
    let n = rec.words.len();
    let reject = |field: &str, reason: String, structural: bool| Rejection {
        id: rec.id.clone(),
        field: field.to_string(),
        reason,
        structural,
    };
    for (i, e) in rec.entities.iter().enumerate() {
        if e.end > n {
            return Err(reject(
                &format!("entities[{i}].end"),
                format!("end {} exceeds word count {}", e.end, n),
                true,
            ));
        }
        if e.start >= e.end {
            return Err(reject(
                &format!("entities[{i}]"),
                format!("empty span [{}, {})", e.start, e.end),
                true,
            ));
        }
    }
    for (i, d) in rec.dependencies.iter().enumerate() {
        if d.dep >= n {
            return Err(reject(
                &format!("dependencies[{i}].dep"),
                format!("dependent {} exceeds word count {}", d.dep, n),
                true,
            ));
        }
        if d.head >= 0 {
            let h = d.head as usize;
            if h >= n {
                return Err(reject(
                    &format!("dependencies[{i}].head"),
                    format!("head {} exceeds word count {}", h, n),
                    true,
                ));
            }
            if h == d.dep {
                return Err(reject(
                    &format!("dependencies[{i}]"),
                    format!("head equals dependent ({h})"),
                    true,
                ));
            }
        }
    }
    if n < MIN_FINDINGS_WORDS {
        return Err(reject(
            "words",
            format!("findings has {n} words, need >= {MIN_FINDINGS_WORDS}"),
            false,
        ));
    }
    if split_words(&rec.impression).len() < MIN_IMPRESSION_WORDS {
        return Err(reject(
            "impression",
            format!("impression has fewer than {MIN_IMPRESSION_WORDS} words"),
            false,
        ));
    }
    Ok(())
}

pub struct IngestReport {
    pub records: Vec<CorpusRecord>,
    pub rejected: Vec<Rejection>,
}

impl IngestReport {
    pub fn first_structural(&self) -> Option<&Rejection> {
        self.rejected.iter().find(|r| r.structural)
    }
}

/// Read a JSONL corpus, validating every record. Malformed JSON is an error;
/// records violating the invariants land in `rejected` with their reason.
pub fn ingest_corpus(path: &Path) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| Error::CorpusParse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        match validate_record(&rec) {
            Ok(()) => records.push(rec),
            Err(rej) => rejected.push(rej),
        }
    }
    Ok(IngestReport { records, rejected })
}

/// Ingest and fail on any structural rejection (the mode `train`/`evaluate`
/// use). Length-filtered records are silently dropped, matching the report
/// counts.
pub fn load_corpus_strict(path: &Path) -> Result<Vec<CorpusRecord>> {
    let report = ingest_corpus(path)?;
    if let Some(rej) = report.first_structural() {
        return Err(Error::RecordInvalid {
            id: rej.id.clone(),
            field: rej.field.clone(),
            reason: rej.reason.clone(),
        });
    }
    if report.records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(report.records)
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ── Synthetic corpus ─────────────────────────────────────────────────

const ANATOMIES: &[&str] = &[
    "left pleural space",
    "right pleural space",
    "left lung base",
    "right lung base",
    "cardiac silhouette",
    "upper lobes",
    "lower lobes",
    "mediastinum",
];

const OBSERVATIONS: &[&str] = &[
    "effusion",
    "opacity",
    "consolidation",
    "atelectasis",
    "edema",
    "pneumothorax",
    "congestion",
    "thickening",
];

const MODIFIERS: &[&str] = &[
    "small", "large", "mild", "moderate", "severe", "trace", "patchy", "stable",
];

/// Filler sentences with no annotated content; their words never appear in
/// impressions.
const FILLERS: &[&str] = &[
    "the visualized osseous structures are unremarkable .",
    "no acute bony abnormality is identified .",
    "surgical clips are noted in the upper abdomen .",
    "the imaged soft tissues appear within normal limits .",
    "degenerative changes are present in the thoracic spine .",
    "the endotracheal tube remains in standard position .",
];

struct Clause {
    words: Vec<String>,
    entities: Vec<EntityAnnotation>,
    dependencies: Vec<DependencyEdge>,
    /// Key-phrase compression of this clause for the impression.
    phrase: Vec<String>,
    /// Pool picks, for distinctness checks against distractors.
    picks: (usize, usize, usize),
}

fn make_clause(rng: &mut ChaCha8Rng) -> Clause {
    let mod_pick = rng.gen_range(0..MODIFIERS.len());
    let obs_pick = rng.gen_range(0..OBSERVATIONS.len());
    let anat_pick = rng.gen_range(0..ANATOMIES.len());
    let modifier = MODIFIERS[mod_pick];
    let observation = OBSERVATIONS[obs_pick];
    let anatomy: Vec<&str> = ANATOMIES[anat_pick].split(' ').collect();

    // Template shapes; indices of modifier/observation/anatomy are derived
    // from the prefix lengths below.
    let template = rng.gen_range(0..3u32);
    let (prefix, mid): (&[&str], &[&str]) = match template {
        0 => (&["there", "is", "a"], &["in", "the"]),
        1 => (&["a"], &["seen", "at", "the"]),
        _ => (&[], &["persisting", "in", "the"]),
    };

    let mut words: Vec<String> = Vec::new();
    words.extend(prefix.iter().map(|s| s.to_string()));
    let mod_idx = words.len();
    words.push(modifier.to_string());
    let obs_idx = words.len();
    words.push(observation.to_string());
    if template == 1 {
        words.push("is".to_string());
    }
    words.extend(mid.iter().map(|s| s.to_string()));
    let anat_start = words.len();
    words.extend(anatomy.iter().map(|s| s.to_string()));
    let anat_end = words.len();
    words.push(".".to_string());

    let entities = vec![
        EntityAnnotation {
            start: mod_idx,
            end: mod_idx + 1,
            entity_type: EntityType::ObservationModifier,
        },
        EntityAnnotation {
            start: obs_idx,
            end: obs_idx + 1,
            entity_type: EntityType::Observation,
        },
        EntityAnnotation {
            start: anat_start,
            end: anat_end,
            entity_type: EntityType::Anatomy,
        },
    ];
    let dependencies = vec![
        DependencyEdge {
            head: obs_idx as i64,
            dep: mod_idx,
            rel: "amod".into(),
        },
        DependencyEdge {
            head: obs_idx as i64,
            dep: anat_end - 1,
            rel: "nmod".into(),
        },
    ];

    let mut phrase: Vec<String> = vec![modifier.to_string()];
    phrase.extend(anatomy.iter().map(|s| s.to_string()));
    phrase.push(observation.to_string());

    Clause {
        words,
        entities,
        dependencies,
        phrase,
        picks: (mod_pick, obs_pick, anat_pick),
    }
}

/// One findings sentence: an annotated key clause (with its impression
/// phrase), an unannotated distractor clause, or a filler.
struct Sentence {
    words: Vec<String>,
    entities: Vec<EntityAnnotation>,
    dependencies: Vec<DependencyEdge>,
    phrase: Option<Vec<String>>,
}

/// Template-sampled findings whose impressions are deterministic key-phrase
/// compressions of the sampled entities. Entities and dependencies are
/// emitted as gold; filler words never reach the impression. Half the
/// records also carry a distractor clause: the same clause shape, but
/// unannotated and absent from the impression, so telling key content from
/// secondary content requires the annotations rather than surface form.
pub fn generate_synthetic_corpus(count: usize, seed: u64) -> Vec<CorpusRecord> {
    assert!(count >= 1, "count must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let n_clauses = rng.gen_range(1..=2);
        let n_fillers = rng.gen_range(1..=2);
        let with_distractor = rng.gen_bool(0.5);

        let mut sentences: Vec<Sentence> = Vec::new();
        let mut key_clauses: Vec<Clause> = Vec::new();
        for _ in 0..n_clauses {
            key_clauses.push(make_clause(&mut rng));
        }
        if with_distractor {
            // a distractor shares no content words with the key clauses
            for _ in 0..32 {
                let candidate = make_clause(&mut rng);
                let clashes = key_clauses.iter().any(|c| {
                    c.picks.0 == candidate.picks.0
                        || c.picks.1 == candidate.picks.1
                        || c.picks.2 == candidate.picks.2
                });
                if !clashes {
                    sentences.push(Sentence {
                        words: candidate.words,
                        entities: Vec::new(),
                        dependencies: Vec::new(),
                        phrase: None,
                    });
                    break;
                }
            }
        }
        for clause in key_clauses {
            sentences.push(Sentence {
                words: clause.words,
                entities: clause.entities,
                dependencies: clause.dependencies,
                phrase: Some(clause.phrase),
            });
        }
        for _ in 0..n_fillers {
            let filler = FILLERS[rng.gen_range(0..FILLERS.len())];
            sentences.push(Sentence {
                words: filler.split(' ').map(|s| s.to_string()).collect(),
                entities: Vec::new(),
                dependencies: Vec::new(),
                phrase: None,
            });
        }
        // shuffle so position never hints at what is key content
        for j in (1..sentences.len()).rev() {
            let k = rng.gen_range(0..=j);
            sentences.swap(j, k);
        }

        let mut words: Vec<String> = Vec::new();
        let mut entities = Vec::new();
        let mut dependencies = Vec::new();
        let mut phrases: Vec<Vec<String>> = Vec::new();
        for sent in sentences {
            let off = words.len();
            words.extend(sent.words);
            entities.extend(sent.entities.into_iter().map(|e| EntityAnnotation {
                start: e.start + off,
                end: e.end + off,
                entity_type: e.entity_type,
            }));
            dependencies.extend(sent.dependencies.into_iter().map(|d| DependencyEdge {
                head: d.head + off as i64,
                dep: d.dep + off,
                rel: d.rel,
            }));
            if let Some(phrase) = sent.phrase {
                phrases.push(phrase);
            }
        }

        let findings = words.join(" ");
        let impression = phrases
            .iter()
            .map(|p| p.join(" "))
            .collect::<Vec<_>>()
            .join(" . ");
        let rec = CorpusRecord {
            id: format!("synth-{i:04}"),
            findings,
            impression,
            words,
            entities,
            dependencies,
            annotation_source: Some("gold".into()),
        };
        debug_assert!(validate_record(&rec).is_ok());
        records.push(rec);
    }
    records
}

// ── Heuristic annotator ──────────────────────────────────────────────

/// Term -> entity type map; terms may span several words.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Lexicon(pub BTreeMap<String, EntityType>);

impl Lexicon {
    pub fn load(path: &Path) -> Result<Lexicon> {
        let text = std::fs::read_to_string(path)?;
        let map: BTreeMap<String, EntityType> = serde_json::from_str(&text)?;
        Ok(Lexicon(
            map.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect(),
        ))
    }

    fn max_words(&self) -> usize {
        self.0
            .keys()
            .map(|k| k.split(' ').count())
            .max()
            .unwrap_or(0)
    }
}

/// Longest-match lexicon spans become entities (ties to leftmost via the
/// left-to-right scan); each modifier entity immediately preceding another
/// entity yields a dependency with that entity's head word as head.
pub fn heuristic_annotate(
    words: &[String],
    lexicon: &Lexicon,
) -> (Vec<EntityAnnotation>, Vec<DependencyEdge>) {
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let max_len = lexicon.max_words();
    let mut entities: Vec<EntityAnnotation> = Vec::new();
    let mut i = 0;
    while i < lower.len() {
        let mut matched = None;
        let cap = max_len.min(lower.len() - i);
        for len in (1..=cap).rev() {
            let term = lower[i..i + len].join(" ");
            if let Some(&ty) = lexicon.0.get(&term) {
                matched = Some((len, ty));
                break;
            }
        }
        match matched {
            Some((len, ty)) => {
                entities.push(EntityAnnotation {
                    start: i,
                    end: i + len,
                    entity_type: ty,
                });
                i += len;
            }
            None => i += 1,
        }
    }

    let mut dependencies = Vec::new();
    for e in entities.iter().filter(|e| !e.entity_type.is_modifier()) {
        if e.start == 0 {
            continue;
        }
        let prev = e.start - 1;
        let is_modifier = entities
            .iter()
            .any(|m| m.entity_type.is_modifier() && m.start <= prev && prev < m.end);
        if is_modifier {
            dependencies.push(DependencyEdge {
                head: (e.end - 1) as i64,
                dep: prev,
                rel: "amod".into(),
            });
        }
    }
    (entities, dependencies)
}
