//! WordPiece vocabulary construction and word <-> subword conversion.
//!
//! Vocabulary construction is frequency-based piece harvesting rather than
//! likelihood training: it only has to produce deterministic WordPiece-style
//! segmentations at desk scale. Encoding is greedy longest-match-first with a
//! `##` continuation prefix; a word with no valid segmentation becomes a
//! single UNK subword. Word-to-subword alignment is preserved because the
//! graph builder maps word-level annotations onto subword nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

pub const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[BOS]", "[EOS]"];
pub const CONTINUATION: &str = "##";

/// Immutable token <-> id mapping. Ids are dense in `[0, len)` with the four
/// specials pinned to ids 0..4. Freely shareable; encode/decode are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Vocab {
    /// Build from an id-ordered token list; the first four entries must be
    /// the specials and duplicates are rejected.
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() {
            return Err(Error::VocabFile {
                path: "<memory>".into(),
                reason: "fewer tokens than specials".into(),
            });
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens[i] != *s {
                return Err(Error::VocabFile {
                    path: "<memory>".into(),
                    reason: format!("token {i} must be {s}, found {:?}", tokens[i]),
                });
            }
        }
        Vocab::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if lookup.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::VocabFile {
                    path: "<memory>".into(),
                    reason: format!("duplicate token {tok:?}"),
                });
            }
        }
        Ok(Vocab { tokens, lookup })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.lookup.contains_key(token)
    }

    /// One token per line, line number = id; the first four lines are the
    /// specials.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for tok in &self.tokens {
            writeln!(w, "{tok}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let tokens: Vec<String> = std::io::BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()?;
        let display = path.display().to_string();
        if tokens.len() < SPECIALS.len() {
            return Err(Error::VocabFile {
                path: display,
                reason: "fewer lines than special tokens".into(),
            });
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens[i] != *s {
                return Err(Error::VocabFile {
                    path: display,
                    reason: format!("line {i} must be {s}, found {:?}", tokens[i]),
                });
            }
        }
        Vocab::from_tokens(tokens).map_err(|e| match e {
            Error::VocabFile { reason, .. } => Error::VocabFile {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Subword encoding of a word sequence with per-word alignment spans.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedText {
    pub ids: Vec<u32>,
    pub pieces: Vec<String>,
    /// `spans[w] = [start, end)` into `ids`/`pieces` for word `w`. Spans are
    /// contiguous, ordered and jointly cover every subword.
    pub spans: Vec<(usize, usize)>,
}

impl TokenizedText {
    pub fn n_subwords(&self) -> usize {
        self.ids.len()
    }

    pub fn n_words(&self) -> usize {
        self.spans.len()
    }

    /// Subword index range of a contiguous word range `[start, end)`.
    pub fn subword_range(&self, word_start: usize, word_end: usize) -> (usize, usize) {
        (self.spans[word_start].0, self.spans[word_end - 1].1)
    }
}

fn normalize(word: &str) -> String {
    word.to_lowercase()
}

/// Build a vocabulary by harvesting frequent substrings of the corpus words.
/// Contains the specials, every single character seen (word-initial and
/// continuation form), and the most frequent longer pieces up to `max_size`.
/// Deterministic given identical input.
pub fn build_vocab<S: AsRef<str>>(
    corpus: impl IntoIterator<Item = impl AsRef<[S]>>,
    max_size: usize,
    min_freq: u64,
) -> Result<Vocab> {
    if max_size <= SPECIALS.len() {
        return Err(Error::VocabTooSmall(SPECIALS.len()));
    }
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    for seq in corpus {
        for w in seq.as_ref() {
            let w = normalize(w.as_ref());
            if !w.is_empty() {
                *word_freq.entry(w).or_insert(0) += 1;
            }
        }
    }
    if word_freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut chars: BTreeSet<char> = BTreeSet::new();
    let mut piece_freq: BTreeMap<String, u64> = BTreeMap::new();
    for (word, freq) in &word_freq {
        let cs: Vec<char> = word.chars().collect();
        chars.extend(cs.iter().copied());
        for start in 0..cs.len() {
            for end in (start + 2)..=cs.len() {
                let body: String = cs[start..end].iter().collect();
                let piece = if start == 0 {
                    body
                } else {
                    format!("{CONTINUATION}{body}")
                };
                *piece_freq.entry(piece).or_insert(0) += freq;
            }
        }
    }

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    for c in &chars {
        tokens.push(c.to_string());
        tokens.push(format!("{CONTINUATION}{c}"));
    }
    tokens.truncate(max_size);

    // Highest frequency first; prefer longer pieces on ties, then
    // lexicographic order, so the result is a total order.
    let mut candidates: Vec<(&String, u64)> = piece_freq
        .iter()
        .filter(|(_, &f)| f >= min_freq)
        .map(|(p, &f)| (p, f))
        .collect();
    candidates.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(b.0.chars().count().cmp(&a.0.chars().count()))
            .then(a.0.cmp(b.0))
    });
    for (piece, _) in candidates {
        if tokens.len() >= max_size {
            break;
        }
        tokens.push(piece.clone());
    }

    Vocab::from_tokens(tokens)
}

/// Greedy longest-match-first WordPiece segmentation with alignment.
pub fn encode_words<S: AsRef<str>>(words: &[S], vocab: &Vocab) -> Result<TokenizedText> {
    if words.is_empty() {
        return Err(Error::EmptyWords);
    }
    let mut ids = Vec::new();
    let mut pieces = Vec::new();
    let mut spans = Vec::with_capacity(words.len());
    for word in words {
        let start = ids.len();
        let word = normalize(word.as_ref());
        match segment_word(&word, vocab) {
            Some(segs) => {
                for (piece, id) in segs {
                    pieces.push(piece);
                    ids.push(id);
                }
            }
            None => {
                pieces.push(SPECIALS[UNK as usize].to_string());
                ids.push(UNK);
            }
        }
        spans.push((start, ids.len()));
    }
    Ok(TokenizedText { ids, pieces, spans })
}

fn segment_word(word: &str, vocab: &Vocab) -> Option<Vec<(String, u32)>> {
    if word.is_empty() {
        return None;
    }
    let cs: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start < cs.len() {
        let mut matched = None;
        for end in (start + 1..=cs.len()).rev() {
            let body: String = cs[start..end].iter().collect();
            let piece = if start == 0 {
                body
            } else {
                format!("{CONTINUATION}{body}")
            };
            if let Some(id) = vocab.id(&piece) {
                matched = Some((piece, id, end));
                break;
            }
        }
        match matched {
            Some((piece, id, end)) => {
                out.push((piece, id));
                start = end;
            }
            None => return None,
        }
    }
    Some(out)
}

/// Strip continuation prefixes, join pieces into words, drop specials.
/// Inverse of `encode_words` on words expressible in the vocabulary.
pub fn decode_ids(ids: &[u32], vocab: &Vocab) -> Result<String> {
    let mut words: Vec<String> = Vec::new();
    for &id in ids {
        if id == PAD || id == BOS || id == EOS {
            continue;
        }
        let tok = vocab.token(id).ok_or(Error::UnknownTokenId(id))?;
        if let Some(rest) = tok.strip_prefix(CONTINUATION) {
            match words.last_mut() {
                Some(last) => last.push_str(rest),
                None => words.push(rest.to_string()),
            }
        } else {
            words.push(tok.to_string());
        }
    }
    Ok(words.join(" "))
}
