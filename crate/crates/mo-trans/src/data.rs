//! Synthetic seq2seq tasks and plain parallel-corpus ingestion.
//!
//! The synthetic generator provides deterministic copy/reverse/sort tasks as
//! a desk-scale substitute for a real translation corpus; the TSV loader
//! ingests `source<TAB>target` files with whitespace tokenization. Both
//! produce a [`Corpus`] with disjoint train/validation splits and fixed
//! reserved ids.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error("impossible parameters: {0}")]
    ImpossibleParams(String),
    #[error("corrupt corpus cache: {0}")]
    CorruptCache(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Token ↔ id map with the fixed reserved layout pad=0, bos=1, eos=2, unk=3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocab {
    /// Build from content tokens (reserved tokens are added automatically).
    /// Duplicates keep their first position.
    pub fn from_tokens<I, S>(tokens: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, u32> =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for token in tokens {
            let token = token.into();
            if !token_to_id.contains_key(&token) {
                token_to_id.insert(token.clone(), id_to_token.len() as u32);
                id_to_token.push(token);
            }
        }
        Vocab { id_to_token, token_to_id }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id for a token; unknown tokens map to [`UNK_ID`].
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Token for an id; out-of-range ids render as the unk token.
    pub fn token(&self, id: u32) -> &str {
        self.id_to_token.get(id as usize).map_or(RESERVED[UNK_ID as usize], String::as_str)
    }

    /// Whitespace-tokenize and encode one line.
    pub fn encode_line(&self, line: &str) -> Vec<u32> {
        line.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Render ids back to a space-joined token string.
    pub fn decode_ids(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(id));
        }
        out
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.id_to_token
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(id_to_token: Vec<String>) -> Result<Self, String> {
        if id_to_token.len() < RESERVED.len()
            || id_to_token[..RESERVED.len()] != RESERVED.map(str::to_string)
        {
            return Err("vocab must start with the reserved tokens".into());
        }
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Vocab { id_to_token, token_to_id })
    }
}

/// One aligned sentence pair as token ids. Targets are wrapped in bos/eos;
/// sources are bare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

/// A train/validation split with its vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<SentencePair>,
    pub validation: Vec<SentencePair>,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
}

/// The built-in synthetic tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    /// Target repeats the source.
    Copy,
    /// Target is the source reversed.
    Reverse,
    /// Target is the source sorted ascending by token id.
    Sort,
}

impl SyntheticTask {
    fn apply(self, source: &[u32]) -> Vec<u32> {
        let mut out = source.to_vec();
        match self {
            SyntheticTask::Copy => {}
            SyntheticTask::Reverse => out.reverse(),
            SyntheticTask::Sort => out.sort_unstable(),
        }
        out
    }
}

impl fmt::Display for SyntheticTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticTask::Copy => "copy",
            SyntheticTask::Reverse => "reverse",
            SyntheticTask::Sort => "sort",
        })
    }
}

fn wrap_target(ids: Vec<u32>) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(BOS_ID);
    out.extend(ids);
    out.push(EOS_ID);
    out
}

/// 90/10 split sizes with a guaranteed non-empty validation set.
fn split_sizes(pairs: usize) -> (usize, usize) {
    let validation = (pairs / 10).max(1);
    (pairs - validation, validation)
}

/// Generate a synthetic task corpus: unique random sources (so the 90/10
/// split is disjoint by construction), task-transformed targets, shared
/// numeric vocabulary. Deterministic per seed.
pub fn gen_synthetic(
    task: SyntheticTask,
    pairs: usize,
    vocab_size: usize,
    length_range: [usize; 2],
    seed: u64,
) -> Result<Corpus, DataError> {
    let reserved = RESERVED.len();
    let bad = |msg: String| Err(DataError::ImpossibleParams(msg));
    if vocab_size <= reserved {
        return bad(format!("vocab size {vocab_size} leaves no content tokens"));
    }
    let [min_len, max_len] = length_range;
    if min_len < 1 || min_len > max_len {
        return bad(format!("length range [{min_len}, {max_len}] must satisfy 1 <= min <= max"));
    }
    if pairs < 2 {
        return bad(format!("{pairs} pairs cannot be split into train and validation"));
    }
    let content = (vocab_size - reserved) as u128;
    let mut capacity: u128 = 0;
    for len in min_len..=max_len {
        let mut combos: u128 = 1;
        for _ in 0..len {
            combos = combos.saturating_mul(content);
        }
        capacity = capacity.saturating_add(combos);
    }
    if capacity < pairs as u128 {
        return bad(format!("only {capacity} distinct sources exist, {pairs} requested"));
    }

    let mut rng = RngStream::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(pairs);
    let mut sources = Vec::with_capacity(pairs);
    let mut attempts = 0usize;
    while sources.len() < pairs {
        attempts += 1;
        if attempts > pairs.saturating_mul(200) {
            return bad(format!(
                "could not draw {pairs} unique sources from a space of {capacity}"
            ));
        }
        let len = rng.range_inclusive(min_len, max_len);
        let ids: Vec<u32> =
            (0..len).map(|_| reserved as u32 + rng.below(content as usize) as u32).collect();
        if seen.insert(ids.clone()) {
            sources.push(ids);
        }
    }

    let all: Vec<SentencePair> = sources
        .into_iter()
        .map(|source| {
            let target = wrap_target(task.apply(&source));
            SentencePair { source, target }
        })
        .collect();
    let (train_count, _) = split_sizes(pairs);
    let mut train = all;
    let validation = train.split_off(train_count);

    let vocab = Vocab::from_tokens((reserved..vocab_size).map(|i| i.to_string()));
    Ok(Corpus { train, validation, source_vocab: vocab.clone(), target_vocab: vocab })
}

/// Count tokens over lines and keep those at or above `min_freq`, in first
/// appearance order.
pub fn build_vocab<'a, I>(lines: I, min_freq: usize) -> Vocab
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for line in lines {
        for token in line.split_whitespace() {
            let count = counts.entry(token).or_insert(0);
            if *count == 0 {
                order.push(token);
            }
            *count += 1;
        }
    }
    Vocab::from_tokens(order.into_iter().filter(|t| counts[t] >= min_freq))
}

/// Load a `source<TAB>target` parallel corpus. The first 90% of lines form
/// the training split; vocabularies come from the training split only, so
/// validation-only tokens map to unk. Tokens under `min_freq` also map to
/// unk.
pub fn load_tsv(path: &Path, min_freq: usize) -> Result<Corpus, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut raw: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let (src, tgt) = line.split_once('\t').ok_or_else(|| DataError::MalformedLine {
            line: line_no,
            detail: "missing tab separator".into(),
        })?;
        if src.split_whitespace().next().is_none() || tgt.split_whitespace().next().is_none() {
            return Err(DataError::MalformedLine {
                line: line_no,
                detail: "empty source or target side".into(),
            });
        }
        raw.push((src.to_string(), tgt.to_string()));
    }
    if raw.len() < 2 {
        return Err(DataError::ImpossibleParams(format!(
            "{} lines cannot be split into train and validation",
            raw.len()
        )));
    }

    let (train_count, _) = split_sizes(raw.len());
    let source_vocab = build_vocab(raw[..train_count].iter().map(|(s, _)| s.as_str()), min_freq);
    let target_vocab = build_vocab(raw[..train_count].iter().map(|(_, t)| t.as_str()), min_freq);

    let encode = |pairs: &[(String, String)]| -> Vec<SentencePair> {
        pairs
            .iter()
            .map(|(s, t)| SentencePair {
                source: source_vocab.encode_line(s),
                target: wrap_target(target_vocab.encode_line(t)),
            })
            .collect()
    };
    Ok(Corpus {
        train: encode(&raw[..train_count]),
        validation: encode(&raw[train_count..]),
        source_vocab,
        target_vocab,
    })
}

/// One line of the corpus cache.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CacheLine {
    Header { source_vocab: Vocab, target_vocab: Vocab },
    Train { source: Vec<u32>, target: Vec<u32> },
    Validation { source: Vec<u32>, target: Vec<u32> },
}

impl Corpus {
    /// Write the corpus as JSON lines: a vocab header followed by one line
    /// per pair.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), DataError> {
        let mut file = fs::File::create(path).map_err(io_err(path))?;
        let mut write = |line: &CacheLine| -> Result<(), DataError> {
            let json = serde_json::to_string(line).expect("corpus serialization cannot fail");
            writeln!(file, "{json}").map_err(io_err(path))
        };
        write(&CacheLine::Header {
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
        })?;
        for p in &self.train {
            write(&CacheLine::Train { source: p.source.clone(), target: p.target.clone() })?;
        }
        for p in &self.validation {
            write(&CacheLine::Validation { source: p.source.clone(), target: p.target.clone() })?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Corpus, DataError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut lines = text.lines().enumerate();
        let (_, header) =
            lines.next().ok_or_else(|| DataError::CorruptCache("empty file".into()))?;
        let parsed: CacheLine = serde_json::from_str(header)
            .map_err(|e| DataError::CorruptCache(format!("line 1: {e}")))?;
        let CacheLine::Header { source_vocab, target_vocab } = parsed else {
            return Err(DataError::CorruptCache("first line is not a vocab header".into()));
        };
        let mut corpus =
            Corpus { train: Vec::new(), validation: Vec::new(), source_vocab, target_vocab };
        for (i, line) in lines {
            let parsed: CacheLine = serde_json::from_str(line)
                .map_err(|e| DataError::CorruptCache(format!("line {}: {e}", i + 1)))?;
            match parsed {
                CacheLine::Header { .. } => {
                    return Err(DataError::CorruptCache(format!(
                        "line {}: duplicate header",
                        i + 1
                    )))
                }
                CacheLine::Train { source, target } => {
                    corpus.train.push(SentencePair { source, target })
                }
                CacheLine::Validation { source, target } => {
                    corpus.validation.push(SentencePair { source, target })
                }
            }
        }
        Ok(corpus)
    }
}
