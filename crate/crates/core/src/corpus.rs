//! Sentence tokenization, vocabularies, and deterministic train/test splits.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SHIFT: usize = 4;
pub const NUM_RESERVED: usize = 5;

pub const DEFAULT_MARKER: &str = "<shift>";
const VOCAB_HEADER: &str = "# kwcomplete-vocab v1";

fn is_sentence_punct(c: char) -> bool {
    matches!(c, '.' | ',' | '!' | '?')
}

fn is_punct_token(tok: &str) -> bool {
    !tok.is_empty() && tok.chars().all(is_sentence_punct)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    /// Token inserted before every word that starts with an uppercase letter.
    pub marker: String,
    /// Detach trailing `.,!?` characters as separate tokens.
    pub split_punctuation: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { marker: DEFAULT_MARKER.to_string(), split_punctuation: true }
    }
}

/// Splits a raw line into tokens, lowering capitalized words behind the marker token.
pub fn tokenize(raw: &str, config: &TokenizerConfig) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    for word in raw.split_whitespace() {
        let (body, tail) = if config.split_punctuation {
            let cut = word.trim_end_matches(is_sentence_punct).len();
            word.split_at(cut)
        } else {
            (word, "")
        };
        if !body.is_empty() {
            if body.chars().next().is_some_and(char::is_uppercase) {
                tokens.push(config.marker.clone());
                tokens.push(body.to_lowercase());
            } else {
                tokens.push(body.to_string());
            }
        }
        tokens.extend(tail.chars().map(String::from));
    }
    if tokens.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(tokens)
}

/// Inverse of [`tokenize`] up to whitespace and punctuation-split normalization.
pub fn detokenize<S: AsRef<str>>(tokens: &[S], marker: &str) -> String {
    let mut out = String::new();
    let mut capitalize = false;
    for tok in tokens {
        let tok = tok.as_ref();
        if tok == marker {
            capitalize = true;
            continue;
        }
        if !out.is_empty() && !is_punct_token(tok) {
            out.push(' ');
        }
        if capitalize {
            let mut chars = tok.chars();
            if let Some(first) = chars.next() {
                out.extend(first.to_uppercase());
                out.push_str(chars.as_str());
            }
            capitalize = false;
        } else {
            out.push_str(tok);
        }
    }
    out
}

/// A tokenized sentence with its vocabulary ids. Out-of-vocabulary tokens carry [`UNK`]
/// in `ids` but keep their surface string in `tokens`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, vocab: &Vocabulary) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        if tokens.iter().any(String::is_empty) {
            return Err(Error::Format { what: "sentence", detail: "empty token".into() });
        }
        let ids = tokens.iter().map(|t| vocab.id(t)).collect();
        Ok(Sentence { tokens, ids })
    }

    pub fn parse(raw: &str, tokenizer: &TokenizerConfig, vocab: &Vocabulary) -> Result<Self> {
        Sentence::new(tokenize(raw, tokenizer)?, vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surface(&self, marker: &str) -> String {
        detokenize(&self.tokens, marker)
    }

    fn key(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Bidirectional token/index map with a fixed reserved block at indices `0..NUM_RESERVED`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn reserved(marker: &str) -> Vec<String> {
        ["<pad>", "<unk>", "<s>", "</s>", marker].iter().map(|s| s.to_string()).collect()
    }

    /// Builds from explicit non-reserved tokens, in order.
    pub fn from_tokens<I, S>(marker: &str, tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = Self::reserved(marker);
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_full_list(all)
    }

    fn from_full_list(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(['\t', '\n', '\r']) {
                return Err(Error::Format { what: "vocabulary", detail: format!("bad token {t:?}") });
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format { what: "vocabulary", detail: format!("duplicate token {t:?}") });
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Ranks tokens by frequency (ties lexicographic), keeps those with at least `min_freq`
    /// occurrences, and caps the non-reserved entries at `max_size`.
    pub fn build<'a, I>(sentences: I, marker: &str, max_size: Option<usize>, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if let Some(max) = max_size {
            if max < NUM_RESERVED {
                return Err(Error::Config(format!(
                    "vocabulary size {max} is smaller than the {NUM_RESERVED} reserved tokens"
                )));
            }
        }
        let reserved = Self::reserved(marker);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for sentence in sentences {
            any = true;
            for tok in sentence {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::Config("cannot build a vocabulary from zero sentences".into()));
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !reserved.iter().any(|r| r == t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if let Some(max) = max_size {
            ranked.truncate(max);
        }
        Self::from_tokens(marker, ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn marker(&self) -> &str {
        &self.tokens[SHIFT]
    }

    /// Index of `token`, or [`UNK`] if absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::with_capacity(self.tokens.len() * 12);
        out.push_str(VOCAB_HEADER);
        out.push('\n');
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(VOCAB_HEADER) {
            return Err(Error::Format { what: "vocabulary", detail: "missing header".into() });
        }
        let mut tokens = Vec::new();
        for (expected, line) in lines.enumerate() {
            let (tok, idx) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Format { what: "vocabulary", detail: format!("bad line {line:?}") })?;
            if idx.parse::<usize>().ok() != Some(expected) {
                return Err(Error::Format { what: "vocabulary", detail: format!("index out of order at {line:?}") });
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < NUM_RESERVED {
            return Err(Error::Format { what: "vocabulary", detail: "reserved block incomplete".into() });
        }
        Self::from_full_list(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_file_string().as_bytes())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(16);
    for b in digest.iter().take(8) {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Maximum tokens per sentence, counting marker and punctuation tokens.
    pub max_sentence_length: usize,
    /// Cap on non-reserved vocabulary entries; `None` keeps every token.
    pub vocab_size: Option<usize>,
    pub min_freq: usize,
    pub seed: u64,
    /// Training sentences to take; `None` takes every survivor not used for test.
    pub train_size: Option<usize>,
    pub test_size: usize,
    pub tokenizer: TokenizerConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            max_sentence_length: 16,
            vocab_size: Some(2000),
            min_freq: 1,
            seed: 7,
            train_size: None,
            test_size: 500,
            tokenizer: TokenizerConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub lines: usize,
    pub empty: usize,
    pub too_long: usize,
    pub survivors: usize,
}

/// Train and test sentences sharing one vocabulary built from the training side.
#[derive(Clone, Debug)]
pub struct CorpusSplit {
    pub train: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub vocab: Vocabulary,
    pub config: CorpusConfig,
    pub stats: LoadStats,
}

impl CorpusSplit {
    /// Wraps already-indexed sentences, e.g. for small in-memory experiments.
    pub fn from_parts(train: Vec<Sentence>, test: Vec<Sentence>, vocab: Vocabulary) -> Self {
        let survivors = train.len() + test.len();
        CorpusSplit {
            train,
            test,
            config: CorpusConfig { vocab_size: Some(vocab.len() - NUM_RESERVED), ..CorpusConfig::default() },
            vocab,
            stats: LoadStats { lines: survivors, empty: 0, too_long: 0, survivors },
        }
    }

    /// Hash over the config, vocabulary, and test set.
    pub fn fingerprint(&self) -> String {
        let mut h = serde_json::to_string(&self.config).unwrap_or_default();
        h.push_str(&self.vocab.fingerprint());
        h.push_str(&self.test_fingerprint());
        sha256_hex(h.as_bytes())
    }

    pub fn test_fingerprint(&self) -> String {
        sentences_fingerprint(&self.test)
    }

    pub fn marker(&self) -> &str {
        &self.config.tokenizer.marker
    }
}

pub fn sentences_fingerprint(sentences: &[Sentence]) -> String {
    let mut all = String::new();
    for s in sentences {
        all.push_str(&s.key());
        all.push('\n');
    }
    sha256_hex(all.as_bytes())
}

/// Tokenizes, filters by length, shuffles with the config seed, and splits.
pub fn split_lines<'a, I>(lines: I, config: &CorpusConfig) -> Result<CorpusSplit>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut stats = LoadStats::default();
    let mut pool = Vec::new();
    for line in lines {
        stats.lines += 1;
        match tokenize(line, &config.tokenizer) {
            Ok(tokens) if tokens.len() <= config.max_sentence_length => pool.push(tokens),
            Ok(_) => stats.too_long += 1,
            Err(_) => stats.empty += 1,
        }
    }
    stats.survivors = pool.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    pool.shuffle(&mut rng);

    let mut test_keys = HashSet::new();
    let mut test = Vec::with_capacity(config.test_size);
    let mut rest = Vec::with_capacity(pool.len());
    for tokens in pool {
        let key = tokens.join(" ");
        if test.len() < config.test_size && !test_keys.contains(&key) {
            test_keys.insert(key);
            test.push(tokens);
        } else {
            rest.push((key, tokens));
        }
    }
    if test.len() < config.test_size {
        return Err(Error::InsufficientData { needed: config.test_size, found: test.len() });
    }
    let mut train: Vec<Vec<String>> =
        rest.into_iter().filter(|(k, _)| !test_keys.contains(k)).map(|(_, t)| t).collect();
    match config.train_size {
        Some(n) if train.len() < n => {
            return Err(Error::InsufficientData { needed: n + config.test_size, found: train.len() + test.len() })
        }
        Some(n) => train.truncate(n),
        None if train.is_empty() => return Err(Error::InsufficientData { needed: config.test_size + 1, found: test.len() }),
        None => {}
    }

    let vocab = Vocabulary::build(
        train.iter().map(Vec::as_slice),
        &config.tokenizer.marker,
        config.vocab_size,
        config.min_freq,
    )?;
    let to_sentences = |v: Vec<Vec<String>>| -> Result<Vec<Sentence>> {
        v.into_iter().map(|t| Sentence::new(t, &vocab)).collect()
    };
    Ok(CorpusSplit {
        train: to_sentences(train)?,
        test: to_sentences(test)?,
        vocab: vocab.clone(),
        config: config.clone(),
        stats,
    })
}

/// Reads a UTF-8 file with one sentence per line and splits it.
pub fn load_split(path: &Path, config: &CorpusConfig) -> Result<CorpusSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    split_lines(text.lines(), config)
}
