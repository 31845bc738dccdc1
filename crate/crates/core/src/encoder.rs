//! The keyword encoder: per-token keep probabilities, Bernoulli masks, and the keyword
//! subsequence they select.

use ndarray::Array2;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, PAD};
use crate::error::{Error, Result};
use crate::graph::{sigmoid, Graph, Var};
use crate::lstm::LstmCell;
use crate::params::ParamSet;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` when taking log-likelihoods.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub init_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { embed_dim: 300, hidden: 300, init_scale: 0.1 }
    }
}

/// Per-token keep probabilities `p_i` aligned with a sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeepProbabilities(Vec<f64>);

impl KeepProbabilities {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Format { what: "keep probabilities", detail: format!("{p} outside [0, 1]") });
        }
        Ok(KeepProbabilities(probs))
    }

    /// Logistic squashing of raw logits; `±∞` map to exactly 1 and 0.
    pub fn from_logits(logits: &[f64]) -> Self {
        KeepProbabilities(logits.iter().map(|&l| sigmoid(l)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Independent Bernoulli draw per position.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> KeepMask {
        KeepMask(self.0.iter().map(|&p| rng.random::<f64>() < p).collect())
    }

    /// Deterministic mode: keep iff `p ≥ 0.5`.
    pub fn threshold(&self) -> KeepMask {
        KeepMask(self.0.iter().map(|&p| p >= 0.5).collect())
    }

    /// Expected number of kept tokens, `Σ p_i`.
    pub fn expected_cost(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeepMask(pub Vec<bool>);

impl KeepMask {
    pub fn all(len: usize, keep: bool) -> Self {
        KeepMask(vec![keep; len])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        KeepMask(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.0.iter().filter(|&&m| m).count()
    }

    /// Every mask of the given length, in binary counting order.
    pub fn enumerate(len: usize) -> impl Iterator<Item = KeepMask> {
        assert!(len < 32, "enumeration limited to short sentences");
        (0u32..1 << len).map(move |bits| KeepMask((0..len).map(|i| bits >> i & 1 == 1).collect()))
    }
}

/// The kept tokens of a sentence, in source order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSequence {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    /// Source positions of each kept token.
    pub positions: Vec<usize>,
}

impl KeywordSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keywords typed directly by a user rather than extracted from a sentence.
    pub fn from_sentence(sentence: &Sentence) -> Self {
        KeywordSequence {
            tokens: sentence.tokens.clone(),
            ids: sentence.ids.clone(),
            positions: (0..sentence.len()).collect(),
        }
    }
}

pub fn extract_keywords(sentence: &Sentence, mask: &KeepMask) -> Result<KeywordSequence> {
    if mask.len() != sentence.len() {
        return Err(Error::LengthMismatch { expected: sentence.len(), actual: mask.len() });
    }
    let mut out = KeywordSequence { tokens: Vec::new(), ids: Vec::new(), positions: Vec::new() };
    for (i, _) in mask.0.iter().enumerate().filter(|(_, &m)| m) {
        out.tokens.push(sentence.tokens[i].clone());
        out.ids.push(sentence.ids[i]);
        out.positions.push(i);
    }
    Ok(out)
}

/// `log q(m | x) = Σ m_i ln p_i + (1 − m_i) ln(1 − p_i)` with clamped probabilities.
pub fn mask_log_prob(probs: &KeepProbabilities, mask: &KeepMask) -> Result<f64> {
    if probs.len() != mask.len() {
        return Err(Error::LengthMismatch { expected: probs.len(), actual: mask.len() });
    }
    Ok(probs
        .0
        .iter()
        .zip(&mask.0)
        .map(|(&p, &m)| {
            let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if m { q.ln() } else { (1.0 - q).ln() }
        })
        .sum())
}

pub fn expected_cost(probs: &KeepProbabilities) -> f64 {
    probs.expected_cost()
}

/// How evaluation turns keep probabilities into a mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    Sampled,
    Thresholded,
}

impl std::fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncodingMode::Sampled => "sampled",
            EncodingMode::Thresholded => "thresholded",
        })
    }
}

/// Anything that turns a sentence into keywords: learned encoders and rule-based baselines.
pub trait KeywordSource: Send + Sync {
    fn name(&self) -> String;

    fn keep_probabilities(&self, sentence: &Sentence) -> Result<KeepProbabilities>;

    fn encode(&self, sentence: &Sentence, mode: EncodingMode, rng: &mut dyn RngCore) -> Result<KeepMask> {
        let probs = self.keep_probabilities(sentence)?;
        Ok(match mode {
            EncodingMode::Sampled => probs.sample(rng),
            EncodingMode::Thresholded => probs.threshold(),
        })
    }
}

/// Keeps every token.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeepAll;

impl KeywordSource for KeepAll {
    fn name(&self) -> String {
        "keep-all".into()
    }

    fn keep_probabilities(&self, sentence: &Sentence) -> Result<KeepProbabilities> {
        Ok(KeepProbabilities(vec![1.0; sentence.len()]))
    }
}

/// Drops every token.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeepNone;

impl KeywordSource for KeepNone {
    fn name(&self) -> String {
        "keep-none".into()
    }

    fn keep_probabilities(&self, sentence: &Sentence) -> Result<KeepProbabilities> {
        Ok(KeepProbabilities(vec![0.0; sentence.len()]))
    }
}

/// Learnable encoder parameters: embedding, unidirectional LSTM, and a scalar projection.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub params: ParamSet,
    pub config: EncoderConfig,
    pub vocab_size: usize,
    embedding: usize,
    lstm: LstmCell,
    proj_weight: usize,
    proj_bias: usize,
}

/// Keep probabilities for a padded batch, `B×T`, plus the validity mask.
pub struct EncoderBatch {
    pub probs: Var,
    pub valid: Array2<f64>,
}

impl EncoderParams {
    pub fn new<R: Rng>(vocab_size: usize, config: EncoderConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let s = config.init_scale;
        let embedding = params.insert_uniform("encoder.embedding", vocab_size, config.embed_dim, s, rng);
        let lstm = LstmCell::new(&mut params, "encoder.lstm", config.embed_dim, config.hidden, s, rng);
        let proj_weight = params.insert_uniform("encoder.proj.weight", config.hidden, 1, s, rng);
        let proj_bias = params.insert_uniform("encoder.proj.bias", 1, 1, s, rng);
        EncoderParams { params, config, vocab_size, embedding, lstm, proj_weight, proj_bias }
    }

    /// Rebuilds from stored tensors, checking names and shapes against the layout.
    pub fn from_param_set(vocab_size: usize, config: EncoderConfig, params: ParamSet) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut template = Self::new(vocab_size, config, &mut rng);
        check_layout(&template.params, &params, "encoder")?;
        template.params = params;
        Ok(template)
    }

    pub fn embedding_id(&self) -> usize {
        self.embedding
    }

    pub fn projection_ids(&self) -> (usize, usize) {
        (self.proj_weight, self.proj_bias)
    }

    fn check_ids(&self, sentence: &Sentence) -> Result<()> {
        match sentence.ids.iter().find(|&&id| id >= self.vocab_size) {
            Some(&id) => Err(Error::IdOutOfRange { id, size: self.vocab_size }),
            None => Ok(()),
        }
    }

    /// Runs the encoder over a right-padded batch.
    pub fn forward_batch(&self, g: &mut Graph, batch: &[&Sentence]) -> Result<EncoderBatch> {
        for s in batch {
            self.check_ids(s)?;
        }
        let rows = batch.len();
        let steps = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        let table = g.param(&self.params, self.embedding);
        let cell = self.lstm.bind(g, &self.params);
        let w = g.param(&self.params, self.proj_weight);
        let b = g.param(&self.params, self.proj_bias);
        let (mut h, mut c) = cell.zero_state(g, rows);
        let mut columns = Vec::with_capacity(steps);
        let mut valid = Array2::zeros((rows, steps));
        for t in 0..steps {
            let ids: Vec<usize> = batch.iter().map(|s| s.ids.get(t).copied().unwrap_or(PAD)).collect();
            for (r, s) in batch.iter().enumerate() {
                if t < s.len() {
                    valid[[r, t]] = 1.0;
                }
            }
            let x = g.gather(table, &ids);
            (h, c) = cell.step(g, x, h, c);
            let logit = g.matmul(h, w);
            let logit = g.add_row(logit, b);
            columns.push(g.sigmoid(logit));
        }
        let probs = g.concat_cols(&columns);
        Ok(EncoderBatch { probs, valid })
    }

    pub fn keep_probabilities(&self, sentence: &Sentence) -> Result<KeepProbabilities> {
        let mut g = Graph::new();
        let out = self.forward_batch(&mut g, &[sentence])?;
        Ok(KeepProbabilities(g.value(out.probs).row(0).to_vec()))
    }
}

impl KeywordSource for EncoderParams {
    fn name(&self) -> String {
        "learned".into()
    }

    fn keep_probabilities(&self, sentence: &Sentence) -> Result<KeepProbabilities> {
        EncoderParams::keep_probabilities(self, sentence)
    }
}

pub(crate) fn check_layout(expected: &ParamSet, actual: &ParamSet, what: &'static str) -> Result<()> {
    if expected.len() != actual.len() {
        return Err(Error::Format {
            what: "parameter block",
            detail: format!("{what}: expected {} tensors, found {}", expected.len(), actual.len()),
        });
    }
    for ((en, ev), (an, av)) in expected.iter().zip(actual.iter()) {
        if en != an || ev.dim() != av.dim() {
            return Err(Error::Format {
                what: "parameter block",
                detail: format!("{what}: expected {en} {:?}, found {an} {:?}", ev.dim(), av.dim()),
            });
        }
    }
    if !actual.all_finite() {
        return Err(Error::Format { what: "parameter block", detail: format!("{what}: non-finite value") });
    }
    Ok(())
}
