//! Keyword completion requests against a loaded checkpoint.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::encoder::KeywordSequence;
use crate::error::{Error, Result};
use crate::service::checkpoint::Checkpoint;

pub const MAX_BEAM_WIDTH: usize = 64;
pub const MAX_DECODE_LEN: usize = 64;

/// Keywords as one space-separated string or as a list of strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeywordsInput {
    Text(String),
    List(Vec<String>),
}

impl KeywordsInput {
    pub fn joined(&self) -> String {
        match self {
            KeywordsInput::Text(s) => s.clone(),
            KeywordsInput::List(xs) => xs.join(" "),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub keywords: KeywordsInput,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_beam_width")]
    pub beam_width: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_k() -> usize {
    3
}

fn default_beam_width() -> usize {
    5
}

fn default_max_len() -> usize {
    20
}

impl CompletionRequest {
    pub fn new(keywords: &str) -> Self {
        CompletionRequest {
            keywords: KeywordsInput::Text(keywords.to_string()),
            k: default_k(),
            beam_width: default_beam_width(),
            max_len: default_max_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keywords.joined().trim().is_empty() {
            return Err(Error::Validation("keywords must not be empty".into()));
        }
        if self.k == 0 || self.k > self.beam_width {
            return Err(Error::Validation(format!(
                "need 1 <= k <= beam_width, got k={}, beam_width={}",
                self.k, self.beam_width
            )));
        }
        if self.beam_width > MAX_BEAM_WIDTH {
            return Err(Error::Validation(format!("beam_width must be at most {MAX_BEAM_WIDTH}")));
        }
        if self.max_len == 0 || self.max_len > MAX_DECODE_LEN {
            return Err(Error::Validation(format!("max_len must lie in 1..={MAX_DECODE_LEN}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub sentence: String,
    /// Log-probability of the suggestion under the decoder.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub suggestions: Vec<Suggestion>,
    pub model_fingerprint: String,
    pub latency_ms: f64,
}

/// An immutable model ready to answer completion requests.
pub struct Model {
    pub checkpoint: Checkpoint,
}

impl Model {
    pub fn new(checkpoint: Checkpoint) -> Self {
        Model { checkpoint }
    }

    pub fn fingerprint(&self) -> &str {
        self.checkpoint.fingerprint()
    }

    /// Tokenizes the request's keywords with the corpus tokenizer.
    pub fn keywords(&self, request: &CompletionRequest) -> Result<KeywordSequence> {
        let ck = &self.checkpoint;
        let sentence = Sentence::parse(&request.keywords.joined(), &ck.meta.tokenizer, &ck.vocab).map_err(|e| match e {
            Error::EmptySentence => Error::Validation("keywords must not be empty".into()),
            other => other,
        })?;
        Ok(KeywordSequence::from_sentence(&sentence))
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let start = Instant::now();
        request.validate()?;
        let keywords = self.keywords(request)?;
        let ck = &self.checkpoint;
        let marker = &ck.meta.tokenizer.marker;
        let predictions =
            ck.decoder.beam_decode(&ck.vocab, &keywords, request.beam_width, request.k, request.max_len)?;
        let suggestions =
            predictions.iter().map(|p| Suggestion { sentence: p.surface(marker), score: p.log_prob }).collect();
        Ok(CompletionResponse {
            suggestions,
            model_fingerprint: self.fingerprint().to_string(),
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TokenizerConfig, Vocabulary};
    use crate::decoder::{DecoderConfig, DecoderParams};
    use crate::encoder::{EncoderConfig, EncoderParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let vocab = Vocabulary::from_tokens("<shift>", ["i", "will", "be", "late", "."]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = EncoderParams::new(vocab.len(), EncoderConfig { embed_dim: 4, hidden: 4, init_scale: 0.1 }, &mut rng);
        let dec = DecoderParams::new(vocab.len(), DecoderConfig { embed_dim: 4, hidden: 5, init_scale: 0.5 }, &mut rng);
        Model::new(Checkpoint::learned(vocab, TokenizerConfig::default(), enc, dec))
    }

    #[test]
    fn request_defaults_and_forms() {
        let r: CompletionRequest = serde_json::from_str(r#"{"keywords": "late ."}"#).unwrap();
        assert_eq!((r.k, r.beam_width, r.max_len), (3, 5, 20));
        let l: CompletionRequest = serde_json::from_str(r#"{"keywords": ["late", "."], "k": 2}"#).unwrap();
        assert_eq!(l.keywords.joined(), "late .");
        assert_eq!(l.k, 2);
    }

    #[test]
    fn contract() {
        let m = model();
        let mut req = CompletionRequest::new("10 minutes late");
        req.max_len = 6;
        let a = m.complete(&req).unwrap();
        assert!(!a.suggestions.is_empty() && a.suggestions.len() <= 3);
        assert!(a.suggestions.windows(2).all(|w| w[0].score >= w[1].score));
        let b = m.complete(&req).unwrap();
        assert_eq!(a.suggestions, b.suggestions);
        assert_eq!(a.model_fingerprint, m.fingerprint());
    }

    #[test]
    fn validation_errors() {
        let m = model();
        for bad in ["", "   "] {
            assert!(matches!(m.complete(&CompletionRequest::new(bad)), Err(Error::Validation(_))));
        }
        let mut req = CompletionRequest::new("late");
        req.k = 6;
        assert!(matches!(m.complete(&req), Err(Error::Validation(_))));
        req.k = 0;
        assert!(matches!(m.complete(&req), Err(Error::Validation(_))));
    }
}
