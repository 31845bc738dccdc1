//! Rule-based keyword encoders and the harness that trains a matched decoder for each.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Sentence};
use crate::decoder::{fit_decoder, DecoderConfig, DecoderParams, FitConfig, FitHistory};
use crate::encoder::{extract_keywords, KeepMask, KeepProbabilities, KeywordSequence, KeywordSource};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_scheme, EvalConfig, Scheme, TradeoffPoint};

const STOPWORDS: &str = include_str!("../data/stopwords.txt");
const STOPWORD_HEADER: &str = "# kwcomplete-stopwords v1";

/// Keeps every token independently with probability `delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Unif {
    pub delta: f64,
}

impl Unif {
    pub fn new(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Unif { delta })
    }
}

impl KeywordSource for Unif {
    fn name(&self) -> String {
        format!("unif({})", self.delta)
    }

    fn keep_probabilities(&self, sentence: &Sentence) -> Result<KeepProbabilities> {
        KeepProbabilities::new(vec![self.delta; sentence.len()])
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&delta) {
        Ok(())
    } else {
        Err(Error::Config(format!("delta must lie in [0, 1], got {delta}")))
    }
}

/// A versioned list of stopwords, one per line after the header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StopwordLexicon {
    words: HashSet<String>,
}

impl StopwordLexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(STOPWORD_HEADER) {
            return Err(Error::Format { what: "stopword lexicon", detail: format!("expected header {STOPWORD_HEADER:?}") });
        }
        let words: HashSet<String> = lines.map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
        if words.is_empty() {
            return Err(Error::Format { what: "stopword lexicon", detail: "no entries".into() });
        }
        Ok(StopwordLexicon { words })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// The bundled English list.
    pub fn bundled() -> Self {
        Self::parse(STOPWORDS).expect("bundled stopword list is well formed")
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Keeps non-stopwords always and each stopword with probability `delta`.
#[derive(Clone, Debug)]
pub struct Stopword {
    pub delta: f64,
    pub lexicon: StopwordLexicon,
}

impl Stopword {
    pub fn new(delta: f64, lexicon: StopwordLexicon) -> Result<Self> {
        check_delta(delta)?;
        Ok(Stopword { delta, lexicon })
    }
}

impl KeywordSource for Stopword {
    fn name(&self) -> String {
        format!("stopword({})", self.delta)
    }

    fn keep_probabilities(&self, sentence: &Sentence) -> Result<KeepProbabilities> {
        KeepProbabilities::new(
            sentence.tokens.iter().map(|t| if self.lexicon.contains(t) { self.delta } else { 1.0 }).collect(),
        )
    }
}

pub fn unif_encode(sentence: &Sentence, delta: f64, rng: &mut dyn RngCore) -> Result<(KeepMask, KeywordSequence)> {
    let mask = Unif::new(delta)?.keep_probabilities(sentence)?.sample(rng);
    let kw = extract_keywords(sentence, &mask)?;
    Ok((mask, kw))
}

pub fn stopword_encode(
    sentence: &Sentence,
    delta: f64,
    lexicon: &StopwordLexicon,
    rng: &mut dyn RngCore,
) -> Result<(KeepMask, KeywordSequence)> {
    let mask = Stopword::new(delta, lexicon.clone())?.keep_probabilities(sentence)?.sample(rng);
    let kw = extract_keywords(sentence, &mask)?;
    Ok((mask, kw))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Unif,
    Stopword,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub delta: f64,
}

impl fmt::Display for BaselineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BaselineKind::Unif => write!(f, "unif({})", self.delta),
            BaselineKind::Stopword => write!(f, "stopword({})", self.delta),
        }
    }
}

impl BaselineConfig {
    pub fn encoder(&self, lexicon: &StopwordLexicon) -> Result<Box<dyn KeywordSource>> {
        Ok(match self.kind {
            BaselineKind::Unif => Box::new(Unif::new(self.delta)?),
            BaselineKind::Stopword => Box::new(Stopword::new(self.delta, lexicon.clone())?),
        })
    }
}

/// One trained baseline: its decoder, training history and test-set point.
pub struct BaselineRun {
    pub config: BaselineConfig,
    pub decoder: DecoderParams,
    pub history: FitHistory,
    pub point: TradeoffPoint,
}

/// Trains a fresh decoder against each baseline encoder and evaluates it on the test split.
pub fn sweep_baseline(
    data: &CorpusSplit,
    configs: &[BaselineConfig],
    lexicon: &StopwordLexicon,
    decoder_config: DecoderConfig,
    fit: &FitConfig,
    eval: &EvalConfig,
) -> Result<Vec<BaselineRun>> {
    if configs.is_empty() {
        return Err(Error::Config("no baseline configurations given".into()));
    }
    configs
        .iter()
        .map(|cfg| {
            run_baseline(data, cfg, lexicon, decoder_config, fit, eval)
                .map_err(|e| e.context(format!("baseline {cfg}")))
        })
        .collect()
}

fn run_baseline(
    data: &CorpusSplit,
    cfg: &BaselineConfig,
    lexicon: &StopwordLexicon,
    decoder_config: DecoderConfig,
    fit: &FitConfig,
    eval: &EvalConfig,
) -> Result<BaselineRun> {
    let encoder = cfg.encoder(lexicon)?;
    let mut init = ChaCha8Rng::seed_from_u64(fit.seed);
    let decoder = DecoderParams::new(data.vocab.len(), decoder_config, &mut init);
    let (decoder, history) = fit_decoder(decoder, encoder.as_ref(), data, fit)?;
    let scheme = Scheme {
        name: cfg.to_string(),
        knob: "delta".into(),
        knob_value: cfg.delta,
        encoder: encoder.as_ref(),
        decoder: &decoder,
    };
    let point = evaluate_scheme(&scheme, &data.vocab, &data.test, eval)?;
    log::info!("{cfg}: retention {:.3}, exact match {:.3}", point.retention, point.exact_match);
    Ok(BaselineRun { config: *cfg, decoder, history, point })
}
