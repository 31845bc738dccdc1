//! Binary checkpoint format.
//!
//! Layout: `KCKP`, little-endian u32 version, then length-prefixed blocks (metadata JSON,
//! vocabulary text, optional encoder parameters, decoder parameters) and a SHA-256 trailer
//! over everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BaselineConfig, StopwordLexicon};
use crate::corpus::{TokenizerConfig, Vocabulary};
use crate::decoder::{DecoderConfig, DecoderParams};
use crate::encoder::{EncoderConfig, EncoderParams, KeywordSource};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::training::{DualState, TrainingConfig};

pub const MAGIC: &[u8; 4] = b"KCKP";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Which keyword encoder the checkpoint pairs with its decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EncoderSpec {
    Learned { config: EncoderConfig },
    Baseline { baseline: BaselineConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocab_fingerprint: String,
    /// Fingerprint of the corpus split the model was trained on, if any.
    pub corpus_fingerprint: Option<String>,
    pub tokenizer: TokenizerConfig,
    pub encoder: EncoderSpec,
    pub decoder: DecoderConfig,
    pub training: Option<TrainingConfig>,
    pub dual: Option<DualState>,
    /// Path of the training history file, relative to the checkpoint.
    pub history: Option<String>,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub vocab: Vocabulary,
    pub encoder: Option<EncoderParams>,
    pub decoder: DecoderParams,
}

impl Checkpoint {
    pub fn learned(
        vocab: Vocabulary,
        tokenizer: TokenizerConfig,
        encoder: EncoderParams,
        decoder: DecoderParams,
    ) -> Self {
        let meta = CheckpointMeta {
            vocab_fingerprint: vocab.fingerprint(),
            corpus_fingerprint: None,
            tokenizer,
            encoder: EncoderSpec::Learned { config: encoder.config },
            decoder: decoder.config,
            training: None,
            dual: None,
            history: None,
        };
        Checkpoint { meta, vocab, encoder: Some(encoder), decoder }
    }

    pub fn baseline(
        vocab: Vocabulary,
        tokenizer: TokenizerConfig,
        baseline: BaselineConfig,
        decoder: DecoderParams,
    ) -> Self {
        let meta = CheckpointMeta {
            vocab_fingerprint: vocab.fingerprint(),
            corpus_fingerprint: None,
            tokenizer,
            encoder: EncoderSpec::Baseline { baseline },
            decoder: decoder.config,
            training: None,
            dual: None,
            history: None,
        };
        Checkpoint { meta, vocab, encoder: None, decoder }
    }

    pub fn fingerprint(&self) -> &str {
        &self.meta.vocab_fingerprint
    }

    /// Fails unless the checkpoint's vocabulary matches `expected` (or `force` is set).
    pub fn check_fingerprint(&self, expected: &str, force: bool) -> Result<()> {
        if force || self.meta.vocab_fingerprint == expected {
            Ok(())
        } else {
            Err(Error::Fingerprint { checkpoint: self.meta.vocab_fingerprint.clone(), corpus: expected.to_string() })
        }
    }

    /// The keyword encoder this checkpoint describes.
    pub fn keyword_source(&self, lexicon: &StopwordLexicon) -> Result<Box<dyn KeywordSource>> {
        match (&self.meta.encoder, &self.encoder) {
            (EncoderSpec::Learned { .. }, Some(enc)) => Ok(Box::new(enc.clone())),
            (EncoderSpec::Baseline { baseline }, _) => baseline.encoder(lexicon),
            (EncoderSpec::Learned { .. }, None) => {
                Err(Error::Format { what: "checkpoint", detail: "learned encoder without parameters".into() })
            }
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::Format { what: "checkpoint metadata", detail: e.to_string() })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_block(&mut out, &meta);
        put_block(&mut out, self.vocab.to_file_string().as_bytes());
        match &self.encoder {
            Some(enc) => {
                out.push(1);
                let mut block = Vec::new();
                enc.params.write_bytes(&mut block);
                put_block(&mut out, &block);
            }
            None => out.push(0),
        }
        let mut block = Vec::new();
        self.decoder.params.write_bytes(&mut block);
        put_block(&mut out, &block);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::Format { what: "checkpoint", detail: detail.to_string() };
        if bytes.len() < 8 {
            return Err(Error::Checksum);
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("missing KCKP header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: FORMAT_VERSION });
        }
        if bytes.len() < 8 + DIGEST_LEN {
            return Err(Error::Checksum);
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let mut pos = 8;
        let meta: CheckpointMeta = serde_json::from_slice(take_block(body, &mut pos)?)
            .map_err(|e| Error::Format { what: "checkpoint metadata", detail: e.to_string() })?;
        let vocab_text = std::str::from_utf8(take_block(body, &mut pos)?).map_err(|_| bad("vocabulary is not UTF-8"))?;
        let vocab = Vocabulary::from_file_string(vocab_text)?;
        if vocab.fingerprint() != meta.vocab_fingerprint {
            return Err(bad("vocabulary does not match its recorded fingerprint"));
        }
        let has_encoder = *body.get(pos).ok_or_else(|| bad("truncated"))?;
        pos += 1;
        let encoder = match (has_encoder, &meta.encoder) {
            (1, EncoderSpec::Learned { config }) => {
                let params = read_params(take_block(body, &mut pos)?)?;
                Some(EncoderParams::from_param_set(vocab.len(), *config, params)?)
            }
            (0, EncoderSpec::Baseline { .. }) => None,
            _ => return Err(bad("encoder block does not match the encoder spec")),
        };
        let params = read_params(take_block(body, &mut pos)?)?;
        let decoder = DecoderParams::from_param_set(vocab.len(), meta.decoder, params)?;
        if pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { meta, vocab, encoder, decoder })
    }
}

fn put_block(out: &mut Vec<u8>, block: &[u8]) {
    out.extend_from_slice(&(block.len() as u64).to_le_bytes());
    out.extend_from_slice(block);
}

fn take_block<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    let truncated = || Error::Format { what: "checkpoint", detail: "truncated block".into() };
    let len_bytes = bytes.get(*pos..*pos + 8).ok_or_else(truncated)?;
    let len = usize::try_from(u64::from_le_bytes(len_bytes.try_into().unwrap())).map_err(|_| truncated())?;
    let start = *pos + 8;
    let block = bytes.get(start..start.checked_add(len).ok_or_else(truncated)?).ok_or_else(truncated)?;
    *pos = start + len;
    Ok(block)
}

fn read_params(block: &[u8]) -> Result<ParamSet> {
    match ParamSet::read_bytes(block) {
        Some((set, used)) if used == block.len() => Ok(set),
        _ => Err(Error::Format { what: "checkpoint", detail: "malformed parameter block".into() }),
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BaselineKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Checkpoint {
        let vocab = Vocabulary::from_tokens("<shift>", ["a", "b", "c"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = EncoderParams::new(vocab.len(), EncoderConfig { embed_dim: 3, hidden: 4, init_scale: 0.1 }, &mut rng);
        let dec = DecoderParams::new(vocab.len(), DecoderConfig { embed_dim: 3, hidden: 4, init_scale: 0.1 }, &mut rng);
        Checkpoint::learned(vocab, TokenizerConfig::default(), enc, dec)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = tiny();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.decoder.params.value(0), ck.decoder.params.value(0));
    }

    #[test]
    fn baseline_round_trip() {
        let ck = tiny();
        let cfg = BaselineConfig { kind: BaselineKind::Unif, delta: 0.5 };
        let b = Checkpoint::baseline(ck.vocab.clone(), TokenizerConfig::default(), cfg, ck.decoder);
        let bytes = b.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(back.encoder.is_none());
        assert_eq!(back.keyword_source(&StopwordLexicon::bundled()).unwrap().name(), "unif(0.5)");
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = tiny().to_bytes().unwrap();
        for cut in [0, 3, 8, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checksum)), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checksum)));
        let mut future = bytes;
        future[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&future), Err(Error::Version { found: 9, expected: 1 })));
    }

    #[test]
    fn fingerprint_mismatch_names_both() {
        let ck = tiny();
        let err = ck.check_fingerprint("deadbeef", false).unwrap_err().to_string();
        assert!(err.contains("deadbeef") && err.contains(ck.fingerprint()), "{err}");
        assert!(ck.check_fingerprint("deadbeef", true).is_ok());
    }
}
