//! Retention and exact-match metrics, tradeoff curves, the robustness matrix, and
//! token-level retention analyses.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{sentences_fingerprint, Sentence, Vocabulary};
use crate::decoder::DecoderParams;
use crate::encoder::{extract_keywords, EncodingMode, KeepMask, KeywordSequence, KeywordSource};
use crate::error::{Error, Result};

/// Sentences decoded together during evaluation.
const EVAL_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EncodingMode,
    /// Sentence `i` draws its mask from stream `i` of a generator seeded with this value.
    pub seed: u64,
    pub max_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { mode: EncodingMode::Sampled, seed: 1234, max_len: 20 }
    }
}

/// The generator used for sentence `index`, independent of batching and evaluation order.
pub fn sentence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One mask per sentence, reproducible from `config.seed`.
pub fn encode_dataset(encoder: &dyn KeywordSource, data: &[Sentence], config: &EvalConfig) -> Result<Vec<KeepMask>> {
    data.iter()
        .enumerate()
        .map(|(i, s)| encoder.encode(s, config.mode, &mut sentence_rng(config.seed, i)))
        .collect()
}

fn retention_of(data: &[Sentence], masks: &[KeepMask]) -> f64 {
    let kept: usize = masks.iter().map(KeepMask::kept).sum();
    let total: usize = data.iter().map(Sentence::len).sum();
    kept as f64 / total as f64
}

fn require_data(data: &[Sentence]) -> Result<()> {
    if data.is_empty() {
        Err(Error::InsufficientData { needed: 1, found: 0 })
    } else {
        Ok(())
    }
}

/// Kept tokens over all tokens, pooled over the dataset.
pub fn retention_rate(encoder: &dyn KeywordSource, data: &[Sentence], config: &EvalConfig) -> Result<f64> {
    require_data(data)?;
    Ok(retention_of(data, &encode_dataset(encoder, data, config)?))
}

/// Per-sentence exact-match flags for greedy reconstructions from the given masks.
pub fn exact_matches(
    decoder: &DecoderParams,
    vocab: &Vocabulary,
    data: &[Sentence],
    masks: &[KeepMask],
    max_len: usize,
) -> Result<Vec<bool>> {
    let keywords = data
        .iter()
        .zip(masks)
        .map(|(s, m)| extract_keywords(s, m))
        .collect::<Result<Vec<KeywordSequence>>>()?;
    let marker = vocab.marker();
    let mut out = Vec::with_capacity(data.len());
    for (sents, kws) in data.chunks(EVAL_BATCH).zip(keywords.chunks(EVAL_BATCH)) {
        let refs: Vec<&KeywordSequence> = kws.iter().collect();
        let preds = decoder.greedy_decode_batch(vocab, &refs, max_len)?;
        out.extend(sents.iter().zip(&preds).map(|(s, p)| p.surface(marker) == s.surface(marker)));
    }
    Ok(out)
}

/// Fraction of sentences whose greedy reconstruction reproduces the target surface string.
pub fn exact_match_accuracy(
    encoder: &dyn KeywordSource,
    decoder: &DecoderParams,
    vocab: &Vocabulary,
    data: &[Sentence],
    config: &EvalConfig,
) -> Result<f64> {
    Ok(evaluate(encoder, decoder, vocab, data, config)?.1)
}

/// `(retention, exact match)` computed from one shared set of masks.
pub fn evaluate(
    encoder: &dyn KeywordSource,
    decoder: &DecoderParams,
    vocab: &Vocabulary,
    data: &[Sentence],
    config: &EvalConfig,
) -> Result<(f64, f64)> {
    require_data(data)?;
    let masks = encode_dataset(encoder, data, config)?;
    let hits = exact_matches(decoder, vocab, data, &masks, config.max_len)?;
    let acc = hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64;
    Ok((retention_of(data, &masks), acc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub scheme: String,
    /// `epsilon`, `lambda`, or `delta`.
    pub knob: String,
    pub knob_value: f64,
    pub retention: f64,
    pub exact_match: f64,
    pub mode: EncodingMode,
    /// Fingerprint of the evaluation sentences.
    pub fingerprint: String,
}

/// A trained encoder/decoder pair labelled with its objective knob.
pub struct Scheme<'a> {
    pub name: String,
    pub knob: String,
    pub knob_value: f64,
    pub encoder: &'a dyn KeywordSource,
    pub decoder: &'a DecoderParams,
}

pub fn evaluate_scheme(scheme: &Scheme<'_>, vocab: &Vocabulary, data: &[Sentence], config: &EvalConfig) -> Result<TradeoffPoint> {
    let (retention, exact_match) = evaluate(scheme.encoder, scheme.decoder, vocab, data, config)?;
    Ok(TradeoffPoint {
        scheme: scheme.name.clone(),
        knob: scheme.knob.clone(),
        knob_value: scheme.knob_value,
        retention,
        exact_match,
        mode: config.mode,
        fingerprint: sentences_fingerprint(data),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    /// All points, sorted by retention.
    pub points: Vec<TradeoffPoint>,
    /// Points not dominated by any other (lower retention and higher accuracy are better).
    pub pareto: Vec<TradeoffPoint>,
}

pub fn tradeoff_curve(schemes: &[Scheme<'_>], vocab: &Vocabulary, data: &[Sentence], config: &EvalConfig) -> Result<TradeoffCurve> {
    if schemes.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, found: schemes.len() });
    }
    let points = schemes.iter().map(|s| evaluate_scheme(s, vocab, data, config)).collect::<Result<Vec<_>>>()?;
    Ok(curve_from_points(points))
}

pub fn curve_from_points(mut points: Vec<TradeoffPoint>) -> TradeoffCurve {
    points.sort_by(|a, b| a.retention.total_cmp(&b.retention).then(a.exact_match.total_cmp(&b.exact_match)));
    let pareto = pareto_front(&points);
    TradeoffCurve { points, pareto }
}

fn dominates(a: &TradeoffPoint, b: &TradeoffPoint) -> bool {
    a.retention <= b.retention
        && a.exact_match >= b.exact_match
        && (a.retention < b.retention || a.exact_match > b.exact_match)
}

pub fn pareto_front(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    points.iter().filter(|p| !points.iter().any(|q| dominates(q, p))).cloned().collect()
}

/// Coefficient of variation of the gaps between consecutive sorted retentions.
/// Lower means more evenly spaced; infinite when all points coincide.
pub fn knob_spread(points: &[TradeoffPoint]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, found: points.len() });
    }
    let mut r: Vec<f64> = points.iter().map(|p| p.retention).collect();
    r.sort_by(f64::total_cmp);
    let gaps: Vec<f64> = r.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    if mean == 0.0 {
        return Ok(f64::INFINITY);
    }
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
    Ok(var.sqrt() / mean)
}

/// Accuracy at `retention` by linear interpolation between neighbouring points;
/// `None` outside the covered retention range. Points sharing a retention are averaged.
pub fn interpolate_accuracy(points: &[TradeoffPoint], retention: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.retention, p.exact_match)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64, usize)> = Vec::new();
    for (r, a) in pts {
        match merged.last_mut() {
            Some(last) if last.0 == r => {
                last.1 += a;
                last.2 += 1;
            }
            _ => merged.push((r, a, 1)),
        }
    }
    let merged: Vec<(f64, f64)> = merged.into_iter().map(|(r, a, n)| (r, a / n as f64)).collect();
    let first = merged.first()?;
    let last = merged.last()?;
    if retention < first.0 || retention > last.0 {
        return None;
    }
    for w in merged.windows(2) {
        let ((r0, a0), (r1, a1)) = (w[0], w[1]);
        if retention >= r0 && retention <= r1 {
            return Some(a0 + (a1 - a0) * (retention - r0) / (r1 - r0));
        }
    }
    Some(first.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessMatrix {
    pub encoders: Vec<String>,
    pub decoders: Vec<String>,
    /// `accuracy[d][e]`: exact match of decoder `d` fed keywords from encoder `e`.
    pub accuracy: Vec<Vec<f64>>,
    pub retention: Vec<f64>,
}

impl RobustnessMatrix {
    /// Number of adjacent decreases along row `d` with encoders ordered by retention.
    pub fn row_inversions(&self, d: usize) -> usize {
        let mut order: Vec<usize> = (0..self.encoders.len()).collect();
        order.sort_by(|&a, &b| self.retention[a].total_cmp(&self.retention[b]));
        order.windows(2).filter(|w| self.accuracy[d][w[1]] < self.accuracy[d][w[0]]).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("decoder");
        for e in &self.encoders {
            out.push(',');
            out.push_str(&csv_field(e));
        }
        out.push('\n');
        out.push_str("retention");
        for r in &self.retention {
            out.push_str(&format!(",{r:.6}"));
        }
        out.push('\n');
        for (d, row) in self.decoders.iter().zip(&self.accuracy) {
            out.push_str(&csv_field(d));
            for a in row {
                out.push_str(&format!(",{a:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn robustness_matrix(
    encoders: &[(String, &dyn KeywordSource)],
    decoders: &[(String, &DecoderParams)],
    vocab: &Vocabulary,
    data: &[Sentence],
    config: &EvalConfig,
) -> Result<RobustnessMatrix> {
    require_data(data)?;
    let masks = encoders
        .iter()
        .map(|(_, e)| encode_dataset(*e, data, config))
        .collect::<Result<Vec<_>>>()?;
    let retention = masks.iter().map(|m| retention_of(data, m)).collect();
    let mut accuracy = Vec::with_capacity(decoders.len());
    for (_, dec) in decoders {
        let mut row = Vec::with_capacity(encoders.len());
        for m in &masks {
            let hits = exact_matches(dec, vocab, data, m, config.max_len)?;
            row.push(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64);
        }
        accuracy.push(row);
    }
    Ok(RobustnessMatrix {
        encoders: encoders.iter().map(|(n, _)| n.clone()).collect(),
        decoders: decoders.iter().map(|(n, _)| n.clone()).collect(),
        accuracy,
        retention,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosTag {
    Determiner,
    Conjunction,
    Pronoun,
    Interjection,
    Verb,
    Preposition,
    Adverb,
    Adjective,
    Noun,
    Other,
}

impl PosTag {
    pub const ALL: [PosTag; 10] = [
        PosTag::Determiner,
        PosTag::Conjunction,
        PosTag::Pronoun,
        PosTag::Interjection,
        PosTag::Verb,
        PosTag::Preposition,
        PosTag::Adverb,
        PosTag::Adjective,
        PosTag::Noun,
        PosTag::Other,
    ];

    fn from_code(code: &str) -> Option<Self> {
        Some(match code {
            "DET" => PosTag::Determiner,
            "CONJ" => PosTag::Conjunction,
            "PRON" => PosTag::Pronoun,
            "INTJ" => PosTag::Interjection,
            "VERB" => PosTag::Verb,
            "ADP" => PosTag::Preposition,
            "ADV" => PosTag::Adverb,
            "ADJ" => PosTag::Adjective,
            "NOUN" => PosTag::Noun,
            "OTHER" => PosTag::Other,
            _ => return None,
        })
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string(self).unwrap_or_default();
        f.write_str(s.trim_matches('"'))
    }
}

/// Assigns one tag per token of a sentence.
pub trait PosTagger: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Vec<PosTag>;
}

const POS_LEXICON: &str = include_str!("../data/pos_lexicon.tsv");
const POS_HEADER: &str = "# kwcomplete-pos-lexicon v1";

/// Lexicon lookup with suffix fallbacks. Auxiliaries, numerals, punctuation and the
/// capitalization marker are tagged [`PosTag::Other`]; unknown words default to nouns.
#[derive(Clone, Debug)]
pub struct LexiconTagger {
    lexicon: HashMap<String, PosTag>,
    marker: String,
}

impl LexiconTagger {
    pub fn parse(text: &str, marker: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(POS_HEADER) {
            return Err(Error::Format { what: "pos lexicon", detail: format!("expected header {POS_HEADER:?}") });
        }
        let mut lexicon = HashMap::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (word, code) = line.split_once('\t').ok_or_else(|| Error::Format {
                what: "pos lexicon",
                detail: format!("line {}: expected word<TAB>tag", n + 2),
            })?;
            let tag = PosTag::from_code(code.trim()).ok_or_else(|| Error::Format {
                what: "pos lexicon",
                detail: format!("line {}: unknown tag {code:?}", n + 2),
            })?;
            lexicon.insert(word.to_string(), tag);
        }
        Ok(LexiconTagger { lexicon, marker: marker.to_string() })
    }

    /// The bundled English lexicon.
    pub fn bundled(marker: &str) -> Self {
        Self::parse(POS_LEXICON, marker).expect("bundled lexicon is well formed")
    }

    pub fn tag_token(&self, token: &str) -> PosTag {
        if token == self.marker {
            return PosTag::Other;
        }
        if let Some(&t) = self.lexicon.get(token) {
            return t;
        }
        if !token.chars().any(char::is_alphabetic) {
            return PosTag::Other;
        }
        if token.ends_with("ly") {
            PosTag::Adverb
        } else if token.ends_with("ed") || token.ends_with("ing") {
            PosTag::Verb
        } else {
            PosTag::Noun
        }
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, tokens: &[String]) -> Vec<PosTag> {
        tokens.iter().map(|t| self.tag_token(t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub token: String,
    pub frequency: usize,
    pub kept: usize,
    pub keep_rate: f64,
    /// Most frequent tag of the type's occurrences.
    pub tag: PosTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosStats {
    pub tag: PosTag,
    pub frequency: usize,
    pub keep_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRetentionStats {
    pub fingerprint: String,
    /// Sorted by descending frequency, then token.
    pub types: Vec<TypeStats>,
    pub pos: Vec<PosStats>,
}

impl TokenRetentionStats {
    /// Pooled keep rate over the given tags.
    pub fn keep_rate_of(&self, tags: &[PosTag]) -> Option<f64> {
        let (mut kept, mut total) = (0.0, 0usize);
        for p in self.pos.iter().filter(|p| tags.contains(&p.tag)) {
            kept += p.keep_rate * p.frequency as f64;
            total += p.frequency;
        }
        (total > 0).then(|| kept / total as f64)
    }

    pub fn overall_keep_rate(&self) -> f64 {
        let kept: usize = self.types.iter().map(|t| t.kept).sum();
        let total: usize = self.types.iter().map(|t| t.frequency).sum();
        kept as f64 / total as f64
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.types {
            out.push_str(&serde_json::to_string(t).unwrap_or_default());
            out.push('\n');
        }
        out
    }
}

pub fn token_retention_stats(
    encoder: &dyn KeywordSource,
    data: &[Sentence],
    tagger: &dyn PosTagger,
    config: &EvalConfig,
) -> Result<TokenRetentionStats> {
    require_data(data)?;
    let masks = encode_dataset(encoder, data, config)?;
    let mut types: HashMap<&str, (usize, usize, HashMap<PosTag, usize>)> = HashMap::new();
    let mut pos: BTreeMap<PosTag, (usize, usize)> = BTreeMap::new();
    for (s, m) in data.iter().zip(&masks) {
        let tags = tagger.tag(&s.tokens);
        if tags.len() != s.len() {
            return Err(Error::LengthMismatch { expected: s.len(), actual: tags.len() });
        }
        for ((tok, &keep), tag) in s.tokens.iter().zip(&m.0).zip(tags) {
            let e = types.entry(tok).or_default();
            e.0 += 1;
            e.1 += keep as usize;
            *e.2.entry(tag).or_default() += 1;
            let p = pos.entry(tag).or_default();
            p.0 += 1;
            p.1 += keep as usize;
        }
    }
    let mut types: Vec<TypeStats> = types
        .into_iter()
        .map(|(token, (frequency, kept, tags))| TypeStats {
            token: token.to_string(),
            frequency,
            kept,
            keep_rate: kept as f64 / frequency as f64,
            tag: tags.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|t| t.0).unwrap_or(PosTag::Other),
        })
        .collect();
    types.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.token.cmp(&b.token)));
    let pos = pos
        .into_iter()
        .map(|(tag, (frequency, kept))| PosStats { tag, frequency, keep_rate: kept as f64 / frequency as f64 })
        .collect();
    Ok(TokenRetentionStats { fingerprint: sentences_fingerprint(data), types, pos })
}

/// Frequency-weighted mean absolute difference of per-type keep rates.
pub fn scheme_stability_distance(a: &TokenRetentionStats, b: &TokenRetentionStats) -> Result<f64> {
    if a.fingerprint != b.fingerprint {
        return Err(Error::Fingerprint { checkpoint: a.fingerprint.clone(), corpus: b.fingerprint.clone() });
    }
    let rates: HashMap<&str, f64> = b.types.iter().map(|t| (t.token.as_str(), t.keep_rate)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for t in &a.types {
        let other = rates.get(t.token.as_str()).copied().unwrap_or(0.0);
        num += t.frequency as f64 * (t.keep_rate - other).abs();
        den += t.frequency as f64;
    }
    Ok(num / den)
}

pub const CSV_HEADER: &str = "scheme,knob,knob_value,retention,exact_match,mode,fingerprint";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn points_to_csv(points: &[TradeoffPoint]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{}\n",
            csv_field(&p.scheme),
            csv_field(&p.knob),
            p.knob_value,
            p.retention,
            p.exact_match,
            p.mode,
            p.fingerprint
        ));
    }
    out
}

pub fn points_from_csv(text: &str) -> Result<Vec<TradeoffPoint>> {
    let bad = |n: usize, d: &str| Error::Format { what: "tradeoff csv", detail: format!("line {n}: {d}") };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(n, "expected 7 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        let mode = match f[5] {
            "sampled" => EncodingMode::Sampled,
            "thresholded" => EncodingMode::Thresholded,
            _ => return Err(bad(n, "bad mode")),
        };
        out.push(TradeoffPoint {
            scheme: f[0].to_string(),
            knob: f[1].to_string(),
            knob_value: num(f[2])?,
            retention: num(f[3])?,
            exact_match: num(f[4])?,
            mode,
            fingerprint: f[6].to_string(),
        });
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path).and_then(|mut f| f.write_all(text.as_bytes())).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{KeepAll, KeepNone};

    fn point(r: f64, a: f64) -> TradeoffPoint {
        TradeoffPoint {
            scheme: "s".into(),
            knob: "epsilon".into(),
            knob_value: 0.0,
            retention: r,
            exact_match: a,
            mode: EncodingMode::Sampled,
            fingerprint: "f".into(),
        }
    }

    fn data() -> (Vocabulary, Vec<Sentence>) {
        let vocab = Vocabulary::from_tokens("<shift>", ["the", "food", "was", "great", "."]).unwrap();
        let s = |t: &[&str]| Sentence::new(t.iter().map(|x| x.to_string()).collect(), &vocab).unwrap();
        let d = vec![s(&["the", "food", "was", "great", "."]), s(&["<shift>", "food", "."])];
        (vocab, d)
    }

    #[test]
    fn pareto_dominance() {
        let a = point(0.8, 0.9);
        let b = point(0.5, 0.4);
        assert_eq!(pareto_front(&[a.clone(), b.clone()]).len(), 2);
        let c = point(0.9, 0.3);
        let front = pareto_front(&[a.clone(), b, c]);
        assert_eq!(front.len(), 2);
        assert!(!front.iter().any(|p| p.retention == 0.9));
    }

    #[test]
    fn spread_examples() {
        let even: Vec<_> = [0.2, 0.4, 0.6, 0.8].iter().map(|&r| point(r, 0.0)).collect();
        assert!(knob_spread(&even).unwrap() < 1e-9);
        let clustered: Vec<_> = [0.0, 0.01, 0.02, 0.99].iter().map(|&r| point(r, 0.0)).collect();
        assert!(knob_spread(&clustered).unwrap() > 1.0);
        assert!(knob_spread(&even[..2]).is_err());
        let same: Vec<_> = [0.5, 0.5, 0.5].iter().map(|&r| point(r, 0.0)).collect();
        assert!(knob_spread(&same).unwrap().is_infinite());
    }

    #[test]
    fn interpolation() {
        let pts = vec![point(0.2, 0.1), point(0.6, 0.5), point(0.4, 0.2)];
        assert!((interpolate_accuracy(&pts, 0.3).unwrap() - 0.15).abs() < 1e-12);
        assert!((interpolate_accuracy(&pts, 0.6).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(interpolate_accuracy(&pts, 0.1), None);
        assert_eq!(interpolate_accuracy(&pts, 0.7), None);
    }

    #[test]
    fn retention_and_stats_for_fixed_sources() {
        let (_, d) = data();
        let cfg = EvalConfig::default();
        assert_eq!(retention_rate(&KeepAll, &d, &cfg).unwrap(), 1.0);
        assert_eq!(retention_rate(&KeepNone, &d, &cfg).unwrap(), 0.0);
        let tagger = LexiconTagger::bundled("<shift>");
        let all = token_retention_stats(&KeepAll, &d, &tagger, &cfg).unwrap();
        assert!(all.types.iter().all(|t| t.keep_rate == 1.0));
        assert!(all.pos.iter().all(|p| p.keep_rate == 1.0));
        let none = token_retention_stats(&KeepNone, &d, &tagger, &cfg).unwrap();
        assert_eq!(scheme_stability_distance(&all, &all).unwrap(), 0.0);
        assert_eq!(scheme_stability_distance(&all, &none).unwrap(), 1.0);
        let mut other = none.clone();
        other.fingerprint = "elsewhere".into();
        assert!(matches!(scheme_stability_distance(&all, &other), Err(Error::Fingerprint { .. })));
        assert!(retention_rate(&KeepAll, &[], &cfg).is_err());
    }

    #[test]
    fn tagger_rules() {
        let t = LexiconTagger::bundled("<shift>");
        assert_eq!(t.tag_token("the"), PosTag::Determiner);
        assert_eq!(t.tag_token("and"), PosTag::Conjunction);
        assert_eq!(t.tag_token("we"), PosTag::Pronoun);
        assert_eq!(t.tag_token("was"), PosTag::Other);
        assert_eq!(t.tag_token("<shift>"), PosTag::Other);
        assert_eq!(t.tag_token("."), PosTag::Other);
        assert_eq!(t.tag_token("42"), PosTag::Other);
        assert_eq!(t.tag_token("delicious"), PosTag::Adjective);
        assert_eq!(t.tag_token("quickly"), PosTag::Adverb);
        assert_eq!(t.tag_token("zorbled"), PosTag::Verb);
        assert_eq!(t.tag_token("marlo"), PosTag::Noun);
        assert!(LexiconTagger::parse("word\tNOUN\n", "<shift>").is_err());
        assert!(LexiconTagger::parse(&format!("{POS_HEADER}\nword\tXYZ\n"), "<shift>").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut p = point(0.5, 0.25);
        p.scheme = "unif(0.5)".into();
        let text = points_to_csv(std::slice::from_ref(&p));
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(points_from_csv(&text).unwrap(), vec![p]);
    }

    #[test]
    fn matrix_inversions() {
        let m = RobustnessMatrix {
            encoders: vec!["a".into(), "b".into(), "c".into()],
            decoders: vec!["d".into()],
            accuracy: vec![vec![0.3, 0.1, 0.5]],
            retention: vec![0.5, 0.1, 0.9],
        };
        assert_eq!(m.row_inversions(0), 0);
        let m = RobustnessMatrix { accuracy: vec![vec![0.05, 0.1, 0.5]], ..m };
        assert_eq!(m.row_inversions(0), 1);
        assert!(m.to_csv().starts_with("decoder,a,b,c\nretention,"));
    }
}
