//! Sequence-to-sequence decoder with global attention over the keywords and a copy gate.
//!
//! The keywords are read by a bidirectional LSTM. A unidirectional generator LSTM consumes
//! the previous token embedding concatenated with the reader's final state. At each step a
//! scalar gate `g` mixes the vocabulary softmax with the attention distribution over keyword
//! positions:
//!
//! `P(w) = g · P_vocab(w) + (1 − g) · Σ_{k : z_k = w} a_k`
//!
//! Keyword tokens outside the vocabulary get per-example extended ids `V + j`, so they can
//! only be produced by copying. Empty keyword sequences are read as a lone start token with
//! copying disabled (`g = 1`).

use std::cmp::Ordering;
use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Sentence, Vocabulary, BOS, EOS, PAD, UNK};
use crate::encoder::{check_layout, extract_keywords, EncodingMode, KeywordSequence, KeywordSource};
use crate::error::{Error, Result};
use crate::graph::{softmax_rows, Graph, Var};
use crate::lstm::{BoundLstm, LstmCell};
use crate::params::{Adam, AdamConfig, ParamSet};

const UNK_SURFACE: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    /// Hidden units of the generator and of each reader direction.
    pub hidden: usize,
    pub init_scale: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { embed_dim: 300, hidden: 300, init_scale: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenSource {
    Generated,
    /// Copied from this keyword position.
    Copied(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Decoded tokens, without the end token.
    pub tokens: Vec<String>,
    /// Extended ids of the decoded tokens.
    pub ids: Vec<usize>,
    pub log_prob: f64,
    pub sources: Vec<TokenSource>,
    /// Whether decoding ended with the end token rather than at `max_len`.
    pub finished: bool,
}

impl Prediction {
    pub fn surface(&self, marker: &str) -> String {
        crate::corpus::detokenize(&self.tokens, marker)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub params: ParamSet,
    pub config: DecoderConfig,
    pub vocab_size: usize,
    embedding: usize,
    reader_fwd: LstmCell,
    reader_bwd: LstmCell,
    generator: LstmCell,
    attention: usize,
    combine_weight: usize,
    combine_bias: usize,
    out_weight: usize,
    out_bias: usize,
    gate_weight: usize,
    gate_bias: usize,
}

/// Keywords of one example mapped into the extended vocabulary.
#[derive(Clone, Debug)]
struct CopySource {
    /// Model input ids (out-of-vocabulary tokens read as `<unk>`).
    input: Vec<usize>,
    /// Extended ids used for copying.
    ext: Vec<usize>,
    oov: Vec<String>,
    copy_enabled: bool,
}

impl CopySource {
    fn new(keywords: &KeywordSequence, vocab_size: usize) -> Self {
        if keywords.is_empty() {
            return CopySource { input: vec![BOS], ext: vec![BOS], oov: Vec::new(), copy_enabled: false };
        }
        let mut oov: Vec<String> = Vec::new();
        let mut ext = Vec::with_capacity(keywords.len());
        for (tok, &id) in keywords.tokens.iter().zip(&keywords.ids) {
            if id != UNK || tok == UNK_SURFACE {
                ext.push(id);
            } else {
                let j = match oov.iter().position(|o| o == tok) {
                    Some(j) => j,
                    None => {
                        oov.push(tok.clone());
                        oov.len() - 1
                    }
                };
                ext.push(vocab_size + j);
            }
        }
        CopySource { input: keywords.ids.clone(), ext, oov, copy_enabled: true }
    }

    fn len(&self) -> usize {
        self.input.len()
    }

    /// Extended id of a target token.
    fn target_id(&self, token: &str, id: usize, vocab_size: usize) -> usize {
        if id != UNK || token == UNK_SURFACE {
            return id;
        }
        match self.oov.iter().position(|o| o == token) {
            Some(j) => vocab_size + j,
            None => UNK,
        }
    }

    fn surface<'v>(&'v self, ext: usize, vocab: &'v Vocabulary) -> &'v str {
        if ext < vocab.len() {
            vocab.token(ext).unwrap_or(UNK_SURFACE)
        } else {
            &self.oov[ext - vocab.len()]
        }
    }
}

struct Bound {
    embedding: Var,
    reader_fwd: BoundLstm,
    reader_bwd: BoundLstm,
    generator: BoundLstm,
    attention: Var,
    combine_weight: Var,
    combine_bias: Var,
    out_weight: Var,
    out_bias: Var,
    gate_weight: Var,
    gate_bias: Var,
}

struct Reader {
    states: Vec<Var>,
    summary: Var,
    valid: Array2<f64>,
}

struct StepOut {
    h: Var,
    c: Var,
    combined: Var,
    gate: Var,
    attention: Var,
}

/// Teacher-forced negative log-likelihood of a batch.
pub struct BatchLoss {
    /// Mean over examples of the per-example negative log-likelihood.
    pub loss: Var,
    /// Per-example `−log p(x | z)` in nats.
    pub nll: Vec<f64>,
}

impl DecoderParams {
    pub fn new<R: Rng>(vocab_size: usize, config: DecoderConfig, rng: &mut R) -> Self {
        let DecoderConfig { embed_dim: e, hidden: h, init_scale: s } = config;
        let mut p = ParamSet::new();
        let embedding = p.insert_uniform("decoder.embedding", vocab_size, e, s, rng);
        let reader_fwd = LstmCell::new(&mut p, "decoder.reader.fwd", e, h, s, rng);
        let reader_bwd = LstmCell::new(&mut p, "decoder.reader.bwd", e, h, s, rng);
        let generator = LstmCell::new(&mut p, "decoder.generator", e + 2 * h, h, s, rng);
        let attention = p.insert_uniform("decoder.attention", h, 2 * h, s, rng);
        let combine_weight = p.insert_uniform("decoder.combine.weight", 3 * h, h, s, rng);
        let combine_bias = p.insert_uniform("decoder.combine.bias", 1, h, s, rng);
        let out_weight = p.insert_uniform("decoder.out.weight", h, vocab_size, s, rng);
        let out_bias = p.insert_uniform("decoder.out.bias", 1, vocab_size, s, rng);
        let gate_weight = p.insert_uniform("decoder.gate.weight", 3 * h + e, 1, s, rng);
        let gate_bias = p.insert_uniform("decoder.gate.bias", 1, 1, s, rng);
        DecoderParams {
            params: p,
            config,
            vocab_size,
            embedding,
            reader_fwd,
            reader_bwd,
            generator,
            attention,
            combine_weight,
            combine_bias,
            out_weight,
            out_bias,
            gate_weight,
            gate_bias,
        }
    }

    pub fn from_param_set(vocab_size: usize, config: DecoderConfig, params: ParamSet) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut template = Self::new(vocab_size, config, &mut rng);
        check_layout(&template.params, &params, "decoder")?;
        template.params = params;
        Ok(template)
    }

    /// Parameter ids of the copy gate `(weight, bias)`.
    pub fn gate_ids(&self) -> (usize, usize) {
        (self.gate_weight, self.gate_bias)
    }

    fn bind(&self, g: &mut Graph) -> Bound {
        let p = &self.params;
        Bound {
            embedding: g.param(p, self.embedding),
            reader_fwd: self.reader_fwd.bind(g, p),
            reader_bwd: self.reader_bwd.bind(g, p),
            generator: self.generator.bind(g, p),
            attention: g.param(p, self.attention),
            combine_weight: g.param(p, self.combine_weight),
            combine_bias: g.param(p, self.combine_bias),
            out_weight: g.param(p, self.out_weight),
            out_bias: g.param(p, self.out_bias),
            gate_weight: g.param(p, self.gate_weight),
            gate_bias: g.param(p, self.gate_bias),
        }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.vocab_size) {
            Some(&id) => Err(Error::IdOutOfRange { id, size: self.vocab_size }),
            None => Ok(()),
        }
    }

    fn read(&self, g: &mut Graph, b: &Bound, sources: &[CopySource]) -> Reader {
        let rows = sources.len();
        let steps = sources.iter().map(CopySource::len).max().unwrap_or(1);
        let mut valid = Array2::zeros((rows, steps));
        for (r, s) in sources.iter().enumerate() {
            for t in 0..s.len() {
                valid[[r, t]] = 1.0;
            }
        }
        let inputs: Vec<Var> = (0..steps)
            .map(|t| {
                let ids: Vec<usize> = sources.iter().map(|s| s.input.get(t).copied().unwrap_or(PAD)).collect();
                g.gather(b.embedding, &ids)
            })
            .collect();
        let active = |t: usize| valid.column(t).to_owned().insert_axis(ndarray::Axis(1));

        let (mut h, mut c) = b.reader_fwd.zero_state(g, rows);
        let mut fwd = Vec::with_capacity(steps);
        for (t, &x) in inputs.iter().enumerate() {
            (h, c) = b.reader_fwd.masked_step(g, x, h, c, &active(t));
            fwd.push(h);
        }
        let fwd_last = h;

        let (mut h, mut c) = b.reader_bwd.zero_state(g, rows);
        let mut bwd = vec![h; steps];
        for t in (0..steps).rev() {
            (h, c) = b.reader_bwd.masked_step(g, inputs[t], h, c, &active(t));
            bwd[t] = h;
        }
        let bwd_last = h;

        let states = fwd.iter().zip(&bwd).map(|(&f, &bk)| g.concat_cols(&[f, bk])).collect();
        let summary = g.concat_cols(&[fwd_last, bwd_last]);
        Reader { states, summary, valid }
    }

    fn step(&self, g: &mut Graph, b: &Bound, reader: &Reader, prev: &[usize], h: Var, c: Var) -> StepOut {
        let emb = g.gather(b.embedding, prev);
        let input = g.concat_cols(&[emb, reader.summary]);
        let (h, c) = b.generator.step(g, input, h, c);
        let query = g.matmul(h, b.attention);
        let scores = g.row_dots(query, &reader.states);
        let attention = g.masked_softmax(scores, &reader.valid);
        let context = g.mix(attention, &reader.states);
        let joined = g.concat_cols(&[context, h]);
        let combined = g.matmul(joined, b.combine_weight);
        let combined = g.add_row(combined, b.combine_bias);
        let combined = g.tanh(combined);
        let gate_in = g.concat_cols(&[combined, context, emb]);
        let gate = g.matmul(gate_in, b.gate_weight);
        let gate = g.add_row(gate, b.gate_bias);
        let gate = g.sigmoid(gate);
        StepOut { h, c, combined, gate, attention }
    }

    /// Builds the teacher-forced loss for a batch of `(keywords, target)` pairs.
    ///
    /// With `terminated = false` the end token is not scored, which is how sequences cut off
    /// at the decoding length limit are scored.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        keywords: &[&KeywordSequence],
        targets: &[&[String]],
        target_ids: &[&[usize]],
        terminated: bool,
    ) -> Result<BatchLoss> {
        let rows = keywords.len();
        if targets.len() != rows || target_ids.len() != rows {
            return Err(Error::LengthMismatch { expected: rows, actual: targets.len().min(target_ids.len()) });
        }
        for (kw, ids) in keywords.iter().zip(target_ids) {
            self.check_ids(&kw.ids)?;
            self.check_ids(ids)?;
        }
        let v = self.vocab_size;
        let sources: Vec<CopySource> = keywords.iter().map(|k| CopySource::new(k, v)).collect();
        // Extended target ids, plus the end token when scored.
        let gold: Vec<Vec<usize>> = sources
            .iter()
            .zip(targets.iter().zip(target_ids))
            .map(|(src, (toks, ids))| {
                let mut out: Vec<usize> =
                    toks.iter().zip(ids.iter()).map(|(t, &id)| src.target_id(t, id, v)).collect();
                if terminated {
                    out.push(EOS);
                }
                out
            })
            .collect();
        let steps = gold.iter().map(Vec::len).max().unwrap_or(0);
        if steps == 0 {
            return Err(Error::EmptySentence);
        }

        let b = self.bind(g);
        let reader = self.read(g, &b, &sources);
        let (mut h, mut c) = b.generator.zero_state(g, rows);
        let mut combined = Vec::with_capacity(steps);
        let mut gates = Vec::with_capacity(steps);
        let mut copies = Vec::with_capacity(steps);
        let mut pick_ids = Vec::with_capacity(steps * rows);
        let mut vocab_ok = Array2::zeros((steps * rows, 1));
        let mut step_ok = Array2::zeros((steps * rows, 1));
        let mut copy_on = Array2::zeros((steps * rows, 1));
        let kmax = reader.valid.ncols();

        for t in 0..steps {
            let prev: Vec<usize> = (0..rows)
                .map(|r| if t == 0 { BOS } else { target_ids[r].get(t - 1).copied().unwrap_or(PAD) })
                .collect();
            let out = self.step(g, &b, &reader, &prev, h, c);
            (h, c) = (out.h, out.c);
            let mut matches = Array2::zeros((rows, kmax));
            for r in 0..rows {
                let i = t * rows + r;
                let y = gold[r].get(t).copied();
                step_ok[[i, 0]] = y.is_some() as u8 as f64;
                let y = y.unwrap_or(PAD);
                pick_ids.push(if y < v { y } else { PAD });
                vocab_ok[[i, 0]] = (y < v) as u8 as f64;
                copy_on[[i, 0]] = sources[r].copy_enabled as u8 as f64;
                if sources[r].copy_enabled {
                    for (k, &e) in sources[r].ext.iter().enumerate() {
                        if e == y {
                            matches[[r, k]] = 1.0;
                        }
                    }
                }
            }
            let matches = g.constant(matches);
            copies.push(g.row_dot(out.attention, matches));
            combined.push(out.combined);
            gates.push(out.gate);
        }

        // Padded positions are dropped before the vocabulary projection, the dominant cost.
        let live: Vec<usize> = (0..steps * rows).filter(|&i| step_ok[[i, 0]] > 0.0).collect();
        let select = |a: &Array2<f64>| Array2::from_shape_fn((live.len(), 1), |(j, _)| a[[live[j], 0]]);
        let stacked = g.concat_rows(&combined);
        let stacked = g.gather(stacked, &live);
        let logits = g.matmul(stacked, b.out_weight);
        let logits = g.add_row(logits, b.out_bias);
        let live_ids: Vec<usize> = live.iter().map(|&i| pick_ids[i]).collect();
        let p_vocab = g.softmax_pick(logits, &live_ids);
        let vocab_ok = g.constant(select(&vocab_ok));
        let p_vocab = g.mul(p_vocab, vocab_ok);
        let p_copy = g.concat_rows(&copies);
        let p_copy = g.gather(p_copy, &live);
        let gate = g.concat_rows(&gates);
        let gate = g.gather(gate, &live);
        let copy_on = select(&copy_on);
        let copy_on_v = g.constant(copy_on.clone());
        let copy_off = g.constant(copy_on.mapv(|x| 1.0 - x));
        let gate = g.mul(gate, copy_on_v);
        let gate = g.add(gate, copy_off);
        let not_gate = g.affine(gate, -1.0, 1.0);
        let from_vocab = g.mul(gate, p_vocab);
        let from_copy = g.mul(not_gate, p_copy);
        let prob = g.add(from_vocab, from_copy);
        let logp = g.log(prob);
        let total = g.sum(logp);
        let loss = g.affine(total, -1.0 / rows as f64, 0.0);

        let mut nll = vec![0.0; rows];
        for (j, lp) in g.value(logp).column(0).iter().enumerate() {
            nll[live[j] % rows] -= lp;
        }
        Ok(BatchLoss { loss, nll })
    }

    /// `log p(target | keywords)`, including the end token.
    pub fn reconstruction_log_prob(&self, keywords: &KeywordSequence, target: &Sentence) -> Result<f64> {
        if target.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut g = Graph::new();
        let out = self.batch_loss(&mut g, &[keywords], &[&target.tokens], &[&target.ids], true)?;
        Ok(-out.nll[0])
    }

    /// Log probability of a token sequence, scoring the end token only if `terminated`.
    pub fn sequence_log_prob(&self, keywords: &KeywordSequence, target: &Sentence, terminated: bool) -> Result<f64> {
        let mut g = Graph::new();
        let out = self.batch_loss(&mut g, &[keywords], &[&target.tokens], &[&target.ids], terminated)?;
        Ok(-out.nll[0])
    }

    /// Per-example negative log-likelihoods without keeping the graph.
    pub fn nll_batch(&self, keywords: &[&KeywordSequence], targets: &[&Sentence]) -> Result<Vec<f64>> {
        let toks: Vec<&[String]> = targets.iter().map(|s| s.tokens.as_slice()).collect();
        let ids: Vec<&[usize]> = targets.iter().map(|s| s.ids.as_slice()).collect();
        let mut g = Graph::new();
        Ok(self.batch_loss(&mut g, keywords, &toks, &ids, true)?.nll)
    }

    /// Full next-token distributions over the extended vocabulary, one row per live hypothesis.
    fn distributions(&self, g: &Graph, b: &Bound, out: &StepOut, sources: &[&CopySource], logits: Var) -> Vec<Vec<f64>> {
        let _ = b;
        let probs = softmax_rows(g.value(logits));
        let gate = g.value(out.gate);
        let attn = g.value(out.attention);
        sources
            .iter()
            .enumerate()
            .map(|(r, src)| {
                let gr = if src.copy_enabled { gate[[r, 0]] } else { 1.0 };
                let mut dist: Vec<f64> = probs.row(r).iter().map(|p| gr * p).collect();
                dist.resize(self.vocab_size + src.oov.len(), 0.0);
                if src.copy_enabled {
                    for (k, &e) in src.ext.iter().enumerate() {
                        dist[e] += (1.0 - gr) * attn[[r, k]];
                    }
                }
                dist
            })
            .collect()
    }

    fn source_of(&self, g: &Graph, out: &StepOut, row: usize, src: &CopySource, chosen: usize, probs: &[f64]) -> TokenSource {
        if !src.copy_enabled {
            return TokenSource::Generated;
        }
        let gate = g.value(out.gate)[[row, 0]];
        let attn = g.value(out.attention);
        let best = src
            .ext
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == chosen)
            .max_by(|a, b| attn[[row, a.0]].total_cmp(&attn[[row, b.0]]));
        let generated = if chosen < self.vocab_size { gate * probs[chosen] } else { 0.0 };
        match best {
            Some((k, _)) if (1.0 - gate) * attn[[row, k]] > generated => TokenSource::Copied(k),
            _ => TokenSource::Generated,
        }
    }

    /// Greedy decoding of several keyword sequences at once.
    pub fn greedy_decode_batch(
        &self,
        vocab: &Vocabulary,
        keywords: &[&KeywordSequence],
        max_len: usize,
    ) -> Result<Vec<Prediction>> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        self.check_vocab(vocab)?;
        for kw in keywords {
            self.check_ids(&kw.ids)?;
        }
        let sources: Vec<CopySource> = keywords.iter().map(|k| CopySource::new(k, self.vocab_size)).collect();
        let rows = sources.len();
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let reader = self.read(&mut g, &b, &sources);
        let (mut h, mut c) = b.generator.zero_state(&mut g, rows);
        let mut preds: Vec<Prediction> = (0..rows)
            .map(|_| Prediction { tokens: vec![], ids: vec![], log_prob: 0.0, sources: vec![], finished: false })
            .collect();
        let mut prev = vec![BOS; rows];
        for _ in 0..max_len {
            if preds.iter().all(|p| p.finished) {
                break;
            }
            let out = self.step(&mut g, &b, &reader, &prev, h, c);
            (h, c) = (out.h, out.c);
            let logits = g.matmul(out.combined, b.out_weight);
            let logits = g.add_row(logits, b.out_bias);
            let refs: Vec<&CopySource> = sources.iter().collect();
            let dists = self.distributions(&g, &b, &out, &refs, logits);
            let probs = softmax_rows(g.value(logits));
            for (r, dist) in dists.iter().enumerate() {
                let pred = &mut preds[r];
                if pred.finished {
                    continue;
                }
                let best = argmax_candidate(dist);
                pred.log_prob += dist[best].ln();
                if best == EOS {
                    pred.finished = true;
                    continue;
                }
                let src = &sources[r];
                pred.sources.push(self.source_of(&g, &out, r, src, best, probs.row(r).as_slice().unwrap()));
                pred.tokens.push(src.surface(best, vocab).to_string());
                pred.ids.push(best);
                prev[r] = if best < self.vocab_size { best } else { UNK };
            }
        }
        Ok(preds)
    }

    pub fn greedy_decode(&self, vocab: &Vocabulary, keywords: &KeywordSequence, max_len: usize) -> Result<Prediction> {
        Ok(self.greedy_decode_batch(vocab, &[keywords], max_len)?.remove(0))
    }

    /// Length-synchronized beam search returning up to `k` distinct hypotheses, best first.
    ///
    /// Each step expands every live hypothesis by every candidate token and keeps the
    /// `beam_width` best; candidates ending in the end token leave the beam as finished.
    /// Hypotheses still live after `max_len` steps are returned unterminated.
    pub fn beam_decode(
        &self,
        vocab: &Vocabulary,
        keywords: &KeywordSequence,
        beam_width: usize,
        k: usize,
        max_len: usize,
    ) -> Result<Vec<Prediction>> {
        if k == 0 || k > beam_width {
            return Err(Error::Config(format!("need 1 <= k <= beam_width, got k={k}, beam_width={beam_width}")));
        }
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        self.check_vocab(vocab)?;
        self.check_ids(&keywords.ids)?;
        let src = CopySource::new(keywords, self.vocab_size);
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let reader = self.read(&mut g, &b, std::slice::from_ref(&src));
        let (h0, c0) = b.generator.zero_state(&mut g, 1);
        let (mut h, mut c) = (h0, c0);

        struct Hyp {
            pred: Prediction,
            prev: usize,
            row: usize,
        }
        let mut live = vec![Hyp {
            pred: Prediction { tokens: vec![], ids: vec![], log_prob: 0.0, sources: vec![], finished: false },
            prev: BOS,
            row: 0,
        }];
        let mut finished: Vec<Prediction> = Vec::new();

        for _ in 0..max_len {
            if live.is_empty() {
                break;
            }
            let rows: Vec<usize> = live.iter().map(|hy| hy.row).collect();
            let hs = g.gather(h, &rows);
            let cs = g.gather(c, &rows);
            let zeros = vec![0usize; live.len()];
            let beam_reader = Reader {
                states: reader.states.iter().map(|&s| g.gather(s, &zeros)).collect(),
                summary: g.gather(reader.summary, &zeros),
                valid: Array2::from_shape_fn((live.len(), reader.valid.ncols()), |(_, k)| reader.valid[[0, k]]),
            };
            let prev: Vec<usize> = live.iter().map(|hy| hy.prev).collect();
            let out = self.step(&mut g, &b, &beam_reader, &prev, hs, cs);
            let logits = g.matmul(out.combined, b.out_weight);
            let logits = g.add_row(logits, b.out_bias);
            let refs = vec![&src; live.len()];
            let dists = self.distributions(&g, &b, &out, &refs, logits);
            let probs = softmax_rows(g.value(logits));

            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            for (r, dist) in dists.iter().enumerate() {
                for (w, &p) in dist.iter().enumerate() {
                    if is_candidate(w) && p > 0.0 {
                        cands.push((live[r].pred.log_prob + p.ln(), r, w));
                    }
                }
            }
            cands.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| live[a.1].pred.ids.cmp(&live[b.1].pred.ids))
                    .then_with(|| a.2.cmp(&b.2))
            });
            cands.truncate(beam_width);

            let mut next = Vec::with_capacity(cands.len());
            for (score, r, w) in cands {
                let mut pred = live[r].pred.clone();
                pred.log_prob = score;
                if w == EOS {
                    pred.finished = true;
                    finished.push(pred);
                    continue;
                }
                pred.sources.push(self.source_of(&g, &out, r, &src, w, probs.row(r).as_slice().unwrap()));
                pred.tokens.push(src.surface(w, vocab).to_string());
                pred.ids.push(w);
                next.push(Hyp { pred, prev: if w < self.vocab_size { w } else { UNK }, row: r });
            }
            (h, c) = (out.h, out.c);
            live = next;
        }
        finished.extend(live.into_iter().map(|hy| hy.pred));
        finished.sort_by(|a, b| b.log_prob.partial_cmp(&a.log_prob).unwrap_or(Ordering::Equal).then_with(|| a.ids.cmp(&b.ids)));
        let mut seen = std::collections::HashSet::new();
        finished.retain(|p| seen.insert((p.ids.clone(), p.finished)));
        finished.truncate(k);
        Ok(finished)
    }

    fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but decoder expects {}",
                vocab.len(),
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Tokens the decoder may emit: everything except padding and the start token.
pub fn is_candidate(id: usize) -> bool {
    id != PAD && id != BOS
}

fn argmax_candidate(dist: &[f64]) -> usize {
    let mut best = EOS;
    for (w, &p) in dist.iter().enumerate() {
        if is_candidate(w) && p > dist[best] {
            best = w;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { epochs: 10, batch_size: 128, lr: 0.001, clip_norm: Some(5.0), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitHistory {
    /// Mean per-sentence negative log-likelihood of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean per-token negative log-likelihood of each epoch.
    pub epoch_token_loss: Vec<f64>,
}

/// Trains the decoder against a fixed keyword source, resampling keywords every epoch.
pub fn fit_decoder(
    mut params: DecoderParams,
    encoder: &dyn KeywordSource,
    data: &CorpusSplit,
    config: &FitConfig,
) -> Result<(DecoderParams, FitHistory)> {
    if data.train.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &params.params);
    let mut history = FitHistory { epoch_loss: Vec::new(), epoch_token_loss: Vec::new() };
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut tokens) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &data.train[i]).collect();
            let keywords = batch
                .iter()
                .map(|s| extract_keywords(s, &encoder.encode(s, EncodingMode::Sampled, &mut rng)?))
                .collect::<Result<Vec<_>>>()?;
            let kw: Vec<&KeywordSequence> = keywords.iter().collect();
            let toks: Vec<&[String]> = batch.iter().map(|s| s.tokens.as_slice()).collect();
            let ids: Vec<&[usize]> = batch.iter().map(|s| s.ids.as_slice()).collect();
            let mut g = Graph::new();
            let out = params.batch_loss(&mut g, &kw, &toks, &ids, true)?;
            let loss = g.scalar(out.loss);
            let mut grads = g.backward(out.loss, &params.params);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged { epoch, batch: bi, detail: format!("decoder loss {loss}") });
            }
            if let Some(max) = config.clip_norm {
                grads.clip_norm(max);
            }
            adam.step(&mut params.params, &grads);
            total += out.nll.iter().sum::<f64>();
            tokens += batch.iter().map(|s| s.len() + 1).sum::<usize>();
        }
        history.epoch_loss.push(total / data.train.len() as f64);
        history.epoch_token_loss.push(total / tokens as f64);
        log::debug!("fit_decoder epoch {epoch}: loss {:.4}", total / data.train.len() as f64);
    }
    Ok((params, history))
}

/// Surface-token multiset helper used by tests and diagnostics.
pub fn token_counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_default() += 1;
    }
    m
}
