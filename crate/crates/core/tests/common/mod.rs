//! Independent oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::time::Instant;

use kwcomplete::corpus::{TokenizerConfig, Vocabulary, EOS, UNK};
use kwcomplete::decoder::is_candidate;
use kwcomplete::encoder::{extract_keywords, mask_log_prob};
use kwcomplete::graph::Graph;
use kwcomplete::params::{Grads, ParamSet};
use kwcomplete::training::{dual_update, per_example_reward, score_function_gradient, DualState};
use kwcomplete::{
    DecoderConfig, DecoderParams, EncoderConfig, EncoderParams, KeepMask, KeepProbabilities, KeywordSequence, Sentence,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 8] = ["the", "food", "was", "great", "we", "came", "back", "."];

pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::from_tokens("<shift>", WORDS).unwrap()
}

pub fn random_sentence(rng: &mut impl Rng, vocab: &Vocabulary, len: usize) -> Sentence {
    let tokens = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect();
    Sentence::new(tokens, vocab).unwrap()
}

pub fn encoder(vocab: &Vocabulary, dim: usize, scale: f64, seed: u64) -> EncoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EncoderParams::new(vocab.len(), EncoderConfig { embed_dim: dim, hidden: dim, init_scale: scale }, &mut rng)
}

pub fn decoder(vocab: &Vocabulary, embed: usize, hidden: usize, scale: f64, seed: u64) -> DecoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DecoderParams::new(vocab.len(), DecoderConfig { embed_dim: embed, hidden, init_scale: scale }, &mut rng)
}

/// Probability of `mask` as an explicit product of per-position Bernoulli terms.
pub fn mask_prob(p: &[f64], mask: &KeepMask) -> f64 {
    p.iter().zip(&mask.0).map(|(&p, &m)| if m { p } else { 1.0 - p }).product()
}

fn max_abs_diff(a: &Grads, b: &Grads) -> f64 {
    a.iter().zip(b.iter()).flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max)
}

pub struct EstimatorReport {
    pub cases: usize,
    pub max_error: f64,
    pub max_baseline_shift: f64,
    pub seconds: f64,
}

/// For random tiny models, compares the exact expectation of the single-sample REINFORCE estimator
/// (all masks, exact weights) with the gradient of `E[G]` obtained by back-propagating the
/// multilinear coefficients `∂E[G]/∂p_i = E[G | z_i = 1] − E[G | z_i = 0]` through the encoder.
pub fn estimator_oracle(cases: usize, max_len: usize, seed: u64) -> EstimatorReport {
    let start = Instant::now();
    let vocab = tiny_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_error, mut max_shift) = (0.0f64, 0.0f64);
    for case in 0..cases {
        let enc = encoder(&vocab, 4, 0.8, seed + case as u64);
        let dec = decoder(&vocab, 3, 3, 0.5, seed + 1000 + case as u64);
        let len = rng.random_range(1..=max_len);
        let s = random_sentence(&mut rng, &vocab, len);
        let (lambda, epsilon) = (rng.random_range(0.0..6.0), rng.random_range(0.0..3.0));
        let p = enc.keep_probabilities(&s).unwrap();
        let masks: Vec<KeepMask> = KeepMask::enumerate(len).collect();
        let rewards: Vec<f64> = masks
            .iter()
            .map(|m| {
                let kw = extract_keywords(&s, m).unwrap();
                let lp = dec.reconstruction_log_prob(&kw, &s).unwrap();
                per_example_reward(kw.len(), lp, lambda, epsilon)
            })
            .collect();
        let probs: Vec<f64> = masks.iter().map(|m| mask_prob(p.as_slice(), m)).collect();
        let n = masks.len() as f64;
        let batch = vec![&s; masks.len()];

        let weights: Vec<f64> = probs.iter().zip(&rewards).map(|(q, g)| q * g * n).collect();
        let reinforce = score_function_gradient(&enc, &batch, &masks, &weights).unwrap();
        let baseline = rng.random_range(-5.0..5.0);
        let shifted: Vec<f64> = probs.iter().zip(&rewards).map(|(q, g)| q * (g - baseline) * n).collect();
        let reinforce_b = score_function_gradient(&enc, &batch, &masks, &shifted).unwrap();

        let mut coef = vec![0.0; len];
        for (m, &g) in masks.iter().zip(&rewards) {
            for i in 0..len {
                let others: f64 = (0..len)
                    .filter(|&j| j != i)
                    .map(|j| if m.0[j] { p.as_slice()[j] } else { 1.0 - p.as_slice()[j] })
                    .product();
                coef[i] += if m.0[i] { g * others } else { -g * others };
            }
        }
        // Every mask is visited once per coordinate value, so each coefficient was accumulated exactly.
        let mut graph = Graph::new();
        let out = enc.forward_batch(&mut graph, &[&s]).unwrap();
        let c = graph.constant(Array2::from_shape_vec((1, len), coef).unwrap());
        let weighted = graph.mul(out.probs, c);
        let total = graph.sum(weighted);
        let analytic = graph.backward(total, &enc.params);

        max_error = max_error.max(max_abs_diff(&reinforce, &analytic));
        max_shift = max_shift.max(max_abs_diff(&reinforce, &reinforce_b));
    }
    EstimatorReport { cases, max_error, max_baseline_shift: max_shift, seconds: start.elapsed().as_secs_f64() }
}

pub struct CostReport {
    pub max_enum_error: f64,
    pub worst_z: f64,
}

/// Enumeration check of `expected_cost` for lengths up to `max_len`, plus a Monte Carlo
/// z-score of the sampled mean cost.
pub fn expected_cost_oracle(max_len: usize, samples: usize, seed: u64) -> CostReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_err, mut worst_z) = (0.0f64, 0.0f64);
    for len in 1..=max_len {
        let p: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let probs = KeepProbabilities::new(p.clone()).unwrap();
        let enumerated: f64 = KeepMask::enumerate(len).map(|m| mask_prob(&p, &m) * m.kept() as f64).sum();
        max_err = max_err.max((enumerated - probs.expected_cost()).abs());
        let total: usize = (0..samples).map(|_| probs.sample(&mut rng).kept()).sum();
        let mean = total as f64 / samples as f64;
        let sigma = (p.iter().map(|q| q * (1.0 - q)).sum::<f64>() / samples as f64).sqrt();
        if sigma > 0.0 {
            worst_z = worst_z.max((mean - probs.expected_cost()).abs() / sigma);
        }
    }
    CostReport { max_enum_error: max_err, worst_z }
}

/// Largest `|Σ_masks exp(mask_log_prob) − 1|` over random probability vectors, including exact 0s and 1s.
pub fn mask_normalization_error(max_len: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for len in 1..=max_len {
        for trial in 0..3 {
            let p: Vec<f64> = (0..len)
                .map(|_| match (trial, rng.random_range(0..5)) {
                    (2, 0) => 0.0,
                    (2, 1) => 1.0,
                    _ => rng.random::<f64>(),
                })
                .collect();
            let probs = KeepProbabilities::new(p).unwrap();
            let total: f64 = KeepMask::enumerate(len).map(|m| mask_log_prob(&probs, &m).unwrap().exp()).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    worst
}

/// Worst relative disagreement between an analytic gradient and central differences.
pub fn compare_to_finite_differences(
    params: &ParamSet,
    analytic: &Grads,
    mut f: impl FnMut(&ParamSet) -> f64,
    h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut p = params.clone();
    for id in 0..params.len() {
        let shape = params.value(id).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = p.value(id)[[r, c]];
                p.value_mut(id)[[r, c]] = orig + h;
                let up = f(&p);
                p.value_mut(id)[[r, c]] = orig - h;
                let down = f(&p);
                p.value_mut(id)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.get(id)[[r, c]];
                let scale = a.abs().max(numeric.abs()).max(1e-4);
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
    }
    worst
}

/// Encoder: gradient of expected cost plus a fixed-weight score-function surrogate.
pub fn encoder_gradient_check(seed: u64) -> f64 {
    let vocab = tiny_vocab();
    let enc = encoder(&vocab, 8, 0.5, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch: Vec<Sentence> = (0..3).map(|i| random_sentence(&mut rng, &vocab, 3 + i)).collect();
    let refs: Vec<&Sentence> = batch.iter().collect();
    let masks: Vec<KeepMask> = batch.iter().map(|s| KeepMask((0..s.len()).map(|_| rng.random_bool(0.5)).collect())).collect();
    let weights = [1.5, -0.7, 2.0];

    let objective = |e: &EncoderParams, g: &mut Graph| {
        let out = e.forward_batch(g, &refs).unwrap();
        let valid = g.constant(out.valid.clone());
        let kept = g.mul(out.probs, valid);
        let cost = g.sum(kept);
        let mut bits = Array2::zeros(out.valid.dim());
        let mut scale = Array2::zeros(out.valid.dim());
        for (r, m) in masks.iter().enumerate() {
            for (t, &k) in m.0.iter().enumerate() {
                bits[[r, t]] = k as u8 as f64;
                scale[[r, t]] = weights[r];
            }
        }
        let ll = g.bernoulli_log_lik(out.probs, &bits, 1e-6, 1.0 - 1e-6);
        let scale = g.constant(scale);
        let ll = g.mul(ll, scale);
        let ll = g.sum(ll);
        g.add(cost, ll)
    };
    let mut g = Graph::new();
    let root = objective(&enc, &mut g);
    let analytic = g.backward(root, &enc.params);
    let config = enc.config;
    compare_to_finite_differences(
        &enc.params,
        &analytic,
        |p| {
            let e = EncoderParams::from_param_set(vocab.len(), config, p.clone()).unwrap();
            let mut g = Graph::new();
            let root = objective(&e, &mut g);
            g.scalar(root)
        },
        1e-5,
    )
}

/// Decoder: gradient of the mean batch negative log-likelihood, with an out-of-vocabulary
/// keyword that must be copied and an empty keyword sequence.
pub fn decoder_gradient_check(seed: u64) -> f64 {
    let vocab = tiny_vocab();
    let dec = decoder(&vocab, 4, 5, 0.5, seed);
    let s1 = Sentence::new(["we", "came", "back", "to", "zorba", "."].map(String::from).to_vec(), &vocab).unwrap();
    let s2 = Sentence::new(["the", "food", "was", "great"].map(String::from).to_vec(), &vocab).unwrap();
    let s3 = Sentence::new(["great", "food", "."].map(String::from).to_vec(), &vocab).unwrap();
    let k1 = extract_keywords(&s1, &KeepMask::from_bits(&[0, 1, 0, 0, 1, 0])).unwrap();
    let k2 = extract_keywords(&s2, &KeepMask::from_bits(&[0, 1, 0, 1])).unwrap();
    let k3 = extract_keywords(&s3, &KeepMask::from_bits(&[0, 0, 0])).unwrap();
    let kws = [&k1, &k2, &k3];
    let toks: Vec<&[String]> = vec![&s1.tokens, &s2.tokens, &s3.tokens];
    let ids: Vec<&[usize]> = vec![&s1.ids, &s2.ids, &s3.ids];

    let mut g = Graph::new();
    let loss = dec.batch_loss(&mut g, &kws, &toks, &ids, true).unwrap();
    let analytic = g.backward(loss.loss, &dec.params);
    let config = dec.config;
    compare_to_finite_differences(
        &dec.params,
        &analytic,
        |p| {
            let d = DecoderParams::from_param_set(vocab.len(), config, p.clone()).unwrap();
            let mut g = Graph::new();
            let l = d.batch_loss(&mut g, &kws, &toks, &ids, true).unwrap();
            g.scalar(l.loss)
        },
        1e-5,
    )
}

/// All hypotheses a beam of unlimited width can return, scored independently.
pub fn exhaustive_hypotheses(
    dec: &DecoderParams,
    vocab: &Vocabulary,
    kw: &KeywordSequence,
    max_len: usize,
) -> Vec<(f64, Vec<usize>, bool)> {
    let v = vocab.len();
    let oov: Vec<String> = {
        let mut seen: Vec<String> = Vec::new();
        for (t, &id) in kw.tokens.iter().zip(&kw.ids) {
            if id == UNK && !vocab.contains(t) && !seen.contains(t) {
                seen.push(t.clone());
            }
        }
        seen
    };
    let symbols: Vec<usize> = (0..v + oov.len()).filter(|&w| is_candidate(w) && w != EOS).collect();
    let surface = |w: usize| if w < v { vocab.token(w).unwrap().to_string() } else { oov[w - v].clone() };
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for len in 0..=max_len {
        for seq in &frontier {
            let tokens: Vec<String> = seq.iter().map(|&w| surface(w)).collect();
            let ids: Vec<usize> = seq.iter().map(|&w| if w < v { w } else { UNK }).collect();
            let target = Sentence { tokens, ids };
            if len < max_len {
                out.push((dec.sequence_log_prob(kw, &target, true).unwrap(), seq.clone(), true));
            } else {
                out.push((dec.sequence_log_prob(kw, &target, false).unwrap(), seq.clone(), false));
            }
        }
        if len < max_len {
            frontier = frontier
                .iter()
                .flat_map(|s| symbols.iter().map(move |&w| [s.clone(), vec![w]].concat()))
                .collect();
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    out
}

pub struct BeamReport {
    pub cases: usize,
    pub mismatches: usize,
    pub max_score_error: f64,
}

/// Full-width beam search against exhaustive enumeration on vocabularies of at most four words.
pub fn beam_oracle(seed: u64) -> BeamReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cases, mut mismatches, mut max_err) = (0, 0, 0.0f64);
    for (words, max_len) in [(3usize, 3usize), (4, 2), (4, 3), (2, 4), (3, 4)] {
        let vocab = Vocabulary::from_tokens("<shift>", WORDS[..words].iter().copied()).unwrap();
        for trial in 0..2 {
            let dec = decoder(&vocab, 3, 4, 1.0, seed + cases as u64);
            let kw_tokens: Vec<String> = if trial == 0 {
                vec![WORDS[0].to_string(), "zorba".to_string()]
            } else {
                (0..2).map(|_| WORDS[rng.random_range(0..words)].to_string()).collect()
            };
            let kw = KeywordSequence::from_sentence(&Sentence::new(kw_tokens, &vocab).unwrap());
            let all = exhaustive_hypotheses(&dec, &vocab, &kw, max_len);
            let k = 10.min(all.len());
            let beam = dec.beam_decode(&vocab, &kw, all.len() + 16, k, max_len).unwrap();
            cases += 1;
            let same = beam.len() == k
                && beam.iter().zip(&all).all(|(b, e)| {
                    max_err = max_err.max((b.log_prob - e.0).abs());
                    b.ids == e.1 && b.finished == e.2 && (b.log_prob - e.0).abs() < 1e-9
                });
            if !same {
                mismatches += 1;
            }
        }
    }
    BeamReport { cases, mismatches, max_score_error: max_err }
}

pub struct DualReport {
    pub increases_while_violated: bool,
    pub decreases_while_satisfied: bool,
    pub reaches_zero: bool,
    pub never_negative: bool,
}

/// Drives `dual_update` with deterministic loss sequences above and then below `ε`.
pub fn dual_dynamics() -> DualReport {
    let epsilon = 0.6;
    let mut d = DualState { lambda: 5.0, epsilon, baseline: None };
    let mut up = true;
    let mut never_negative = true;
    for i in 0..50 {
        let loss = 0.8 + 0.01 * i as f64;
        let next = dual_update(&d, loss, epsilon, 0.01);
        up &= next.lambda > d.lambda;
        never_negative &= next.lambda >= 0.0;
        d = next;
    }
    let mut down = true;
    let mut hit_zero = false;
    for i in 0..5000 {
        let loss = 0.1 + 0.0001 * (i % 7) as f64;
        let next = dual_update(&d, loss, epsilon, 0.01);
        never_negative &= next.lambda >= 0.0;
        if d.lambda > 0.0 {
            down &= next.lambda < d.lambda;
        } else {
            down &= next.lambda == 0.0;
        }
        hit_zero |= next.lambda == 0.0;
        d = next;
    }
    DualReport {
        increases_while_violated: up,
        decreases_while_satisfied: down,
        reaches_zero: hit_zero,
        never_negative,
    }
}

pub fn tokenizer() -> TokenizerConfig {
    TokenizerConfig::default()
}
