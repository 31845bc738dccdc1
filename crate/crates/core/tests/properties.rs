mod common;

use common::*;
use kwcomplete::baselines::{StopwordLexicon, Stopword, Unif};
use kwcomplete::corpus::{detokenize, split_lines, tokenize, CorpusConfig, UNK};
use kwcomplete::encoder::{extract_keywords, KeywordSource};
use kwcomplete::evaluation::{knob_spread, retention_rate, token_retention_stats, EvalConfig, LexiconTagger, TradeoffPoint};
use kwcomplete::service::Checkpoint;
use kwcomplete::training::{dual_update, score_function_gradient, DualState};
use kwcomplete::{EncodingMode, KeepMask, KeepProbabilities, KeywordSequence, Sentence, TokenizerConfig, Vocabulary};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn word() -> impl Strategy<Value = String> {
    ("[a-z][a-z']{0,5}", any::<bool>(), prop::sample::select(vec!["", "", "", ".", ",", "!", "?", "!!"])).prop_map(
        |(w, cap, punct)| {
            let w = if cap { w[..1].to_uppercase() + &w[1..] } else { w };
            w + punct
        },
    )
}

fn line() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..12).prop_map(|ws| ws.join(" "))
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn tokenize_round_trip(raw in line()) {
        let tok = TokenizerConfig::default();
        let tokens = tokenize(&raw, &tok).unwrap();
        prop_assert_eq!(detokenize(&tokens, &tok.marker), raw);
    }

    #[test]
    fn vocabulary_is_deterministic(lines in prop::collection::vec(line(), 1..30), cap in 6usize..40) {
        let tok = TokenizerConfig::default();
        let corpus: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l, &tok).unwrap()).collect();
        let a = Vocabulary::build(corpus.iter().map(Vec::as_slice), &tok.marker, Some(cap), 1).unwrap();
        let b = Vocabulary::build(corpus.iter().map(Vec::as_slice), &tok.marker, Some(cap), 1).unwrap();
        prop_assert_eq!(a.to_file_string(), b.to_file_string());
        prop_assert!(a.len() <= cap + kwcomplete::corpus::NUM_RESERVED);
    }

    #[test]
    fn split_respects_length_limit(lines in prop::collection::vec(line(), 12..40), max_len in 3usize..12) {
        let cfg = CorpusConfig { max_sentence_length: max_len, test_size: 1, vocab_size: None, ..Default::default() };
        if let Ok(split) = split_lines(lines.iter().map(String::as_str), &cfg) {
            prop_assert!(split.train.iter().chain(&split.test).all(|s| s.len() <= max_len));
            prop_assert!(split.train.len() + split.test.len() <= split.stats.survivors);
        }
    }

    #[test]
    fn keywords_are_a_subsequence(p in prop::collection::vec(0.0f64..=1.0, 1..16), seed in any::<u64>()) {
        let vocab = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_sentence(&mut rng, &vocab, p.len());
        let m = KeepProbabilities::new(p).unwrap().sample(&mut rng);
        let kw = extract_keywords(&s, &m).unwrap();
        prop_assert_eq!(kw.len(), m.kept());
        let mut j = 0;
        for t in &s.tokens {
            if j < kw.len() && &kw.tokens[j] == t {
                j += 1;
            }
        }
        prop_assert_eq!(j, kw.len());
        prop_assert!(kw.positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn lambda_stays_non_negative(
        lambda in 0.0f64..10.0,
        epsilon in 0.01f64..5.0,
        losses in prop::collection::vec(0.0f64..20.0, 1..200),
        lr in 0.0001f64..1.0,
    ) {
        let mut d = DualState { lambda, epsilon, baseline: None };
        for loss in losses {
            d = dual_update(&d, loss, epsilon, lr);
            prop_assert!(d.lambda >= 0.0);
        }
    }

    #[test]
    fn knob_spread_is_scale_invariant(r in prop::collection::vec(0.01f64..1.0, 3..10), c in 0.1f64..5.0) {
        let pts = |scale: f64| -> Vec<TradeoffPoint> {
            r.iter().map(|&x| TradeoffPoint {
                scheme: "s".into(),
                knob: "k".into(),
                knob_value: 0.0,
                retention: x * scale,
                exact_match: 0.0,
                mode: EncodingMode::Sampled,
                fingerprint: String::new(),
            }).collect()
        };
        let (a, b) = (knob_spread(&pts(1.0)).unwrap(), knob_spread(&pts(c)).unwrap());
        prop_assert!(a == b || (a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn reward_scaling_scales_the_estimate(seed in 0u64..1000, factor in -3.0f64..3.0) {
        let vocab = tiny_vocab();
        let enc = encoder(&vocab, 4, 0.5, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<Sentence> = (0..3).map(|_| random_sentence(&mut rng, &vocab, 4)).collect();
        let refs: Vec<&Sentence> = batch.iter().collect();
        let masks: Vec<KeepMask> = batch.iter().map(|s| enc.keep_probabilities(s).unwrap().sample(&mut rng)).collect();
        let w = [1.0, -2.0, 0.5];
        let scaled: Vec<f64> = w.iter().map(|x| x * factor).collect();
        let g1 = score_function_gradient(&enc, &refs, &masks, &w).unwrap();
        let g2 = score_function_gradient(&enc, &refs, &masks, &scaled).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x * factor - y).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn step_distributions_are_normalized(seed in 0u64..10_000, kw_bits in prop::collection::vec(any::<bool>(), 1..5)) {
        let vocab = tiny_vocab();
        let dec = decoder(&vocab, 4, 4, 0.8, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = random_sentence(&mut rng, &vocab, kw_bits.len());
        s.tokens[0] = "zorba".into();
        s.ids[0] = UNK;
        let kw = extract_keywords(&s, &KeepMask(kw_bits.clone())).unwrap();
        let has_oov = kw_bits[0];
        let v = vocab.len();
        let prefix = random_sentence(&mut rng, &vocab, 2);
        for depth in 0..=2 {
            let mut total = 0.0;
            for w in 0..v + has_oov as usize {
                let (tok, id) = if w < v { (vocab.token(w).unwrap().to_string(), w) } else { ("zorba".to_string(), UNK) };
                let mut tokens = prefix.tokens[..depth].to_vec();
                let mut ids = prefix.ids[..depth].to_vec();
                tokens.push(tok);
                ids.push(id);
                let p = dec.sequence_log_prob(&kw, &Sentence { tokens, ids }, false).unwrap().exp();
                let head = if depth == 0 {
                    1.0
                } else {
                    let t = Sentence { tokens: prefix.tokens[..depth].to_vec(), ids: prefix.ids[..depth].to_vec() };
                    dec.sequence_log_prob(&kw, &t, false).unwrap().exp()
                };
                if w >= v {
                    prop_assert!(p > 0.0, "copied token unreachable");
                }
                total += p / head;
            }
            prop_assert!((total - 1.0).abs() < 1e-6, "depth {}: {}", depth, total);
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in 0u64..10_000) {
        let vocab = tiny_vocab();
        let ck = Checkpoint::learned(vocab.clone(), TokenizerConfig::default(), encoder(&vocab, 3, 0.3, seed), decoder(&vocab, 3, 2, 0.3, seed + 1));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

fn lexicon_sentences(n: usize, seed: u64) -> (Vocabulary, Vec<Sentence>) {
    let words = ["the", "a", "was", "and", "food", "great", "service", "slow", "pizza", "."];
    let vocab = Vocabulary::from_tokens("<shift>", words).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n)
        .map(|_| {
            let len = rand::Rng::random_range(&mut rng, 1..12);
            let toks = (0..len).map(|_| words[rand::Rng::random_range(&mut rng, 0..words.len())].to_string()).collect();
            Sentence::new(toks, &vocab).unwrap()
        })
        .collect();
    (vocab, data)
}

#[test]
fn stopword_zero_drops_exactly_the_lexicon() {
    let lexicon = StopwordLexicon::bundled();
    let (_, data) = lexicon_sentences(200, 1);
    let enc = Stopword::new(0.0, lexicon.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in &data {
        let kw = extract_keywords(s, &enc.encode(s, EncodingMode::Sampled, &mut rng).unwrap()).unwrap();
        assert!(kw.tokens.iter().all(|t| !lexicon.contains(t)));
        let expected: Vec<&String> = s.tokens.iter().filter(|t| !lexicon.contains(t)).collect();
        assert_eq!(kw.tokens.iter().collect::<Vec<_>>(), expected);
    }
}

#[test]
fn unif_retention_within_three_sigma() {
    let (_, data) = lexicon_sentences(400, 3);
    let tokens: usize = data.iter().map(Sentence::len).sum();
    for (i, delta) in [0.1, 0.25, 0.5, 0.75, 0.9].into_iter().enumerate() {
        let cfg = EvalConfig { seed: 50 + i as u64, ..Default::default() };
        let r = retention_rate(&Unif::new(delta).unwrap(), &data, &cfg).unwrap();
        let sigma = (delta * (1.0 - delta) / tokens as f64).sqrt();
        assert!((r - delta).abs() < 3.0 * sigma, "delta {delta}: {r}");
    }
}

#[test]
fn micro_retention_equals_weighted_type_rates() {
    let (vocab, data) = lexicon_sentences(300, 4);
    let tagger = LexiconTagger::bundled(vocab.marker());
    let sources: Vec<Box<dyn KeywordSource>> = vec![
        Box::new(Unif::new(0.37).unwrap()),
        Box::new(Stopword::new(0.5, StopwordLexicon::bundled()).unwrap()),
        Box::new(encoder(&vocab, 4, 0.5, 9)),
    ];
    for src in &sources {
        for mode in [EncodingMode::Sampled, EncodingMode::Thresholded] {
            let cfg = EvalConfig { mode, ..Default::default() };
            let r = retention_rate(src.as_ref(), &data, &cfg).unwrap();
            let st = token_retention_stats(src.as_ref(), &data, &tagger, &cfg).unwrap();
            let freq: usize = st.types.iter().map(|t| t.frequency).sum();
            let weighted: f64 = st.types.iter().map(|t| t.keep_rate * t.frequency as f64).sum::<f64>() / freq as f64;
            assert!((r - weighted).abs() < 1e-9);
        }
    }
}

#[test]
fn mask_sampling_matches_half_probability() {
    let p = KeepProbabilities::new(vec![0.5; 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut counts = [0usize; 4];
    let n = 100_000;
    for _ in 0..n {
        for (c, k) in counts.iter_mut().zip(p.sample(&mut rng).0) {
            *c += k as usize;
        }
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 0.5).abs() < 0.01);
    }
}

#[test]
fn empty_keywords_are_decodable() {
    let vocab = tiny_vocab();
    let dec = decoder(&vocab, 4, 4, 0.5, 1);
    let kw = KeywordSequence::from_sentence(&random_sentence(&mut ChaCha8Rng::seed_from_u64(1), &vocab, 3));
    let empty = KeywordSequence { tokens: vec![], ids: vec![], positions: vec![] };
    for k in [&kw, &empty] {
        let beam = dec.beam_decode(&vocab, k, 4, 2, 5).unwrap();
        assert_eq!(beam.len(), 2);
        assert!(beam[0].log_prob >= beam[1].log_prob);
    }
}
