//! Deterministic synthetic restaurant-review corpus for desk-scale experiments.
//!
//! Sentences come from templates whose function words are partly predictable from the
//! content words (and partly not: tense, articles and intensifiers vary), plus a long tail
//! of generated proper names so that the type count exceeds typical vocabulary caps.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::decoder::{DecoderConfig, FitConfig};
use crate::encoder::EncoderConfig;
use crate::training::{DualOptimizer, Objective, TrainingConfig};

const FOODS: &[&str] = &[
    "pizza", "burger", "salad", "soup", "pasta", "steak", "sushi", "tacos", "curry", "ramen", "sandwich",
    "fries", "chicken", "salmon", "shrimp", "noodles", "dumplings", "brisket", "pancakes", "waffles",
    "omelette", "bagel", "croissant", "lasagna", "risotto", "gnocchi", "burrito", "nachos", "wings",
    "ribs", "lobster", "oysters", "scallops", "tofu", "falafel", "hummus", "gyro", "kebab", "pho",
    "bibimbap", "tempura", "gelato", "cheesecake", "brownie", "pie", "cookies", "donuts", "muffin",
    "coffee", "latte", "espresso", "tea", "smoothie", "lemonade", "beer", "wine", "cocktails", "margarita",
    "mojito", "cider", "bread", "rice", "beans", "meatballs", "quesadilla", "enchiladas", "paella",
];

const GOOD: &[&str] = &[
    "great", "amazing", "delicious", "fantastic", "excellent", "awesome", "perfect", "fresh", "tasty",
    "wonderful", "outstanding", "incredible", "lovely", "superb", "solid", "decent", "good", "nice",
];

const BAD: &[&str] = &[
    "terrible", "awful", "bland", "cold", "soggy", "greasy", "stale", "salty", "dry", "overpriced",
    "disappointing", "mediocre", "horrible", "gross", "burnt", "undercooked",
];

const INTENSIFIERS: &[&str] = &["very", "really", "so", "super", "pretty", "quite", "absolutely", "extremely"];

const STAFF: &[&str] = &[
    "staff", "waiter", "waitress", "server", "bartender", "manager", "owner", "chef", "hostess", "cashier",
];

const STAFF_TRAITS: &[&str] = &[
    "friendly", "rude", "helpful", "attentive", "slow", "busy", "sweet", "patient", "funny", "professional",
];

const PLACES: &[&str] = &[
    "place", "restaurant", "cafe", "bar", "diner", "bakery", "bistro", "pub", "spot", "kitchen", "grill",
    "joint", "truck", "lounge", "buffet",
];

const PEOPLE: &[&str] = &[
    "wife", "husband", "friend", "friends", "kids", "son", "daughter", "mom", "dad", "boyfriend", "girlfriend",
    "family", "boss", "sister", "brother",
];

const LIKE_VERBS: &[&str] = &["loved", "liked", "enjoyed", "hated", "ordered", "tried", "shared", "recommend"];

const TIMES: &[&str] = &["week", "month", "weekend", "year", "time", "friday", "sunday"];

const PLACE_KINDS: &[&str] = &["Grill", "Cafe", "Kitchen", "Diner", "Bistro", "Bar", "House", "Tavern"];

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "ch", "st", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ei", "ou"];
const CODAS: &[&str] = &["", "", "n", "r", "l", "s", "m", "nd", "x"];

/// A capitalized pseudo-name such as "Marlo" or "Tesin".
pub fn random_name<R: Rng + ?Sized>(rng: &mut R) -> String {
    let syllables = rng.random_range(2..=3);
    let mut name = String::new();
    for i in 0..syllables {
        name.push_str(ONSETS.choose(rng).unwrap());
        name.push_str(VOWELS.choose(rng).unwrap());
        if i + 1 == syllables {
            name.push_str(CODAS.choose(rng).unwrap());
        }
    }
    let mut chars = name.chars();
    let first = chars.next().unwrap().to_uppercase().collect::<String>();
    first + chars.as_str()
}

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn sentence<R: Rng + ?Sized>(rng: &mut R, names: &[String]) -> String {
    let name = |rng: &mut R| -> String {
        // Sometimes reuse a frequent name, otherwise invent one.
        if rng.random_bool(0.15) {
            names.choose(rng).unwrap().clone()
        } else {
            random_name(rng)
        }
    };
    let be = if rng.random_bool(0.5) { "was" } else { "is" };
    let plural_be = if be == "was" { "were" } else { "are" };
    let det = *["the", "the", "the", "our", "my", "this"].choose(rng).unwrap();
    let adj = |rng: &mut R| if rng.random_bool(0.7) { pick(rng, GOOD) } else { pick(rng, BAD) };
    let end = if rng.random_bool(0.8) { "." } else { "!" };
    let s = match rng.random_range(0..20) {
        0 => format!("{det} {} {be} {}{end}", pick(rng, FOODS), adj(rng)),
        1 => format!("{det} {} {be} {} {}{end}", pick(rng, FOODS), pick(rng, INTENSIFIERS), adj(rng)),
        2 => format!("{det} {} {be} {} and {}{end}", pick(rng, STAFF), pick(rng, STAFF_TRAITS), pick(rng, STAFF_TRAITS)),
        3 => format!("we ordered the {} and the {} at {}{end}", pick(rng, FOODS), pick(rng, FOODS), name(rng)),
        4 => format!("my {} {} the {} at {}{end}", pick(rng, PEOPLE), pick(rng, LIKE_VERBS), pick(rng, FOODS), name(rng)),
        5 => format!("{} {be} the best {} in town{end}", name(rng), pick(rng, PLACES)),
        6 => format!("I will be {} minutes late{end}", rng.random_range(2..=60)),
        7 => format!("we will come back to {} next {}{end}", name(rng), pick(rng, TIMES)),
        8 => format!("{} at {} {} {be} {}{end}", capitalize(pick(rng, FOODS)), name(rng), pick(rng, PLACE_KINDS), adj(rng)),
        9 => format!("I love {} {}{end}", name(rng), pick(rng, PLACE_KINDS)),
        10 => format!("{} {be} our {} and {be} {}{end}", name(rng), pick(rng, STAFF), pick(rng, STAFF_TRAITS)),
        11 => format!("the {} {plural_be} {} but the {} {be} {}{end}", pick(rng, FOODS), adj(rng), pick(rng, FOODS), adj(rng)),
        12 => format!("{} {} {}{end}", capitalize(pick(rng, INTENSIFIERS)), adj(rng), pick(rng, FOODS)),
        13 => format!("I would {} the {} to anyone{end}", if rng.random_bool(0.5) { "recommend" } else { "suggest" }, pick(rng, FOODS)),
        14 => format!("we waited {} minutes for a table at {}{end}", rng.random_range(5..=90), name(rng)),
        15 => format!("ask for {} , {} {be} {}{end}", name(rng), if rng.random_bool(0.5) { "she" } else { "he" }, pick(rng, STAFF_TRAITS)),
        16 => format!("{} {} a {} {}{end}", capitalize(det), pick(rng, PLACES), pick(rng, INTENSIFIERS), adj(rng)),
        17 => format!("the {} here {be} {} {}{end}", pick(rng, FOODS), pick(rng, INTENSIFIERS), adj(rng)),
        18 => format!("{} {be} absolutely {}{end}", name(rng), pick(rng, STAFF_TRAITS)),
        _ => format!("it {be} {} and {} {}{end}", adj(rng), pick(rng, INTENSIFIERS), adj(rng)),
    };
    capitalize(&s)
}

/// Generates `n` review-like lines, one sentence each, reproducibly from `seed`.
pub fn generate(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..60).map(|_| random_name(&mut rng)).collect();
    (0..n).map(|_| sentence(&mut rng, &names)).collect()
}

/// Settings of the desk-scale sweep: corpus size, model size, knob grids and optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskExperiment {
    pub lines: usize,
    pub corpus_seed: u64,
    pub dim: usize,
    pub epsilons: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub unif_deltas: Vec<f64>,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub baseline_epochs: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_lambda: f64,
    pub lambda_init: f64,
    pub dual_optimizer: DualOptimizer,
    pub seed: u64,
}

impl Default for DeskExperiment {
    fn default() -> Self {
        DeskExperiment {
            lines: 5000,
            corpus_seed: 7,
            dim: 64,
            epsilons: vec![2.0, 6.0, 10.0, 14.0],
            lambdas: vec![0.2, 0.3, 0.4, 0.5],
            unif_deltas: vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            epochs: 30,
            warmup_epochs: 4,
            baseline_epochs: 20,
            batch_size: 32,
            lr_encoder: 1e-4,
            lr_lambda: 1e-4,
            lambda_init: 0.35,
            dual_optimizer: DualOptimizer::Ascent,
            seed: 0,
        }
    }
}

impl DeskExperiment {
    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig { seed: self.corpus_seed, vocab_size: Some(2000), test_size: 500, ..CorpusConfig::default() }
    }

    pub fn corpus_lines(&self) -> Vec<String> {
        generate(self.lines, self.corpus_seed)
    }

    fn model(&self) -> (EncoderConfig, DecoderConfig) {
        (
            EncoderConfig { embed_dim: self.dim, hidden: self.dim, ..EncoderConfig::default() },
            DecoderConfig { embed_dim: self.dim, hidden: self.dim, ..DecoderConfig::default() },
        )
    }

    pub fn training_config(&self, objective: Objective) -> TrainingConfig {
        let (encoder, decoder) = self.model();
        TrainingConfig {
            objective,
            encoder,
            decoder,
            lr_encoder: self.lr_encoder,
            lr_lambda: self.lr_lambda,
            lambda_init: self.lambda_init,
            dual_optimizer: self.dual_optimizer,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            seed: self.seed,
            ..TrainingConfig::default()
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        self.model().1
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig { epochs: self.baseline_epochs, batch_size: self.batch_size, seed: self.seed, ..FitConfig::default() }
    }
}
