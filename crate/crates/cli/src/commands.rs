use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kwcomplete::baselines::{sweep_baseline, BaselineConfig, BaselineKind, StopwordLexicon};
use kwcomplete::corpus::{load_split, CorpusConfig, CorpusSplit};
use kwcomplete::decoder::FitConfig;
use kwcomplete::evaluation::{
    curve_from_points, evaluate_scheme, knob_spread, points_to_csv, robustness_matrix, token_retention_stats,
    EvalConfig, LexiconTagger, PosTag, Scheme, TradeoffPoint,
};
use kwcomplete::service::{
    analyze_sessions, load_checkpoint, save_checkpoint, Checkpoint, CompletionRequest, EncoderSpec, JsonlSessionStore,
    Model, SessionFilters, SessionStore,
};
use kwcomplete::training::{train, write_history, DualOptimizer, Objective, TrainingConfig};
use kwcomplete::{DecoderConfig, EncoderConfig, EncodingMode, KeywordSource};
use serde::Serialize;

use crate::manifest::Manifest;
use crate::plot::tradeoff_svg;
use crate::server::{self, AppState};

pub const CORPUS_LINES: &str = "corpus.txt";
pub const CORPUS_CONFIG: &str = "corpus.json";
pub const MODEL_FILE: &str = "model.kckp";
pub const HISTORY_FILE: &str = "history.jsonl";

#[derive(Debug, Parser)]
#[command(name = "kwcomplete", version, about = "Train, evaluate and serve keyword autocomplete models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize, filter and split a corpus (or generate a synthetic one).
    PrepareCorpus(PrepareArgs),
    /// Train one encoder/decoder pair.
    Train(TrainArgs),
    /// Train and evaluate a grid of schemes.
    Sweep(SweepArgs),
    /// Evaluate checkpoints on the test split.
    Evaluate(EvaluateArgs),
    /// Cross-evaluate every decoder against every encoder.
    Robustness(RobustnessArgs),
    /// Per-type and per-tag keep rates of a checkpoint's encoder.
    AnalyzeTokens(AnalyzeTokensArgs),
    /// Serve completions and session logging over HTTP.
    Serve(ServeArgs),
    /// Print suggestions for one set of keywords.
    Complete(CompleteArgs),
    /// Filter logged study sessions and summarize timing and equivalence.
    AnalyzeSessions(AnalyzeSessionsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// Raw corpus, one sentence per line.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate this many synthetic review sentences instead of reading a file.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub synthetic_seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 16)]
    pub max_len: usize,
    #[arg(long, default_value_t = 500)]
    pub test_size: usize,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ObjectiveArg {
    Constrained,
    Linear,
    Unif,
    Stopword,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum DualArg {
    Ascent,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModeArg {
    Sampled,
    Thresholded,
}

impl From<ModeArg> for EncodingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sampled => EncodingMode::Sampled,
            ModeArg::Thresholded => EncodingMode::Thresholded,
        }
    }
}

/// Model and optimizer settings shared by `train` and `sweep`.
#[derive(Clone, Debug, Args, Serialize)]
pub struct Hyper {
    /// Directory written by `prepare-corpus`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 300)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 300)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr_encoder: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr_decoder: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr_lambda: f64,
    #[arg(long, default_value_t = 5.0)]
    pub lambda_init: f64,
    #[arg(long, value_enum, default_value_t = DualArg::Ascent)]
    pub dual: DualArg,
    #[arg(long, default_value_t = 0.95)]
    pub baseline_decay: f64,
    /// Leading epochs that train only the decoder, with the encoder and multiplier held fixed.
    #[arg(long, default_value_t = 0)]
    pub warmup_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Hyper {
    pub fn training_config(&self, objective: Objective) -> TrainingConfig {
        TrainingConfig {
            objective,
            encoder: EncoderConfig { embed_dim: self.embed_dim, hidden: self.hidden, ..EncoderConfig::default() },
            decoder: self.decoder_config(),
            lr_encoder: self.lr_encoder,
            lr_decoder: self.lr_decoder,
            lr_lambda: self.lr_lambda,
            lambda_init: self.lambda_init,
            dual_optimizer: match self.dual {
                DualArg::Ascent => DualOptimizer::Ascent,
                DualArg::Adam => DualOptimizer::Adam,
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            baseline_decay: self.baseline_decay,
            warmup_epochs: self.warmup_epochs,
            seed: self.seed,
            ..TrainingConfig::default()
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig { embed_dim: self.embed_dim, hidden: self.hidden, ..DecoderConfig::default() }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr_decoder,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Constrained)]
    pub objective: ObjectiveArg,
    /// Constraint on the expected reconstruction loss (nats per sentence).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Fixed weight of the loss in the linear objective.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Keep probability for baseline encoders.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Sampled)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1234)]
    pub eval_seed: u64,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
}

impl EvalArgs {
    pub fn config(&self) -> EvalConfig {
        EvalConfig { mode: self.mode.into(), seed: self.eval_seed, max_len: self.max_len }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub hyper: Hyper,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, value_enum)]
    pub objective: ObjectiveArg,
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub deltas: Vec<f64>,
    /// Also write an SVG plot of the tradeoff points.
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// One or more checkpoints.
    #[arg(long = "model", required = true, num_args = 1..)]
    pub models: Vec<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Load checkpoints whose vocabulary differs from the corpus.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long = "model", required = true, num_args = 1..)]
    pub models: Vec<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeTokensArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Evaluate on the training split instead of the test split.
    #[arg(long)]
    pub train_split: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, env = "KWCOMPLETE_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "KWCOMPLETE_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Append-only session log.
    #[arg(long, default_value = "sessions.jsonl")]
    pub sessions: PathBuf,
    /// Target sentences for study plans, one per line.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Where to write the run manifest; defaults to the session log's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompleteArgs {
    #[arg(long, env = "KWCOMPLETE_MODEL")]
    pub model: PathBuf,
    #[arg(long)]
    pub keywords: String,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// Print the response as JSON.
    #[arg(long)]
    pub json: bool,
    /// If set, also write the response and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeSessionsArgs {
    #[arg(long)]
    pub sessions: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub max_invalid_fraction: f64,
    #[arg(long, default_value_t = 1.5)]
    pub outlier_sd: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareCorpus(a) => prepare_corpus(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Robustness(a) => robustness(&a),
        Command::AnalyzeTokens(a) => analyze_tokens(&a),
        Command::Serve(a) => serve(&a),
        Command::Complete(a) => complete(&a),
        Command::AnalyzeSessions(a) => analyze_sessions_cmd(&a),
    }
}

fn write(dir: &Path, name: &str, text: &str, manifest: &mut Manifest) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    manifest.artifact(name);
    Ok(())
}

pub fn prepare_corpus(a: &PrepareArgs) -> Result<()> {
    let lines: Vec<String> = match (&a.input, a.synthetic) {
        (Some(path), _) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .lines()
            .map(str::to_string)
            .collect(),
        (None, Some(n)) => kwcomplete::desk::generate(n, a.synthetic_seed),
        (None, None) => bail!("either --input or --synthetic is required"),
    };
    let config = CorpusConfig {
        max_sentence_length: a.max_len,
        vocab_size: Some(a.vocab_size),
        seed: a.seed,
        train_size: a.train_size,
        test_size: a.test_size,
        ..CorpusConfig::default()
    };
    let mut manifest = Manifest::new("prepare-corpus", a);
    let mut text = lines.join("\n");
    text.push('\n');
    write(&a.out, CORPUS_LINES, &text, &mut manifest)?;
    let split = load_split(&a.out.join(CORPUS_LINES), &config)?;
    write(&a.out, CORPUS_CONFIG, &serde_json::to_string_pretty(&config)?, &mut manifest)?;
    write(&a.out, "vocab.txt", &split.vocab.to_file_string(), &mut manifest)?;
    let marker = split.marker().to_string();
    let surface = |xs: &[kwcomplete::Sentence]| xs.iter().map(|s| s.surface(&marker) + "\n").collect::<String>();
    write(&a.out, "train.txt", &surface(&split.train), &mut manifest)?;
    write(&a.out, "test.txt", &surface(&split.test), &mut manifest)?;
    manifest.seed("split", a.seed);
    if a.synthetic.is_some() {
        manifest.seed("synthetic", a.synthetic_seed);
    }
    corpus_fingerprints(&split, &mut manifest);
    manifest.summary = serde_json::json!({
        "stats": split.stats,
        "train": split.train.len(),
        "test": split.test.len(),
        "vocab": split.vocab.len(),
    });
    manifest.write(&a.out)?;
    println!(
        "{} train / {} test sentences, vocabulary {} ({} lines read)",
        split.train.len(),
        split.test.len(),
        split.vocab.len(),
        split.stats.lines
    );
    Ok(())
}

fn corpus_fingerprints(split: &CorpusSplit, manifest: &mut Manifest) {
    manifest.fingerprint("corpus", &split.fingerprint());
    manifest.fingerprint("vocab", &split.vocab.fingerprint());
    manifest.fingerprint("test", &split.test_fingerprint());
}

pub fn load_corpus(dir: &Path) -> Result<CorpusSplit> {
    let cfg_path = dir.join(CORPUS_CONFIG);
    let config: CorpusConfig = serde_json::from_str(
        &std::fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?,
    )
    .with_context(|| format!("parsing {}", cfg_path.display()))?;
    Ok(load_split(&dir.join(CORPUS_LINES), &config)?)
}

fn objective_of(objective: ObjectiveArg, epsilon: Option<f64>, lambda: Option<f64>) -> Result<Objective> {
    Ok(match objective {
        ObjectiveArg::Constrained => Objective::Constrained { epsilon: epsilon.context("--epsilon is required")? },
        ObjectiveArg::Linear => Objective::Linear { lambda: lambda.context("--lambda is required")? },
        _ => bail!("not a learned objective"),
    })
}

fn baseline_of(objective: ObjectiveArg, delta: f64) -> BaselineConfig {
    let kind = if objective == ObjectiveArg::Unif { BaselineKind::Unif } else { BaselineKind::Stopword };
    BaselineConfig { kind, delta }
}

/// Trains one scheme into `dir` and returns its checkpoint.
fn train_into(
    data: &CorpusSplit,
    hyper: &Hyper,
    objective: ObjectiveArg,
    knob: f64,
    dir: &Path,
    manifest: &mut Manifest,
    prefix: &str,
) -> Result<Checkpoint> {
    let tokenizer = data.config.tokenizer.clone();
    let mut checkpoint = match objective {
        ObjectiveArg::Constrained | ObjectiveArg::Linear => {
            let objective = objective_of(objective, Some(knob), Some(knob))?;
            let config = hyper.training_config(objective);
            let outcome = train(data, &config)?;
            std::fs::create_dir_all(dir)?;
            write_history(&dir.join(HISTORY_FILE), &outcome.history)?;
            manifest.artifact(format!("{prefix}{HISTORY_FILE}"));
            let mut ck = Checkpoint::learned(data.vocab.clone(), tokenizer, outcome.encoder, outcome.decoder);
            ck.meta.training = Some(config);
            ck.meta.dual = Some(outcome.dual);
            ck.meta.history = Some(HISTORY_FILE.to_string());
            ck
        }
        ObjectiveArg::Unif | ObjectiveArg::Stopword => {
            let cfg = baseline_of(objective, knob);
            let mut runs = sweep_baseline(
                data,
                &[cfg],
                &StopwordLexicon::bundled(),
                hyper.decoder_config(),
                &hyper.fit_config(),
                &EvalConfig::default(),
            )?;
            let run = runs.remove(0);
            let history: Vec<_> = run
                .history
                .epoch_loss
                .iter()
                .enumerate()
                .map(|(epoch, loss)| serde_json::json!({ "epoch": epoch, "mean_loss": loss }).to_string() + "\n")
                .collect();
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(HISTORY_FILE), history.concat())?;
            manifest.artifact(format!("{prefix}{HISTORY_FILE}"));
            let mut ck = Checkpoint::baseline(data.vocab.clone(), tokenizer, cfg, run.decoder);
            ck.meta.history = Some(HISTORY_FILE.to_string());
            ck
        }
    };
    checkpoint.meta.corpus_fingerprint = Some(data.fingerprint());
    save_checkpoint(&dir.join(MODEL_FILE), &checkpoint)?;
    manifest.artifact(format!("{prefix}{MODEL_FILE}"));
    Ok(checkpoint)
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let data = load_corpus(&a.hyper.corpus)?;
    let knob = match a.objective {
        ObjectiveArg::Constrained => a.epsilon.context("--epsilon is required for the constrained objective")?,
        ObjectiveArg::Linear => a.lambda.context("--lambda is required for the linear objective")?,
        ObjectiveArg::Unif | ObjectiveArg::Stopword => a.delta.context("--delta is required for baselines")?,
    };
    let mut manifest = Manifest::new("train", a);
    manifest.seed("train", a.hyper.seed);
    corpus_fingerprints(&data, &mut manifest);
    std::fs::create_dir_all(&a.out)?;
    let ck = train_into(&data, &a.hyper, a.objective, knob, &a.out, &mut manifest, "")?;
    manifest.fingerprint("model", ck.fingerprint());
    manifest.write(&a.out)?;
    println!("wrote {}", a.out.join(MODEL_FILE).display());
    Ok(())
}

/// Scheme label and objective knob recorded in a checkpoint.
pub fn scheme_label(ck: &Checkpoint) -> (String, String, f64) {
    match (&ck.meta.encoder, &ck.meta.training) {
        (EncoderSpec::Baseline { baseline }, _) => (baseline.to_string(), "delta".into(), baseline.delta),
        (EncoderSpec::Learned { .. }, Some(cfg)) => match cfg.objective {
            Objective::Constrained { epsilon } => (format!("constr({epsilon})"), "epsilon".into(), epsilon),
            Objective::Linear { lambda } => (format!("linear({lambda})"), "lambda".into(), lambda),
        },
        (EncoderSpec::Learned { .. }, None) => ("learned".into(), "none".into(), f64::NAN),
    }
}

fn evaluate_checkpoint(ck: &Checkpoint, data: &CorpusSplit, eval: &EvalConfig) -> Result<TradeoffPoint> {
    let encoder = ck.keyword_source(&StopwordLexicon::bundled())?;
    let (name, knob, knob_value) = scheme_label(ck);
    let scheme = Scheme { name, knob, knob_value, encoder: encoder.as_ref(), decoder: &ck.decoder };
    Ok(evaluate_scheme(&scheme, &data.vocab, &data.test, eval)?)
}

fn write_points(points: Vec<TradeoffPoint>, out: &Path, plot: bool, manifest: &mut Manifest) -> Result<()> {
    let spread = knob_spread(&points).ok();
    let curve = curve_from_points(points);
    write(out, "points.csv", &points_to_csv(&curve.points), manifest)?;
    write(out, "pareto.csv", &points_to_csv(&curve.pareto), manifest)?;
    if plot {
        write(out, "tradeoff.svg", &tradeoff_svg(&curve.points), manifest)?;
    }
    manifest.summary = serde_json::json!({ "points": curve.points, "knob_spread": spread });
    for p in &curve.points {
        println!("{:<20} retention {:.4}  exact match {:.4}", p.scheme, p.retention, p.exact_match);
    }
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let knobs = match a.objective {
        ObjectiveArg::Constrained => &a.epsilons,
        ObjectiveArg::Linear => &a.lambdas,
        ObjectiveArg::Unif | ObjectiveArg::Stopword => &a.deltas,
    };
    if knobs.is_empty() {
        bail!("no knob values given for the {:?} objective", a.objective);
    }
    let data = load_corpus(&a.hyper.corpus)?;
    let eval = a.eval.config();
    let mut manifest = Manifest::new("sweep", a);
    manifest.seed("train", a.hyper.seed).seed("eval", eval.seed);
    corpus_fingerprints(&data, &mut manifest);
    let mut points = Vec::new();
    for (i, &knob) in knobs.iter().enumerate() {
        let prefix = format!("runs/{i:02}/");
        let dir = a.out.join(&prefix);
        let ck = train_into(&data, &a.hyper, a.objective, knob, &dir, &mut manifest, &prefix)?;
        points.push(evaluate_checkpoint(&ck, &data, &eval)?);
    }
    write_points(points, &a.out, a.plot, &mut manifest)?;
    manifest.write(&a.out)?;
    Ok(())
}

fn load_model(path: &Path, data: &CorpusSplit, force: bool) -> Result<Checkpoint> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    ck.check_fingerprint(&data.vocab.fingerprint(), force)?;
    Ok(ck)
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let data = load_corpus(&a.corpus)?;
    let eval = a.eval.config();
    let mut manifest = Manifest::new("evaluate", a);
    manifest.seed("eval", eval.seed);
    corpus_fingerprints(&data, &mut manifest);
    let mut points = Vec::new();
    for path in &a.models {
        let ck = load_model(path, &data, a.force)?;
        points.push(evaluate_checkpoint(&ck, &data, &eval)?);
    }
    write_points(points, &a.out, a.plot, &mut manifest)?;
    manifest.write(&a.out)?;
    Ok(())
}

pub fn robustness(a: &RobustnessArgs) -> Result<()> {
    let data = load_corpus(&a.corpus)?;
    let eval = a.eval.config();
    let lexicon = StopwordLexicon::bundled();
    let checkpoints: Vec<Checkpoint> = a.models.iter().map(|p| load_model(p, &data, false)).collect::<Result<_>>()?;
    let sources: Vec<Box<dyn KeywordSource>> =
        checkpoints.iter().map(|c| c.keyword_source(&lexicon)).collect::<kwcomplete::Result<_>>()?;
    let names: Vec<String> = checkpoints.iter().map(|c| scheme_label(c).0).collect();
    let encoders: Vec<(String, &dyn KeywordSource)> =
        names.iter().cloned().zip(sources.iter().map(|s| s.as_ref())).collect();
    let decoders: Vec<_> = names.iter().cloned().zip(checkpoints.iter().map(|c| &c.decoder)).collect();
    let matrix = robustness_matrix(&encoders, &decoders, &data.vocab, &data.test, &eval)?;
    let mut manifest = Manifest::new("robustness", a);
    manifest.seed("eval", eval.seed);
    corpus_fingerprints(&data, &mut manifest);
    write(&a.out, "robustness.csv", &matrix.to_csv(), &mut manifest)?;
    write(&a.out, "robustness.json", &serde_json::to_string_pretty(&matrix)?, &mut manifest)?;
    let inversions: Vec<usize> = (0..matrix.decoders.len()).map(|d| matrix.row_inversions(d)).collect();
    manifest.summary = serde_json::json!({ "row_inversions": inversions });
    manifest.write(&a.out)?;
    print!("{}", matrix.to_csv());
    Ok(())
}

pub const CONTENT_TAGS: &[PosTag] = &[PosTag::Noun, PosTag::Adjective, PosTag::Verb];
pub const FUNCTION_TAGS: &[PosTag] = &[PosTag::Determiner, PosTag::Conjunction, PosTag::Pronoun];

pub fn analyze_tokens(a: &AnalyzeTokensArgs) -> Result<()> {
    let data = load_corpus(&a.corpus)?;
    let ck = load_model(&a.model, &data, false)?;
    let encoder = ck.keyword_source(&StopwordLexicon::bundled())?;
    let tagger = LexiconTagger::bundled(data.marker());
    let sentences = if a.train_split { &data.train } else { &data.test };
    let stats = token_retention_stats(encoder.as_ref(), sentences, &tagger, &a.eval.config())?;
    let mut manifest = Manifest::new("analyze-tokens", a);
    manifest.seed("eval", a.eval.eval_seed);
    corpus_fingerprints(&data, &mut manifest);
    write(&a.out, "token_stats.jsonl", &stats.to_jsonl(), &mut manifest)?;
    write(&a.out, "pos_stats.json", &serde_json::to_string_pretty(&stats.pos)?, &mut manifest)?;
    let content = stats.keep_rate_of(CONTENT_TAGS);
    let function = stats.keep_rate_of(FUNCTION_TAGS);
    manifest.summary = serde_json::json!({
        "overall_keep_rate": stats.overall_keep_rate(),
        "content_keep_rate": content,
        "function_keep_rate": function,
    });
    manifest.write(&a.out)?;
    for p in &stats.pos {
        println!("{:<12} freq {:>6}  keep {:.3}", p.tag.to_string(), p.frequency, p.keep_rate);
    }
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let ck = load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let targets = match &a.targets {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => Vec::new(),
    };
    let store = JsonlSessionStore::open(&a.sessions)?;
    let out = a.out.clone().unwrap_or_else(|| a.sessions.parent().map(Path::to_path_buf).unwrap_or_default());
    let mut manifest = Manifest::new("serve", a);
    manifest.fingerprint("model", ck.fingerprint());
    if let Ok(rel) = a.sessions.strip_prefix(&out) {
        manifest.artifact(rel.display().to_string());
    } else {
        manifest.artifact(a.sessions.display().to_string());
    }
    manifest.write(if out.as_os_str().is_empty() { Path::new(".") } else { &out })?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("invalid --host/--port")?;
    let state = Arc::new(AppState::new(Model::new(ck), Arc::new(store), targets));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(server::serve(state, addr))
}

pub fn complete(a: &CompleteArgs) -> Result<()> {
    let ck = load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let model = Model::new(ck);
    let mut request = CompletionRequest::new(&a.keywords);
    request.k = a.k;
    request.beam_width = a.beam_width;
    request.max_len = a.max_len;
    let response = model.complete(&request)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&response)?);
    } else {
        for (i, s) in response.suggestions.iter().enumerate() {
            println!("{}. {}  ({:.3})", i + 1, s.sentence, s.score);
        }
    }
    if let Some(out) = &a.out {
        let mut manifest = Manifest::new("complete", a);
        manifest.fingerprint("model", model.fingerprint());
        write(out, "response.json", &serde_json::to_string_pretty(&response)?, &mut manifest)?;
        manifest.write(out)?;
    }
    Ok(())
}

pub fn analyze_sessions_cmd(a: &AnalyzeSessionsArgs) -> Result<()> {
    let store = JsonlSessionStore::open(&a.sessions)?;
    let records = store.records()?;
    let filters =
        SessionFilters { max_invalid_fraction: a.max_invalid_fraction, outlier_sd: a.outlier_sd, ..SessionFilters::default() };
    let summary = analyze_sessions(&records, &filters);
    let mut manifest = Manifest::new("analyze-sessions", a);
    let text = serde_json::to_string_pretty(&summary)?;
    write(&a.out, "session_summary.json", &text, &mut manifest)?;
    manifest.summary = serde_json::to_value(&summary)?;
    manifest.write(&a.out)?;
    println!("{text}");
    Ok(())
}
