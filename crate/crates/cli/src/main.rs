//! Command-line driver: ingest datasets, re-train the toy encoder, train
//! the prototype head episodically, evaluate with any similarity measure,
//! and consolidate run reports.

mod config;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{echo_config, ConfigFile};
use nishan::checkpoint::{self, CheckpointHeader};
use nishan::corpus::{filter_small_classes, make_class_split, parse_atis_format, parse_tsv, Corpus};
use nishan::encoder::{EmbeddingStore, EncoderBackend, ToyEncoder, Vocab};
use nishan::episodes::{standard_split, test_protocol, EpisodeSpec, TestTask};
use nishan::metrics::MetricsReport;
use nishan::pretrain::{
    default_stopwords, load_stopwords_str, loss_history_csv, retrain, MaskingPolicy, RetrainConfig,
};
use nishan::protonet::{HeadConfig, HeadParams};
use nishan::rng::sub_seed;
use nishan::similarity::SimilarityKind;
use nishan::train::{evaluate_report, history_csv, train, Pipeline, RunInfo, TrainConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nishan", about = "Few-shot intent detection engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset, drop undersized classes, write a normalized corpus.
    Ingest(IngestArgs),
    /// Re-train the toy encoder with the masked-token + contrastive objective.
    Pretrain(PretrainArgs),
    /// Train the prototype head on N-way K-shot episodes.
    Train(TrainArgs),
    /// Score a trained head on the held-out task.
    Eval(EvalArgs),
    /// Consolidate run reports into one table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    Atis,
    Tsv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitMode {
    /// Class-disjoint train/val/test label sets.
    Unseen,
    /// Same classes everywhere; samples split per class.
    Same,
}

#[derive(Args)]
struct SharedArgs {
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key=value configuration file (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    #[arg(long, value_enum)]
    format: InputFormat,
    /// Smallest class size kept.
    #[arg(long)]
    min_count: Option<usize>,
    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct PretrainArgs {
    /// Normalized corpus (TSV) to re-train on.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l_seq: Option<usize>,
    #[arg(long)]
    d_h: Option<usize>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    select_rate: Option<f64>,
    #[arg(long)]
    mask_frac: Option<f64>,
    #[arg(long)]
    random_frac: Option<f64>,
    #[arg(long)]
    keep_frac: Option<f64>,
    /// Stopword file (one token per line); defaults to the bundled list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, value_enum)]
    split_mode: Option<SplitMode>,
    /// Fraction of classes seen during training (unseen mode).
    #[arg(long)]
    seen: Option<f64>,
    /// Fraction of unseen classes assigned to validation (unseen mode).
    #[arg(long)]
    val_frac: Option<f64>,
    /// Per-class train share (same mode).
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args)]
struct EncoderArgs {
    /// Directory with a re-trainable encoder (encoder.ckpt + encoder.json).
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Directory with a precomputed embedding store (index.json + data.f32).
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    q_query: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_episodes: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Gradient-norm ceiling (0 disables clipping).
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Metric temperature.
    #[arg(long)]
    t: Option<f64>,
    /// Contrastive regularizer temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    l_seq: Option<usize>,
    /// Validation support draws averaged for checkpoint selection.
    #[arg(long)]
    val_draws: Option<usize>,
    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Trained head checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    k_shot: Option<usize>,
    /// One similarity token, or `all` for the full sweep.
    #[arg(long)]
    similarity: Option<String>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    l_seq: Option<usize>,
    /// Identifier recorded in the report.
    #[arg(long)]
    model_id: Option<String>,
    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories containing report.json files.
    runs: Vec<PathBuf>,
    #[command(flatten)]
    shared: SharedArgs,
}

/// Errors that should exit with the usage code.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn usage(err: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(UsageError(err))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_config(shared: &SharedArgs) -> Result<ConfigFile> {
    match &shared.config {
        Some(path) => ConfigFile::load(path).map_err(usage),
        None => Ok(ConfigFile::default()),
    }
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read corpus {}", path.display()))?;
    parse_tsv(text.lines()).map_err(Into::into)
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let cfg = load_config(&args.shared)?;
    let min_count = cfg
        .resolve(args.min_count, "min-count")
        .map_err(usage)?
        .unwrap_or(nishan::corpus::DEFAULT_MIN_CLASS_COUNT);
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("cannot read {}", args.input.display()))?;
    let corpus = match args.format {
        InputFormat::Atis => parse_atis_format(text.lines())?,
        InputFormat::Tsv => parse_tsv(text.lines())?,
    };
    let total_before = corpus.len();
    let classes_before = corpus.label_vocab.len();
    let corpus = filter_small_classes(&corpus, min_count)?;

    let out = &args.shared.out;
    std::fs::create_dir_all(out)?;
    let mut normalized = String::new();
    for utt in &corpus.utterances {
        normalized.push_str(&format!("{}\t{}\n", utt.tokens.join(" "), utt.label));
    }
    std::fs::write(out.join("corpus.tsv"), normalized)?;
    let summary = serde_json::json!({
        "classes": corpus.per_class_counts,
        "class_count": corpus.label_vocab.len(),
        "utterances": corpus.len(),
        "dropped_classes": classes_before - corpus.label_vocab.len(),
        "dropped_utterances": total_before - corpus.len(),
        "min_count": min_count,
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    echo_config(
        out,
        &[
            ("format", format_token(args.format).to_owned()),
            ("min-count", min_count.to_string()),
        ],
    )?;

    println!("classes: {}", corpus.label_vocab.len());
    for (label, count) in &corpus.per_class_counts {
        println!("  {label}: {count}");
    }
    println!("utterances: {}", corpus.len());
    Ok(())
}

fn format_token(f: InputFormat) -> &'static str {
    match f {
        InputFormat::Atis => "atis",
        InputFormat::Tsv => "tsv",
    }
}

fn cmd_pretrain(args: PretrainArgs) -> Result<()> {
    let cfg = load_config(&args.shared)?;
    let seed = cfg.resolve(args.shared.seed, "seed").map_err(usage)?.unwrap_or(0);
    let epochs = cfg.resolve(args.epochs, "epochs").map_err(usage)?.unwrap_or(10);
    let batch_size = cfg.resolve(args.batch_size, "batch-size").map_err(usage)?.unwrap_or(64);
    let lr = cfg.resolve(args.lr, "lr").map_err(usage)?.unwrap_or(1e-5);
    let l_seq = cfg.resolve(args.l_seq, "l-seq").map_err(usage)?.unwrap_or(32);
    let d_h = cfg.resolve(args.d_h, "d-h").map_err(usage)?.unwrap_or(64);
    let tau = cfg.resolve(args.tau, "tau").map_err(usage)?.unwrap_or(0.05);
    let policy = MaskingPolicy {
        select_rate: cfg.resolve(args.select_rate, "select-rate").map_err(usage)?.unwrap_or(0.25),
        mask_frac: cfg.resolve(args.mask_frac, "mask-frac").map_err(usage)?.unwrap_or(0.8),
        random_frac: cfg.resolve(args.random_frac, "random-frac").map_err(usage)?.unwrap_or(0.1),
        keep_frac: cfg.resolve(args.keep_frac, "keep-frac").map_err(usage)?.unwrap_or(0.1),
        seed,
    };
    policy.validate()?;

    let corpus = read_corpus(&args.corpus)?;
    let stopwords = match &args.stopwords {
        Some(path) => load_stopwords_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("cannot read stopwords {}", path.display()))?,
        ),
        None => default_stopwords(),
    };

    let vocab = Vocab::from_corpus(&corpus);
    let mut encoder = ToyEncoder::new(vocab, l_seq, d_h, sub_seed(seed, "encoder-init"));
    let retrain_cfg = RetrainConfig {
        epochs,
        batch_size,
        learning_rate: lr,
        scl_temperature: tau,
        seed,
    };
    let history = retrain(&mut encoder, &corpus, &policy, &retrain_cfg, &stopwords)?;

    let out = &args.shared.out;
    encoder.save_dir(out)?;
    std::fs::write(out.join("losses.csv"), loss_history_csv(&history))?;
    echo_config(
        out,
        &[
            ("epochs", epochs.to_string()),
            ("batch-size", batch_size.to_string()),
            ("lr", lr.to_string()),
            ("l-seq", l_seq.to_string()),
            ("d-h", d_h.to_string()),
            ("tau", tau.to_string()),
            ("select-rate", policy.select_rate.to_string()),
            ("mask-frac", policy.mask_frac.to_string()),
            ("random-frac", policy.random_frac.to_string()),
            ("keep-frac", policy.keep_frac.to_string()),
            ("seed", seed.to_string()),
        ],
    )?;
    println!(
        "masking policy: select {} / mask {} / random {} / keep {}",
        policy.select_rate, policy.mask_frac, policy.random_frac, policy.keep_frac
    );
    match (history.first(), history.last()) {
        (Some(first), Some(last)) => {
            println!("steps: {}", history.len());
            println!("total loss: {:.6} -> {:.6}", first.total, last.total);
        }
        _ => println!("no optimization steps (checkpoint equals initialization)"),
    }
    Ok(())
}

struct ResolvedSplit {
    train_corpus: Corpus,
    train_classes: Vec<String>,
    val_corpus: Corpus,
    val_classes: Vec<String>,
    test_corpus: Corpus,
    test_classes: Vec<String>,
    seen_fraction: f64,
    descriptor: serde_json::Value,
}

fn resolve_split(
    corpus: &Corpus,
    mode: SplitMode,
    seen: f64,
    val_frac: f64,
    train_fraction: f64,
    seed: u64,
) -> Result<ResolvedSplit> {
    match mode {
        SplitMode::Unseen => {
            let split = make_class_split(corpus, seen, val_frac, sub_seed(seed, "split"))?;
            let descriptor = serde_json::to_value(&split)?;
            Ok(ResolvedSplit {
                train_corpus: corpus.clone(),
                train_classes: split.c_train,
                val_corpus: corpus.clone(),
                val_classes: split.c_val,
                test_corpus: corpus.clone(),
                test_classes: split.c_test,
                seen_fraction: seen,
                descriptor,
            })
        }
        SplitMode::Same => {
            let (train_half, rest) =
                standard_split(corpus, train_fraction, sub_seed(seed, "split"))?;
            let (val_half, test_half) = standard_split(&rest, 0.5, sub_seed(seed, "split-val"))?;
            let classes = train_half.label_vocab.clone();
            let descriptor = serde_json::json!({
                "mode": "same",
                "train_fraction": train_fraction,
                "classes": classes,
                "seed": seed,
            });
            Ok(ResolvedSplit {
                train_corpus: train_half,
                train_classes: classes.clone(),
                val_corpus: val_half,
                val_classes: classes.clone(),
                test_corpus: test_half,
                test_classes: classes,
                seen_fraction: 1.0,
                descriptor,
            })
        }
    }
}

fn load_backend(args: &EncoderArgs) -> Result<(EncoderBackend, usize)> {
    match (&args.encoder, &args.store) {
        (Some(dir), None) => {
            let enc = ToyEncoder::load_dir(dir)?;
            let d_h = enc.d_h;
            Ok((EncoderBackend::Toy(enc), d_h))
        }
        (None, Some(dir)) => {
            let store = EmbeddingStore::load_dir(dir)?;
            let d_h = store
                .first_d_h()
                .ok_or_else(|| anyhow!("embedding store {} is empty", dir.display()))?;
            Ok((EncoderBackend::PrecomputedStore(store), d_h))
        }
        _ => Err(usage(anyhow!("exactly one of --encoder or --store is required"))),
    }
}

fn build_val_tasks(
    split: &ResolvedSplit,
    k_shot: usize,
    val_draws: usize,
    seed: u64,
) -> Result<Vec<TestTask>> {
    let mut tasks = Vec::with_capacity(val_draws);
    for i in 0..val_draws {
        tasks.push(test_protocol(
            &split.val_corpus,
            &split.val_classes,
            k_shot,
            sub_seed(seed, "val-task").wrapping_add(i as u64),
        )?);
    }
    Ok(tasks)
}

fn parse_mode(cfg: &ConfigFile, flag: Option<SplitMode>) -> Result<SplitMode> {
    let as_string = flag.map(|m| match m {
        SplitMode::Unseen => "unseen".to_owned(),
        SplitMode::Same => "same".to_owned(),
    });
    cfg.resolve(as_string, "split-mode")
        .map_err(usage)?
        .map(|s| match s.as_str() {
            "unseen" => Ok(SplitMode::Unseen),
            "same" => Ok(SplitMode::Same),
            other => Err(usage(anyhow!("unknown split-mode {other:?}"))),
        })
        .transpose()
        .map(|m| m.unwrap_or(SplitMode::Unseen))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.shared)?;
    let seed = cfg.resolve(args.shared.seed, "seed").map_err(usage)?.unwrap_or(0);
    let n_way = cfg.resolve(args.n_way, "n-way").map_err(usage)?.unwrap_or(4);
    let k_shot = cfg.resolve(args.k_shot, "k-shot").map_err(usage)?.unwrap_or(5);
    let q_query = cfg.resolve(args.q_query, "q-query").map_err(usage)?.unwrap_or(5);
    let lr = cfg.resolve(args.lr, "lr").map_err(usage)?.unwrap_or(1e-5);
    let max_episodes = cfg
        .resolve(args.max_episodes, "max-episodes")
        .map_err(usage)?
        .unwrap_or(10_000);
    let eval_every = cfg.resolve(args.eval_every, "eval-every").map_err(usage)?.unwrap_or(100);
    let patience = cfg.resolve(args.patience, "patience").map_err(usage)?.unwrap_or(10);
    let clip = cfg.resolve(args.clip, "clip").map_err(usage)?.unwrap_or(10.0);
    let dropout = cfg.resolve(args.dropout, "dropout").map_err(usage)?.unwrap_or(0.1);
    let heads = cfg.resolve(args.heads, "heads").map_err(usage)?.unwrap_or(4);
    let hidden = cfg.resolve(args.hidden, "hidden").map_err(usage)?.unwrap_or(300);
    let t = cfg.resolve(args.t, "t").map_err(usage)?.unwrap_or(0.1);
    let tau = cfg.resolve(args.tau, "tau").map_err(usage)?.unwrap_or(0.05);
    let l_seq_flag = cfg.resolve(args.l_seq, "l-seq").map_err(usage)?;
    let val_draws = cfg.resolve(args.val_draws, "val-draws").map_err(usage)?.unwrap_or(3);
    let mode = parse_mode(&cfg, args.split.split_mode)?;
    let seen = cfg.resolve(args.split.seen, "seen").map_err(usage)?.unwrap_or(0.5);
    let val_frac = cfg.resolve(args.split.val_frac, "val-frac").map_err(usage)?.unwrap_or(0.5);
    let train_fraction = cfg
        .resolve(args.split.train_fraction, "train-fraction")
        .map_err(usage)?
        .unwrap_or(0.8);

    let corpus = read_corpus(&args.corpus)?;
    let (backend, d_h) = load_backend(&args.encoder)?;
    let l_seq = l_seq_flag.unwrap_or(match &backend {
        EncoderBackend::Toy(e) => e.l_seq,
        EncoderBackend::PrecomputedStore(_) => 32,
    });
    let head = HeadConfig {
        d_h,
        heads,
        dropout_rate: dropout,
        metric_temperature: t,
        ucl_temperature: tau,
        hidden_size: hidden,
    };
    let pipeline = Pipeline { encoder: backend, l_seq, head };
    let split = resolve_split(&corpus, mode, seen, val_frac, train_fraction, seed)?;
    let val_tasks = build_val_tasks(&split, k_shot, val_draws, seed)?;

    let spec = EpisodeSpec { n_way, k_shot, q_query, seed };
    let train_cfg = TrainConfig {
        learning_rate: lr,
        max_episodes,
        eval_every,
        patience,
        max_grad_norm: if clip > 0.0 { Some(clip) } else { None },
        seed,
    };
    let outcome = train(
        &pipeline,
        &split.train_corpus,
        &split.train_classes,
        &val_tasks,
        &spec,
        &train_cfg,
    )?;

    let out = &args.shared.out;
    std::fs::create_dir_all(out)?;
    let header = CheckpointHeader {
        d_h: d_h as u32,
        heads: heads as u32,
        hidden_size: hidden as u32,
    };
    checkpoint::save(&out.join("head.ckpt"), header, &outcome.params.named())?;
    std::fs::write(out.join("history.csv"), history_csv(&outcome.history))?;
    std::fs::write(
        out.join("split.json"),
        serde_json::to_string_pretty(&split.descriptor)?,
    )?;
    echo_config(
        out,
        &[
            ("n-way", n_way.to_string()),
            ("k-shot", k_shot.to_string()),
            ("q-query", q_query.to_string()),
            ("lr", lr.to_string()),
            ("max-episodes", max_episodes.to_string()),
            ("eval-every", eval_every.to_string()),
            ("patience", patience.to_string()),
            ("clip", clip.to_string()),
            ("dropout", dropout.to_string()),
            ("heads", heads.to_string()),
            ("hidden", hidden.to_string()),
            ("t", t.to_string()),
            ("tau", tau.to_string()),
            ("l-seq", l_seq.to_string()),
            ("val-draws", val_draws.to_string()),
            (
                "split-mode",
                if mode == SplitMode::Unseen { "unseen" } else { "same" }.to_string(),
            ),
            ("seen", seen.to_string()),
            ("val-frac", val_frac.to_string()),
            ("train-fraction", train_fraction.to_string()),
            ("seed", seed.to_string()),
        ],
    )?;
    println!("episodes run: {}", outcome.episodes_run);
    if let Some(f1) = outcome.best_val_f1 {
        println!("best validation weighted F1: {f1:.6}");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.shared)?;
    let seed = cfg.resolve(args.shared.seed, "seed").map_err(usage)?.unwrap_or(0);
    let k_shot = cfg.resolve(args.k_shot, "k-shot").map_err(usage)?.unwrap_or(5);
    let t = cfg.resolve(args.t, "t").map_err(usage)?.unwrap_or(0.1);
    let tau = cfg.resolve(args.tau, "tau").map_err(usage)?.unwrap_or(0.05);
    let l_seq_flag = cfg.resolve(args.l_seq, "l-seq").map_err(usage)?;
    let similarity = cfg
        .resolve(args.similarity.clone(), "similarity")
        .map_err(usage)?
        .unwrap_or_else(|| "cosine".to_owned());
    let model_id = cfg
        .resolve(args.model_id.clone(), "model-id")
        .map_err(usage)?
        .unwrap_or_else(|| match (&args.encoder.encoder, &args.encoder.store) {
            (Some(_), _) => "toy".to_owned(),
            _ => "store".to_owned(),
        });
    let mode = parse_mode(&cfg, args.split.split_mode)?;
    let seen = cfg.resolve(args.split.seen, "seen").map_err(usage)?.unwrap_or(0.5);
    let val_frac = cfg.resolve(args.split.val_frac, "val-frac").map_err(usage)?.unwrap_or(0.5);
    let train_fraction = cfg
        .resolve(args.split.train_fraction, "train-fraction")
        .map_err(usage)?
        .unwrap_or(0.8);

    let corpus = read_corpus(&args.corpus)?;
    let (backend, d_h) = load_backend(&args.encoder)?;
    let l_seq = l_seq_flag.unwrap_or(match &backend {
        EncoderBackend::Toy(e) => e.l_seq,
        EncoderBackend::PrecomputedStore(_) => 32,
    });

    let (header, tensors) = checkpoint::load(&args.checkpoint)?;
    if header.d_h as usize != d_h {
        bail!(
            "checkpoint width {} does not match encoder width {}",
            header.d_h,
            d_h
        );
    }
    let head = HeadConfig {
        d_h,
        heads: header.heads as usize,
        dropout_rate: 0.0,
        metric_temperature: t,
        ucl_temperature: tau,
        hidden_size: header.hidden_size as usize,
    };
    let mut params = HeadParams::init(&head, 0);
    checkpoint::fill_from_tensors(params.named_mut(), &tensors)?;

    let pipeline = Pipeline { encoder: backend, l_seq, head };
    let split = resolve_split(&corpus, mode, seen, val_frac, train_fraction, seed)?;
    let task = test_protocol(
        &split.test_corpus,
        &split.test_classes,
        k_shot,
        sub_seed(seed, "test-task"),
    )?;
    let info = RunInfo {
        model: model_id,
        n_way: task.class_map.len(),
        k_shot,
        seen_fraction: split.seen_fraction,
        seed,
    };

    let out = &args.shared.out;
    std::fs::create_dir_all(out)?;
    echo_config(
        out,
        &[
            ("k-shot", k_shot.to_string()),
            ("similarity", similarity.clone()),
            ("t", t.to_string()),
            ("tau", tau.to_string()),
            ("seen", seen.to_string()),
            ("val-frac", val_frac.to_string()),
            ("train-fraction", train_fraction.to_string()),
            (
                "split-mode",
                if mode == SplitMode::Unseen { "unseen" } else { "same" }.to_string(),
            ),
            ("seed", seed.to_string()),
            ("model-id", info.model.clone()),
        ],
    )?;

    if similarity == "all" {
        let mut csv = String::from(
            "similarity,accuracy,weighted_precision,weighted_recall,weighted_f1,bias_category,bias_error_type\n",
        );
        for kind in SimilarityKind::ALL {
            let report = evaluate_report(&pipeline, &params, &task, kind, &info)?;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                kind,
                report.accuracy,
                report.weighted_precision,
                report.weighted_recall,
                report.weighted_f1,
                report.bias_category,
                report.bias_error_type,
            ));
            println!(
                "{kind}: accuracy {:.4} wf1 {:.4}",
                report.accuracy, report.weighted_f1
            );
        }
        std::fs::write(out.join("sweep.csv"), csv)?;
    } else {
        let kind: SimilarityKind =
            similarity.parse().map_err(|e: nishan::Error| usage(e.into()))?;
        let report = evaluate_report(&pipeline, &params, &task, kind, &info)?;
        std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        println!(
            "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} bias {} ({})",
            report.accuracy,
            report.weighted_precision,
            report.weighted_recall,
            report.weighted_f1,
            report.bias_category,
            report.bias_error_type,
        );
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    if args.runs.is_empty() {
        return Err(usage(anyhow!("at least one run directory is required")));
    }
    let mut reports: Vec<MetricsReport> = Vec::new();
    for dir in &args.runs {
        let path = dir.join("report.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        reports.push(serde_json::from_str(&text)?);
    }
    reports.sort_by(|a, b| {
        (
            &a.model,
            (a.seen_fraction * 1e6) as u64,
            a.k_shot,
            a.similarity.token(),
        )
            .cmp(&(&b.model, (b.seen_fraction * 1e6) as u64, b.k_shot, b.similarity.token()))
    });

    let header = "model,seen_fraction,k_shot,similarity,accuracy,weighted_precision,weighted_recall,weighted_f1,bias_category,bias_error_type";
    let mut csv = String::from(header);
    csv.push('\n');
    let mut md = String::from(
        "| model | seen | shot | similarity | accuracy | precision | recall | f1 | bias | error |\n|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.model,
            r.seen_fraction,
            r.k_shot,
            r.similarity,
            r.accuracy,
            r.weighted_precision,
            r.weighted_recall,
            r.weighted_f1,
            r.bias_category,
            r.bias_error_type,
        ));
        md.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} |\n",
            r.model,
            r.seen_fraction,
            r.k_shot,
            r.similarity,
            r.accuracy,
            r.weighted_precision,
            r.weighted_recall,
            r.weighted_f1,
            r.bias_category,
            r.bias_error_type,
        ));
    }
    let out = &args.shared.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("consolidated.csv"), &csv)?;
    std::fs::write(out.join("consolidated.md"), &md)?;
    print!("{csv}");
    Ok(())
}
