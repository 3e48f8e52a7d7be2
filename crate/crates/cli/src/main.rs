//! `sensegram`: one binary, subcommand per pipeline stage. All settings
//! come from flags, then `SENSEGRAM_*` environment variables, then
//! defaults; `--dump-config` prints the merged result as env lines that
//! reproduce the run. Exit codes: 0 success, 1 usage or configuration
//! error, 2 data or IO error. Diagnostics go to stderr, data to files or
//! stdout.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clap::builder::FalseyValueParser;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sensegram_core::corpus::build_vocab_from_path;
use sensegram_core::eval::{score_purity, write_corpus_file, GroundTruth, SynthSpec};
use sensegram_core::lexicon::{build_sense_inventory, load_sense_counts};
use sensegram_core::model::{
    load_checkpoint, load_vectors, save_checkpoint, save_vectors, Checkpoint, ModelHeader,
    VectorSet,
};
use sensegram_core::query::{
    nearest_neighbors, project_2d, write_projection_svg, write_projection_tsv, DistanceMetric,
};
use sensegram_core::sense::{context_sum, posterior_approx};
use sensegram_core::trainer::{train_with_progress, ProgressReport};
use sensegram_core::{Error, SplitMix64, TrainConfig, VectorFormat};

#[derive(Parser)]
#[command(
    name = "sensegram",
    version,
    about = "Train and inspect multi-sense word embeddings",
    disable_help_subcommand = true
)]
struct Cli {
    /// Print the merged configuration as SENSEGRAM_* lines and exit.
    #[arg(long, global = true, value_parser = FalseyValueParser::new())]
    dump_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count tokens in a corpus and write the vocabulary file.
    BuildVocab(BuildVocabArgs),
    /// Train sense vectors and save a model checkpoint.
    Train(TrainArgs),
    /// Print the nearest sense vectors of a label.
    Nearest(NearestArgs),
    /// Project labeled vectors to 2D coordinates (classical MDS).
    Project(ProjectArgs),
    /// Debug: print per-occurrence sense posteriors for one text line.
    SensesAssign(SensesAssignArgs),
    /// Generate a synthetic corpus and its ground-truth file.
    Synth(SynthArgs),
    /// Score sense assignments against ground truth into a JSON report.
    Eval(EvalArgs),
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Input corpus (whitespace-tokenized text, one sentence per line).
    #[arg(long, env = "SENSEGRAM_CORPUS")]
    corpus: PathBuf,
    /// Output vocabulary file.
    #[arg(long, env = "SENSEGRAM_OUT")]
    out: PathBuf,
    /// Drop tokens seen fewer than this many times.
    #[arg(long, env = "SENSEGRAM_MIN_COUNT", default_value_t = 5)]
    min_count: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (whitespace-tokenized text, one sentence per line).
    #[arg(long, env = "SENSEGRAM_CORPUS")]
    corpus: PathBuf,
    /// Optional sense lexicon (token<TAB>K); absent means one sense each.
    #[arg(long, env = "SENSEGRAM_LEXICON")]
    lexicon: Option<PathBuf>,
    /// Output checkpoint directory.
    #[arg(long, env = "SENSEGRAM_OUT")]
    out: PathBuf,
    /// Maximum context offset on each side of the target.
    #[arg(long, env = "SENSEGRAM_WINDOW", default_value_t = 10)]
    window: u32,
    /// Embedding dimensionality.
    #[arg(long, env = "SENSEGRAM_DIM", default_value_t = 200)]
    dim: usize,
    /// Starting learning rate (decays linearly).
    #[arg(long, env = "SENSEGRAM_ALPHA", default_value_t = 0.025)]
    alpha: f64,
    /// Negative samples per (target, context) pair.
    #[arg(long, env = "SENSEGRAM_NEGATIVES", default_value_t = 5)]
    negatives: u32,
    /// Passes over the corpus.
    #[arg(long, env = "SENSEGRAM_EPOCHS", default_value_t = 1)]
    epochs: u32,
    /// Drop tokens seen fewer than this many times.
    #[arg(long, env = "SENSEGRAM_MIN_COUNT", default_value_t = 5)]
    min_count: u64,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, env = "SENSEGRAM_WORKERS")]
    workers: Option<u32>,
    /// RNG seed; with --workers 1 the run is byte-reproducible.
    #[arg(long, env = "SENSEGRAM_SEED", default_value_t = 42)]
    seed: u64,
    /// Always use the full window instead of sampling a radius per target.
    #[arg(long, env = "SENSEGRAM_FIXED_WINDOW", value_parser = FalseyValueParser::new())]
    fixed_window: bool,
    /// Frequent-word subsampling threshold; 0 disables.
    #[arg(long, env = "SENSEGRAM_SUBSAMPLE", default_value_t = 0.0)]
    subsample: f64,
    /// Cap on senses per word, applied to lexicon entries.
    #[arg(long, env = "SENSEGRAM_MAX_K", default_value_t = 8)]
    max_k: u32,
    /// Ignore the lexicon and train one sense per word (plain skip-gram).
    #[arg(long, env = "SENSEGRAM_BASELINE", value_parser = FalseyValueParser::new())]
    baseline: bool,
    /// Also export sense vectors to this file.
    #[arg(long, env = "SENSEGRAM_VECTORS")]
    vectors: Option<PathBuf>,
    /// Format for --vectors output.
    #[arg(long, env = "SENSEGRAM_VECTOR_FORMAT", default_value = "text",
          value_parser = ["text", "binary"])]
    vector_format: String,
}

#[derive(Args)]
struct NearestArgs {
    /// Checkpoint directory or vector file.
    #[arg(long, env = "SENSEGRAM_MODEL")]
    model: PathBuf,
    /// Sense label (word or word#k) to query.
    #[arg(long, env = "SENSEGRAM_QUERY")]
    query: String,
    /// Number of neighbors to print.
    #[arg(long, env = "SENSEGRAM_K", default_value_t = 10)]
    k: usize,
    /// Rank the query word's own other senses too.
    #[arg(long, env = "SENSEGRAM_INCLUDE_OWN_SENSES", value_parser = FalseyValueParser::new())]
    include_own_senses: bool,
}

#[derive(Args)]
struct ProjectArgs {
    /// Checkpoint directory or vector file.
    #[arg(long, env = "SENSEGRAM_MODEL")]
    model: PathBuf,
    /// Comma-separated labels to project.
    #[arg(long, env = "SENSEGRAM_LABELS")]
    labels: String,
    /// Output TSV (label<TAB>x<TAB>y).
    #[arg(long, env = "SENSEGRAM_OUT")]
    out: PathBuf,
    /// Optional SVG scatter plot.
    #[arg(long, env = "SENSEGRAM_SVG")]
    svg: Option<PathBuf>,
    /// Distance placed into the MDS matrix.
    #[arg(long, env = "SENSEGRAM_METRIC", default_value = "euclidean",
          value_parser = ["euclidean", "cosine"])]
    metric: String,
}

#[derive(Args)]
struct SensesAssignArgs {
    /// Checkpoint directory (vocabulary and inventory are required).
    #[arg(long, env = "SENSEGRAM_MODEL")]
    model: PathBuf,
    /// Text line to analyze; read from stdin when absent.
    #[arg(long, env = "SENSEGRAM_TEXT")]
    text: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus plan (JSON).
    #[arg(long, env = "SENSEGRAM_SPEC")]
    spec: PathBuf,
    /// Output corpus file.
    #[arg(long, env = "SENSEGRAM_OUT")]
    out: PathBuf,
    /// Output ground-truth TSV (position<TAB>topic).
    #[arg(long, env = "SENSEGRAM_TRUTH")]
    truth: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long, env = "SENSEGRAM_MODEL")]
    model: PathBuf,
    /// Corpus the ground truth indexes into.
    #[arg(long, env = "SENSEGRAM_CORPUS")]
    corpus: PathBuf,
    /// Ground-truth TSV from `synth`.
    #[arg(long, env = "SENSEGRAM_TRUTH")]
    truth: PathBuf,
    /// Output report (JSON, includes the purity field).
    #[arg(long, env = "SENSEGRAM_REPORT")]
    report: PathBuf,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.dump_config {
        for (key, value) in dump_config(&cli.command) {
            println!("{key}={value}");
        }
        return 0;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(command: Command) -> sensegram_core::Result<()> {
    match command {
        Command::BuildVocab(args) => cmd_build_vocab(args),
        Command::Train(args) => cmd_train(args),
        Command::Nearest(args) => cmd_nearest(args),
        Command::Project(args) => cmd_project(args),
        Command::SensesAssign(args) => cmd_senses_assign(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

// ---------------------------------------------------------------------
// --dump-config
// ---------------------------------------------------------------------

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Merged settings as (env var, value) pairs. Re-exporting these and
/// running the same subcommand without flags reproduces the run; options
/// that are unset are omitted so they stay unset.
fn dump_config(command: &Command) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| out.push((format!("SENSEGRAM_{k}"), v));
    match command {
        Command::BuildVocab(a) => {
            put("CORPUS", path_str(&a.corpus));
            put("OUT", path_str(&a.out));
            put("MIN_COUNT", a.min_count.to_string());
        }
        Command::Train(a) => {
            put("CORPUS", path_str(&a.corpus));
            if let Some(lex) = &a.lexicon {
                put("LEXICON", path_str(lex));
            }
            put("OUT", path_str(&a.out));
            put("WINDOW", a.window.to_string());
            put("DIM", a.dim.to_string());
            put("ALPHA", a.alpha.to_string());
            put("NEGATIVES", a.negatives.to_string());
            put("EPOCHS", a.epochs.to_string());
            put("MIN_COUNT", a.min_count.to_string());
            put("WORKERS", resolve_workers(a.workers).to_string());
            put("SEED", a.seed.to_string());
            put("FIXED_WINDOW", a.fixed_window.to_string());
            put("SUBSAMPLE", a.subsample.to_string());
            put("MAX_K", a.max_k.to_string());
            put("BASELINE", a.baseline.to_string());
            if let Some(v) = &a.vectors {
                put("VECTORS", path_str(v));
            }
            put("VECTOR_FORMAT", a.vector_format.clone());
        }
        Command::Nearest(a) => {
            put("MODEL", path_str(&a.model));
            put("QUERY", a.query.clone());
            put("K", a.k.to_string());
            put("INCLUDE_OWN_SENSES", a.include_own_senses.to_string());
        }
        Command::Project(a) => {
            put("MODEL", path_str(&a.model));
            put("LABELS", a.labels.clone());
            put("OUT", path_str(&a.out));
            if let Some(svg) = &a.svg {
                put("SVG", path_str(svg));
            }
            put("METRIC", a.metric.clone());
        }
        Command::SensesAssign(a) => {
            put("MODEL", path_str(&a.model));
            if let Some(text) = &a.text {
                put("TEXT", text.clone());
            }
        }
        Command::Synth(a) => {
            put("SPEC", path_str(&a.spec));
            put("OUT", path_str(&a.out));
            put("TRUTH", path_str(&a.truth));
        }
        Command::Eval(a) => {
            put("MODEL", path_str(&a.model));
            put("CORPUS", path_str(&a.corpus));
            put("TRUTH", path_str(&a.truth));
            put("REPORT", path_str(&a.report));
        }
    }
    out
}

// ---------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------

fn cmd_build_vocab(args: BuildVocabArgs) -> sensegram_core::Result<()> {
    let vocab = build_vocab_from_path(&args.corpus, args.min_count)?;
    vocab.write_to(&args.out)?;
    eprintln!(
        "vocabulary: {} types, {} tokens retained (min count {})",
        vocab.len(),
        vocab.total_tokens(),
        args.min_count
    );
    Ok(())
}

fn resolve_workers(flag: Option<u32>) -> u32 {
    flag.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get() as u32)
            .unwrap_or(1)
    })
}

fn cmd_train(args: TrainArgs) -> sensegram_core::Result<()> {
    let config = TrainConfig {
        window: args.window,
        dim: args.dim,
        alpha: args.alpha,
        negatives: args.negatives,
        epochs: args.epochs,
        min_count: args.min_count,
        subsample: args.subsample,
        workers: resolve_workers(args.workers),
        seed: args.seed,
        max_k: args.max_k,
        dynamic_window: !args.fixed_window,
        baseline: args.baseline,
        ..TrainConfig::default()
    };

    let vocab = build_vocab_from_path(&args.corpus, config.min_count)?;
    let counts: HashMap<String, u32> = match (&args.lexicon, config.baseline) {
        (Some(path), false) => {
            let parsed = load_sense_counts(path)?;
            if parsed.duplicate_lines > 0 {
                eprintln!(
                    "warning: {} duplicate lexicon line(s); last entry wins",
                    parsed.duplicate_lines
                );
            }
            parsed.counts
        }
        _ => HashMap::new(),
    };
    let inventory = build_sense_inventory(&vocab, &counts, config.max_k);
    eprintln!(
        "vocabulary: {} types, {} tokens; senses: {} rows ({} polysemic words)",
        vocab.len(),
        vocab.total_tokens(),
        inventory.total_senses(),
        (0..vocab.len() as u32).filter(|&w| inventory.k(w) > 1).count()
    );

    let last_print = Mutex::new(Instant::now() - Duration::from_secs(60));
    let progress = move |report: ProgressReport| {
        let mut last = last_print.lock().unwrap_or_else(|e| e.into_inner());
        if last.elapsed() < Duration::from_secs(1) {
            return;
        }
        *last = Instant::now();
        let pct = 100.0 * report.tokens_seen as f64 / report.total_tokens.max(1) as f64;
        eprintln!(
            "progress {pct:5.1}% | {:.0}k words/s | alpha {:.5} | loss {:.4}",
            report.tokens_per_sec / 1000.0,
            report.alpha,
            report.mean_loss
        );
    };
    let (matrices, stats) =
        train_with_progress(&args.corpus, &vocab, &inventory, &config, Some(&progress))?;
    eprintln!(
        "trained {} tokens in {:.1}s ({:.0}k words/s), mean loss {:.4}",
        stats.tokens_seen,
        stats.wall_seconds,
        stats.tokens_seen as f64 / stats.wall_seconds.max(1e-9) / 1000.0,
        stats.mean_loss()
    );

    let header = ModelHeader::new(&config, &vocab, &inventory);
    save_checkpoint(&args.out, &header, &vocab, &inventory, &matrices)?;
    eprintln!("checkpoint saved to {}", args.out.display());
    if let Some(vec_path) = &args.vectors {
        let format: VectorFormat = args.vector_format.parse()?;
        save_vectors(&matrices, &inventory, vec_path, format)?;
        eprintln!("sense vectors saved to {} ({format})", vec_path.display());
    }
    Ok(())
}

/// Loads labeled vectors from a checkpoint directory or a vector file.
fn load_model_vectors(path: &Path) -> sensegram_core::Result<VectorSet> {
    if path.is_dir() {
        Ok(load_checkpoint(path)?.sense_vector_set())
    } else {
        load_vectors(path)
    }
}

fn cmd_nearest(args: NearestArgs) -> sensegram_core::Result<()> {
    let vectors = load_model_vectors(&args.model)?;
    let result = nearest_neighbors(&args.query, args.k, &vectors, args.include_own_senses)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (label, similarity) in &result.neighbors {
        writeln!(out, "{label}\t{similarity:.6}")
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn cmd_project(args: ProjectArgs) -> sensegram_core::Result<()> {
    let vectors = load_model_vectors(&args.model)?;
    let labels: Vec<String> = args
        .labels
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let metric = match args.metric.as_str() {
        "cosine" => DistanceMetric::Cosine,
        _ => DistanceMetric::Euclidean,
    };
    let projection = project_2d(&labels, &vectors, metric)?;
    if projection.positive_eigenvalues < 2 {
        eprintln!(
            "warning: only {} positive eigenvalue(s); remaining coordinates are zero",
            projection.positive_eigenvalues
        );
    }
    write_projection_tsv(&projection, &args.out)?;
    eprintln!("wrote {} points to {}", projection.points.len(), args.out.display());
    if let Some(svg) = &args.svg {
        write_projection_svg(&projection, svg)?;
        eprintln!("wrote scatter plot to {}", svg.display());
    }
    Ok(())
}

fn cmd_senses_assign(args: SensesAssignArgs) -> sensegram_core::Result<()> {
    let Checkpoint { header, vocab, inventory, matrices } = load_checkpoint(&args.model)?;
    let text = match args.text {
        Some(t) => t,
        None => {
            let mut line = String::new();
            std::io::stdin()
                .read_line(&mut line)
                .map_err(|e| Error::io("<stdin>", e))?;
            line
        }
    };

    // positions count every whitespace token; context is the fixed full
    // window over the in-vocabulary subsequence, matching the evaluator
    let tokens: Vec<&str> = text.split_ascii_whitespace().collect();
    let kept: Vec<(usize, u32)> = tokens
        .iter()
        .enumerate()
        .filter_map(|(pos, tok)| vocab.id(tok).map(|id| (pos, id)))
        .collect();
    let window = header.config.window as usize;
    let mut rng = SplitMix64::new(0);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (pos, tok) in tokens.iter().enumerate() {
        let Some(kept_idx) = kept.iter().position(|&(p, _)| p == pos) else {
            writeln!(out, "{pos}\t{tok}\toov\t").map_err(|e| Error::io("<stdout>", e))?;
            continue;
        };
        let word = kept[kept_idx].1;
        let lo = kept_idx.saturating_sub(window);
        let hi = (kept_idx + window + 1).min(kept.len());
        let context: Vec<u32> = kept[lo..hi]
            .iter()
            .enumerate()
            .filter(|(i, _)| lo + i != kept_idx)
            .map(|(_, &(_, id))| id)
            .collect();
        if context.is_empty() {
            writeln!(out, "{pos}\t{tok}\tno-context\t").map_err(|e| Error::io("<stdout>", e))?;
            continue;
        }
        let ctx_sum = context_sum(&context, &matrices)?;
        let posterior = posterior_approx(&ctx_sum, word, &inventory, &matrices, &mut rng);
        let first = inventory.first_sense(word);
        let selected = inventory.label(first + posterior.selected as u32);
        let probs: Vec<String> = posterior
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| format!("{}:{p:.4}", inventory.label(first + k as u32)))
            .collect();
        writeln!(out, "{pos}\t{tok}\t{selected}\t{}", probs.join(" "))
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> sensegram_core::Result<()> {
    let json = std::fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let spec: SynthSpec = serde_json::from_str(&json)?;
    let truth = write_corpus_file(&spec, &args.out)?;
    truth.write_tsv(&args.truth)?;
    eprintln!(
        "wrote corpus to {} and {} truth records to {}",
        args.out.display(),
        truth.records.len(),
        args.truth.display()
    );
    Ok(())
}

/// Shape of report.json. `purity` is the headline number; per-sense rows
/// record each sense's contribution so skew-induced drops are visible.
#[derive(Serialize)]
struct EvalReport {
    purity: f64,
    occurrences: u64,
    window: u32,
    pseudowords: Vec<PseudowordReport>,
}

#[derive(Serialize)]
struct PseudowordReport {
    token: String,
    occurrences: u64,
    agreements: u64,
    purity: f64,
    /// counts[sense][topic]: occurrences of the sense whose truth is topic.
    counts: Vec<Vec<u64>>,
    senses: Vec<SenseReport>,
}

#[derive(Serialize)]
struct SenseReport {
    label: String,
    matched_topic: Option<u32>,
    occurrences: u64,
    agreements: u64,
    /// Agreements over all scored occurrences: this sense's share of purity.
    purity_contribution: f64,
}

fn cmd_eval(args: EvalArgs) -> sensegram_core::Result<()> {
    let Checkpoint { header, vocab, inventory, matrices } = load_checkpoint(&args.model)?;
    let truth = GroundTruth::read_tsv(&args.truth)?;
    let window = header.config.window;
    let score = score_purity(&vocab, &inventory, &matrices, &args.corpus, &truth, window)?;

    let pseudowords = score
        .per_pseudoword
        .iter()
        .map(|pw| {
            let first = vocab
                .id(&pw.token)
                .map(|w| inventory.first_sense(w))
                .unwrap_or(0);
            let senses = pw
                .matching
                .iter()
                .enumerate()
                .map(|(k, matched)| {
                    let row = &pw.counts[k];
                    let occurrences: u64 = row.iter().sum();
                    let agreements = matched.map_or(0, |t| row[t as usize]);
                    SenseReport {
                        label: inventory.label(first + k as u32).to_string(),
                        matched_topic: *matched,
                        occurrences,
                        agreements,
                        purity_contribution: agreements as f64
                            / score.occurrences.max(1) as f64,
                    }
                })
                .collect();
            PseudowordReport {
                token: pw.token.clone(),
                occurrences: pw.occurrences,
                agreements: pw.agreements,
                purity: pw.agreements as f64 / pw.occurrences.max(1) as f64,
                counts: pw.counts.clone(),
                senses,
            }
        })
        .collect();
    let report = EvalReport {
        purity: score.purity,
        occurrences: score.occurrences,
        window,
        pseudowords,
    };
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&args.report, json).map_err(|e| Error::io(&args.report, e))?;
    eprintln!(
        "purity {:.4} over {} occurrences; report written to {}",
        score.purity,
        score.occurrences,
        args.report.display()
    );
    Ok(())
}
