//! Command-line entry point.
//!
//! Settings come from flags and, optionally, a `key = value` file given with
//! `--config`. Keys are long flag names (`min-count` or `min_count`); flags on
//! the command line win over file values. Exit status is 0 on success, 1 on
//! usage errors and 2 on data or format errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocabulary, encode, read_documents, Vocabulary, WindowSpec};
use crate::evalsuite::{
    divergence_report, eval_analogy_cosadd, eval_relation_diffvec, eval_similarity, eval_textclass,
    fisher_rho_test, normalize_ratings, AnalogyDataset, Embeddings, EvalReport, RelationDataset,
    SimilarityDataset, TextDataset,
};
use crate::genwalk::{generate_corpus, WalkConfig};
use crate::miner::{mine_all, read_sets, write_sets, MinerConfig};
use crate::trainer::{read_model, train_curriculum_with, write_model, TrainConfig, TrainMode};
use crate::verifier::{norm_frequency_correlation, partition_values};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

fn at_least_one_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 1.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a number >= 1, got {s:?}")),
    }
}

fn alpha(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a value in (0, 1), got {s:?}")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "kway", about = "k-way co-occurrence embeddings toolkit", args_override_self = true, arg_required_else_help = true)]
struct Cli {
    /// `key = value` settings file; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Build a frequency-filtered vocabulary
    Vocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        min_count: u64,
        #[arg(long)]
        lowercase: bool,
        #[arg(long, default_value = "vocab.tsv")]
        out: PathBuf,
    },
    /// Mine frequent k-way co-occurrence sets
    Mine {
        #[arg(long)]
        corpus: PathBuf,
        /// Existing vocabulary; built from the corpus when absent
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        min_count: u64,
        #[arg(long)]
        lowercase: bool,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        support: u64,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
        window: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        stride: u64,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        kmax: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        threads: u64,
    },
    /// Train embeddings level by level over mined sets
    Train {
        /// Directory holding k<k>.tsv set files
        #[arg(long)]
        sets_dir: PathBuf,
        /// Defaults to <sets-dir>/vocab.tsv
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
        dim: u64,
        #[arg(long, default_value_t = 0.01, value_parser = positive_f64)]
        lr: f64,
        #[arg(long, default_value_t = 100.0, value_parser = at_least_one_f64)]
        theta: f64,
        #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: u64,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(2..))]
        kmax: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "stochastic")]
        mode: TrainMode,
        /// Defaults to the sets directory
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        threads: u64,
    },
    /// Generate a synthetic corpus from the discourse random walk
    Generate {
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        vocab_size: u64,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        dim: u64,
        #[arg(long, default_value_t = 0.5, value_parser = non_negative_f64)]
        eps2: f64,
        #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
        kappa: f64,
        #[arg(long, default_value_t = 2_000_000)]
        tokens: u64,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        doc_len: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "corpus.txt")]
        out: PathBuf,
        #[arg(long, default_value = "truth.txt")]
        truth: PathBuf,
    },
    /// Partition-function concentration over random unit contexts
    VerifyPartition {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(2..))]
        contexts: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Standardized-value histogram CSV
        #[arg(long)]
        hist: Option<PathBuf>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        threads: u64,
    },
    /// Rank correlation of log set counts with squared norms of summed vectors
    VerifyCorrelation {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sets: PathBuf,
        /// Vocabulary the set ids refer to; defaults to vocab.tsv beside the set file
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// `ln_count,sq_norm` scatter CSV
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Word-similarity benchmarks (Spearman against ratings)
    EvalSim {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CosAdd word analogies
    EvalAnalogy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 1-NN relation classification over vector offsets
    EvalRelclass {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Centroid + logistic regression short-text classification
    EvalTextclass {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: u64,
        #[arg(long, default_value_t = 0.1, value_parser = positive_f64)]
        lr: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairs scored very differently by two models
    Compare {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05, value_parser = alpha)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Reads a `key = value` file. Blank lines and `#` comments are skipped.
fn read_config(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`", path.display(), i + 1);
        };
        entries.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(entries)
}

fn config_path(argv: &[String]) -> Option<PathBuf> {
    argv.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            argv.get(i + 1).map(PathBuf::from)
        } else {
            a.strip_prefix("--config=").map(PathBuf::from)
        }
    })
}


/// Splices config-file settings in front of the user's flags for the chosen
/// subcommand.
fn merge_config(argv: &[String]) -> Result<Vec<String>, String> {
    let Some(path) = config_path(argv) else {
        return Ok(argv.to_vec());
    };
    let entries = read_config(&path).map_err(|e| format!("{e:#}"))?;
    let cmd = Cli::command();
    let mut known: BTreeMap<String, BTreeMap<String, bool>> = BTreeMap::new();
    for sub in cmd.get_subcommands() {
        let args = sub
            .get_arguments()
            .filter_map(|a| a.get_long().map(|l| (l.to_string(), a.get_action().takes_values())))
            .collect();
        known.insert(sub.get_name().to_string(), args);
    }
    for (key, _) in &entries {
        if key == "config" || !known.values().any(|args| args.contains_key(key)) {
            return Err(format!("{}: unknown key {key:?}", path.display()));
        }
    }
    let Some(pos) = argv.iter().position(|a| known.contains_key(a)) else {
        return Ok(argv.to_vec());
    };
    let args = &known[&argv[pos]];
    let mut injected = Vec::new();
    for (key, value) in entries {
        match args.get(&key) {
            Some(true) => {
                injected.push(format!("--{key}"));
                injected.push(value);
            }
            Some(false) => match value.as_str() {
                "true" | "1" | "yes" => injected.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                other => return Err(format!("{key}: expected a boolean, got {other:?}")),
            },
            None => {}
        }
    }
    let mut merged = argv[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&argv[pos + 1..]);
    Ok(merged)
}

fn print_resolved(name: &str, matches: &ArgMatches) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "# kway {name}");
    let cmd = Cli::command();
    let args: Vec<&str> = cmd
        .find_subcommand(name)
        .map(|c| c.get_arguments().map(|a| a.get_id().as_str()).collect())
        .unwrap_or_default();
    // derive adds an argument group named after the variant; skip it
    let mut ids: Vec<&str> = matches.ids().map(|id| id.as_str()).filter(|id| args.contains(id)).collect();
    ids.sort_unstable();
    for id in ids {
        if let Ok(Some(raw)) = matches.try_get_raw(id) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            let _ = writeln!(err, "#   {} = {}", id.replace('_', "-"), vals.join(","));
        }
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn dispatch(argv: &[String]) -> i32 {
    let merged = match merge_config(argv) {
        Ok(m) => m,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let matches = match Cli::command().try_get_matches_from(&merged) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    if let Some((name, sub)) = matches.subcommand() {
        print_resolved(name, sub);
    }
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_embeddings(path: &Path) -> anyhow::Result<Embeddings> {
    let loaded = read_model(path).with_context(|| format!("loading model {}", path.display()))?;
    Ok(Embeddings::from_loaded(loaded))
}

fn load_corpus(path: &Path, lowercase: bool) -> anyhow::Result<Vec<Vec<String>>> {
    read_documents(path, lowercase).with_context(|| format!("reading corpus {}", path.display()))
}

fn set_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("k{k}.tsv"))
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Vocab { corpus, min_count, lowercase, out } => {
            let docs = load_corpus(&corpus, lowercase)?;
            let vocab = build_vocabulary(&docs, min_count)?;
            vocab.write(&out)?;
            eprintln!("{} words with count >= {min_count}", vocab.len());
        }
        Cmd::Mine { corpus, vocab, min_count, lowercase, support, window, stride, kmax, out_dir, threads } => {
            let docs = load_corpus(&corpus, lowercase)?;
            let vocab = match vocab {
                Some(path) => Vocabulary::read(&path).with_context(|| format!("reading {}", path.display()))?,
                None => build_vocabulary(&docs, min_count)?,
            };
            let encoded = encode(&docs, &vocab);
            let cfg = MinerConfig {
                support,
                k_max: kmax as usize,
                window: WindowSpec::new(window as usize, stride as usize)?,
                threads: threads as usize,
            };
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            vocab.write(&out_dir.join("vocab.tsv"))?;
            for table in mine_all(&encoded, &cfg)? {
                let path = set_file(&out_dir, table.order);
                write_sets(&table, &path)?;
                eprintln!("k={}: {} sets -> {}", table.order, table.len(), path.display());
            }
        }
        Cmd::Train { sets_dir, vocab, dim, lr, theta, epochs, kmax, seed, mode, out_dir, threads: _ } => {
            let vocab_path = vocab.unwrap_or_else(|| sets_dir.join("vocab.tsv"));
            let vocab = Vocabulary::read(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?;
            let mut tables = Vec::new();
            for k in 2..=kmax as usize {
                let path = set_file(&sets_dir, k);
                tables.push(read_sets(&path).with_context(|| format!("reading {}", path.display()))?);
            }
            let cfg = TrainConfig {
                dim: dim as usize,
                initial_lr: lr,
                theta,
                epochs: epochs as usize,
                k_max: kmax as usize,
                seed,
                mode,
            };
            let models = train_curriculum_with(vocab.len(), &tables, &cfg, |k, _, hist| {
                eprintln!("level k<={k}: objective {} -> {}", hist[0], hist[hist.len() - 1]);
            })?;
            let out_dir = out_dir.unwrap_or(sets_dir);
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for (model, k) in models.iter().zip(2..) {
                let path = out_dir.join(format!("emb_k{k}.txt"));
                write_model(model, vocab.words(), &path)?;
                eprintln!("wrote {}", path.display());
            }
        }
        Cmd::Generate { vocab_size, dim, eps2, kappa, tokens, doc_len, seed, out, truth } => {
            let cfg = WalkConfig {
                vocab_size: vocab_size as usize,
                dim: dim as usize,
                eps2,
                kappa,
                tokens: tokens as usize,
                doc_len: doc_len as usize,
                seed,
            };
            let corpus = generate_corpus(&cfg)?;
            corpus.write(&out, &truth)?;
            eprintln!("{} documents -> {}, truth -> {}", corpus.documents.len(), out.display(), truth.display());
        }
        Cmd::VerifyPartition { model, contexts, k, seed, hist, threads } => {
            let emb = load_embeddings(&model)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads as usize).build()?;
            let report = pool.install(|| partition_values(emb.model(), contexts as usize, k as usize, &mut rng))?;
            if let Some(path) = hist {
                fs::write(&path, report.histogram_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            emit(None, &report.summary())?;
        }
        Cmd::VerifyCorrelation { model, sets, vocab, samples, seed, scatter } => {
            let loaded = read_model(&model).with_context(|| format!("loading model {}", model.display()))?;
            let table = read_sets(&sets).with_context(|| format!("reading {}", sets.display()))?;
            let sibling = sets.parent().map(|p| p.join("vocab.tsv"));
            let vocab_path = vocab.or_else(|| sibling.filter(|p| p.exists()));
            let vectors = match vocab_path {
                Some(path) => {
                    let vocab = Vocabulary::read(&path).with_context(|| format!("reading {}", path.display()))?;
                    loaded.aligned_to(&vocab)?
                }
                None => loaded.model,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = norm_frequency_correlation(&vectors, &table, samples as usize, &mut rng)?;
            if let Some(path) = scatter {
                fs::write(&path, report.scatter_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            emit(None, &report.summary())?;
        }
        Cmd::EvalSim { model, data, out } => {
            let emb = load_embeddings(&model)?;
            let mut text = String::new();
            for path in data {
                let ds = SimilarityDataset::read(&path)?;
                text.push_str(&eval_similarity(&emb, &ds)?.to_tsv());
            }
            emit(out.as_deref(), &text)?;
        }
        Cmd::EvalAnalogy { model, data, out } => {
            let emb = load_embeddings(&model)?;
            let mut text = String::new();
            for path in data {
                let ds = AnalogyDataset::read(&path)?;
                text.push_str(&eval_analogy_cosadd(&emb, &ds)?.to_tsv());
            }
            emit(out.as_deref(), &text)?;
        }
        Cmd::EvalRelclass { model, data, out } => {
            let emb = load_embeddings(&model)?;
            let mut text = String::new();
            for path in data {
                let ds = RelationDataset::read(&path)?;
                text.push_str(&eval_relation_diffvec(&emb, &ds)?.to_tsv());
            }
            emit(out.as_deref(), &text)?;
        }
        Cmd::EvalTextclass { model, train, test, epochs, lr, out } => {
            let emb = load_embeddings(&model)?;
            let ds = TextDataset::read(&train, &test)?;
            emit(out.as_deref(), &eval_textclass(&emb, &ds, epochs as usize, lr)?.to_tsv())?;
        }
        Cmd::Compare { model_a, model_b, data, alpha, out } => {
            let a = load_embeddings(&model_a)?;
            let b = load_embeddings(&model_b)?;
            let mut pooled = SimilarityDataset { name: "pooled".into(), rows: Vec::new() };
            for path in &data {
                let ds = SimilarityDataset::read(path)?;
                let (ra, rb) = (eval_similarity(&a, &ds)?, eval_similarity(&b, &ds)?);
                report_rho_difference(&ra, &rb, alpha);
                pooled.rows.extend(normalize_ratings(&ds).rows);
            }
            let pairs = divergence_report(&a, &b, &pooled)?;
            let mut text = String::from("word1\tword2\tscore_a\tscore_b\tdifference\trating\n");
            for p in &pairs {
                text.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    p.word1,
                    p.word2,
                    p.score_a,
                    p.score_b,
                    p.difference(),
                    p.rating
                ));
            }
            eprintln!("{} of {} pooled pairs selected", pairs.len(), pooled.rows.len());
            emit(out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn report_rho_difference(a: &EvalReport, b: &EvalReport, alpha: f64) {
    let n = |r: &EvalReport| r.annotation("pairs").unwrap_or(0.0) as usize;
    match (a.value, b.value) {
        (Some(ra), Some(rb)) => match fisher_rho_test(ra, n(a), Some((rb, n(b)))) {
            Ok(t) => eprintln!(
                "{}: rho_a = {ra:.4}, rho_b = {rb:.4}, z = {:.4}, p = {:.4}{}",
                a.dataset,
                t.z,
                t.p_value,
                if t.p_value < alpha { " (significant)" } else { "" }
            ),
            Err(e) => eprintln!("{}: rho_a = {ra:.4}, rho_b = {rb:.4} ({e})", a.dataset),
        },
        _ => eprintln!("{}: correlation undefined for at least one model", a.dataset),
    }
}
