//! `roosterize`: suggest lemma names for Coq lemma datasets.
//!
//! Exit codes: 0 when every lemma name conforms (or the command succeeded),
//! 1 when `suggest_naming` has rename suggestions, 2 on any error.

use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use rooster_core::baseline::RetrievalIndex;
use rooster_core::config::{ConfigError, ToolConfig};
use rooster_core::corpus::synth::{generate_synthetic_corpus, SyntheticStyle};
use rooster_core::corpus::{load_corpus, load_document, split_corpus, CorpusError, Document, LemmaRecord, DEFAULT_RATIOS};
use rooster_core::diagserver;
use rooster_core::metrics::{evaluate, EvalReport, MetricsError, Suggester};
use rooster_core::model::{self, load_checkpoint, save_checkpoint, Model, ModelConfig, ModelError, TrainConfig, CONFIG_NAMES, DEFAULT_CONFIG_NAME};
use rooster_core::report::SuggestionReport;

#[derive(Parser)]
#[command(name = "roosterize", version, about = "Learn lemma-naming conventions and suggest lemma names")]
struct Cli {
    /// Directory holding `.roosterizerc` (defaults to the current directory).
    #[arg(long, global = true)]
    project: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Conventions,
    NovelCarrier,
}

#[derive(Subcommand)]
enum Command {
    /// Report lemmas whose names are not among the model's top-k suggestions.
    #[command(name = "suggest_naming")]
    SuggestNaming {
        /// Lemma-dataset file (`*.lemmas.sexp`).
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        k: Option<usize>,
        /// Structured report (JSON lines); defaults to `<file>.report.jsonl`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Split a corpus by document and train a model.
    #[command(name = "train")]
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_CONFIG_NAME, value_parser = clap::builder::PossibleValuesParser::new(CONFIG_NAMES))]
        config_name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        /// Epoch metrics (TSV); defaults to `<out>.epochs.tsv`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        embed_dim: Option<usize>,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        min_frequency: Option<usize>,
        #[arg(long)]
        no_copy: bool,
        #[arg(long)]
        no_attention: bool,
    },
    /// Score a model or the retrieval baseline on the test split.
    #[command(name = "evaluate")]
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, conflicts_with = "baseline")]
        model: Option<PathBuf>,
        #[arg(long)]
        baseline: bool,
        #[arg(short, long)]
        k: Option<usize>,
        /// Split seed; defaults to the model's training seed, else 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Writes `<out>.txt` and `<out>.jsonl`.
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Write a synthetic lemma corpus.
    #[command(name = "gen_corpus")]
    GenCorpus {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        docs: u64,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        lemmas_per_doc: u64,
        #[arg(long, value_enum, default_value_t = Style::Conventions)]
        style: Style,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve suggestions as diagnostics over JSON-RPC on stdin/stdout.
    #[command(name = "serve")]
    Serve {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        k: Option<usize>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("no model checkpoint: {0}")]
    MissingModel(String),
    #[error("no data directory: pass --data or set `data_dir` in .roosterizerc")]
    MissingData,
    #[error("k must be at least 1")]
    BadK,
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Baseline(#[from] rooster_core::baseline::BaselineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Ctx {
    root: PathBuf,
    cfg: ToolConfig,
}

impl Ctx {
    fn load(project: Option<PathBuf>) -> Result<Self> {
        let root = project.unwrap_or_else(|| PathBuf::from("."));
        let cfg = ToolConfig::load(&root)?;
        Ok(Ctx { root, cfg })
    }

    fn k(&self, flag: Option<usize>) -> Result<usize> {
        match flag.unwrap_or(self.cfg.k) {
            0 => Err(CliError::BadK),
            k => Ok(k),
        }
    }

    fn model_path(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        let path = flag
            .or_else(|| self.cfg.model_path.as_ref().map(|p| self.root.join(p)))
            .ok_or_else(|| CliError::MissingModel("pass --model or set `model_path` in .roosterizerc".into()))?;
        if !path.is_file() {
            return Err(CliError::MissingModel(format!(
                "{} does not exist; train one with `roosterize train`",
                path.display()
            )));
        }
        Ok(path)
    }

    fn load_model(&self, flag: Option<PathBuf>) -> Result<Model> {
        Ok(load_checkpoint(&self.model_path(flag)?)?)
    }

    fn data_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.cfg.data_dir.as_ref().map(|p| self.root.join(p)))
            .ok_or(CliError::MissingData)
    }
}

fn ids(docs: &[Document]) -> Vec<String> {
    docs.iter().map(Document::id).collect()
}

fn suggest_naming(ctx: &Ctx, file: &Path, model: Option<PathBuf>, k: Option<usize>, report: Option<PathBuf>) -> Result<bool> {
    let k = ctx.k(k)?;
    let model = ctx.load_model(model)?;
    let doc = load_document(file)?;
    for s in &doc.skipped {
        eprintln!("warning: {}:{}: skipped record: {}", file.display(), s.position, s.reason);
    }
    let rep = SuggestionReport::build(&model, &doc.records, k)?;
    let out = report.unwrap_or_else(|| {
        let mut p = file.as_os_str().to_owned();
        p.push(".report.jsonl");
        PathBuf::from(p)
    });
    write_file(&out, rep.to_jsonl())?;
    print!("{}", rep.render());
    Ok(rep.all_conform())
}

#[allow(clippy::too_many_arguments)]
fn train(
    ctx: &Ctx,
    data: Option<PathBuf>,
    config_name: &str,
    tc: TrainConfig,
    out: &Path,
    log: Option<PathBuf>,
    tweak: impl FnOnce(&mut ModelConfig),
) -> Result<()> {
    let dir = ctx.data_dir(data)?;
    let docs = load_corpus(&dir)?;
    let split = split_corpus(&ids(&docs), DEFAULT_RATIOS, tc.seed)?;
    let train_recs = split.records_in(&split.train, &docs);
    let val_recs = split.records_in(&split.validation, &docs);
    let mut config = ModelConfig::from_name(config_name)?;
    tweak(&mut config);
    log::info!(
        "training {} on {} lemmas ({} validation)",
        config.config_name(),
        train_recs.len(),
        val_recs.len()
    );
    let outcome = model::train(&train_recs, &val_recs, config, ctx.cfg.chop.clone(), ctx.cfg.lexicon.clone(), &tc)?;
    save_checkpoint(out, &outcome.model)?;
    let mut text = String::from("epoch\ttrain_loss\tvalidation_top1\n");
    for m in &outcome.log {
        text.push_str(&m.to_line());
        text.push('\n');
    }
    let log_path = log.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".epochs.tsv");
        PathBuf::from(p)
    });
    write_file(&log_path, text)?;
    println!(
        "wrote {} (kept epoch {} of {}) and {}",
        out.display(),
        outcome.best_epoch,
        tc.epochs,
        log_path.display()
    );
    Ok(())
}

fn test_records<'a>(docs: &'a [Document], seed: u64) -> Result<(Vec<&'a LemmaRecord>, Vec<&'a LemmaRecord>)> {
    let split = split_corpus(&ids(docs), DEFAULT_RATIOS, seed)?;
    Ok((split.records_in(&split.train, docs), split.records_in(&split.test, docs)))
}

fn evaluate_cmd(
    ctx: &Ctx,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    baseline: bool,
    k: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let k = ctx.k(k)?;
    let docs = load_corpus(&ctx.data_dir(data)?)?;
    let report: EvalReport = if baseline {
        let (train, test) = test_records(&docs, seed.unwrap_or(0))?;
        let index = RetrievalIndex::build(&train)?;
        index.save(&out.with_extension("index.json"))?;
        run_eval(&index, &test, k, &ctx.cfg.lexicon)?
    } else {
        let model = ctx.load_model(model)?;
        let seed = seed.or(model.training.as_ref().map(|t| t.seed)).unwrap_or(0);
        let (_, test) = test_records(&docs, seed)?;
        run_eval(&model, &test, k, &model.lexicon)?
    };
    write_file(&out.with_extension("txt"), report.to_table())?;
    write_file(&out.with_extension("jsonl"), report.to_jsonl())?;
    print!("{}", report.to_table());
    Ok(())
}

fn run_eval(
    s: &dyn Suggester,
    test: &[&LemmaRecord],
    k: usize,
    lex: &rooster_core::subtok::SuffixLexicon,
) -> Result<EvalReport> {
    Ok(evaluate(s, test, k, lex)?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let ctx = Ctx::load(cli.project)?;
    match cli.command {
        Command::SuggestNaming { file, model, k, report } => {
            let ok = suggest_naming(&ctx, &file, model, k, report)?;
            Ok(ExitCode::from(if ok { 0 } else { 1 }))
        }
        Command::Train {
            data,
            config_name,
            seed,
            epochs,
            out,
            log,
            embed_dim,
            hidden_dim,
            lr,
            batch_size,
            min_frequency,
            no_copy,
            no_attention,
        } => {
            let d = TrainConfig::default();
            let tc = TrainConfig {
                seed,
                epochs,
                lr: lr.unwrap_or(d.lr),
                batch_size: batch_size.unwrap_or(d.batch_size),
                ..d
            };
            train(&ctx, data, &config_name, tc, &out, log, |c| {
                c.embed_dim = embed_dim.unwrap_or(c.embed_dim);
                c.hidden_dim = hidden_dim.unwrap_or(c.hidden_dim);
                c.min_frequency = min_frequency.unwrap_or(c.min_frequency);
                c.use_copy &= !(no_copy || no_attention);
                c.use_attention &= !no_attention;
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate {
            data,
            model,
            baseline,
            k,
            seed,
            out,
        } => {
            evaluate_cmd(&ctx, data, model, baseline, k, seed, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::GenCorpus {
            seed,
            docs,
            lemmas_per_doc,
            style,
            out,
        } => {
            let style = match style {
                Style::Conventions => SyntheticStyle::Conventions,
                Style::NovelCarrier => SyntheticStyle::NovelCarrier,
            };
            let files = generate_synthetic_corpus(seed, docs as usize, lemmas_per_doc as usize, style, &out)?;
            println!("wrote {} documents to {}", files.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { model, k } => {
            let k = ctx.k(k)?;
            let model = ctx.load_model(model)?;
            log::info!("serving {} (k = {k})", model.config.config_name());
            let stdin = io::stdin();
            let mut input = stdin.lock();
            let mut output = BufWriter::new(io::stdout().lock());
            diagserver::serve(&mut input, &mut output, &model, k).map_err(|source| CliError::Io {
                path: PathBuf::from("<stdio>"),
                source,
            })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
