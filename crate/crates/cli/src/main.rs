//! `ontoplace`: ontology concept placement from the command line.

mod commands;
mod config;
mod http;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use ontoplace_core::SearchMethod;

#[derive(Parser, Debug)]
#[command(name = "ontoplace", version, about = "Place new concept mentions into an ontology")]
pub struct Cli {
    /// Flat key=value settings, below flags and environment in precedence.
    #[arg(long, global = true, env = "ONTOPLACE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-mention work (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for stub providers that do not fix their own.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate concept and subsumption files and write them canonically.
    Ingest(IngestArgs),
    /// Build or query the lexical index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Precompute embeddings for concepts, edges and mentions.
    EmbedCache(EmbedCacheArgs),
    /// Generate ranked candidate edges per mention.
    Candidates(CandidatesArgs),
    /// Re-rank slates with a cross-encoder or an LLM.
    Select(SelectArgs),
    /// Emit explanation-tuning records from gold mentions and slates.
    TuneCorpus(TuneCorpusArgs),
    /// Insertion-rate report over one or more dataset splits.
    Eval(EvalArgs),
    /// Run the curation service.
    Serve(ServeArgs),
    /// Write an ontology, optionally with a decision log applied.
    Export(ExportArgs),
    /// Convert a published release layout into the dataset format.
    Adapt(AdaptArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Index(_) => "index",
            Command::EmbedCache(_) => "embed-cache",
            Command::Candidates(_) => "candidates",
            Command::Select(_) => "select",
            Command::TuneCorpus(_) => "tune-corpus",
            Command::Eval(_) => "eval",
            Command::Serve(_) => "serve",
            Command::Export(_) => "export",
            Command::Adapt(_) => "adapt",
        }
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub subsumptions: PathBuf,
    /// Ontology directory to write; omit to only validate.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum IndexCommand {
    Build(IndexBuildArgs),
    Query(IndexQueryArgs),
}

#[derive(Args, Debug)]
pub struct IndexBuildArgs {
    /// Concept file; alternatively --ontology.
    #[arg(long, required_unless_present = "ontology")]
    pub concepts: Option<PathBuf>,
    #[arg(long, conflicts_with = "concepts")]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LogBaseArg::Ln)]
    pub log_base: LogBaseArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum LogBaseArg {
    Ln,
    Log2,
    Log10,
}

#[derive(Args, Debug)]
pub struct IndexQueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub mention: String,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EmbedArgs {
    /// Embedding provider locator (http(s) URL or stub:hash?dim=&seed=).
    #[arg(long)]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub embed_model: Option<String>,
    /// Embedding store file used as cache, or as the only source when no
    /// provider is configured.
    #[arg(long)]
    pub embed_cache: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    #[arg(long, default_value = "lexical")]
    pub method: SearchMethod,
    /// Prebuilt index; built from the ontology when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Drop mention contexts from bi-encoder inputs.
    #[arg(long)]
    pub no_context: bool,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Args, Debug)]
pub struct EmbedCacheArgs {
    #[arg(long)]
    pub ontology: PathBuf,
    /// Methods to warm; both embedding methods by default.
    #[arg(long = "method", value_delimiter = ',', default_value = "fixed,biencoder")]
    pub methods: Vec<SearchMethod>,
    /// Mention files whose texts are embedded too.
    #[arg(long)]
    pub mentions: Vec<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long)]
    pub no_context: bool,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CandidatesArgs {
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub mentions: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMethod {
    Cross,
    Llm,
}

#[derive(Args, Debug, Clone)]
pub struct SelectorArgs {
    /// Scorer or completion locator (http(s) URL or stub:overlap).
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Vocabulary for the LLM prompt token budget.
    #[arg(long = "prompt-vocab")]
    pub prompt_vocab: Option<PathBuf>,
    #[arg(long)]
    pub max_input_tokens: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub slates: PathBuf,
    #[arg(long, value_enum)]
    pub method: SelectMethod,
    #[command(flatten)]
    pub selector: SelectorArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TuneCorpusArgs {
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub slates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ontology: PathBuf,
    /// `name=path` or a path named by its stem; repeat for several splits.
    #[arg(long = "dataset", required = true)]
    pub datasets: Vec<String>,
    /// Precomputed slates, one file per dataset in the same order.
    #[arg(long = "slates")]
    pub slates: Vec<PathBuf>,
    /// Slate sizes to generate.
    #[arg(long, value_delimiter = ',', default_value = "10,50")]
    pub k: Vec<usize>,
    /// Cut-offs reported per slate size (default: the slate size).
    #[arg(long, value_delimiter = ',')]
    pub at: Vec<usize>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Optional selection step applied to every generated slate.
    #[arg(long, value_enum)]
    pub select: Option<SelectMethod>,
    #[command(flatten)]
    pub selector: SelectorArgs,
    /// `.md` or `.tsv`; the markdown table is printed when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub ontology: PathBuf,
    /// One session per dataset, named as in eval.
    #[arg(long = "dataset", required = true)]
    pub datasets: Vec<String>,
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Directory for decision logs and snapshots, one subdirectory per
    /// session.
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub snapshot_every: u64,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub ontology: PathBuf,
    /// Decision log to replay; needs the dataset the session was opened on.
    #[arg(long, requires = "dataset")]
    pub decisions: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    /// JSONL records or one JSON array.
    #[arg(long)]
    pub input: PathBuf,
    /// Prefix stripped from concept ids, e.g. `SCTID:`.
    #[arg(long)]
    pub id_prefix: Option<String>,
    /// Validate gold edges against this ontology.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn usage_error(err: clap::Error) -> ExitCode {
    if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        let _ = err.print();
        return ExitCode::SUCCESS;
    }
    let _ = err.print();
    // follow the error with the help of the subcommand that was invoked
    let mut cmd = Cli::command();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Some(sub) = args.iter().find_map(|a| cmd.find_subcommand(a).map(|s| s.get_name().to_string())) {
        if let Some(sub) = cmd.find_subcommand_mut(&sub) {
            eprintln!();
            let _ = sub.write_help(&mut std::io::stderr());
        }
    }
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => return usage_error(e),
    };
    let stage = cli.command.name();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": stage, "message": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
