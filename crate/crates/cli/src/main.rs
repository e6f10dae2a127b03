use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vstory::dataset::Backbone;

mod commands;
mod config;
mod data;

#[derive(Parser)]
#[command(name = "vstory", version, about = "Hierarchical visual storytelling: preprocess, train, generate, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter stories, build the vocabulary and cache encoded examples.
    Preprocess(PreprocessArgs),
    /// Train a model on a preprocessed data directory.
    Train(TrainArgs),
    /// Write stories for a split with a trained checkpoint.
    Generate(GenerateArgs),
    /// Score generated stories against references.
    Evaluate(EvaluateArgs),
    /// Train, generate and score the full model and its ablations.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// Generate N synthetic training stories (and N/5 validation stories)
    /// instead of reading VIST files.
    #[arg(long, value_name = "N", conflicts_with_all = ["train_sis", "val_sis"])]
    pub synthetic: Option<usize>,
    /// VIST story-in-sequence JSON, training split.
    #[arg(long, value_name = "PATH", requires_all = ["val_sis", "train_dii", "val_dii", "features"])]
    pub train_sis: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub val_sis: Option<PathBuf>,
    /// VIST descriptions-in-isolation JSON, training split.
    #[arg(long, value_name = "PATH")]
    pub train_dii: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub val_dii: Option<PathBuf>,
    /// Feature store directory (features.json + features.bin).
    #[arg(long, value_name = "DIR")]
    pub features: Option<PathBuf>,
    /// Backbone the features come from: resnet152-like, vgg19-like or synthetic.
    #[arg(long, value_name = "NAME")]
    pub backbone: Option<Backbone>,
    /// Width of synthetic-backbone features.
    #[arg(long, value_name = "N", default_value_t = 64)]
    pub feature_dim: usize,
    /// Minimum story-corpus frequency for a vocabulary entry.
    #[arg(long, value_name = "N", default_value_t = 3)]
    pub min_count: usize,
    /// Stop-word list, one word per line (defaults to the built-in list).
    #[arg(long, value_name = "PATH")]
    pub stopwords: Option<PathBuf>,
    /// JSON object mapping misspellings to corrections.
    #[arg(long, value_name = "PATH")]
    pub spelling: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR", default_value = "data")]
    pub out: PathBuf,
}

#[derive(Args, Clone)]
pub struct ModelFlags {
    /// TOML or JSON file with [model], [train] and [generate] sections.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides train.seed; also seeds parameter initialisation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides train.max_epochs.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub no_prev_sentence_attention: bool,
    #[arg(long)]
    pub no_description_attention: bool,
    /// Fail unless the data was preprocessed with this backbone.
    #[arg(long, value_name = "NAME")]
    pub backbone: Option<Backbone>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Preprocessed data directory.
    #[arg(long, value_name = "DIR", default_value = "data")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "run")]
    pub out: PathBuf,
}

#[derive(Args, Clone)]
pub struct DecodeFlags {
    /// Beam width; 1 is the same as greedy decoding, which is the default.
    #[arg(long, value_name = "N")]
    pub beam: Option<usize>,
    /// Maximum words per sentence.
    #[arg(long, value_name = "N")]
    pub max_len: Option<usize>,
    /// Let the decoder emit the unknown-word token.
    #[arg(long)]
    pub allow_unk: bool,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long, value_name = "PATH", default_value = "run/best.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "data")]
    pub data: PathBuf,
    /// Which cached split to write stories for.
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Supplies [generate] defaults; flags win.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeFlags,
    #[arg(long, value_name = "DIR", default_value = "gen")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Generated stories, as PATH or NAME=PATH; repeat to compare systems.
    #[arg(long = "candidates", value_name = "[NAME=]PATH", required = true)]
    pub candidates: Vec<String>,
    /// Reference stories written by preprocess.
    #[arg(long, value_name = "PATH")]
    pub references: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub decode: DecodeFlags,
    #[arg(long, value_name = "DIR", default_value = "data")]
    pub data: PathBuf,
    /// The same stories preprocessed with another backbone; adds the
    /// backbone-swap variant.
    #[arg(long, value_name = "DIR")]
    pub alt_data: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "ablation")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Train(a) => commands::train(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ablate(a) => commands::ablate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
