//! `tagseq`: synthesise corpora, build vocabularies, train, generate and
//! evaluate tag sequences.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tagseq::config::{Overrides, Preset, RunConfig};
use tagseq::corpus::TagOrder;
use tagseq::infer::VoteMode;
use tagseq::model::{PeMode, Variant};

#[derive(Parser)]
#[command(name = "tagseq", version, about = "Generate document tags with a sequence-to-sequence model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic compositional corpus (train, dev and test splits).
    Synth(SynthArgs),
    /// Build source and target vocabularies plus tag frequencies.
    BuildVocab(VocabArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Decode tags for every document of a corpus.
    Generate(GenerateArgs),
    /// Score predictions against a gold corpus.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML file layered between the preset and these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `desk` or `paper`.
    #[arg(long)]
    preset: Option<Preset>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// `random`, `asc` or `desc`.
    #[arg(long)]
    order: Option<TagOrder>,
    /// `local`, `global` or `none`.
    #[arg(long)]
    pe: Option<PeMode>,
    /// `L2A`, `L2L`, `A2A` or `A2L`.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    dmodel: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    beam: Option<usize>,
    /// Vote threshold; a tag is kept when more hypotheses than this contain
    /// it. Negative disables voting.
    #[arg(long, allow_negative_numbers = true)]
    vote: Option<f64>,
    /// `set` or `occurrence`.
    #[arg(long)]
    vote_mode: Option<VoteMode>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// TOML generator settings; `--seed` and the split sizes override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    train_docs: Option<usize>,
    #[arg(long)]
    dev_docs: Option<usize>,
    #[arg(long)]
    test_docs: Option<usize>,
}

#[derive(Args)]
struct VocabArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 80_000)]
    vocab_cap: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output directory for checkpoints, loss curve and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// JSON-lines output; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include every N-best hypothesis in the output.
    #[arg(long)]
    emit_nbest: bool,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("inventory").required(true).args(["model", "train"]))]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Checkpoint whose training tags count as seen.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training corpus whose tags count as seen.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Average per document instead of pooling counts.
    #[arg(long = "macro")]
    macro_average: bool,
    /// Directory for report.json, report.txt and per_document.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset,
            seed: self.seed,
            deterministic: self.deterministic,
            ..Overrides::default()
        }
    }
}

fn resolve(common: &CommonArgs, model: Option<&ModelArgs>, decode: Option<&DecodeArgs>) -> tagseq::error::Result<RunConfig> {
    let mut o = common.overrides();
    if let Some(m) = model {
        o.order = m.order;
        o.pe = m.pe;
        o.variant = m.variant;
        o.d_model = m.dmodel;
        o.heads = m.heads;
        o.epochs = m.epochs;
        o.batch_size = m.batch_size;
    }
    if let Some(d) = decode {
        o.beam = d.beam;
        o.threshold = d.vote;
        o.vote_mode = d.vote_mode;
        o.max_len = d.max_len;
    }
    RunConfig::load(common.config.as_deref(), &o)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::BuildVocab(a) => commands::build_vocab(&a),
        Command::Train(a) => {
            let cfg = resolve(&a.common, Some(&a.model), None)?;
            commands::train(&a, &cfg)
        }
        Command::Generate(a) => {
            let cfg = resolve(&a.common, None, Some(&a.decode))?;
            commands::generate(&a, &cfg)
        }
        Command::Evaluate(a) => commands::evaluate(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<tagseq::error::Error>().map_or("runtime", |e| e.kind());
            let report = serde_json::json!({
                "error": kind,
                "message": format!("{e:#}"),
            });
            eprintln!("{report}");
            ExitCode::from(1)
        }
    }
}
