mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "splatvid", version, about = "Encode, decode and analyse splat-coded video")]
struct Cli {
    /// Worker threads; 0 uses one per core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit and code a clip into a .gsv stream.
    Encode(EncodeArgs),
    /// Render a .gsv stream back to frames.
    Decode(DecodeArgs),
    /// Describe the layout of a .gsv stream.
    Inspect(InspectArgs),
    /// Compare two clips frame by frame.
    Metrics(MetricsArgs),
    /// Encode a clip at several splat counts and tabulate rate and quality.
    RdSweep(RdSweepArgs),
    /// Measure render throughput and the decode/encode time ratio.
    Bench(BenchArgs),
    /// Check the golden conformance streams.
    Regress(RegressArgs),
    /// Write a synthetic clip.
    Synth(SynthArgs),
    /// Print the effective configuration.
    Config(ConfigArgs),
}

/// Options shared by the commands that run the encoder.
#[derive(Debug, Args)]
pub struct CodecArgs {
    /// TOML file overriding training and quantization defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Disable splat augmentation.
    #[arg(long)]
    no_gsa: bool,
    /// Disable importance pruning (requires --no-gsa).
    #[arg(long)]
    no_gsp: bool,
    /// Disable automatic key-frame selection.
    #[arg(long)]
    no_dks: bool,
    /// Insert a key-frame at least every K frames.
    #[arg(long, value_name = "K")]
    max_keyframe_interval: Option<usize>,
    /// Maximum training iterations per frame.
    #[arg(long, value_name = "ITERATIONS")]
    budget: Option<usize>,
    /// Pre-training iterations per frame for key-frame selection.
    #[arg(long, value_name = "ITERATIONS")]
    pretrain_budget: Option<usize>,
    /// Quantization-aware fine-tuning iterations per frame.
    #[arg(long, value_name = "ITERATIONS")]
    finetune: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// `synth:<spec>`, a directory of PNG frames, or a raw clip file.
    input: String,
    #[arg(short, long)]
    output: PathBuf,
    /// Splats per frame.
    #[arg(short, long)]
    n: usize,
    #[command(flatten)]
    codec: CodecArgs,
    /// Also write per-frame statistics as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print statistics as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClipFormat {
    /// Raw when the extension is .rgbc or .raw, PNG directory otherwise.
    Auto,
    Png,
    Raw,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = ClipFormat::Auto)]
    format: ClipFormat,
    /// Start at this key-frame without reading earlier frames.
    #[arg(long, value_name = "FRAME")]
    from_keyframe: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    input: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Reference clip.
    reference: String,
    /// Distorted clip, or a .gsv stream to decode.
    distorted: String,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct RdSweepArgs {
    input: String,
    /// Comma-separated splat counts, at least two.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    /// Also encode and decode this clip and report the time ratio.
    #[arg(long, value_name = "INPUT")]
    codec: Option<String>,
    #[command(flatten)]
    codec_args: CodecArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[arg(long, default_value = "crates/core/tests/fixtures")]
    fixtures: PathBuf,
    /// Also re-encode each fixture from its recipe.
    #[arg(long)]
    reencode: bool,
    /// Regenerate the conformance fixture instead of checking.
    #[arg(long)]
    bless: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `name:WxHxT[:seed]` with name one of constant, circle, jump, noise, cut.
    spec: String,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = ClipFormat::Auto)]
    format: ClipFormat,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<i32, CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {} workers: {e}", cli.threads)))?;
    }
    match cli.command {
        Command::Encode(a) => commands::encode(a),
        Command::Decode(a) => commands::decode(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::RdSweep(a) => commands::rd_sweep(a),
        Command::Bench(a) => commands::bench(a),
        Command::Regress(a) => commands::regress(a),
        Command::Synth(a) => commands::synth(a),
        Command::Config(a) => commands::config(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
