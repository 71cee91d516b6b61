//! `masktext` — encode, decode, build, validate, evaluate, and measure
//! text-serialized segmentation masks.
//!
//! Exit codes: 0 success, 2 I/O failure, 3 validation failure, 4 bad
//! configuration or flags.

mod commands;
mod config;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "masktext", version, about = "Segmentation masks as text: codecs, datasets, metrics")]
pub struct Cli {
    /// Config file (TOML or JSON); defaults to $MASKTEXT_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Encode a mask file into descriptor text.
    Encode(EncodeArgs),
    /// Decode descriptor text back into a mask file.
    Decode(DecodeArgs),
    /// Build an instruction-tuning corpus from annotations.
    Build(BuildArgs),
    /// Validate every response in a JSONL corpus.
    Validate(ValidateArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Token-length statistics over a corpus or a single scene.
    Stats(StatsArgs),
    /// Render descriptor text to a color PNG.
    Render(RenderArgs),
}

#[derive(Args)]
pub struct EncodeArgs {
    /// Input mask (.pgm or .png), pixel value = label id.
    #[arg(long)]
    pub mask: PathBuf,
    /// Label table JSON mapping id to label.
    #[arg(long)]
    pub table: PathBuf,
    /// isd-full | isd-irle | isd-rrle | bsd
    #[arg(long)]
    pub format: Option<String>,
    /// Grid resolution for the image-wise encodings.
    #[arg(long)]
    pub resolution: Option<u32>,
    /// Canvas resolution for the box-wise encoding.
    #[arg(long)]
    pub canvas: Option<u32>,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DecodeArgs {
    /// File holding the descriptor text (payload or records).
    #[arg(long)]
    pub input: PathBuf,
    /// Label table JSON (image-wise formats only).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// isd-full | isd-irle | isd-rrle | bsd
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long)]
    pub rows: Option<u32>,
    #[arg(long)]
    pub cols: Option<u32>,
    #[arg(long)]
    pub canvas: Option<u32>,
    /// Upsample the decoded grid to this pixel width.
    #[arg(long)]
    pub width: Option<u32>,
    /// Upsample the decoded grid to this pixel height.
    #[arg(long)]
    pub height: Option<u32>,
    /// Output mask file (.pgm or .png).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Repair malformed payloads instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Treat lenient-mode warnings as failures.
    #[arg(long)]
    pub fail_on_warning: bool,
}

#[derive(Args)]
pub struct BuildArgs {
    /// Annotations JSONL; mask paths resolve relative to this file.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Output corpus JSONL.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Comma-separated sample formats (isd-full, isd-rrle, bsd).
    #[arg(long, value_delimiter = ',')]
    pub formats: Vec<String>,
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long)]
    pub canvas: Option<u32>,
    /// Skip failing annotations instead of aborting.
    #[arg(long)]
    pub skip_errors: bool,
    /// Comma-separated task filter (semantic, referring,
    /// generalized_referring, reasoning).
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    /// Print the full report as JSON instead of a summary line.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct ValidateArgs {
    /// Corpus JSONL to validate.
    #[arg(long)]
    pub input: PathBuf,
    /// isd | bsd | auto (auto reads format/resolution per sample).
    #[arg(long, default_value = "auto")]
    pub expect: String,
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long)]
    pub rows: Option<u32>,
    #[arg(long)]
    pub cols: Option<u32>,
    #[arg(long)]
    pub canvas: Option<u32>,
    /// Label table JSON (required for image-wise responses).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// JSON field holding the response text.
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub fail_on_warning: bool,
    /// Print the full report as JSON instead of a summary line.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predictions corpus JSONL.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth corpus JSONL.
    #[arg(long)]
    pub gt: PathBuf,
    /// Label table JSON (required for image-wise responses).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Parse predictions strictly instead of leniently.
    #[arg(long)]
    pub strict_pred: bool,
    /// Include the per-sample score array in the report.
    #[arg(long)]
    pub per_sample: bool,
    /// Emit a CSV summary instead of JSON.
    #[arg(long)]
    pub csv: bool,
    /// Report file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct StatsArgs {
    /// Corpus JSONL of built samples.
    #[arg(long, required_unless_present = "mask")]
    pub input: Option<PathBuf>,
    /// Compare encodings of one mask instead of scanning a corpus.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Label table JSON (required with --mask).
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long)]
    pub canvas: Option<u32>,
    /// reference | path to a newline-delimited vocabulary file.
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Emit a CSV summary instead of JSON.
    #[arg(long)]
    pub csv: bool,
    /// Report file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RenderArgs {
    /// File holding the descriptor text (payload or records).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// isd-full | isd-irle | isd-rrle | bsd
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long)]
    pub rows: Option<u32>,
    #[arg(long)]
    pub cols: Option<u32>,
    #[arg(long)]
    pub canvas: Option<u32>,
    /// Output PNG.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Pixels per grid cell.
    #[arg(long, default_value_t = 8)]
    pub scale: u32,
    #[arg(long)]
    pub lenient: bool,
}

/// Failure with a process exit code attached.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 4,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code)
        }
    }
}
