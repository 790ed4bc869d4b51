//! The `fsmn` command-line tool.
//!
//! Every flag can also come from a `--config FILE` of `key = value` lines
//! (`#` starts a comment; keys are flag names without the dashes). Flags given
//! on the command line win over the file.

mod bench;
mod commands;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::memory::MemoryKind;
use crate::train::Compare;

pub use commands::{filters_csv, gradcheck_variants, Variant};

#[derive(Parser, Debug)]
#[command(name = "fsmn", version, about = "Feedforward sequential memory networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a language model and report test perplexity.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Perplexity of a checkpoint on a corpus.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Finite-difference gradient check of every model variant.
    #[command(args_override_self = true)]
    Gradcheck(GradcheckArgs),
    /// Learned memory filter coefficients as CSV.
    #[command(args_override_self = true)]
    DumpFilters(DumpArgs),
    /// Time banded against naive encoding and FSMN against RNN epochs.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    #[value(name = "f32")]
    F32,
    #[value(name = "f64")]
    F64,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Random seed for initialization, shuffling and synthetic data.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; 1 runs everything on the main thread.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// File of `key = value` defaults for this command's flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Architecture string, e.g. `[2*200]-400(M)-400-V`.
    #[arg(long, default_value = "[2*200]-400(M)-400-V")]
    pub arch: String,
    /// Training text, one sentence per line.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation text driving the learning-rate schedule.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Test text; its perplexity is printed at the end.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory for checkpoints and history.
    #[arg(long, default_value = "fsmn-out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[arg(long, default_value_t = 0.4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 4e-5)]
    pub weight_decay: f64,
    /// Sentences per mini-batch.
    #[arg(long, default_value_t = 200)]
    pub batch_size: usize,
    /// Upper bound on epochs; the schedule usually stops earlier.
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Smallest validation improvement that keeps the learning rate fixed.
    #[arg(long, default_value_t = 1.0)]
    pub plateau: f64,
    /// Epochs of learning-rate halving after the plateau ends.
    #[arg(long, default_value_t = 6)]
    pub halving_epochs: usize,
    /// Compare validation perplexity with the best or the previous epoch.
    #[arg(long, default_value = "best", value_parser = parse_compare)]
    pub compare: Compare,
    /// Rescale gradients whose global norm exceeds this value.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Apply weight decay to memory taps too.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub decay_taps: bool,
    /// Memory kind used by a bare `(M)`.
    #[arg(long, default_value = "vector", value_parser = parse_kind)]
    pub memory_kind: MemoryKind,
    /// Lookback order used by a bare `(M)`.
    #[arg(long, default_value_t = 20)]
    pub lookback: usize,
    /// Lookahead order used by a bare `(M)`.
    #[arg(long, default_value_t = 0)]
    pub lookahead: usize,
    /// Attention width used by a bare `(M)` of kind attention.
    #[arg(long, default_value_t = 32)]
    pub attention_dim: usize,
    /// Half-width of uniform noise added to the identity memory filters.
    #[arg(long, default_value_t = 0.0)]
    pub tap_jitter: f64,
    /// Vocabulary size including `<unk>`.
    #[arg(long, default_value_t = 10_000)]
    pub vocab_size: usize,
    /// Append an end-of-sentence token to every line.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub eos: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Text to evaluate, one sentence per line.
    #[arg(long, visible_alias = "test")]
    pub corpus: Option<PathBuf>,
    /// Vocabulary file the corpus is expected to use; must match the
    /// checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub batch_size: usize,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub threshold: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Smallest denominator of the relative error; smaller components are
    /// judged on absolute error.
    #[arg(long, default_value_t = 1e-4)]
    pub floor: f64,
    /// Corrupt one analytic gradient to prove the check can fail.
    #[arg(long, hide = true, default_value_t = false)]
    pub inject_fault: bool,
}

#[derive(Args, Debug, Clone)]
pub struct DumpArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Layer index holding the memory block; defaults to the first one.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Directory to write `filters-L<layer>.csv` into instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Sequence lengths to time.
    #[arg(long, value_delimiter = ',', default_value = "32,128,512")]
    pub lengths: Vec<usize>,
    /// Hidden width of the benchmark models.
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    /// Memory order of the benchmark FSMN.
    #[arg(long, default_value_t = 20)]
    pub order: usize,
    /// Frames per timed epoch.
    #[arg(long, default_value_t = 4096)]
    pub frames: usize,
    /// Timed repetitions; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Directory to write `bench.csv` into instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_compare(s: &str) -> std::result::Result<Compare, String> {
    Compare::parse(s).map_err(|e| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<MemoryKind, String> {
    MemoryKind::parse(s).map_err(|e| e.to_string())
}

/// Reads `key = value` lines.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Usage(format!("config line {}: empty key", n + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Inserts flags from the config file right after the subcommand so that
/// later command-line flags override them.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(sub) = args.get(1).map(|s| s.to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let text =
        fs::read_to_string(&path).map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let cmd = Cli::command();
    let Some(sc) = cmd.find_subcommand(&sub) else {
        return Ok(args);
    };
    let local: Vec<String> = sc.get_arguments().filter_map(|a| a.get_long()).map(str::to_string).collect();
    let known: Vec<String> = cmd
        .get_subcommands()
        .flat_map(|c| c.get_arguments().filter_map(|a| a.get_long()).map(str::to_string).collect::<Vec<_>>())
        .collect();
    let mut extra = Vec::new();
    for (k, v) in parse_config(&text)? {
        if k == "config" {
            return Err(Error::Usage("a config file cannot name another config file".into()));
        }
        if local.contains(&k) {
            extra.push(OsString::from(format!("--{k}")));
            extra.push(OsString::from(v));
        } else if !known.contains(&k) {
            return Err(Error::Usage(format!("unknown config key `{k}` in {}", path.display())));
        }
    }
    let mut merged = args[..2].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&args[2..]);
    Ok(merged)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Parse(_) => 2,
        _ => 1,
    }
}

/// Runs the tool with `args` (program name first). Returns the exit status.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
