use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use epnkit_core::group::{FiniteRotationGroup, GroupKind};
use epnkit_core::sampling::io::{read_binary, read_text, write_binary, write_text, BINARY_MAGIC};
use epnkit_core::train::{toy_cls_task, toy_pose_task, ParameterSet, TrainConfig};

use crate::audit::{run_audit, AuditOptions};
use crate::bench::{run_bench, BenchOptions};
use crate::error::{CliError, CliResult};
use crate::group_json::GroupFile;

fn parse_group(s: &str) -> Result<GroupKind, String> {
    s.parse().map_err(|e: epnkit_core::Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "epnkit", version, about = "SE(3) separable point convolutions: audits, benchmarks and toy training")]
pub struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the reproducibility mode.
    #[arg(long, global = true, env = "EPNKIT_THREADS")]
    pub threads: Option<usize>,
    /// Output path for the command's report; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Rotation group: tetra, octa or icosa.
    #[arg(long, global = true, value_parser = parse_group)]
    pub group: Option<GroupKind>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group construction.
    #[command(subcommand)]
    Group(GroupCommand),
    /// Run the equivariance and correctness audit.
    Audit(AuditArgs),
    /// Compare naive and separable convolution cost.
    Bench(BenchArgs),
    /// Train a toy model.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Convert point clouds between text and binary.
    Convert(ConvertArgs),
}

#[derive(Debug, Subcommand)]
pub enum GroupCommand {
    /// Write elements and tables as JSON.
    Build {
        #[arg(long, value_parser = parse_group)]
        kind: Option<GroupKind>,
    },
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, default_value_t = 64)]
    pub points: usize,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, hide = true)]
    pub corrupt_permutation: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Count MACs without timing.
    #[arg(long)]
    pub dry: bool,
    /// Also write the sweep as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 8, 16])]
    pub kernel_points: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 8, 16])]
    pub group_neighbors: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 64)]
    pub points: usize,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    /// Rotation estimation with the detection head and the regression baseline.
    Pose(TrainArgs),
    /// Two-class classification with every configured pooling.
    Cls(TrainArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` config file; keys it omits keep the task's defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; defaults to the report path with a `.ckpt` extension.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CloudFormat {
    Text,
    Binary,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    /// Output format; the opposite of the input format by default.
    #[arg(long, value_enum)]
    pub to: Option<CloudFormat>,
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> CliResult<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match cli.command {
        Command::Group(GroupCommand::Build { kind }) => {
            let kind = kind
                .or(cli.group)
                .ok_or_else(|| CliError::Usage("group build needs --kind or --group".into()))?;
            let group = FiniteRotationGroup::build(kind)?;
            emit(out, &to_json(&GroupFile::from_group(&group))?)?;
            Ok(0)
        }
        Command::Audit(args) => {
            let report = run_audit(&AuditOptions {
                seed,
                group: cli.group.unwrap_or(GroupKind::Tetrahedral),
                points: args.points,
                channels: args.channels,
                corrupt_permutation: args.corrupt_permutation,
            })?;
            emit(out, &to_json(&report)?)?;
            for c in report.checks.iter().filter(|c| !c.pass) {
                eprintln!("check failed: {} (deviation {:e} > tolerance {:e})", c.name, c.deviation, c.tolerance);
            }
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::Bench(args) => {
            let report = run_bench(&BenchOptions {
                seed,
                group: cli.group.unwrap_or(GroupKind::Icosahedral),
                kernel_points: args.kernel_points,
                group_neighbors: args.group_neighbors,
                channels: args.channels,
                points: args.points,
                runs: args.runs,
                dry: args.dry,
            })?;
            emit(out, &to_json(&report)?)?;
            if let Some(path) = &args.csv {
                write_file(path, report.to_csv().as_bytes())?;
            }
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::Train(task) => {
            let (is_pose, args) = match task {
                TrainCommand::Pose(a) => (true, a),
                TrainCommand::Cls(a) => (false, a),
            };
            let base = if is_pose { TrainConfig::default() } else { TrainConfig::cls_defaults() };
            let mut config = match &args.config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                    TrainConfig::parse_over(base, &text)?
                }
                None => base,
            };
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            if let Some(g) = cli.group {
                config.group = g;
            }
            let (report, state) = if is_pose {
                let (report, net) = toy_pose_task(&config)?;
                (to_json(&report)?, net.state())
            } else {
                let (report, nets) = toy_cls_task(&config)?;
                let mut state = ParameterSet::new();
                for (variant, net) in report.variants.iter().zip(&nets) {
                    for a in net.state().arrays() {
                        state.insert(format!("{}.{}", variant.pooling.name(), a.name), a.shape.clone(), a.values.clone())?;
                    }
                }
                (to_json(&report)?, state)
            };
            emit(out, &report)?;
            let checkpoint = args.checkpoint.or_else(|| out.map(|p| p.with_extension("ckpt")));
            if let Some(path) = checkpoint {
                state.save(&path)?;
            }
            Ok(0)
        }
        Command::Convert(args) => {
            let out = out.ok_or_else(|| CliError::Usage("convert needs --out".into()))?;
            let bytes = fs::read(&args.input).map_err(|e| CliError::io(&args.input, e))?;
            let (cloud, from) = if bytes.starts_with(BINARY_MAGIC) {
                (read_binary(bytes.as_slice())?, CloudFormat::Binary)
            } else {
                (read_text(BufReader::new(bytes.as_slice()))?, CloudFormat::Text)
            };
            let to = args.to.unwrap_or(match from {
                CloudFormat::Text => CloudFormat::Binary,
                CloudFormat::Binary => CloudFormat::Text,
            });
            let mut buf = Vec::new();
            match to {
                CloudFormat::Text => write_text(&cloud, &mut buf)?,
                CloudFormat::Binary => write_binary(&cloud, &mut buf)?,
            }
            write_file(out, &buf)?;
            Ok(0)
        }
    }
}
