use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sketchd::workload::MixedWorkload;
use sketchd::{compare, run_workload, CliError, Mode, Ratio, RunReport, SynthConfig, Workload};
use sketchd_engine::{BufferConfig, TopKBuffer};
use sketchd_manager::{ManagerConfig, Reuse, Strategy, DEFAULT_BATCH_SIZE};

#[derive(Parser)]
#[command(name = "sketchd", version, about = "Provenance sketch maintenance workloads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a workload file and write a per-operation report.
    Run(RunArgs),
    /// Generate a synthetic table, and optionally a mixed workload over it.
    Gen(GenArgs),
    /// Check reports of one workload against each other and summarize timings.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ns,
    Fm,
    Imp,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Eager,
    Lazy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "lazy")]
    strategy: StrategyArg,
    /// Delta rows between eager maintenance rounds.
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: u64,
    #[arg(long, default_value = "exact")]
    reuse: Reuse,
    #[arg(long)]
    state_dir: Option<PathBuf>,
    /// Engine states kept in memory.
    #[arg(long)]
    memory_cap: Option<usize>,
    #[arg(long, value_enum, default_value = "on")]
    bloom: Switch,
    #[arg(long, default_value_t = 0.01)]
    bloom_fpr: f64,
    #[arg(long, value_enum, default_value = "on")]
    pushdown: Switch,
    /// `unbounded`, `<n>k` or a number of positions.
    #[arg(long, default_value = "5k")]
    topk_buffer: TopKBuffer,
    /// Values kept per min/max group, or `unbounded`.
    #[arg(long, default_value = "16")]
    minmax_buffer: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    rows: u64,
    #[arg(long)]
    groups: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write a mixed update/query workload over the table.
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    ops: u64,
    #[arg(long, default_value = "1U1Q")]
    ratio: Ratio,
    /// Rows inserted per update.
    #[arg(long, default_value_t = 100)]
    delta_rows: u64,
    /// Rows deleted per update.
    #[arg(long, default_value_t = 0)]
    delete_rows: u64,
    /// Fragments of the partition on `a`.
    #[arg(long, default_value_t = 64)]
    fragments: u64,
}

fn output(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let minmax = match args.minmax_buffer.as_str() {
        "unbounded" | "off" => None,
        n => Some(
            n.parse()
                .map_err(|_| CliError::InvalidArgument(format!("bad min/max buffer {n:?}")))?,
        ),
    };
    let config = ManagerConfig {
        strategy: match args.strategy {
            StrategyArg::Eager => Strategy::Eager {
                batch_size: args.batch_size,
            },
            StrategyArg::Lazy => Strategy::Lazy,
        },
        reuse: args.reuse,
        buffers: BufferConfig {
            topk: args.topk_buffer,
            minmax,
            bloom: args.bloom.on(),
            bloom_fpr: args.bloom_fpr,
            pushdown: args.pushdown.on(),
        },
        memory_cap: args.memory_cap,
        state_dir: args.state_dir,
        ..ManagerConfig::default()
    };
    let mode = match args.mode {
        ModeArg::Ns => Mode::Ns,
        ModeArg::Fm => Mode::Fm,
        ModeArg::Imp => Mode::Imp,
    };
    let workload = Workload::from_file(&args.workload)?;
    let report = run_workload(&workload, mode, config)?;
    report.write_csv(output(args.out.as_ref())?)
}

fn gen(args: GenArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        rows: args.rows,
        groups: args.groups,
        seed: args.seed,
        sigma: args.sigma,
    };
    sketchd::synth::write_csv(cfg, BufWriter::new(File::create(&args.out)?))?;
    if let Some(path) = &args.workload {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let out = args.out.canonicalize()?;
        let csv_path = dir
            .canonicalize()
            .ok()
            .and_then(|d| out.strip_prefix(d).ok().map(PathBuf::from))
            .unwrap_or(out);
        let w = MixedWorkload {
            table: "t".into(),
            csv_path,
            rows: args.rows,
            groups: args.groups,
            sigma: args.sigma,
            fragments: args.fragments,
            ops: args.ops,
            ratio: args.ratio,
            delta_rows: args.delta_rows,
            delete_rows: args.delete_rows,
            seed: args.seed,
        };
        std::fs::write(path, w.build().to_jsonl())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Gen(args) => gen(args),
        Command::Compare { reports, out } => reports
            .iter()
            .map(|p| RunReport::from_path(p))
            .collect::<Result<Vec<_>, _>>()
            .and_then(|r| compare(&r))
            .and_then(|s| s.write_csv(output(out.as_ref())?)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sketchd: {e}");
            ExitCode::FAILURE
        }
    }
}
