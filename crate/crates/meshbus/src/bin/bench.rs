//! `bench latency|throughput|receiver`: latency and throughput runs over
//! the in-process graph, local sockets, or TCP.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use meshbus::bench::{
    self, emit_report, sizes::parse_sizes, Baseline, BenchError, BenchResult, BenchSpec, Mode, ReportFormat, Role,
};
use meshbus::bridge::Endpoint;

#[derive(Parser)]
#[command(name = "bench", about = "meshbus latency and throughput harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-size latency, packets sent back to back.
    Latency(RunArgs),
    /// Per-size throughput at a fixed publish rate.
    Throughput(RunArgs),
    /// Echo pings from a sender.
    Receiver(ReceiverArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "intra")]
    mode: Mode,
    /// e.g. `1K,4K,...,4096K` or `100K..10M`.
    #[arg(long)]
    sizes: Option<String>,
    /// Packets per size (default 100 for latency, 20 for throughput).
    #[arg(long)]
    count: Option<usize>,
    /// Publish rate in Hz (throughput default 10).
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = bench::DEFAULT_WARMUP)]
    warmup: usize,
    /// `copy` serializes every packet instead of passing a reference.
    #[arg(long)]
    baseline: Option<String>,
    /// Remote receiver; makes this run a sender (ipc or tcp).
    #[arg(long)]
    peer: Option<Endpoint>,
    /// Where the remote receiver sends echoes (with --peer).
    #[arg(long, default_value = "tcp://*:5554")]
    listen: Endpoint,
    /// Per-packet deadline in seconds.
    #[arg(long, default_value_t = 10.0)]
    timeout: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Parameter override `key=value`; repeatable.
    #[arg(long = "param")]
    params: Vec<String>,
}

#[derive(Args)]
struct ReceiverArgs {
    /// Endpoint echoes are published on.
    #[arg(long, default_value = "tcp://*:5553")]
    listen: Endpoint,
    /// The sender's endpoint, where pings come from.
    #[arg(long)]
    connect: Endpoint,
    /// Exit after this many seconds instead of running until killed.
    #[arg(long = "for")]
    duration: Option<f64>,
    #[arg(long = "param")]
    params: Vec<String>,
}

fn spec_from(args: &RunArgs, throughput: bool) -> anyhow::Result<BenchSpec> {
    let default_sizes = if throughput { "100K..10M" } else { "1K,4K,...,4096K" };
    let sizes = parse_sizes(args.sizes.as_deref().unwrap_or(default_sizes))?;
    let count = args.count.unwrap_or(if throughput { 20 } else { 100 });
    let mut spec = BenchSpec::new(args.mode, sizes, count);
    spec.rate = args.rate;
    spec.warmup = args.warmup;
    spec.timeout = Duration::from_secs_f64(args.timeout);
    spec.params = args.params.clone();
    spec.baseline = match args.baseline.as_deref() {
        None => Baseline::ZeroCopy,
        Some("copy") => Baseline::Copy,
        Some(other) => anyhow::bail!("unknown baseline {other:?}; the only baseline is copy"),
    };
    if let Some(peer) = &args.peer {
        spec.role = Role::Sender {
            peer: peer.clone(),
            listen: args.listen.clone(),
        };
    }
    spec.receiver_exe = Some(std::env::current_exe().context("locating own executable")?);
    Ok(spec)
}

fn write_report(result: &BenchResult, args: &RunArgs) -> anyhow::Result<()> {
    match &args.out {
        Some(path) => {
            let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            emit_report(result, args.format, &mut f)?;
            f.flush()?;
            if args.format != ReportFormat::Table {
                emit_report(result, ReportFormat::Table, &mut io::stdout())?;
            }
        }
        None => emit_report(result, args.format, &mut io::stdout())?,
    }
    Ok(())
}

fn run(args: &RunArgs, throughput: bool) -> ExitCode {
    let spec = match spec_from(args, throughput) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("bench: {e:#}");
            return ExitCode::from(2);
        }
    };
    let outcome = if throughput {
        bench::run_throughput(&spec)
    } else {
        bench::run_latency(&spec)
    };
    match outcome {
        Ok(result) => match write_report(&result, args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("bench: {e:#}");
                ExitCode::from(2)
            }
        },
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn receive(args: &ReceiverArgs) -> ExitCode {
    let start = Instant::now();
    let limit = args.duration.map(Duration::from_secs_f64);
    let stop = || limit.is_some_and(|l| start.elapsed() >= l);
    match bench::run_receiver(&args.listen, &args.connect, &args.params, stop) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bench receiver: {e}");
            let code = match e {
                BenchError::Runtime(_) | BenchError::Params(_) | BenchError::Spec(_) => 2,
                other => other.exit_code(),
            };
            ExitCode::from(code as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match &cli.command {
        Command::Latency(args) => run(args, false),
        Command::Throughput(args) => run(args, true),
        Command::Receiver(args) => receive(args),
    }
}
