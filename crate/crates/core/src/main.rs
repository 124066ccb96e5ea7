use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hermite_moments::cli::{self, parse_entries, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "hermite-moments", version, about = "Stabilized Hermite moment solver for 1D1V Vlasov-Poisson")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the advection or two-stream scenario.
    Run(RunArgs),
    /// Dump the Gram matrix as CSV.
    Gram {
        #[arg(long)]
        n: String,
        #[arg(long)]
        temp: String,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump a transport matrix as CSV.
    Op {
        /// d or b.
        #[arg(long)]
        kind: String,
        /// raw, proj, proj-cons or pen.
        #[arg(long)]
        method: String,
        #[arg(long)]
        n: String,
        #[arg(long)]
        temp: String,
        /// Field sign for d.
        #[arg(long)]
        e: Option<String>,
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// advection or two_stream.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    temp: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long = "t-final")]
    t_final: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    cells: Option<String>,
    #[arg(long)]
    length: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// auto, lu or gmres.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "snapshot-every")]
    snapshot_every: Option<String>,
    /// Any other configuration key, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

type Entries = Vec<(String, String, usize)>;

fn push(entries: &mut Entries, key: &str, value: Option<String>) {
    if let Some(v) = value {
        entries.push((key.to_string(), v, 0));
    }
}

fn run_config(args: RunArgs) -> Result<RunConfig, CliError> {
    let mut entries = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            parse_entries(&text)?
        }
        None => Vec::new(),
    };
    push(&mut entries, "scenario", args.scenario);
    push(&mut entries, "n", args.n);
    push(&mut entries, "temp", args.temp);
    push(&mut entries, "dt", args.dt);
    push(&mut entries, "t_final", args.t_final);
    push(&mut entries, "method", args.method);
    push(&mut entries, "eps", args.eps);
    push(&mut entries, "cells", args.cells);
    push(&mut entries, "length", args.length);
    push(&mut entries, "out", args.out);
    push(&mut entries, "solver", args.solver);
    push(&mut entries, "tol", args.tol);
    push(&mut entries, "snapshot_every", args.snapshot_every);
    for kv in args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Parse {
            line: 0,
            message: format!("--set expects KEY=VALUE, got `{kv}`"),
        })?;
        entries.push((k.trim().to_string(), v.trim().to_string(), 0));
    }
    RunConfig::from_entries(&entries)
}

fn emit(out: Option<PathBuf>, m: &nalgebra::DMatrix<f64>) -> Result<(), CliError> {
    match out {
        Some(path) => cli::write_matrix(&path, m),
        None => {
            print!("{}", cli::matrix_csv(m));
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let cfg = run_config(args)?;
            let out = cli::run(&cfg)?;
            let last = out.records.last().expect("initial record");
            log::info!(
                "{} finished: {} steps, l2_A {:e}, mass {:e}",
                cfg.scenario.as_str(),
                last.step,
                last.diagnostics.l2_a,
                last.diagnostics.mass
            );
            Ok(())
        }
        Command::Gram { n, temp, out } => {
            let entries = vec![
                ("scenario".into(), "gram_dump".into(), 0),
                ("n".into(), n, 0),
                ("temp".into(), temp, 0),
            ];
            let cfg = RunConfig::from_entries(&entries)?;
            emit(out, &cli::gram_matrix(&cfg)?)
        }
        Command::Op {
            kind,
            method,
            n,
            temp,
            e,
            eps,
            out,
        } => {
            let mut entries = vec![
                ("scenario".into(), "op_dump".into(), 0),
                ("kind".into(), kind, 0),
                ("method".into(), method, 0),
                ("n".into(), n, 0),
                ("temp".into(), temp, 0),
            ];
            push(&mut entries, "e", e);
            push(&mut entries, "eps", eps);
            let cfg = RunConfig::from_entries(&entries)?;
            emit(out, &cli::operator_matrix(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let level = match args.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match execute(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
