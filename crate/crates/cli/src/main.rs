use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dtflat::verify::DEFAULT_SEED;
use dtflat_cli::commands::{self, InputError, NecessaryConditionArgs, Options, PlanArgs};
use dtflat_cli::report::RunReport;
use dtflat_cli::sysfile::{parse_numbers, SystemFile};

#[derive(Parser)]
#[command(name = "dtflat", version, about = "Flatness analysis of nonlinear discrete-time systems")]
struct Cli {
    /// Seed for every random sample, draw and restart.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Omit the timestamp so reports are byte-identical across runs.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Random samples per numeric check.
    #[arg(long, global = true, default_value_t = 100)]
    samples: usize,
    /// Time window `LO:HI`.
    #[arg(long, global = true, allow_hyphen_values = true, value_parser = parse_window)]
    window: Option<(i64, i64)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check that applies to the definitions in the file.
    Verify { file: PathBuf },
    /// Linearize along a trajectory, and the flat pair with it.
    Linearize {
        file: PathBuf,
        /// File with `trajectory.*` keys, replacing the system file's.
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Write `k, A[i][s], B[i][j]` here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Reachability of the linearization, a necessary condition for flatness.
    NecessaryCondition {
        file: PathBuf,
        #[arg(long, conflicts_with = "simulate")]
        traj: Option<PathBuf>,
        /// Use this many steps of seeded random inputs instead.
        #[arg(long)]
        simulate: Option<usize>,
        /// Longest window tested; defaults to 2n.
        #[arg(long)]
        horizon: Option<usize>,
        /// Write rank and singular values of every tested window here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the reachability matrix of the witness window here.
        #[arg(long)]
        matrix_csv: Option<PathBuf>,
    },
    /// Plan a transition between two states through the flat output.
    Plan {
        file: PathBuf,
        #[arg(long, allow_hyphen_values = true, value_parser = parse_state)]
        from: State,
        #[arg(long, allow_hyphen_values = true, value_parser = parse_state)]
        to: State,
        #[arg(long, allow_hyphen_values = true)]
        ki: i64,
        #[arg(long, allow_hyphen_values = true)]
        kf: i64,
        /// Write `k, y*, x*, u*` here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_window(s: &str) -> Result<(i64, i64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: i64 = lo.trim().parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
    let hi: i64 = hi.trim().parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
    if lo > hi {
        return Err(format!("empty window {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// Comma-separated state components.
#[derive(Clone, Debug)]
struct State(Vec<f64>);

fn parse_state(s: &str) -> Result<State, String> {
    parse_numbers(s).map(State)
}

fn run(cli: &Cli, opts: &Options) -> Result<RunReport, InputError> {
    match &cli.command {
        Command::Verify { file } => Ok(commands::verify(&SystemFile::load(file)?, opts)),
        Command::Linearize { file, traj, csv } => {
            commands::linearize(&SystemFile::load(file)?, traj.as_ref(), csv.as_deref(), opts)
        }
        Command::NecessaryCondition { file, traj, simulate, horizon, csv, matrix_csv } => {
            let args = NecessaryConditionArgs {
                traj: traj.as_ref(),
                simulate: *simulate,
                horizon: *horizon,
                csv: csv.as_deref(),
                matrix_csv: matrix_csv.as_deref(),
            };
            commands::necessary_condition(&SystemFile::load(file)?, &args, opts)
        }
        Command::Plan { file, from, to, ki, kf, csv } => {
            let args = PlanArgs { from: from.0.clone(), to: to.0.clone(), k_i: *ki, k_f: *kf, csv: csv.as_deref() };
            commands::plan_transition(&SystemFile::load(file)?, &args, opts)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = Options {
        command: std::iter::once("dtflat".to_string()).chain(std::env::args().skip(1)).collect::<Vec<_>>().join(" "),
        seed: cli.seed,
        deterministic: cli.deterministic,
        samples: cli.samples,
        window: cli.window,
    };
    match run(&cli, &opts) {
        Ok(report) => {
            print!("{report}");
            ExitCode::from(report.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
