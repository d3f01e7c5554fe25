//! Command-line front end: runs scenarios, re-analyzes count files, and
//! validates configs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polbin_core::error::Error;
use polbin_core::runner::{
    read_counts_csv, run_source_characterization, run_sweep, split_rounds, SweepKind,
};
use polbin_core::scenario::Scenario;
use polbin_core::tomography::{chsh_s, reconstruct};

#[derive(Parser)]
#[command(name = "polbin", version, about = "Polarization/time-bin interconversion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file.
    scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the scenario's, then ./out/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the Monte Carlo trial count.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct CountsArgs {
    /// Counts CSV produced by an earlier run.
    counts: PathBuf,
    /// Use raw counts instead of subtracting accidentals.
    #[arg(long)]
    raw: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Characterize the pair source alone: tomography, CHSH, fringes.
    SourceChar(RunArgs),
    /// Run the strain sweep through the full conversion chain.
    SweepInterconvert(RunArgs),
    /// Run the strain sweep with polarization sent straight down the fiber.
    SweepBaseline(RunArgs),
    /// Reconstruct per-round states and fidelities from a counts CSV.
    TomoFromCounts(CountsArgs),
    /// Compute per-round CHSH S from a counts CSV.
    ChshFromCounts(CountsArgs),
    /// Parse and validate a scenario file without running it.
    Validate {
        /// Scenario TOML file.
        scenario: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { .. } => 4,
        _ => 3,
    }
}

fn load_scenario(args: &RunArgs) -> Result<(Scenario, String), Error> {
    let (mut scn, sha) = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scn.seed = seed;
    }
    if let Some(trials) = args.trials {
        scn.plan.mc_trials = trials;
        scn.validate()?;
    }
    Ok((scn, sha))
}

fn resolve_out_dir(args: &RunArgs, scn: &Scenario) -> PathBuf {
    args.out
        .clone()
        .or_else(|| scn.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&scn.name))
}

fn run_sweep_cmd(args: &RunArgs, kind: SweepKind) -> Result<(), Error> {
    let (scn, sha) = load_scenario(args)?;
    let out = resolve_out_dir(args, &scn);
    let summary = run_sweep(&scn, kind, &sha, &out)?;
    println!(
        "{}: {} rounds, fidelity {:.4} +/- {:.4} (range {:.4}..{:.4}), rate max/min {:.2}",
        summary.kind,
        summary.n_rounds,
        summary.mean_fidelity,
        summary.fidelity_std,
        summary.fidelity_min,
        summary.fidelity_max,
        summary.rate_max_over_min,
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run_source_cmd(args: &RunArgs) -> Result<(), Error> {
    let (scn, sha) = load_scenario(args)?;
    let out = resolve_out_dir(args, &scn);
    let summary = run_source_characterization(&scn, &sha, &out)?;
    println!(
        "source: fidelity {:.4} +/- {:.4}, S {:.4} +/- {:.4} (raw {:.4})",
        summary.fidelity,
        summary.fidelity_std,
        summary.chsh_subtracted_mean,
        summary.chsh_subtracted_std,
        summary.chsh_raw_mean,
    );
    for fringe in &summary.fringes {
        println!(
            "fringe at signal hwp {:>5}: visibility {:.4}, R^2 {:.5}",
            fringe.signal_hwp_deg, fringe.visibility, fringe.r_squared
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn tomo_cmd(args: &CountsArgs) -> Result<(), Error> {
    let records = read_counts_csv(&args.counts)?;
    for (round, recs) in split_rounds(&records) {
        let tomo = reconstruct(&recs, !args.raw)?;
        let fidelity = tomo.calibrated_fidelity()?;
        println!(
            "round {round}: fidelity {:.4}, min eigenvalue {:+.2e}, counts {}",
            fidelity, tomo.physicality.min_eigenvalue, tomo.total_counts,
        );
    }
    Ok(())
}

fn chsh_cmd(args: &CountsArgs) -> Result<(), Error> {
    let records = read_counts_csv(&args.counts)?;
    for (round, recs) in split_rounds(&records) {
        let report = chsh_s(&recs, !args.raw)?;
        println!("round {round}: S = {:.4}", report.s_value);
    }
    Ok(())
}

fn validate_cmd(path: &Path) -> Result<(), Error> {
    let (scn, sha) = Scenario::load(path)?;
    println!("{} ok (sha256 {})", scn.name, sha);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SourceChar(args) => run_source_cmd(args),
        Command::SweepInterconvert(args) => run_sweep_cmd(args, SweepKind::Interconvert),
        Command::SweepBaseline(args) => run_sweep_cmd(args, SweepKind::Baseline),
        Command::TomoFromCounts(args) => tomo_cmd(args),
        Command::ChshFromCounts(args) => chsh_cmd(args),
        Command::Validate { scenario } => validate_cmd(scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
