use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use septhermo::cli::{apply_overrides, compare_dirs, parse_config, run, schema_text, Overrides};
use septhermo::scenarios::ScenarioName;

#[derive(Parser)]
#[command(name = "septhermo", version, about = "Free vs product-state-constrained open quantum dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a TOML config.
    Run {
        config: PathBuf,
        /// Output directory (beats the environment override and the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "n-traj")]
        n_traj: Option<usize>,
        /// Use the full-scale trajectory count of the scenario.
        #[arg(long)]
        full: bool,
        /// Worker threads; defaults to the number of logical cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare the results tables of two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Compare column LEFT of A with column RIGHT of B instead of
        /// matching names; repeatable.
        #[arg(long = "pair", value_name = "LEFT:RIGHT")]
        pairs: Vec<String>,
        /// Exit with status 1 when any column fails.
        #[arg(long)]
        strict: bool,
    },
    /// Print the config schema.
    Schema,
    /// List scenarios with their parameters and run defaults.
    Scenarios,
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, n_traj, full, jobs } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(format!("{}: {e}", config.display())),
            };
            let cfg = match parse_config(&text) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let cfg = match apply_overrides(&cfg, &Overrides { out: out.clone(), seed, n_traj, full }) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
            match run(&cfg, jobs, out.as_deref()) {
                Ok((outcome, dir)) => {
                    println!(
                        "{}: {} rows in {:.2} s -> {}",
                        cfg.scenario.name,
                        outcome.table.times.len(),
                        outcome.wall_time,
                        dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Compare { a, b, pairs, strict } => {
            let mut parsed = Vec::new();
            for p in &pairs {
                match p.split_once(':') {
                    Some((l, r)) => parsed.push((l.to_string(), r.to_string())),
                    None => return fail(format!("--pair expects LEFT:RIGHT, got `{p}`")),
                }
            }
            match compare_dirs(&a, &b, &parsed) {
                Ok(report) => {
                    print!("{report}");
                    if strict && !report.all_passed() {
                        ExitCode::from(1)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Schema => {
            print!("{}", schema_text());
            ExitCode::SUCCESS
        }
        Command::Scenarios => {
            for name in ScenarioName::ALL {
                let d = name.run_defaults();
                println!("{name}: {}", name.description());
                println!(
                    "  dt = {}, t_end = {}, output_stride = {}, n_traj = {} (full {})",
                    d.dt, d.t_end, d.output_stride, d.n_traj, d.full_n_traj
                );
                for (key, value, desc) in name.parameters() {
                    println!("  {key:<12} = {value:<8} {desc}");
                }
            }
            ExitCode::SUCCESS
        }
    }
}
