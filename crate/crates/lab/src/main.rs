use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use natural_lab::config::RunConfig;
use natural_lab::export::Sink;
use natural_lab::report::SuiteReport;
use natural_lab::{mc, polarize, regularity_suite, thread_pool, tree_suite, LabError, THREADS_ENV};

/// Exit status for command-line usage errors.
const USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "natural-lab", version, about = "Simulation and verification laboratory for default-time families")]
#[command(after_help = "Worker threads: set NATURAL_LAB_THREADS (0 or unset uses every core).\n\
Exit status: 0 all checks pass, 1 a check failed, 2 invalid configuration, 3 internal error, 64 usage error.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `outputs.directory`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides `mc.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of simulated paths for the chosen command.
    #[arg(long, global = true)]
    paths: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Exact checks on the scenario tree.
    VerifyTree,
    /// Statistical and pathwise checks on simulated paths.
    VerifyMc,
    /// Export `M^u_t` on simulated paths.
    BuildFamily,
    /// Sample the random time on simulated paths.
    SampleTau,
    /// Jump identity, derivative quotients and u-grid refinement.
    Regularity,
    /// Long-horizon polarization experiment.
    Polarize,
}

fn effective_config(cli: &Cli) -> Result<RunConfig, LabError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.out {
        cfg.outputs.directory = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if let Some(paths) = cli.paths {
        match cli.command {
            Command::Polarize => cfg.polarization.paths = paths,
            Command::Regularity => cfg.regularity.identity_paths = paths,
            _ => cfg.mc.paths = paths,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<SuiteReport, LabError> {
    let cfg = effective_config(cli)?;
    let pool = thread_pool()?;
    let sink = Sink::new(&cfg.outputs)?;
    let report = pool.install(|| -> Result<SuiteReport, LabError> {
        Ok(match cli.command {
            Command::VerifyTree => {
                let out = tree_suite::verify_tree(&cfg)?;
                sink.json("tree.json", &out.tree)?;
                out.report
            }
            Command::VerifyMc => {
                let out = mc::verify_mc(&cfg)?;
                sink.csv("enlargement.csv", &out.enlargement)?;
                sink.csv("functional_panel.csv", &out.panel)?;
                out.report
            }
            Command::BuildFamily => {
                let out = mc::build_families(&cfg)?;
                sink.csv("family.csv", &out.rows)?;
                out.report
            }
            Command::SampleTau => {
                let out = mc::sample_taus(&cfg)?;
                sink.csv("tau_samples.csv", &out.samples)?;
                out.report
            }
            Command::Regularity => {
                let out = regularity_suite::regularity(&cfg)?;
                sink.csv("regularity_quotients.csv", &out.quotients)?;
                sink.csv("regularity_flow_fd.csv", &out.fd)?;
                sink.csv("regularity_cells.csv", &out.cells)?;
                out.report
            }
            Command::Polarize => {
                let out = polarize::polarize(&cfg)?;
                sink.csv("polarization_fractions.csv", &out.fractions)?;
                sink.csv("polarization_histogram.csv", &out.histogram)?;
                out.report
            }
        })
    })?;
    report.write_json(&sink.path(&format!("{}.json", report.suite)))?;
    Ok(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(report) => {
            println!("{report}");
            ExitCode::from(if report.pass { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("natural-lab: {e}");
            if matches!(e, LabError::Threads(_)) {
                eprintln!("natural-lab: check {THREADS_ENV}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
