use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use aq::harness::config::{RunConfig, Scenario};
use aq::harness::{run, REPORT_FILE};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aq", version, about = "Amplitude-quanta bubble simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile the Hamiltonian into reaction lists.
    Compile(Common),
    /// Evolve one particle and compare with the exact propagator.
    Evolve(Common),
    /// Evolve, then repeat the measurement over many seeds.
    Measure(Common),
    /// Couple several particles and evolve the chains.
    Multi(Common),
    /// Partitioned run with hung workers, swept over the hang fraction.
    Faulty(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (scenario, args) = match cli.command {
        Command::Compile(a) => (Scenario::Compile, a),
        Command::Evolve(a) => (Scenario::Single, a),
        Command::Measure(a) => (Scenario::Measure, a),
        Command::Multi(a) => (Scenario::Multi, a),
        Command::Faulty(a) => (Scenario::Faulty, a),
    };
    let result = RunConfig::load(&args.config).and_then(|mut cfg| {
        cfg.scenario = scenario;
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        run(&cfg, &args.out)
    });
    match result {
        Ok(report) => {
            // a closed stdout is not a run failure
            let mut out = std::io::stdout().lock();
            if let Some(f) = report.fidelity {
                let _ = writeln!(out, "fidelity {f:.6}");
            }
            if let Some(h) = &report.histogram {
                let _ = writeln!(out, "histogram {:?} chi2 {:.3} (critical {:.3}) {}", h.counts, h.chi_square, h.critical, if h.pass { "pass" } else { "fail" });
            }
            if let Some(d) = &report.degradation {
                let _ = writeln!(out, "slope {:.4} intercept {:.4} residual {:.4} c {:.4}", d.slope, d.intercept, d.max_residual, d.calibrated_c);
            }
            let _ = writeln!(out, "wrote {}", args.out.join(REPORT_FILE).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("aq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
