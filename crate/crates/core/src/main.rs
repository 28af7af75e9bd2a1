use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meltsim::harness::{self, Experiment, Scenario};
use meltsim::HarnessError;

/// Simulated Meltdown: leak kernel memory through a cache side channel on a toy out-of-order CPU.
#[derive(Parser)]
#[command(name = "meltsim", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scenario file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Raw image to place in physical memory, as `file@paddr`. Repeatable.
    #[arg(long, global = true, value_name = "FILE@PADDR")]
    load: Vec<String>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Dump a range of kernel memory.
    Dump,
    /// Run the trap-then-access toy and print probe latencies.
    Toy,
    /// Locate the randomized direct-physical map.
    KaslrSearch,
    /// Same dump with and without each countermeasure.
    Matrix,
    /// Cycles per byte with exception handling vs. suppression.
    Bench,
}

impl Verb {
    fn experiment(self) -> Experiment {
        match self {
            Verb::Dump => Experiment::Dump,
            Verb::Toy => Experiment::Toy,
            Verb::KaslrSearch => Experiment::KaslrSearch,
            Verb::Matrix => Experiment::Matrix,
            Verb::Bench => Experiment::Bench,
        }
    }
}

fn scenario(cli: &Cli) -> Result<Scenario, HarnessError> {
    let mut sc = match &cli.config {
        Some(p) => Scenario::from_file(p)?,
        None => Scenario::default(),
    };
    sc.experiment = cli.verb.experiment();
    if let Some(s) = cli.seed {
        sc.set_seed(s);
    }
    for spec in &cli.load {
        sc.add_load(spec, None)?;
    }
    if let Some(out) = &cli.out {
        sc.report = Some(out.clone());
    }
    Ok(sc)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = scenario(&cli).and_then(|sc| {
        let report = harness::run(&sc)?;
        harness::write_outputs(&sc, &report)?;
        if sc.report.is_none() {
            let mut out = std::io::stdout().lock();
            match out.write_all(report.to_string().as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(HarnessError::io("stdout", e)),
                _ => {}
            }
        }
        Ok(report)
    });
    match result {
        Ok(r) if r.passed() => ExitCode::SUCCESS,
        Ok(r) => {
            for f in &r.failures {
                eprintln!("meltsim: assertion failed: {f}");
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("meltsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
