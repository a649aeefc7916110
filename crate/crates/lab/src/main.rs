use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stochom_lab::{parse_config, run, ExperimentConfig, ExperimentKind, Overrides, RunReport, Status};

#[derive(Parser)]
#[command(name = "stochom", version, about = "Stochastic homogenization lab for monotone visco-plasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides the configuration).
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration.
    Run { config: PathBuf },
    /// Run an eta-sweep configuration.
    Sweep { config: PathBuf },
    /// Run the acceptance suite.
    Accept {
        /// Criteria to run, comma separated; all by default.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(Status::ConfigError.exit_code() as u8);
        }
    }
    let cfg = match &cli.command {
        Command::Run { config } => load(config),
        Command::Sweep { config } => load(config).and_then(|c| {
            if c.kind == ExperimentKind::EtaSweep {
                Ok(c)
            } else {
                Err(format!("{}: sweep needs kind = \"eta-sweep\", found \"{}\"", config.display(), c.kind.as_str()))
            }
        }),
        Command::Accept { criteria } => {
            let text = format!("kind = \"acceptance-suite\"\nname = \"acceptance\"\ncriteria = {criteria:?}\n");
            parse_config(&text).map_err(|e| e.to_string())
        }
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(Status::ConfigError.exit_code() as u8);
        }
    };
    if let Err(e) = (Overrides { seeds: cli.seeds.clone() }).apply(&mut cfg) {
        eprintln!("configuration error: {e}");
        return ExitCode::from(Status::ConfigError.exit_code() as u8);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let report: RunReport = run(&cfg);
    for v in &report.verdicts {
        println!("{} {} ({}: {:.3e} vs {:.3e})", if v.pass { "PASS" } else { "FAIL" }, v.name, v.operation, v.value, v.tolerance);
    }
    for r in report.runs.iter().filter(|r| r.error.is_some()) {
        eprintln!("{}: {}", r.name, r.error.as_deref().unwrap_or_default());
    }
    if let Err(e) = report.emit(&out) {
        eprintln!("cannot write {}: {e}", out.display());
        return ExitCode::from(Status::NumericalFailure.exit_code() as u8);
    }
    println!("{} -> {}", report.status.exit_code(), out.display());
    ExitCode::from(report.exit_code() as u8)
}
