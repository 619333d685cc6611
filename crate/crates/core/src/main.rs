use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use beable_csl::harness::config::{ExperimentConfig, Scenario};
use beable_csl::harness::output::{write_json, write_outputs, MomentsFile, SCHEMA_VERSION};
use beable_csl::harness::scenarios::run_experiment;
use beable_csl::harness::verify::{run_verify, VerifyReport, CRITERIA};
use beable_csl::Error;

#[derive(Parser)]
#[command(
    name = "beable-csl",
    version,
    about = "Beable trajectories under continuous spontaneous localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trajectories or walkers.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config and write its outputs.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the acceptance suite.
    Verify {
        #[command(flatten)]
        overrides: Overrides,
        /// Run only these criteria (1-8).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
    /// Run a config and print its moment table as JSON.
    Moments {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// List the built-in scenarios.
    Scenarios,
}

fn load(path: &Path, o: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(n) = o.trajectories {
        cfg.trajectories = n;
    }
    if let Some(d) = &o.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_numerical() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn verify(o: &Overrides, only: &[u8]) -> Result<bool, Error> {
    let seed = o.seed.unwrap_or(1);
    let report = if only.is_empty() {
        run_verify(seed)?
    } else {
        let mut criteria = Vec::new();
        for &id in only {
            let f = CRITERIA
                .get((id as usize).wrapping_sub(1))
                .ok_or_else(|| Error::Config(format!("no criterion {id}")))?;
            criteria.push(f(seed)?);
        }
        VerifyReport {
            schema_version: SCHEMA_VERSION,
            seed,
            passed: criteria.iter().all(|c| c.passed),
            criteria,
        }
    };
    for c in &report.criteria {
        println!(
            "{} criterion {}: {} ({:.1} s)",
            if c.passed { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            c.seconds
        );
        for k in &c.checks {
            println!(
                "    {} {} = {:.4e} (bound {:.1e})",
                if k.passed { "ok  " } else { "FAIL" },
                k.name,
                k.value,
                k.threshold
            );
        }
    }
    let dir = o.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("verify_report.json"), &report)?;
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scenarios => {
            for s in Scenario::ALL {
                println!("{:<28} {}", s.name(), s.summary());
                println!("{:<28} exercises: {}", "", s.equations());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, overrides } => load(&config, &overrides).and_then(|cfg| {
            let out = run_experiment(&cfg)?;
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
            let files = write_outputs(&out, &dir)?;
            println!("wrote {}", files.trajectories.display());
            println!("wrote {}", files.moments.display());
            println!("wrote {}", files.histograms.display());
            if let Some(s) = files.snapshot {
                println!("wrote {}", s.display());
            }
            Ok(ExitCode::SUCCESS)
        }),
        Command::Moments { config, overrides } => load(&config, &overrides).and_then(|cfg| {
            let out = run_experiment(&cfg)?;
            let text = serde_json::to_string_pretty(&MomentsFile::new(&out))
                .map_err(|e| Error::Io(e.to_string()))?;
            println!("{text}");
            Ok(ExitCode::SUCCESS)
        }),
        Command::Verify { overrides, only } => verify(&overrides, &only).map(|ok| {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }),
    };
    result.unwrap_or_else(|e| exit_for(&e))
}
