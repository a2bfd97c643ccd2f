use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qmitdd_core::experiments::{self, ExperimentConfig, ExperimentKind, Inputs};
use qmitdd_core::Error;

/// Run a quantum distance / data-driven solver study.
#[derive(Parser, Debug)]
#[command(name = "qmitdd", version)]
struct Args {
    /// dist-bench, zne-bench, nm-sweep, fold-sweep, truss, dbsize-sweep or sampling-check
    experiment: String,
    /// key = value configuration file
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long)]
    parallel: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Calibration(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = (|| {
        let kind: ExperimentKind = args.experiment.parse()?;
        let mut config = ExperimentConfig::load(Some(kind), &args.config)?;
        if let Some(s) = args.seed {
            config.seed = s;
        }
        if let Some(p) = args.parallel {
            config.parallel = p;
        }
        if let Some(o) = &args.out {
            config.out = o.clone();
        }
        let inputs = Inputs::resolve(config).map_err(|e| match e {
            Error::Io(io) => Error::Config(io.to_string()),
            e => e,
        })?;
        let out = experiments::run(&inputs)?;
        experiments::write_outputs(&inputs.config.out, &inputs, &out)?;
        Ok::<_, Error>(inputs)
    })();
    match result {
        Ok(inputs) => {
            println!(
                "{} done, config {} -> {}",
                inputs.config.kind.name(),
                &inputs.hash[..12],
                inputs.config.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qmitdd: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
