use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regiongnn::run::{run, Command, Invocation};

#[derive(Parser)]
#[command(
    name = "regiongnn",
    version,
    about = "Semi-supervised graph regression of regional sector output"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON configuration file (flat dotted keys or nested objects).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for all artifacts.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Override one configuration key, e.g. `--set model.layers=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic region with planted structure.
    Synth,
    /// Build a graph snapshot from raw CSV tables.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train on a snapshot and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint, dump encodings and run the ridge probe.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One training run per lambda value.
    Sweep {
        #[arg(long)]
        data: PathBuf,
    },
    /// Layer-wise Shapley trace for one district and sector.
    Explain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn invocation(cli: Cli) -> Result<Invocation, String> {
    let mut overrides = Vec::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    for (key, v) in [
        ("lambda", cli.lambda),
        ("seed", cli.seed),
        ("train.epochs", cli.epochs),
    ] {
        if let Some(v) = v {
            overrides.push((key.to_string(), v));
        }
    }
    let command = match cli.command {
        Cmd::Synth => Command::Synth,
        Cmd::Ingest { manifest } => Command::Ingest { manifest },
        Cmd::Train { data } => Command::Train { data },
        Cmd::Eval { data, checkpoint } => Command::Eval { data, checkpoint },
        Cmd::Sweep { data } => Command::Sweep { data },
        Cmd::Explain { data, checkpoint } => Command::Explain { data, checkpoint },
    };
    Ok(Invocation {
        command,
        config: cli.config,
        overrides,
        out: cli.out,
    })
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let inv = match invocation(Cli::parse()) {
        Ok(inv) => inv,
        Err(e) => {
            eprintln!("error[usage]: {}", one_line(&e));
            return ExitCode::from(2);
        }
    };
    match run(&inv) {
        Ok(files) => {
            println!(
                "ok {} {} artifacts in {}",
                inv.command.name(),
                files.len(),
                inv.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
