use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use azsl_core::cli::{self, ExperimentConfig, SweepParam};
use azsl_core::Error;

#[derive(Parser)]
#[command(
    name = "azsl",
    version,
    about = "Data-free zero-shot learning with a guarded teacher"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate; writes artifacts and reports to the output directory.
    Run { config: PathBuf },
    /// Train the teacher and serve feedback over TCP.
    Serve { config: PathBuf },
    /// Summarize a transcript and print the privacy verdict.
    Audit { transcript: PathBuf },
    /// Repeat `run` over values of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Write a synthetic dataset (.csv or .azb) from a spec file.
    GenData { spec: PathBuf, out: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    cli::apply_env_seed(&mut cfg)?;
    Ok(cfg)
}

fn execute(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let out = cli::cmd_run(&cfg)?;
            println!("czsl u: {:.2}", out.czsl.u);
            println!(
                "gzsl u: {:.2} s: {:.2} H: {:.2}",
                out.gzsl.u,
                out.gzsl.s.unwrap_or(0.0),
                out.gzsl.h.unwrap_or(0.0)
            );
            println!("artifacts: {}", cfg.output.display());
        }
        Command::Serve { config } => {
            let cfg = load(&config)?;
            cli::cmd_serve(&cfg)?;
        }
        Command::Audit { transcript } => {
            let summary = cli::cmd_audit(&transcript)?;
            print!("{}", summary.to_text());
        }
        Command::Sweep { config, param, values } => {
            let cfg = load(&config)?;
            let (rows, path) = cli::cmd_sweep(&cfg, param, &values)?;
            print!("{}", cli::sweep_csv(param, &rows));
            eprintln!("wrote {}", path.display());
        }
        Command::GenData { spec, out } => {
            let ds = cli::cmd_gen_data(&spec, &out).with_context(|| format!("generating {}", out.display()))?;
            println!("{} rows, {} classes -> {}", ds.len(), ds.class_count(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { cli::EXIT_USAGE } else { cli::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("azsl: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<Error>())
                .map_or(cli::EXIT_RUNTIME, cli::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
