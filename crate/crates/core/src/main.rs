use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xblockade::config::{Preset, RunConfig};
use xblockade::harness::{run, Command};
use xblockade::Error;

#[derive(Parser)]
#[command(name = "xblockade", version, about = "Cavity-exciton transmission and photon correlations with disorder")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Disorder self-energy table.
    Selfenergy(Common),
    /// Linear transmission spectra.
    Spectrum(Common),
    /// Two-photon correlation g2(tau).
    G2(Common),
    /// Compare g2 and transmission against the truncated Fock-space model.
    OracleCheck(Common),
}

#[derive(Args)]
struct Common {
    /// INI configuration; layered on top of the preset when both are given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (defaults to [output] directory in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Built-in parameter set: fig2 or fig3.
    #[arg(long)]
    preset: Option<String>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Cli {
    fn split(&self) -> (Command, &Common) {
        match &self.command {
            Cmd::Selfenergy(a) => (Command::SelfEnergy, a),
            Cmd::Spectrum(a) => (Command::Spectrum, a),
            Cmd::G2(a) => (Command::G2, a),
            Cmd::OracleCheck(a) => (Command::OracleCheck, a),
        }
    }
}

/// Runs the command and returns the written files.
fn execute(cmd: Command, a: &Common) -> Result<Vec<PathBuf>, Error> {
    let preset = a.preset.as_deref().map(Preset::parse).transpose()?;
    let text = match &a.config {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let cfg = RunConfig::layered(preset, text.as_deref())?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set [output] directory".into()))?;
    if a.jobs == Some(0) {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let summary = run(cmd, &cfg, &out, a.jobs)?;
    Ok(summary.files.iter().map(|f| out.join(f)).collect())
}

fn error_doc(cmd: Command, e: &Error) -> serde_json::Value {
    serde_json::json!({
        "error": e.kind(),
        "command": cmd.name(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = cli.split();
    match execute(cmd, args) {
        Ok(files) => {
            // A closed stdout (e.g. piped into head) is not an error of the run.
            let mut stdout = std::io::stdout().lock();
            for f in &files {
                let _ = writeln!(stdout, "{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_doc(cmd, &e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
