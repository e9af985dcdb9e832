use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ion_photon::experiment::{run_experiment, write_outputs, NoiseToggles, RunConfig, WindowSpec};
use ion_photon::Error;

#[derive(Parser)]
#[command(name = "ion-photon", version, about = "Ion-cavity qubit-to-photon transfer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable dark counts, initialization error and dephasing.
        #[arg(long)]
        no_noise: bool,
        /// Comma-separated windows: `start:end` in µs, or a bare end for a
        /// cumulative window starting at 0.
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<String>>,
    },
}

const EXIT_WARNING: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn parse_windows(items: &[String]) -> Result<(Vec<WindowSpec>, Vec<f64>), Error> {
    let num = |s: &str| -> Result<f64, Error> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad window value '{s}'")))
    };
    let mut windows = Vec::new();
    let mut ends = Vec::new();
    for item in items {
        match item.split_once(':') {
            Some((a, b)) => windows.push(WindowSpec {
                start_us: num(a)?,
                end_us: num(b)?,
            }),
            None => ends.push(num(item)?),
        }
    }
    Ok((windows, ends))
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::Scheme(_) | Error::InvalidParameter(_) | Error::Resonance | Error::Json(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_NUMERICAL,
    }
}

fn run(
    config: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    no_noise: bool,
    windows: Option<Vec<String>>,
) -> Result<bool, Error> {
    let mut cfg = RunConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if no_noise {
        cfg.noise = NoiseToggles::all(false);
    }
    if let Some(items) = windows {
        let (w, e) = parse_windows(&items)?;
        cfg.windows = w;
        cfg.sweep_ends_us = e;
    }
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    write_outputs(&report, &out).map_err(|e| e.in_stage("output"))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for w in &report.windows {
        let fid = w
            .process_fidelity_model
            .map(|f| format!("{f:.4}"))
            .unwrap_or_else(|| "-".into());
        let sampled = w
            .process_fidelity
            .as_ref()
            .map(|e| format!("{:.4} ± {:.4}", e.value, e.sd))
            .unwrap_or_else(|| "-".into());
        println!(
            "[{:.2}, {:.2}] µs  fidelity model {fid}  sampled {sampled}  eff detected {:.3e}  internal {:.4}",
            w.start_us, w.end_us, w.eff_detected, w.eff_internal
        );
    }
    Ok(report.warnings.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            no_noise,
            windows,
        } => match run(config, out, seed, no_noise, windows) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(EXIT_WARNING),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e))
            }
        },
    }
}
