use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use seqlqg::cli::{self, ExperimentConfig};
use seqlqg::sim::{run_episode, Controller};
use seqlqg::CliError;

/// Monte-Carlo cost sweeps for sequence-based LQG control over lossy networks.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Results CSV; overrides `experiment.output`. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Write every gain and cost-to-go matrix, one per line.
    #[arg(long)]
    dump_gains: Option<PathBuf>,
    /// Write the first episode of each cell as a per-step CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// `trace.csv` becomes `trace_N2.csv` when several lengths are swept.
fn per_cell_path(path: &Path, tail: usize, multi: bool) -> PathBuf {
    if !multi {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let name = match path.extension() {
        Some(ext) => format!("{stem}_N{tail}.{}", ext.to_string_lossy()),
        None => format!("{stem}_N{tail}"),
    };
    path.with_file_name(name)
}

fn run(args: Args) -> Result<(), CliError> {
    let mut config: ExperimentConfig = cli::parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let mut gains_out = args.dump_gains.as_deref().map(create).transpose()?;
    let multi = config.sequence_lengths.len() > 1;

    let mut rows = Vec::new();
    for &tail in &config.sequence_lengths {
        let cell = cli::run_cell(&config, tail)?;
        if let (Some(out), Some(path)) = (gains_out.as_mut(), args.dump_gains.as_deref()) {
            cell.setup
                .schedule
                .write_csv(out, &format!("{tail},"))
                .map_err(|e| io_error(path, e))?;
        }
        if let Some(path) = args.trace.as_deref() {
            let path = per_cell_path(path, tail, multi);
            let trace = run_episode(&cell.setup, Controller::Gains(&cell.setup.schedule), config.seed)
                .map_err(CliError::from)?;
            let mut out = create(&path)?;
            trace
                .write_csv(&mut out)
                .and_then(|_| out.flush())
                .map_err(|e| io_error(&path, e))?;
        }
        rows.push(cell.row);
    }
    if let (Some(mut out), Some(path)) = (gains_out, args.dump_gains.as_deref()) {
        out.flush().map_err(|e| io_error(path, e))?;
    }

    match args.out.or(config.output) {
        Some(path) => {
            let mut out = create(&path)?;
            cli::write_rows(&mut out, &rows)
                .and_then(|_| out.flush())
                .map_err(|e| io_error(&path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            cli::write_rows(&mut out, &rows).map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
