use clap::{Args, Parser, Subcommand};
use mdc_track::config::RunConfig;
use mdc_track::pipeline::{self, manifest_path, PipelineError};
use mdc_track::sim::Category;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Drift-chamber tracking benchmark: simulate events, reconstruct tracks
/// and score them against truth.
///
/// Exit status: 0 success, 1 I/O error, 2 usage or configuration error,
/// 3 malformed input file, 4 reco/dataset event mismatch, 5 inconsistent
/// reco hit assignment.
#[derive(Parser, Debug)]
#[command(name = "mdc-track", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate events and write a hit-level CSV plus manifest.
    Generate {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// single, conventional-two or close-by-two.
        #[arg(long)]
        category: Option<Category>,
        #[arg(short = 'n', long)]
        events: Option<u64>,
        #[arg(long)]
        noise_rate: Option<f64>,
        /// Drift resolution, cm.
        #[arg(long)]
        sigma_drift: Option<f64>,
    },
    /// Run the finder and fitter over a dataset.
    Reconstruct {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Stop after the finder.
        #[arg(long)]
        no_fit: bool,
        #[command(flatten)]
        read: ReadArgs,
    },
    /// Score a reco file against its dataset.
    Evaluate {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        reco: PathBuf,
        /// Directory receiving `<stage>.txt` and `<stage>.kv`.
        #[arg(short, long)]
        output_dir: PathBuf,
        #[command(flatten)]
        read: ReadArgs,
        #[command(flatten)]
        bins: BinArgs,
    },
    /// Merge evaluation `.kv` files into one CSV table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ReadArgs {
    /// Reject datasets with any validation finding.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct BinArgs {
    /// Comma-separated pT bin edges, GeV/c.
    #[arg(long, value_delimiter = ',')]
    bins_pt: Option<Vec<f64>>,
    /// Comma-separated cos(theta) bin edges.
    #[arg(long, value_delimiter = ',')]
    bins_cos: Option<Vec<f64>>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, PipelineError> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

/// Writes to standard output; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<(), PipelineError> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(PipelineError::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Generate {
            output,
            seed,
            category,
            events,
            noise_rate,
            sigma_drift,
        } => {
            let g = &mut cfg.generate;
            cfg.seed = seed.or(cfg.seed);
            g.category = category.unwrap_or(g.category);
            g.events = events.unwrap_or(g.events);
            g.noise_rate = noise_rate.unwrap_or(g.noise_rate);
            g.sigma_drift = sigma_drift.unwrap_or(g.sigma_drift);
            cfg.validate()?;
            let m = pipeline::generate(&cfg, &output)?;
            eprintln!(
                "wrote {} hits from {} of {} events to {} (manifest {})",
                m.hits,
                m.events_written,
                m.events,
                output.display(),
                manifest_path(&output).display()
            );
        }
        Command::Reconstruct {
            input,
            output,
            no_fit,
            read,
        } => {
            let rows = pipeline::reconstruct(&cfg, &input, &output, !no_fit, read.strict)?;
            eprintln!("wrote {rows} track rows to {}", output.display());
        }
        Command::Evaluate {
            input,
            reco,
            output_dir,
            read,
            bins,
        } => {
            cfg.metrics.bins_pt = bins.bins_pt.unwrap_or(cfg.metrics.bins_pt);
            cfg.metrics.bins_cos = bins.bins_cos.unwrap_or(cfg.metrics.bins_cos);
            cfg.validate()?;
            let eval = pipeline::evaluate(&cfg, &input, &reco, &output_dir, read.strict)?;
            for s in eval.stages() {
                emit(&format!("{}\n", s.table()))?;
            }
        }
        Command::Report { inputs, output } => {
            let text = pipeline::report(&inputs)?;
            match output {
                Some(p) => mdc_track::dataset::write_text(&p, &text)?,
                None => emit(&text)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
