use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use histmatch::pipeline::{format_report, Pipeline, PipelineConfig, TEMPLATE};
use histmatch::Error;

/// Calibrates the built-in epidemic simulator by history matching and ABC.
#[derive(Debug, Parser)]
#[command(name = "histmatch", version)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "histmatch.toml")]
    config: PathBuf,

    /// Overrides the global seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Run directory; overrides `paths.run_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the default configuration to the `--config` path.
    Init {
        /// Replace an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Simulate the designated truth and write observed.csv.
    Truth,
    /// Run one history-matching wave.
    Wave { n: usize },
    /// Re-filter a wave and export its NROY set, optical depths and volume.
    Nroy {
        /// Wave to export; defaults to the last completed one.
        #[arg(long)]
        wave: Option<usize>,
    },
    /// Fit priors on the final NROY set and sample the posterior.
    Abc,
    /// Posterior predictive runs and quantile bands.
    Ppc,
    /// Paired status-quo versus intervention runs.
    Counterfactual,
    /// Summary table of the completed waves.
    Report,
    /// Every stage in order, resuming from checkpoints.
    Run,
}

enum Failure {
    Config(String),
    Pipeline(Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Pipeline(Error::Config(_)) => 2,
            Failure::Pipeline(Error::PipelineOrder { .. }) => 3,
            Failure::Pipeline(e) if e.is_numerical() => 4,
            Failure::Pipeline(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "configuration error: {msg}"),
            Failure::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::load(&cli.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.run_dir = out.clone();
    }
    Ok(cfg)
}

fn init(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(Failure::Config(format!(
            "{} already exists (use --force to replace it)",
            path.display()
        )));
    }
    std::fs::write(path, TEMPLATE).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Command::Init { force } = cli.command {
        return init(&cli.config, force);
    }
    let pipeline = Pipeline::new(load_config(cli)?)?;
    match &cli.command {
        Command::Init { .. } => unreachable!(),
        Command::Truth => {
            let out = pipeline.truth()?;
            let total: u64 = out.new_diagnoses.iter().map(|&v| v as u64).sum();
            println!(
                "observed.csv: {} days, {total} diagnoses",
                out.horizon()
            );
        }
        Command::Wave { n } => {
            let s = pipeline.wave(*n)?;
            println!(
                "wave {}: {} runs, {} training points, {} NROY points ({:.2}% of the grid), {} proposed",
                s.wave,
                s.runs,
                s.training_points,
                s.nroy_points,
                100.0 * s.volume_fraction,
                s.proposal_points
            );
        }
        Command::Nroy { wave } => {
            let k = match wave {
                Some(k) => *k,
                None => pipeline.waves_completed()?.max(1),
            };
            let e = pipeline.nroy(k)?;
            println!(
                "wave {}: {} of {} grid points ({:.4}%)",
                e.wave, e.nroy_points, e.grid_points, e.volume_percent
            );
            for f in &e.files {
                println!("  {}", pipeline.run_dir().join(f).display());
            }
        }
        Command::Abc => {
            let r = pipeline.abc()?;
            println!("epsilon {:.4}, {} draws", r.epsilon, r.posterior.draws);
            for m in &r.posterior.marginals {
                println!(
                    "  {:<8} mean {:.4}  90% [{:.4}, {:.4}]",
                    m.name, m.mean, m.q05, m.q95
                );
            }
        }
        Command::Ppc => {
            let r = pipeline.ppc()?;
            println!(
                "{} draws on seeds {}..={}; 90% band coverage: diagnoses {:.2}, deaths {:.2}",
                r.draws, r.first_seed, r.last_seed, r.coverage_new_diagnoses, r.coverage_new_deaths
            );
        }
        Command::Counterfactual => {
            let r = pipeline.counterfactual()?;
            println!(
                "{} pairs over days {}..={}: status quo {:.1}, intervention {:.1}, reduction {:.1} (p = {:.3e})",
                r.pairs, r.window[0], r.window[1], r.mean_status_quo, r.mean_intervention, r.mean_reduction, r.p_value
            );
        }
        Command::Report => print!("{}", format_report(&pipeline.report()?)),
        Command::Run => print!("{}", format_report(&pipeline.run_all()?)),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
