use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gibbsquad::config::preset;
use gibbsquad::{experiments, Error, Experiment, ExperimentConfig};

/// Monte Carlo quadrature with quenched Gibbs measures: experiment harness.
#[derive(Debug, Parser)]
#[command(name = "gibbsquad", version)]
struct Cli {
    /// One of: sample, mmd-decay, variance, potential-convergence, bayes-classify.
    experiment: String,

    /// Config file (`key = value` lines in [run], [target], [kernel], [gibbs], [background]).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in config, e.g. `mmd-decay-desk`.
    #[arg(long)]
    preset: Option<String>,

    /// Restore full experiment sizes (replicates, chain lengths).
    #[arg(long)]
    full_scale: bool,

    /// Base seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let experiment: Experiment = cli.experiment.parse()?;
    let (text, base_dir) = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(PathBuf::from).unwrap_or_default();
            (text, base)
        }
        (None, Some(name)) => (preset(name)?.to_string(), PathBuf::from(".")),
        (None, None) => return Err(Error::Parse("either --config or --preset is required".into())),
    };
    let mut cfg = ExperimentConfig::parse(&text)?;
    if cfg.experiment != experiment {
        return Err(Error::Parse(format!(
            "config describes `{}` but `{experiment}` was requested",
            cfg.experiment
        )));
    }
    cfg.base_dir = base_dir;
    if cli.full_scale {
        cfg.full_scale();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("gibbsquad: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        pool = pool.num_threads(k);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("gibbsquad: thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out_dir = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()));
    log::info!("running {} (seed {}) into {}", cfg.experiment, cfg.seed, out_dir.display());
    let result = pool.install(|| experiments::run(&cfg)).and_then(|out| {
        out.write(&cfg, &out_dir)?;
        Ok(out)
    });
    match result {
        Ok(out) => {
            for a in out.report.aggregates() {
                if matches!(a.stat.as_str(), "quantile_90" | "median") || a.metric == "coverage" && a.stat.starts_with("delta") {
                    log::info!("{} {} n={} {} = {:.6e}", a.metric, a.method, a.n, a.stat, a.value);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gibbsquad: {}: {e}", cfg.experiment);
            if e.is_config_error() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_NUMERICAL)
            }
        }
    }
}
