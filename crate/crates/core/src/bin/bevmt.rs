use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bevmt::mlm::Method;
use bevmt::pipeline::{run_all, run_stage, OutputDir, RunConfig};

#[derive(Parser)]
#[command(name = "bevmt", version, about = "Threshold effects of built environment on travel, end to end")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic waves of the config as raw CSVs with ground truth.
    Synth(Common),
    /// Load, derive, clean and screen every wave.
    Prepare(Common),
    /// Split, grid search, fit and evaluate the ensembles.
    Ml(Common),
    /// Partial dependence curves and plots.
    Pdp(Common),
    /// Knot detection and cross-wave consolidation.
    Knots {
        #[command(flatten)]
        common: Common,
        /// Most knots per variable and wave
        #[arg(long)]
        max_knots: Option<usize>,
        /// Scales the default knot penalty
        #[arg(long)]
        penalty_multiplier: Option<f64>,
    },
    /// Stepwise mixed models.
    Mlm {
        #[command(flatten)]
        common: Common,
        /// Drop threshold for the stepwise p-values
        #[arg(long)]
        alpha: Option<f64>,
        /// ml or reml
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
    },
    /// Elasticities of the final models.
    Elasticity(Common),
    /// Every stage in order, plus the run manifest.
    RunAll(Common),
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "ml" => Ok(Method::Ml),
        "reml" => Ok(Method::Reml),
        _ => Err(format!("unknown method `{s}` (ml or reml)")),
    }
}

fn report(e: &bevmt::Error) {
    // every variant's message already embeds its source
    eprintln!("error: {e}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, common) = match &cli.command {
        Command::Synth(c) => ("synth", c),
        Command::Prepare(c) => ("prepare", c),
        Command::Ml(c) => ("ml", c),
        Command::Pdp(c) => ("pdp", c),
        Command::Knots { common, .. } => ("knots", common),
        Command::Mlm { common, .. } => ("mlm", common),
        Command::Elasticity(c) => ("elasticity", c),
        Command::RunAll(c) => ("run-all", c),
    };
    env_logger::Builder::new()
        .filter_level(if common.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();

    let mut cfg = match RunConfig::from_file(&common.config) {
        Ok(c) => c,
        Err(e) => {
            report(&e);
            return ExitCode::FAILURE;
        }
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Knots {
            max_knots,
            penalty_multiplier,
            ..
        } => {
            if let Some(m) = max_knots {
                cfg.interpret.max_knots = *m;
            }
            if let Some(p) = penalty_multiplier {
                cfg.interpret.penalty_multiplier = *p;
            }
        }
        Command::Mlm { alpha, method, .. } => {
            if let Some(a) = alpha {
                cfg.mlm.alpha = *a;
            }
            if let Some(m) = method {
                cfg.mlm.method = *m;
            }
        }
        _ => {}
    }
    if let Err(e) = cfg.validate() {
        report(&e);
        return ExitCode::FAILURE;
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = common.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    let jobs = pool.current_num_threads();
    let result = pool.install(|| {
        if stage == "run-all" {
            run_all(&cfg, &common.out, &common.config.display().to_string(), jobs).map(|_| ())
        } else {
            std::fs::create_dir_all(&common.out)
                .map_err(|e| bevmt::Error::Io {
                    path: common.out.clone(),
                    source: e,
                })
                .and_then(|_| run_stage(stage, &cfg, &OutputDir::new(&common.out)))
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
