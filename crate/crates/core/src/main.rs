use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nikodym_lab::harness::{run, Experiment, ExperimentConfig};
use nikodym_lab::LabError;

/// Numerical experiments on curved Nikodym maximal functions.
#[derive(Debug, Parser)]
#[command(name = "nikodym-lab", version)]
struct Cli {
    /// verify-geodesics | curvature | nikodym-scaling | bush | dimension | oscillatory | thresholds | all
    experiment: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    family: Option<String>,
    /// exp_flat or monomial
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    k: Option<u32>,
    /// Slab variant for nikodym-scaling (sec2_flat, sec2_monomial, sec3_odd, sec4_even).
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long = "delta-range", value_name = "JMIN..JMAX")]
    delta_range: Option<String>,
    #[arg(long = "lambda-range", value_name = "JMIN..JMAX")]
    lambda_range: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "out")]
    out: Option<PathBuf>,
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "no-plots")]
    no_plots: bool,
}

fn build_config(cli: Cli) -> Result<ExperimentConfig, LabError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = cli.experiment.parse::<Experiment>()?;
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = cli.$field { cfg.$field = v; } )* };
    }
    set!(n, family, profile, k, variant, p, q, delta_range, lambda_range, seed, samples);
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if cli.no_plots {
        cfg.plots = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), LabError> {
    if let Ok(v) = std::env::var("NIKODYM_THREADS") {
        let threads: usize = v
            .parse()
            .map_err(|_| LabError::Config(format!("NIKODYM_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .map_err(|e| LabError::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match configure_threads().and_then(|_| build_config(cli)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let results = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = results.write(&cfg.out_dir, cfg.plots) {
        eprintln!("cannot write results: {e}");
        return ExitCode::from(1);
    }
    let s = &results.summary;
    for f in &s.fits {
        println!(
            "{:<40} slope {:>9.4}  expected {:>8.4} ± {:<5} {:?}",
            f.name, f.slope, f.expected_slope, f.tolerance, f.verdict
        );
    }
    for c in &s.checks {
        println!("{:<40} value {:>12.6e}  {:?} {} {:?}", c.name, c.value, c.relation, c.expected, c.verdict);
    }
    for t in &s.thresholds {
        println!("threshold n={} q={} (baseline {})", t.n, t.threshold, t.baseline);
    }
    for c in &s.chains {
        println!("chain n={} exact {} symbolic {} measured {:?} {:?}", c.n, c.exact, c.symbolic, c.measured, c.verdict);
    }
    for e in &s.errors {
        println!("error in {}: [{}] {}", e.experiment, e.kind, e.message);
    }
    println!("results written to {}", cfg.out_dir.display());
    if s.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
