use clap::{Args, Parser, Subcommand};
use mnar_core::data::TableFormat;
use mnar_core::hbgmm::ChainSettings;
use mnar_core::pipeline::{self, AssociateJob, EstimateMechanismJob, KChoice, PipelineConfig};
use mnar_core::{Error, Link, SimulationConfig};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "mnar", version, about = "Missing-not-at-random mechanisms and latent-factor adjusted associations")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Worker threads.
    #[arg(long, global = true, env = "MNAR_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset with known truth.
    Simulate(SimulateArgs),
    /// Estimate the missingness mechanism of every feature from the matrix alone.
    EstimateMechanism(MechanismArgs),
    /// Test covariates of interest against every retained feature.
    Associate(AssociateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Random seed (required).
    #[arg(long)]
    seed: u64,
    /// JSON simulation config; unset fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct Common {
    /// JSON pipeline config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Field delimiter of input tables (default: comma for .csv, tab otherwise).
    #[arg(long)]
    delimiter: Option<char>,
}

#[derive(Args)]
struct MechanismArgs {
    /// Intensity matrix: features in rows, samples in columns, NA for missing.
    #[arg(long)]
    matrix: PathBuf,
    /// Output directory for the mechanism artifacts.
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    eps_miss: Option<f64>,
    #[arg(long)]
    max_miss: Option<f64>,
    /// logistic, probit or tNU (e.g. t4).
    #[arg(long)]
    link: Option<String>,
    /// `auto` or a number of factors.
    #[arg(long)]
    k_miss: Option<String>,
    #[arg(long)]
    lfdr_threshold: Option<f64>,
    #[arg(long)]
    bootstrap_b: Option<usize>,
    #[arg(long)]
    n_perm: Option<usize>,
    #[arg(long)]
    mcmc_iters: Option<usize>,
    #[arg(long)]
    mcmc_burn: Option<usize>,
    #[arg(long)]
    mcmc_thin: Option<usize>,
}

#[derive(Args)]
struct AssociateArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Design table: samples in rows, covariates in columns.
    #[arg(long)]
    design: PathBuf,
    /// Directory written by `estimate-mechanism`.
    #[arg(long)]
    mechanism: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Covariate of interest (repeatable); defaults to the first design column.
    #[arg(long)]
    interest: Vec<String>,
    #[command(flatten)]
    common: Common,
    /// `auto` or a number of latent factors.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    eps_qvalue: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
}

fn base_config(common: &Common, threads: Option<usize>) -> mnar_core::Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    Ok(cfg)
}

fn table_format(common: &Common) -> mnar_core::Result<TableFormat> {
    match common.delimiter {
        None => Ok(TableFormat::default()),
        Some(c) if c.is_ascii() => Ok(TableFormat { delimiter: Some(c as u8) }),
        Some(c) => Err(Error::InvalidInput(format!("delimiter `{c}` is not ASCII"))),
    }
}

fn simulate(args: SimulateArgs) -> mnar_core::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str::<SimulationConfig>(&std::fs::read_to_string(p)?)?,
        None => SimulationConfig::default(),
    };
    cfg.seed = args.seed;
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(p) = args.p {
        cfg.p = p;
    }
    let ds = pipeline::run_simulate(&cfg, &args.out)?;
    log::info!(
        "wrote {} x {} matrix ({:.1}% missing) to {}",
        ds.matrix.n_features(),
        ds.matrix.n_samples(),
        100.0 * ds.matrix.total_missing_fraction(),
        args.out.display()
    );
    Ok(())
}

fn estimate_mechanism(args: MechanismArgs, threads: Option<usize>) -> mnar_core::Result<()> {
    let mut cfg = base_config(&args.common, threads)?;
    if let Some(v) = args.eps_miss {
        cfg.eps_miss = v;
    }
    if let Some(v) = args.max_miss {
        cfg.max_miss = v;
    }
    if let Some(v) = &args.link {
        cfg.link = v.parse::<Link>()?;
    }
    if let Some(v) = &args.k_miss {
        cfg.k_miss = v.parse::<KChoice>()?;
    }
    if let Some(v) = args.lfdr_threshold {
        cfg.lfdr_threshold = v;
    }
    if let Some(v) = args.bootstrap_b {
        cfg.bootstrap_b = v;
    }
    if let Some(v) = args.n_perm {
        cfg.n_perm = v;
    }
    cfg.mcmc = ChainSettings {
        iters: args.mcmc_iters.unwrap_or(cfg.mcmc.iters),
        burn: args.mcmc_burn.unwrap_or(cfg.mcmc.burn),
        thin: args.mcmc_thin.unwrap_or(cfg.mcmc.thin),
    };
    cfg.validate()?;
    let job = EstimateMechanismJob {
        matrix: args.matrix,
        out_dir: args.out,
        format: table_format(&args.common)?,
    };
    let art = pipeline::run_estimate_mechanism(&job, &cfg)?;
    log::info!(
        "K_miss = {}; weights for {} features, {} flagged; artifacts in {}",
        art.manifest.k_miss,
        art.manifest.weighted.len(),
        art.manifest.flagged.len(),
        job.out_dir.display()
    );
    Ok(())
}

fn associate(args: AssociateArgs, threads: Option<usize>) -> mnar_core::Result<()> {
    let mut cfg = base_config(&args.common, threads)?;
    if let Some(v) = &args.k {
        cfg.k_latent = v.parse::<KChoice>()?;
    }
    if let Some(v) = args.eps_qvalue {
        cfg.eps_qvalue = v;
    }
    if let Some(v) = args.rounds {
        cfg.refinement_rounds = v;
    }
    cfg.validate()?;
    let job = AssociateJob {
        matrix: args.matrix,
        design: args.design,
        mechanism_dir: args.mechanism,
        out_dir: args.out,
        interest: args.interest,
        format: table_format(&args.common)?,
    };
    let run = pipeline::run_associate(&job, &cfg)?;
    log::info!(
        "K = {}; {} features tested; results in {}",
        run.results.k,
        run.results.rows.len(),
        job.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::EstimateMechanism(a) => estimate_mechanism(a, cli.threads),
        Command::Associate(a) => associate(a, cli.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { EXIT_INPUT } else { EXIT_NUMERICAL })
        }
    }
}
