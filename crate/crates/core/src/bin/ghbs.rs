use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ghbs_core::constitutive::PlasticParams;
use ghbs_core::pipeline::io::{fmt, write_csv, Provenance};
use ghbs_core::pipeline::manifest::sha256_hex;
use ghbs_core::pipeline::{Pipeline, PipelineConfig, PipelineError, StageStatus};
use ghbs_core::triax::TriaxialTest;

#[derive(Parser)]
#[command(name = "ghbs", version, about = "Active-subspace Bayesian calibration of a hydrate-bearing sand model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    workers: Option<usize>,
    /// Master random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Active subspace dimension.
    #[arg(long)]
    subspace_dim: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic triaxial dataset.
    SynthData(Common),
    /// Run one triaxial simulation and write its trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Plasticity parameters as TOML; prior midpoints when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Sample misfit gradients over the prior.
    Gradients(Common),
    /// Estimate the active subspace with bootstrap intervals.
    Subspace(Common),
    /// Fit the quadratic surrogate in the active variables.
    Surrogate(Common),
    /// Run the active and inactive Markov chains.
    Mcmc(Common),
    /// Reconstruct full posterior samples.
    Reconstruct(Common),
    /// Summarize a completed run.
    Report(Common),
    /// Run every stage in order.
    All(Common),
}

fn load_config(c: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = c.subspace_dim {
        cfg.subspace.dim = Some(k);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(common: &Common, params: Option<&PathBuf>) -> Result<(), PipelineError> {
    let cfg = load_config(common)?;
    let (pp, text) = match params {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e.to_string()))?;
            let pp: PlasticParams = toml::from_str(&text).map_err(|e| PipelineError::io(p, e.message().to_string()))?;
            (pp, text)
        }
        None => {
            let pp = cfg
                .prior
                .to_physical(&[0.0; PlasticParams::DIM])
                .map_err(|e| PipelineError::Internal(e.to_string()))?;
            (pp, String::new())
        }
    };
    let record = TriaxialTest::new(cfg.elastic, cfg.schedule)
        .with_settings(cfg.triax)
        .simulate(&pp)
        .map_err(|e| PipelineError::stage("simulate", e))?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| PipelineError::io(&cfg.out, e.to_string()))?;
    let path = cfg.out.join("trajectory.csv");
    let hash = sha256_hex(format!("{:?}{:?}{:?}{text}", cfg.elastic, cfg.schedule, pp).as_bytes());
    let header: Vec<String> = ["step", "axial_strain", "vol_strain", "p", "q", "lambda_acc", "alpha", "beta"]
        .map(String::from)
        .to_vec();
    write_csv(
        &path,
        &Provenance {
            config_hash: hash,
            seed: cfg.seed,
        },
        &header,
        record.points.iter().map(|p| {
            vec![
                p.step.to_string(),
                fmt(p.axial_strain),
                fmt(p.vol_strain),
                fmt(p.p),
                fmt(p.q),
                fmt(p.lambda_acc),
                fmt(p.alpha),
                fmt(p.beta),
            ]
        }),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let (stage, common) = match &cli.command {
        Command::Simulate { common, params } => return simulate(common, params.as_ref()),
        Command::SynthData(c) => ("synth-data", c),
        Command::Gradients(c) => ("gradients", c),
        Command::Subspace(c) => ("subspace", c),
        Command::Surrogate(c) => ("surrogate", c),
        Command::Mcmc(c) => ("mcmc", c),
        Command::Reconstruct(c) => ("reconstruct", c),
        Command::Report(c) => ("report", c),
        Command::All(c) => ("all", c),
    };
    let pipeline = Pipeline::new(load_config(common)?)?;
    for (name, status) in pipeline.run(stage)? {
        match status {
            StageStatus::UpToDate => println!("{name}: up to date"),
            StageStatus::Ran { computed } if name == "gradients" => {
                println!("{name}: done ({computed} new samples)")
            }
            StageStatus::Ran { .. } => println!("{name}: done"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
