mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cbartgp::{CbartConfig, GpKind, MaternNu};

#[derive(Parser, Debug)]
#[command(name = "cbartgp", version, about = "Correlated BART and CBART-GP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a simulated dataset.
    Simulate {
        #[command(subcommand)]
        design: Design,
    },
    /// Fit CBART or the two-stage CBART-GP model to a CSV file.
    Fit(FitArgs),
    /// Predict at new points from a saved model.
    Predict(PredictArgs),
    /// Run seeded replications of a simulation study.
    Replicate(ReplicateArgs),
}

#[derive(Subcommand, Debug)]
enum Design {
    /// Cubic mean with AR(1) errors along sorted x.
    Ar1 {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.8)]
        rho: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[command(flatten)]
        common: SimCommon,
    },
    /// Cubic mean with an exponential-kernel spatial field plus nugget.
    Spatial {
        #[arg(long, default_value_t = 3)]
        scenario: u8,
        #[arg(long, default_value_t = 200)]
        n_train: usize,
        #[arg(long, default_value_t = 100)]
        n_test: usize,
        #[arg(long, default_value_t = 3.0)]
        sigma2: f64,
        #[arg(long, default_value_t = 6.0)]
        phi: f64,
        #[arg(long, default_value_t = 1.0)]
        tau2: f64,
        #[command(flatten)]
        common: SimCommon,
    },
}

#[derive(Args, Debug)]
struct SimCommon {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct McmcArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n_iter: usize,
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    #[arg(long, default_value_t = 50)]
    m_trees: usize,
    #[arg(long, default_value_t = 2.0)]
    tau_k: f64,
}

impl McmcArgs {
    fn config(&self) -> CbartConfig {
        CbartConfig {
            m: self.m_trees,
            n_iter: self.n_iter,
            burn_in: self.burn_in,
            tau_k: self.tau_k,
            rng_seed: self.seed,
            ..CbartConfig::default()
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FitModel {
    Cbart,
    Twostage,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum GpKindArg {
    Ar1,
    Exp,
    Matern32,
    Matern52,
}

impl From<GpKindArg> for GpKind {
    fn from(k: GpKindArg) -> Self {
        match k {
            GpKindArg::Ar1 => GpKind::Ar1,
            GpKindArg::Exp => GpKind::SpatialExp,
            GpKindArg::Matern32 => GpKind::SpatialMatern(MaternNu::ThreeHalves),
            GpKindArg::Matern52 => GpKind::SpatialMatern(MaternNu::FiveHalves),
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    model: FitModel,
    /// Training data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Condition CBART on a known Σ: `truth` reads manifest.json next to the
    /// data file, any other value is a path to a simulation manifest.
    /// Without it CBART runs in iid mode with σ² sampled.
    #[arg(long)]
    sigma_inv_from: Option<String>,
    #[arg(long, value_enum)]
    gp_kind: Option<GpKindArg>,
    #[arg(long, value_delimiter = ',', default_values_t = cbartgp::twostage::DEFAULT_WEIGHTS.to_vec())]
    weights: Vec<f64>,
    #[command(flatten)]
    mcmc: McmcArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// model.json written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// New points; a y column, if present, is used to report MSE.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ExperimentArg {
    Fig2,
    Sec32,
    Sim1d,
    Spatial,
}

#[derive(Args, Debug)]
struct ReplicateArgs {
    experiment: ExperimentArg,
    /// Number of replicates (1 to 100).
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u16).range(1..=100))]
    seeds: u16,
    #[arg(long, default_value_t = 3)]
    scenario: u8,
    #[arg(long, value_enum)]
    gp_kind: Option<GpKindArg>,
    #[arg(long, value_delimiter = ',', default_values_t = cbartgp::twostage::DEFAULT_WEIGHTS.to_vec())]
    weights: Vec<f64>,
    #[command(flatten)]
    mcmc: McmcArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = cbartgp::experiment::init_threads_from_env() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Simulate { design } => commands::simulate(design),
        Command::Fit(args) => commands::fit(args),
        Command::Predict(args) => commands::predict(args),
        Command::Replicate(args) => commands::replicate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e.downcast_ref::<cbartgp::Error>().is_some_and(cbartgp::Error::is_numeric);
            ExitCode::from(if numeric { 3 } else { 2 })
        }
    }
}
