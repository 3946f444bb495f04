//! Command-line front end for the finite-range RG toolkit.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sgrg",
    about = "Finite-range RG toolkit for the 2D Coulomb gas / sine-Gordon model",
    version
)]
struct Cli {
    /// Flat key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default runs/<command>)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed (expanded per chain by a counter splitter)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scale factor L
    #[arg(long = "L", global = true)]
    l_scale: Option<u32>,
    /// Inverse temperature, e.g. 16pi or 50.26
    #[arg(long, global = true)]
    beta: Option<String>,
    /// Activity z
    #[arg(long, global = true)]
    z: Option<f64>,
    /// Number of scales in the decomposition
    #[arg(long, global = true)]
    n_scales: Option<usize>,
    /// Monte Carlo samples
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    /// Initial activity-norm bound k0
    #[arg(long, global = true)]
    k0: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the kernel and finite-range covariance tabulations
    Decompose,
    /// Log-consistency deviations of the multi-scale sums
    LogConsistency,
    /// Sample multi-scale Gaussian fields and dump them
    GffSample {
        /// number of fields to draw
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Verify the sine-Gordon identity on a tiny grid
    SgCheck {
        /// series truncation order
        #[arg(long, default_value_t = 4)]
        n_max: usize,
    },
    /// Enumerate connected polymers containing a pinned block
    PolymerEnum {
        /// torus side in blocks
        #[arg(long, default_value_t = 16)]
        side: usize,
    },
    /// Extraction coefficients and kill-condition residuals for K0
    Extract,
    /// Run the sigma/K flow from a given or tuned sigma0
    RgFlow {
        /// initial coupling (omit to tune)
        #[arg(long)]
        sigma0: Option<f64>,
    },
    /// Stable-manifold tuning of sigma0 by bisection shooting
    Tune,
    /// Pinned and unpinned delta-K flows and the correlation ledger
    DeltaK,
    /// Measure the dipole-dipole correlation decay
    Correlate,
    /// Aggregate acceptance records from a run directory
    Report,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind::*;
            let code = match e.kind() {
                DisplayHelp | DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.set("seed", s.to_string());
    }
    if let Some(l) = cli.l_scale {
        cfg.set("l_scale", l.to_string());
    }
    if let Some(b) = &cli.beta {
        config::parse_beta_like(b)?; // validate early for a clean usage error
        cfg.set("beta", b.clone());
    }
    if let Some(z) = cli.z {
        cfg.set("z", z.to_string());
    }
    if let Some(n) = cli.n_scales {
        cfg.set("n_scales", n.to_string());
    }
    if let Some(n) = cli.n_samples {
        cfg.set("n_samples", n.to_string());
    }
    if let Some(k) = cli.k0 {
        cfg.set("k0", k.to_string());
    }

    let name = match &cli.command {
        Command::Decompose => "decompose",
        Command::LogConsistency => "log-consistency",
        Command::GffSample { .. } => "gff-sample",
        Command::SgCheck { .. } => "sg-check",
        Command::PolymerEnum { .. } => "polymer-enum",
        Command::Extract => "extract",
        Command::RgFlow { .. } => "rg-flow",
        Command::Tune => "tune",
        Command::DeltaK => "delta-k",
        Command::Correlate => "correlate",
        Command::Report => "report",
    };
    let out = cli
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(name));

    if let Command::Report = cli.command {
        return commands::report(&out);
    }

    let ctx = commands::Ctx::new(cfg, out)?;
    match cli.command {
        Command::Decompose => commands::decompose(&ctx),
        Command::LogConsistency => commands::log_consistency_cmd(&ctx),
        Command::GffSample { count } => commands::gff_sample(&ctx, count),
        Command::SgCheck { n_max } => commands::sg_check(&ctx, n_max),
        Command::PolymerEnum { side } => commands::polymer_enum(&ctx, side),
        Command::Extract => commands::extract(&ctx),
        Command::RgFlow { sigma0 } => commands::rg_flow_cmd(&ctx, sigma0),
        Command::Tune => commands::tune(&ctx),
        Command::DeltaK => commands::delta_k(&ctx),
        Command::Correlate => commands::correlate(&ctx),
        Command::Report => unreachable!(),
    }
}
