//! Command-line front end: `run` executes a sweep, `fig2` regenerates the
//! fit-fidelity curve, `cdf` turns a results CSV into an empirical CDF.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use irs_ssm::beamform::{BeamformOpts, InitProfile};
use irs_ssm::harness::{
    cdf_report, fig2_rows, read_results_csv, run_sweep, write_cdf_csv, write_fig2_csv,
    AlternateOpts, SweepSpec, SweepVariable, FIG2_DRAWS, FIG2_MI_SAMPLES,
};
use irs_ssm::model::ScenarioConfig;
use irs_ssm::power::TpdOpts;
use irs_ssm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "irs-ssm",
    about = "Simulation and optimization laboratory for IRS-aided secure spatial modulation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep: optimize per (grid point, trial) and write the results CSV.
    Run(RunArgs),
    /// Regenerate the mutual-information fit-fidelity curve for one (M, G).
    Fig2(Fig2Args),
    /// Build per-method empirical CDFs of secrecy rate from a results CSV.
    Cdf(CdfArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario JSON file (keys M, G, N, N_b, N_e, sigma_b2, sigma_e2, P_s, seed).
    #[arg(long)]
    config: PathBuf,
    /// Phase optimizer: da, sca, sdr, identity, random.
    #[arg(long)]
    beamformer: String,
    /// Power designer: nasr, tasr, fixed (see --fixed-beta).
    #[arg(long)]
    tpd: String,
    /// Swept variable: snr, N, N_e, beta_grid.
    #[arg(long)]
    sweep: String,
    /// First grid value.
    #[arg(long, allow_hyphen_values = true)]
    start: f64,
    /// Last grid value (inclusive).
    #[arg(long, allow_hyphen_values = true)]
    stop: f64,
    /// Grid step (> 0).
    #[arg(long)]
    step: f64,
    /// Independent channel draws per grid point.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Noise samples per mutual-information estimate.
    #[arg(long, default_value_t = 10_000)]
    mi_samples: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Append the channel_hash column (certifies paired draws across methods).
    #[arg(long)]
    verbose: bool,
    /// Measure per-trial wall time (makes output timing-dependent; off keeps
    /// identical invocations byte-identical).
    #[arg(long)]
    timing: bool,
    /// Penalty weight of the dual-ascent beamformer.
    #[arg(long)]
    rho: Option<f64>,
    /// Random rounding draws of the semidefinite beamformer.
    #[arg(long = "l-randomize")]
    l_randomize: Option<usize>,
    /// Outer iteration cap of the beamformer (0 = per-algorithm default).
    #[arg(long)]
    max_outer: Option<usize>,
    /// Inner convergence tolerance of the beamformer.
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Beamformer phase initialization: random or identity.
    #[arg(long)]
    init: Option<String>,
    /// Power factor pinned by the fixed designer.
    #[arg(long)]
    fixed_beta: Option<f64>,
    /// Initial ascent step of the tasr power designer.
    #[arg(long)]
    mu0: Option<f64>,
}

#[derive(clap::Args)]
struct Fig2Args {
    /// Constellation size (2, 4, or 8).
    #[arg(long = "M")]
    m: usize,
    /// Number of spatial groups.
    #[arg(long = "G")]
    g: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Noise samples per mutual-information estimate.
    #[arg(long, default_value_t = FIG2_MI_SAMPLES)]
    mi_samples: usize,
    /// Channel draws averaged per SNR point.
    #[arg(long, default_value_t = FIG2_DRAWS)]
    draws: usize,
    /// Random seed for channel and noise draws.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
struct CdfArgs {
    /// Results CSV produced by `run`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn build_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::InvalidInput(format!(
            "grid requires finite start/stop and step > 0 (got start {start}, stop {stop}, step {step})"
        )));
    }
    if stop < start {
        return Err(Error::InvalidInput(format!(
            "grid stop {stop} lies before start {start}"
        )));
    }
    let mut grid = Vec::new();
    let mut i = 0u32;
    loop {
        let v = start + f64::from(i) * step;
        if v > stop + 1e-9 * step.max(1.0) {
            break;
        }
        grid.push(v);
        i += 1;
    }
    Ok(grid)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&args.config)?;
    let mut config: ScenarioConfig = serde_json::from_str(&raw)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;

    let mut beamform = BeamformOpts::default();
    if let Some(rho) = args.rho {
        beamform.rho = rho;
    }
    if let Some(l) = args.l_randomize {
        beamform.l_randomize = l;
    }
    if let Some(cap) = args.max_outer {
        beamform.max_outer = cap;
    }
    if let Some(tol) = args.inner_tol {
        beamform.inner_tol = tol;
    }
    if let Some(init) = &args.init {
        beamform.init = init.parse::<InitProfile>()?;
    }
    let mut tpd_opts = TpdOpts::default();
    if let Some(mu0) = args.mu0 {
        tpd_opts.mu0 = mu0;
    }

    let tpd = match (args.tpd.as_str(), args.fixed_beta) {
        ("fixed", Some(beta)) => format!("fixed:{beta}"),
        (_, Some(_)) => {
            return Err(Error::InvalidInput(
                "--fixed-beta only applies with --tpd fixed".into(),
            ))
        }
        (tag, None) => tag.to_string(),
    };

    let spec = SweepSpec {
        variable: args.sweep.parse::<SweepVariable>()?,
        grid: build_grid(args.start, args.stop, args.step)?,
        trials: args.trials,
        beamformer: args.beamformer,
        tpd,
        mi_samples: args.mi_samples,
        verbose: args.verbose,
        timing: args.timing,
        alternate: AlternateOpts {
            beamform,
            tpd: tpd_opts,
            ..AlternateOpts::default()
        },
    };
    run_sweep(&spec, &config, &args.out)
}

fn cmd_fig2(args: Fig2Args) -> Result<()> {
    let rows = fig2_rows(args.m, args.g, args.mi_samples, args.draws, args.seed)?;
    let file = std::fs::File::create(&args.out)?;
    write_fig2_csv(&rows, file)
}

fn cmd_cdf(args: CdfArgs) -> Result<()> {
    let rows = read_results_csv(&args.input)?;
    let cdf = cdf_report(&rows)?;
    let file = std::fs::File::create(&args.out)?;
    write_cdf_csv(&cdf, file)
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Fig2(args) => cmd_fig2(args),
        Command::Cdf(args) => cmd_cdf(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
