//! Experiment harness: the alternating joint optimizer, grid sweeps with
//! paired channel draws, and the CSV contracts the CLI speaks.
//!
//! A sweep walks a grid over one variable (`snr`, `N`, `N_e`, or
//! `beta_grid`), runs `trials` independent channel draws per point, optimizes
//! phases and power with the configured strategy pair, and evaluates the
//! Monte Carlo secrecy rate plus both analytic surrogates on the result. Rows
//! are computed in parallel but always emitted in (point, trial) order, and
//! every random quantity derives from (seed, point, trial) alone — identical
//! invocations produce byte-identical CSV, and two sweeps that differ only in
//! method tags see identical channels per (point, trial) for paired
//! comparisons.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::beamform::{beamformer_from_tag, BeamformOpts, Beamformer};
use crate::metrics::{
    calibrated_gamma_scale, coeff_lookup, gamma_stat, mi_monte_carlo, nasr, nasr_component,
    secrecy_rate_mc, tasr,
};
use crate::model::{
    build_symbol_set, draw_cn01, effective_channels, gen_channels, CMat, EffectiveChannels,
    PhaseProfile, PowerFactor, RandomStream, ScenarioConfig,
};
use crate::power::{power_from_tag, FixedPower, PowerDesigner, TpdOpts};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Alternating joint optimization
// ---------------------------------------------------------------------------

/// Options for [`alternate_optimize`].
#[derive(Debug, Clone)]
pub struct AlternateOpts {
    pub beamform: BeamformOpts,
    pub tpd: TpdOpts,
    /// Maximum alternation rounds.
    pub max_rounds: usize,
    /// Stop once a round improves the joint objective by no more than this.
    pub tol: f64,
    /// Run the power step before the phase step in each round (robustness
    /// probe; the default order is phases first).
    pub power_first: bool,
}

impl Default for AlternateOpts {
    fn default() -> Self {
        Self {
            beamform: BeamformOpts::default(),
            tpd: TpdOpts::default(),
            max_rounds: 20,
            tol: 1e-4,
            power_first: false,
        }
    }
}

/// Result of the alternating optimization.
#[derive(Debug, Clone)]
pub struct AlternateOutcome {
    pub theta: PhaseProfile,
    pub beta: PowerFactor,
    /// Joint objective after each round, starting with the initial point.
    pub trace: Vec<(usize, f64)>,
    pub rounds: usize,
    pub converged: bool,
    /// A sub-optimizer failed; the outcome holds the last feasible iterate.
    pub flagged: bool,
}

/// Alternate the phase optimizer (power fixed) with the power designer
/// (phases fixed) until the joint objective stalls.
///
/// The starting iterate is identity phases with the designer's power choice
/// at those phases — so pinned-β designers pin β from round zero. The
/// tracked objective is NASR, except for the TASR-native pairing
/// (`sdr` + `tasr`) or when no fitted coefficients exist for (M, G) — then
/// TASR. A round that would lower the objective is rolled back and ends the
/// loop, so the trace is non-decreasing by construction.
pub fn alternate_optimize(
    chans: &EffectiveChannels,
    config: &ScenarioConfig,
    beamformer: &dyn Beamformer,
    designer: &dyn PowerDesigner,
    opts: &AlternateOpts,
    stream: RandomStream,
) -> Result<AlternateOutcome> {
    let syms = build_symbol_set(config);
    let coeffs = opts.beamform.resolve_coeffs(config).ok();
    let use_tasr =
        (beamformer.tag() == "sdr" && designer.tag() == "tasr") || coeffs.is_none();
    let objective = |theta: &PhaseProfile, beta: PowerFactor| -> f64 {
        if use_tasr {
            tasr(chans, theta, beta, config, &syms)
        } else {
            nasr(chans, theta, beta, config, &syms, coeffs.as_ref().unwrap())
        }
    };

    let mut theta = PhaseProfile::identity(config.n);
    let mut rounds = 0usize;
    let mut converged = false;
    let mut flagged = false;
    let mut beta = PowerFactor::full();
    match designer.design(chans, &theta, config, &opts.tpd) {
        Ok(r) => beta = r.beta,
        Err(_) => flagged = true,
    }
    let mut value = objective(&theta, beta);
    let mut trace = vec![(0usize, value)];

    let max_rounds = if flagged { 0 } else { opts.max_rounds };
    for r in 1..=max_rounds {
        rounds = r;
        let round_stream = stream.substream2(r as u64, 0);

        let step_phases = |beta: PowerFactor| -> Result<PhaseProfile> {
            Ok(beamformer
                .optimize(chans, &syms, beta, config, &opts.beamform, round_stream)?
                .theta)
        };
        let step_power = |theta: &PhaseProfile| -> Result<PowerFactor> {
            Ok(designer.design(chans, theta, config, &opts.tpd)?.beta)
        };

        let attempt: Result<(PhaseProfile, PowerFactor)> = if opts.power_first {
            step_power(&theta).and_then(|b| Ok((step_phases(b)?, b)))
        } else {
            step_phases(beta).and_then(|th| {
                let b = step_power(&th)?;
                Ok((th, b))
            })
        };

        let (cand_theta, cand_beta) = match attempt {
            Ok(pair) => pair,
            Err(_) => {
                flagged = true;
                break;
            }
        };

        let cand_value = objective(&cand_theta, cand_beta);
        if cand_value < value {
            // Mixed pairings can fight across objectives; keep the best
            // iterate seen and stop rather than oscillate.
            converged = true;
            trace.push((r, value));
            break;
        }
        let gain = cand_value - value;
        theta = cand_theta;
        beta = cand_beta;
        value = cand_value;
        trace.push((r, value));
        if gain <= opts.tol {
            converged = true;
            break;
        }
    }

    Ok(AlternateOutcome {
        theta,
        beta,
        trace,
        rounds,
        converged,
        flagged,
    })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Which scenario knob the sweep grid drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    /// Average SNR in dB: sets σ_b² = σ_e² = P_s/10^(snr/10).
    Snr,
    /// Number of reflecting elements N.
    Elements,
    /// Number of eavesdropper antennas N_e.
    EveAntennas,
    /// Fixed power factor β per point (power designer is bypassed).
    BetaGrid,
}

impl std::str::FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(Self::Snr),
            "N" | "n" => Ok(Self::Elements),
            "N_e" | "n_e" | "ne" => Ok(Self::EveAntennas),
            "beta_grid" | "beta" => Ok(Self::BetaGrid),
            other => Err(Error::UnknownTag(format!(
                "unknown sweep variable '{other}' (expected snr, N, N_e, or beta_grid)"
            ))),
        }
    }
}

/// One experiment sweep: a grid over one variable, several trials per point,
/// one (beamformer, power designer) pairing.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub trials: usize,
    /// Beamformer tag: da, sca, sdr, identity, random.
    pub beamformer: String,
    /// Power designer tag: nasr, tasr, fixed, fixed:<beta>.
    pub tpd: String,
    /// Noise samples per mutual-information estimate.
    pub mi_samples: usize,
    /// Adds the channel_hash column to the CSV.
    pub verbose: bool,
    /// Measure wall_ms per trial; off by default so identical invocations
    /// stay byte-identical.
    pub timing: bool,
    pub alternate: AlternateOpts,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidInput("sweep grid is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be ≥ 1".into()));
        }
        if !self.grid.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("sweep grid contains non-finite values".into()));
        }
        if self.mi_samples == 0 {
            return Err(Error::InvalidInput("mi_samples must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One CSV data row.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    /// Active sweep-grid value (SNR in dB for snr sweeps; N, N_e, or β for
    /// the other variables — the column name stays `snr_db` per the fixed
    /// schema).
    pub snr_db: f64,
    pub method: String,
    pub trial: usize,
    pub sr_bits: f64,
    pub nasr_bits: f64,
    pub tasr_bits: f64,
    pub beta: f64,
    /// Alternation rounds consumed by the optimizer pipeline.
    pub iterations: usize,
    pub wall_ms: f64,
    /// Present when the sweep ran verbose.
    pub channel_hash: Option<String>,
}

fn snr_db_to_sigma2(p_s: f64, snr_db: f64) -> f64 {
    p_s / 10f64.powf(snr_db / 10.0)
}

/// Substitute one grid value into the scenario.
fn apply_variable(
    base: &ScenarioConfig,
    variable: SweepVariable,
    value: f64,
) -> Result<ScenarioConfig> {
    let mut config = base.clone();
    match variable {
        SweepVariable::Snr => {
            let sigma2 = snr_db_to_sigma2(base.p_s, value);
            config.sigma_b2 = sigma2;
            config.sigma_e2 = sigma2;
        }
        SweepVariable::Elements => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(Error::InvalidInput(format!(
                    "N sweep values must be positive integers, got {value}"
                )));
            }
            config.n = value as usize;
        }
        SweepVariable::EveAntennas => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(Error::InvalidInput(format!(
                    "N_e sweep values must be positive integers, got {value}"
                )));
            }
            config.n_e = value as usize;
        }
        SweepVariable::BetaGrid => {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "beta grid values must lie in (0,1], got {value}"
                )));
            }
        }
    }
    config.validate()?;
    Ok(config)
}

/// Execute a sweep and return its rows in deterministic (point, trial) order.
pub fn sweep_rows(spec: &SweepSpec, base: &ScenarioConfig) -> Result<Vec<ExperimentRow>> {
    spec.validate()?;
    base.validate()?;

    // Row metrics always include nasr_bits, so a fitted coefficient set for
    // (M, G) — embedded or injected via optimizer options — is a hard
    // prerequisite of the CSV contract.
    let coeffs = match &spec.alternate.beamform.coeffs {
        Some(c) => c.clone(),
        None => coeff_lookup(base.m, base.g)?,
    };

    let beamformer = beamformer_from_tag(&spec.beamformer)?;
    // Validate the designer tag once up front (beta sweeps replace it with a
    // per-point fixed designer below).
    let shared_designer = power_from_tag(&spec.tpd)?;
    let method = match spec.variable {
        SweepVariable::BetaGrid => format!("{}+fixed", spec.beamformer),
        _ => format!("{}+{}", spec.beamformer, spec.tpd),
    };

    // Per-point scenario configs, validated before any work is spawned.
    let configs = spec
        .grid
        .iter()
        .map(|&v| apply_variable(base, spec.variable, v))
        .collect::<Result<Vec<_>>>()?;

    let base_stream = RandomStream::new(base.seed);
    let jobs: Vec<(usize, usize)> = (0..spec.grid.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();

    let mut rows = jobs
        .par_iter()
        .map(|&(p, t)| -> Result<(usize, usize, ExperimentRow)> {
            let config = &configs[p];
            let value = spec.grid[p];
            let chan_stream = base_stream.substream2(p as u64, t as u64);
            let opt_stream = base_stream.substream(1).substream2(p as u64, t as u64);
            let mi_stream = base_stream.substream(2).substream2(p as u64, t as u64);

            let channels = gen_channels(config, chan_stream);
            let eff = effective_channels(&channels)?;
            let syms = build_symbol_set(config);

            let point_designer: Box<dyn PowerDesigner>;
            let designer: &dyn PowerDesigner = match spec.variable {
                SweepVariable::BetaGrid => {
                    point_designer = Box::new(FixedPower { beta: value });
                    point_designer.as_ref()
                }
                _ => shared_designer.as_ref(),
            };

            let started = std::time::Instant::now();
            let outcome = alternate_optimize(
                &eff,
                config,
                beamformer.as_ref(),
                designer,
                &spec.alternate,
                opt_stream,
            )?;
            let wall_ms = if spec.timing {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };

            let sr_bits = secrecy_rate_mc(
                &eff,
                &outcome.theta,
                outcome.beta,
                config,
                &syms,
                spec.mi_samples,
                mi_stream,
            )?;
            let nasr_bits = nasr(&eff, &outcome.theta, outcome.beta, config, &syms, &coeffs);
            let tasr_bits = tasr(&eff, &outcome.theta, outcome.beta, config, &syms);

            let row = ExperimentRow {
                snr_db: value,
                method: if outcome.flagged {
                    format!("{method}[failed]")
                } else {
                    method.clone()
                },
                trial: t,
                sr_bits,
                nasr_bits,
                tasr_bits,
                beta: outcome.beta.beta(),
                iterations: outcome.rounds,
                wall_ms,
                channel_hash: spec.verbose.then(|| channels.content_hash()),
            };
            Ok((p, t, row))
        })
        .collect::<Result<Vec<_>>>()?;

    rows.sort_by_key(|&(p, t, _)| (p, t));
    Ok(rows.into_iter().map(|(_, _, row)| row).collect())
}

/// Execute a sweep and write its CSV.
pub fn run_sweep(spec: &SweepSpec, base: &ScenarioConfig, out_path: &Path) -> Result<()> {
    let rows = sweep_rows(spec, base)?;
    let file = std::fs::File::create(out_path)?;
    write_results_csv(&rows, spec.verbose, file)
}

// ---------------------------------------------------------------------------
// Results CSV
// ---------------------------------------------------------------------------

const RESULTS_HEADER: [&str; 9] = [
    "snr_db",
    "method",
    "trial",
    "sr_bits",
    "nasr_bits",
    "tasr_bits",
    "beta",
    "iterations",
    "wall_ms",
];

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Write rows in the fixed results schema (UTF-8, LF, `.` decimals); the
/// channel_hash column is appended only when `verbose` is set.
pub fn write_results_csv(
    rows: &[ExperimentRow],
    verbose: bool,
    out: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = RESULTS_HEADER.to_vec();
    if verbose {
        header.push("channel_hash");
    }
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![
            fmt(row.snr_db),
            row.method.clone(),
            row.trial.to_string(),
            fmt(row.sr_bits),
            fmt(row.nasr_bits),
            fmt(row.tasr_bits),
            fmt(row.beta),
            row.iterations.to_string(),
            fmt(row.wall_ms),
        ];
        if verbose {
            record.push(row.channel_hash.clone().unwrap_or_default());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a results CSV produced by [`write_results_csv`] (either width).
pub fn read_results_csv(path: &Path) -> Result<Vec<ExperimentRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        let want_plain: Vec<&str> = RESULTS_HEADER.to_vec();
        let mut want_verbose = want_plain.clone();
        want_verbose.push("channel_hash");
        if got != want_plain && got != want_verbose {
            return Err(Error::InvalidInput(format!(
                "unexpected results header {got:?}"
            )));
        }
    }
    let parse_f = |s: &str, what: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidInput(format!("bad {what} value '{s}'")))
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        rows.push(ExperimentRow {
            snr_db: parse_f(&r[0], "snr_db")?,
            method: r[1].to_string(),
            trial: r[2]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad trial value '{}'", &r[2])))?,
            sr_bits: parse_f(&r[3], "sr_bits")?,
            nasr_bits: parse_f(&r[4], "nasr_bits")?,
            tasr_bits: parse_f(&r[5], "tasr_bits")?,
            beta: parse_f(&r[6], "beta")?,
            iterations: r[7]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad iterations value '{}'", &r[7])))?,
            wall_ms: parse_f(&r[8], "wall_ms")?,
            channel_hash: r.get(9).map(str::to_string),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Fitted-surrogate fidelity data ("fig2")
// ---------------------------------------------------------------------------

/// One point of the MI-vs-fit comparison curve.
#[derive(Debug, Clone)]
pub struct Fig2Row {
    pub snr_db: f64,
    /// Calibrated distance-SNR statistic (the fit table's independent
    /// variable), averaged over the channel draws.
    pub gamma: f64,
    /// Monte Carlo mutual information, averaged over draws.
    pub mi_bits: f64,
    /// Standard error of the averaged MI estimate.
    pub mi_stderr: f64,
    /// Fitted surrogate `F(γ)`, evaluated per draw and averaged.
    pub fit_bits: f64,
}

/// Defaults for the fidelity curve: 9 SNR points, 20 channel draws, 10⁴
/// noise samples — the scale at which the fit was calibrated.
pub const FIG2_SNR_GRID: [f64; 9] = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0];
pub const FIG2_DRAWS: usize = 20;
pub const FIG2_MI_SAMPLES: usize = 10_000;

/// Generate the MI-vs-fit comparison for one (M, G) pair on the calibration
/// ensemble: PSK spatial modulation across G single-element spatial states
/// over an i.i.d. Rayleigh channel with two receive antennas, identity
/// phases. Each draw contributes its Monte Carlo mutual information and the
/// fitted surrogate evaluated at the draw's calibrated γ (see
/// [`calibrated_gamma_scale`]); both are averaged per SNR point.
pub fn fig2_rows(
    m: usize,
    g: usize,
    mi_samples: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<Fig2Row>> {
    let coeffs = coeff_lookup(m, g)?;
    let config = ScenarioConfig {
        m,
        g,
        n: g,
        n_b: 2,
        n_e: 1,
        sigma_b2: 1.0,
        sigma_e2: 1.0,
        p_s: 1.0,
        seed,
    };
    config.validate()?;
    if draws == 0 || mi_samples == 0 {
        return Err(Error::InvalidInput(
            "fig2 requires at least one draw and one noise sample".into(),
        ));
    }
    let syms = build_symbol_set(&config);
    let theta = PhaseProfile::identity(g);
    let scale = calibrated_gamma_scale(m, g);
    let base_stream = RandomStream::new(seed);

    FIG2_SNR_GRID
        .iter()
        .enumerate()
        .map(|(pi, &snr_db)| {
            let sigma2 = snr_db_to_sigma2(config.p_s, snr_db);
            let mut gamma_sum = 0.0;
            let mut mi_sum = 0.0;
            let mut se_sq_sum = 0.0;
            let mut fit_sum = 0.0;
            for d in 0..draws {
                let mut rng = base_stream.substream2(pi as u64, d as u64).rng();
                let h = CMat::from_fn(config.n_b, g, |_, _| draw_cn01(&mut rng));
                let gamma =
                    scale * gamma_stat(&h, &theta, config.p_s, sigma2, &syms.d_agg);
                let mi = mi_monte_carlo(
                    &h,
                    &theta,
                    config.p_s,
                    sigma2,
                    &syms,
                    mi_samples,
                    base_stream.substream(2).substream2(pi as u64, d as u64),
                )?;
                gamma_sum += gamma;
                mi_sum += mi.value_bits;
                se_sq_sum += mi.std_error_bits * mi.std_error_bits;
                fit_sum += nasr_component(gamma, &coeffs);
            }
            let k = draws as f64;
            Ok(Fig2Row {
                snr_db,
                gamma: gamma_sum / k,
                mi_bits: mi_sum / k,
                mi_stderr: se_sq_sum.sqrt() / k,
                fit_bits: fit_sum / k,
            })
        })
        .collect()
}

/// Write fidelity rows as `snr_db,gamma,mi_bits,mi_stderr,fit_bits`.
pub fn write_fig2_csv(rows: &[Fig2Row], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["snr_db", "gamma", "mi_bits", "mi_stderr", "fit_bits"])?;
    for row in rows {
        w.write_record(&[
            fmt(row.snr_db),
            fmt(row.gamma),
            fmt(row.mi_bits),
            fmt(row.mi_stderr),
            fmt(row.fit_bits),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Empirical CDF report
// ---------------------------------------------------------------------------

/// One empirical-CDF step point for a method.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfRow {
    pub method: String,
    pub sr_bits: f64,
    pub cdf: f64,
}

/// Sorted empirical CDF of `sr_bits` per method tag; methods are emitted in
/// lexicographic order. Requires at least 10 rows per method.
pub fn cdf_report(rows: &[ExperimentRow]) -> Result<Vec<CdfRow>> {
    let mut by_method: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for row in rows {
        by_method.entry(&row.method).or_default().push(row.sr_bits);
    }
    if by_method.is_empty() {
        return Err(Error::InvalidInput("no rows to build a CDF from".into()));
    }
    let mut out = Vec::new();
    for (method, mut values) in by_method {
        if values.len() < 10 {
            return Err(Error::InvalidInput(format!(
                "method '{method}' has only {} rows; the CDF needs at least 10",
                values.len()
            )));
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite sr_bits"));
        let n = values.len() as f64;
        for (i, v) in values.iter().enumerate() {
            out.push(CdfRow {
                method: method.to_string(),
                sr_bits: *v,
                cdf: (i + 1) as f64 / n,
            });
        }
    }
    Ok(out)
}

/// Write CDF rows as `method,sr_bits,cdf`.
pub fn write_cdf_csv(rows: &[CdfRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "sr_bits", "cdf"])?;
    for row in rows {
        w.write_record(&[row.method.clone(), fmt(row.sr_bits), fmt(row.cdf)])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
