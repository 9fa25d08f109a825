//! Secrecy metrics: Monte Carlo mutual information and secrecy rate, the
//! closed-form cut-off-rate surrogate (TASR), the fitted sum-of-ratios
//! surrogate (NASR), and the γ statistic that links them.
//!
//! Three nested approximations of the secrecy rate appear throughout the
//! optimizers, cheapest last:
//!
//! ```text
//!   SR  = [I_B − I_E]⁺          exact, Monte Carlo over noise draws
//!   TASR = I0_B − I0_E          cut-off rates, closed form in the channels
//!   NASR = F(γ_b) − F(γ_e)      F(γ) = Σ_i ζ_i γ/(ξ_i + γ), fitted per (M,G)
//! ```
//!
//! The γ statistic collapses the whole channel/phase state into one scalar
//! per receiver, `γ = P_t·tr(D_agg Φ^H H'^H H' Φ)/(4σ²)`, which is what makes
//! the NASR surrogate cheap enough to sit inside the beamformer loops.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use std::sync::OnceLock;

use crate::model::{
    draw_cn01, CMat, CVec, EffectiveChannels, PhaseProfile, PowerFactor, RandomStream,
    ScenarioConfig, SymbolSet,
};
use crate::{Error, Result};

/// One fitted sum-of-ratios model `F(γ) = Σ_i ζ_i·γ/(ξ_i + γ)` for a given
/// modulation pair `(M, G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCoefficients {
    /// Ordered `(ζ_i, ξ_i)` pairs; every `ξ_i > 0`.
    pub terms: Vec<(f64, f64)>,
    /// Root mean square fit error, in bits.
    pub rmse: f64,
    /// Constellation order the fit belongs to.
    pub m: usize,
    /// Group count the fit belongs to.
    pub g: usize,
    /// False when a refit stopped above its error target.
    pub converged: bool,
}

impl FitCoefficients {
    /// Validated constructor: terms non-empty, all ξ strictly positive.
    pub fn new(terms: Vec<(f64, f64)>, rmse: f64, m: usize, g: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidInput("coefficient list is empty".into()));
        }
        if let Some((zeta, xi)) = terms.iter().find(|(_, xi)| !(*xi > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "ξ must be positive, got (ζ, ξ) = ({zeta}, {xi})"
            )));
        }
        Ok(Self {
            terms,
            rmse,
            m,
            g,
            converged: true,
        })
    }

    /// `Σ_i ζ_i` — the fitted value of `F(γ)` as γ → ∞.
    pub fn sum_zeta(&self) -> f64 {
        self.terms.iter().map(|(z, _)| z).sum()
    }

    /// Re-express the fit in a rescaled independent variable: the returned
    /// coefficients satisfy `F'(γ) = F(scale·γ)` exactly (ξ_i ↦ ξ_i/scale,
    /// ζ and rmse unchanged). Used to evaluate the fit — calibrated against
    /// the pair-averaged γ̄ — directly at the raw aggregate statistic.
    pub fn with_gamma_scale(&self, scale: f64) -> Self {
        assert!(scale > 0.0, "γ rescale must be positive, got {scale}");
        let mut out = self.clone();
        for term in &mut out.terms {
            term.1 /= scale;
        }
        out
    }
}

/// A Monte Carlo mutual-information estimate with its sampling uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    /// Estimated mutual information, bits per symbol.
    pub value_bits: f64,
    /// Standard error of the estimate across noise draws, bits.
    pub std_error_bits: f64,
    /// Number of noise draws behind the estimate.
    pub n_noise_samples: usize,
}

// ---------------------------------------------------------------------------
// Pairwise projections shared by MI / cut-off rate
// ---------------------------------------------------------------------------

/// Receiver-side images `w_k = H'Φ x_k` of every supersymbol; differences
/// `w_k − w_l` are the pairwise signal separations both metrics rest on.
pub(crate) fn project_symbols(hp: &CMat, theta: &PhaseProfile, syms: &SymbolSet) -> Vec<CVec> {
    let hp_phi = theta.apply_right(hp);
    syms.supersymbols.iter().map(|x| &hp_phi * x).collect()
}

/// `log2(Σ exp(e_i))` with max-shift so large negative exponents cannot
/// overflow and the all-zero case stays exact.
fn log2_sum_exp(exponents: &[f64]) -> f64 {
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
    (max + sum.ln()) / std::f64::consts::LN_2
}

/// Softmax-weighted mean `Σ v_i·e^{e_i} / Σ e^{e_i}` over `(exponent, value)`
/// pairs, evaluated max-shifted so extreme exponents cannot overflow.
pub(crate) fn softmax_mean(pairs: &[(f64, f64)]) -> f64 {
    let max = pairs
        .iter()
        .map(|&(e, _)| e)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &(e, v) in pairs {
        let w = (e - max).exp();
        num += v * w;
        den += w;
    }
    num / den
}

// ---------------------------------------------------------------------------
// Mutual information (Monte Carlo) and secrecy rate
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of the mutual information between the supersymbol
/// index and the received signal:
///
/// `I = log2(GM) − (1/GM)·Σ_k E_n{ log2 Σ_l exp[(−‖v_kl + n‖² + ‖n‖²)/σ²] }`
///
/// with `v_kl = √P_t·H'Φ(x_k − x_l)` and `n ~ CN(0, σ²I)`. One noise vector
/// is shared across `k` per draw; the standard error is the sample standard
/// deviation of the per-draw inner term over `√n_samples`.
///
/// Draws are processed in fixed-size chunks with per-chunk substreams and the
/// chunk statistics merged in chunk order, so the estimate is bit-stable
/// regardless of thread scheduling.
pub fn mi_monte_carlo(
    hp: &CMat,
    theta: &PhaseProfile,
    p_t: f64,
    sigma2: f64,
    syms: &SymbolSet,
    n_samples: usize,
    stream: RandomStream,
) -> Result<MiEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be ≥ 1".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!("σ² must be positive, got {sigma2}")));
    }
    if !(p_t >= 0.0) {
        return Err(Error::InvalidInput(format!("P_t must be ≥ 0, got {p_t}")));
    }

    let w = project_symbols(hp, theta, syms);
    let k_total = w.len();
    let n_r = hp.nrows();
    let amp = p_t.sqrt();
    // v_kl, flattened k-major; moderate size (GM ≤ 128 → ≤ 16384 short vectors).
    let v: Vec<CVec> = (0..k_total * k_total)
        .map(|idx| (&w[idx / k_total] - &w[idx % k_total]) * Complex64::new(amp, 0.0))
        .collect();

    const CHUNK: usize = 1024;
    let n_chunks = n_samples.div_ceil(CHUNK);
    let log2_gm = (k_total as f64).log2();

    // (Σ A_t, Σ A_t², draws) per chunk, merged in chunk order below.
    let chunk_stats: Vec<(f64, f64, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream.substream(chunk as u64).rng();
            let draws = CHUNK.min(n_samples - chunk * CHUNK);
            let noise_scale = sigma2.sqrt();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut exponents = vec![0.0f64; k_total];
            for _ in 0..draws {
                let n_vec =
                    CVec::from_fn(n_r, |_, _| draw_cn01(&mut rng) * noise_scale);
                let n_norm2 = n_vec.norm_squared();
                let mut a_t = 0.0;
                for k in 0..k_total {
                    for l in 0..k_total {
                        let shifted = &v[k * k_total + l] + &n_vec;
                        exponents[l] = (n_norm2 - shifted.norm_squared()) / sigma2;
                    }
                    a_t += log2_sum_exp(&exponents);
                }
                a_t /= k_total as f64;
                sum += a_t;
                sum_sq += a_t * a_t;
            }
            (sum, sum_sq, draws)
        })
        .collect();

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for (s, s2, c) in chunk_stats {
        sum += s;
        sum_sq += s2;
        count += c;
    }
    let t = count as f64;
    let mean = sum / t;
    let std_error = if count >= 2 {
        let var = ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0);
        (var / t).sqrt()
    } else {
        0.0
    };

    Ok(MiEstimate {
        value_bits: log2_gm - mean,
        std_error_bits: std_error,
        n_noise_samples: count,
    })
}

/// Monte Carlo secrecy rate `[I_B − I_E]⁺` with the same noise-draw budget on
/// both sides. Any draw landing with `I_E > I_B` clamps to exactly 0.
pub fn secrecy_rate_mc(
    chans: &EffectiveChannels,
    theta: &PhaseProfile,
    beta: PowerFactor,
    config: &ScenarioConfig,
    syms: &SymbolSet,
    n_samples: usize,
    stream: RandomStream,
) -> Result<f64> {
    let p_t = beta.p_t(config.p_s);
    let bob = mi_monte_carlo(
        &chans.h_bp,
        theta,
        p_t,
        config.sigma_b2,
        syms,
        n_samples,
        stream.substream(0),
    )?;
    let eve = mi_monte_carlo(
        &chans.h_ep,
        theta,
        p_t,
        config.sigma_e2,
        syms,
        n_samples,
        stream.substream(1),
    )?;
    Ok((bob.value_bits - eve.value_bits).max(0.0))
}

// ---------------------------------------------------------------------------
// Cut-off rates and TASR
// ---------------------------------------------------------------------------

/// Closed-form cut-off rate
/// `I0 = 2log2(GM) − log2 Σ_k Σ_l exp(−P_t·‖H'Φ(x_k−x_l)‖²/(4σ²))`.
///
/// Deterministic — no sampling. Lower-bounds the Monte Carlo mutual
/// information (up to its sampling error).
pub fn cutoff_rate(
    hp: &CMat,
    theta: &PhaseProfile,
    p_t: f64,
    sigma2: f64,
    syms: &SymbolSet,
) -> f64 {
    let w = project_symbols(hp, theta, syms);
    let k_total = w.len();
    let mut exponents = Vec::with_capacity(k_total * k_total);
    for k in 0..k_total {
        for l in 0..k_total {
            let q = (&w[k] - &w[l]).norm_squared();
            exponents.push(-p_t * q / (4.0 * sigma2));
        }
    }
    2.0 * (k_total as f64).log2() - log2_sum_exp(&exponents)
}

/// Theoretical-approximation secrecy rate: difference of Bob and Eve cut-off
/// rates. Deliberately not clamped at 0 — it serves as an optimization
/// objective where negative values carry gradient information.
pub fn tasr(
    chans: &EffectiveChannels,
    theta: &PhaseProfile,
    beta: PowerFactor,
    config: &ScenarioConfig,
    syms: &SymbolSet,
) -> f64 {
    let p_t = beta.p_t(config.p_s);
    cutoff_rate(&chans.h_bp, theta, p_t, config.sigma_b2, syms)
        - cutoff_rate(&chans.h_ep, theta, p_t, config.sigma_e2, syms)
}

// ---------------------------------------------------------------------------
// γ statistic and the fitted NASR surrogate
// ---------------------------------------------------------------------------

/// Aggregate pairwise-distance SNR
/// `γ = P_t·tr(D_agg·Φ^H H'^H H' Φ)/(4σ²)`, the scalar the fitted surrogate
/// is a function of. Real and non-negative for Hermitian PSD `D_agg`.
pub fn gamma_stat(
    hp: &CMat,
    theta: &PhaseProfile,
    p_t: f64,
    sigma2: f64,
    d_agg: &CMat,
) -> f64 {
    let hp_phi = theta.apply_right(hp);
    let b = hp_phi.adjoint() * &hp_phi;
    let n = d_agg.nrows();
    // tr(D·B) without forming the product: Σ_ij D[i,j]·B[j,i].
    let mut tr = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            tr += d_agg[(i, j)] * b[(j, i)];
        }
    }
    p_t * tr.re / (4.0 * sigma2)
}

/// Embedded fit table (one row per `(M, G)`), parsed once.
fn coefficient_table() -> &'static Vec<FitCoefficients> {
    static TABLE: OnceLock<Vec<FitCoefficients>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let raw = include_str!("../data/fit_coefficients.csv");
        raw.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                assert_eq!(f.len(), 9, "malformed coefficient row: {line}");
                let num = |i: usize| -> f64 { f[i].parse().expect("coefficient value") };
                FitCoefficients::new(
                    vec![(num(2), num(5)), (num(3), num(6)), (num(4), num(7))],
                    num(8),
                    f[0].parse().expect("M"),
                    f[1].parse().expect("G"),
                )
                .expect("embedded table row must satisfy ξ > 0")
            })
            .collect()
    })
}

/// Look up the embedded fit coefficients for `(M, G)`.
///
/// Supported pairs are M ∈ {2, 4, 8} × G ∈ {2, 4, 8, 16}; anything else gets
/// a "no coefficients" error pointing at [`refit_coeffs`].
pub fn coeff_lookup(m: usize, g: usize) -> Result<FitCoefficients> {
    coefficient_table()
        .iter()
        .find(|c| c.m == m && c.g == g)
        .cloned()
        .ok_or(Error::NoCoefficients { m, g })
}

/// Scale mapping the aggregate statistic of [`gamma_stat`] onto the
/// independent variable the embedded coefficient table was calibrated
/// against.
///
/// The table's γ is the pair-averaged squared distance per `M·σ²`:
/// `γ_fit = (1/K²)·ΣΣ‖HΦ(x_i−x_j)‖² / (M·σ²)` with `K = G·M` — equivalently
/// the aggregate statistic times `4/(M·K²)`. The `1/K²` undoes the raw double
/// sum (the calibration fixed the pair distribution, not the pair count) and
/// the `2/M` matches the calibration's constellation energy convention
/// (unit-energy BPSK, energy `2/M` for larger alphabets). Identified
/// empirically: per-row best-fit scales against Monte Carlo mutual
/// information on i.i.d. Rayleigh draws match this constant within 3% for
/// every published row, and no single constant without the `M` factor fits
/// both the BPSK and QPSK rows.
pub fn calibrated_gamma_scale(m: usize, g: usize) -> f64 {
    let k = (m * g) as f64;
    4.0 / (m as f64 * k * k)
}

/// Fitted mutual-information surrogate `F(γ) = Σ_i ζ_i·γ/(ξ_i + γ)`.
pub fn nasr_component(gamma: f64, coeffs: &FitCoefficients) -> f64 {
    coeffs
        .terms
        .iter()
        .map(|&(zeta, xi)| zeta * gamma / (xi + gamma))
        .sum()
}

/// Numerical-approximation secrecy rate `F(γ̄_b) − F(γ̄_e)`, the optimization
/// objective of the NASR-family designs. γ uses `4σ²` on both sides.
///
/// The fit `F` is evaluated at the calibrated pair-averaged SNR
/// `γ̄ = calibrated_gamma_scale(M, G) · gamma_stat` — the variable the
/// embedded table was actually fitted against. At the raw aggregate (which
/// sums `K²` pairwise distances) `F` is pinned at its saturation value for
/// any realistic scenario, which zeroes the objective and its gradients and
/// disables every NASR-driven optimizer; the calibrated variable keeps `F`
/// in its responsive range and reproduces the published method orderings.
pub fn nasr(
    chans: &EffectiveChannels,
    theta: &PhaseProfile,
    beta: PowerFactor,
    config: &ScenarioConfig,
    syms: &SymbolSet,
    coeffs: &FitCoefficients,
) -> f64 {
    let p_t = beta.p_t(config.p_s);
    let scale = calibrated_gamma_scale(config.m, config.g);
    let gamma_b = scale * gamma_stat(&chans.h_bp, theta, p_t, config.sigma_b2, &syms.d_agg);
    let gamma_e = scale * gamma_stat(&chans.h_ep, theta, p_t, config.sigma_e2, &syms.d_agg);
    nasr_component(gamma_b, coeffs) - nasr_component(gamma_e, coeffs)
}

// ---------------------------------------------------------------------------
// Coefficient refitting (damped Gauss-Newton, multi-start)
// ---------------------------------------------------------------------------

/// Fit `F(γ) = Σ_i ζ_i·γ/(ξ_i + γ)` to `(γ, MI)` samples by damped
/// Gauss-Newton with ≥ 20 random multi-starts.
///
/// ξ is kept positive through the reparameterization `ξ = exp(η)`. For each
/// start, ζ is initialized by linear least squares at the sampled ξ's, then
/// (ζ, η) are refined jointly. The best-RMSE fit over all starts is returned;
/// if no start reaches `rmse < 0.05` bits the result is flagged
/// non-converged (but still returned).
pub fn refit_coeffs(
    samples: &[(f64, f64)],
    k: usize,
    stream: RandomStream,
) -> Result<FitCoefficients> {
    if k == 0 {
        return Err(Error::InvalidInput("term count k must be ≥ 1".into()));
    }
    if samples.len() < 3 * k {
        return Err(Error::InvalidInput(format!(
            "need at least 3k = {} samples, got {}",
            3 * k,
            samples.len()
        )));
    }
    if let Some((g, _)) = samples.iter().find(|(g, _)| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidInput(format!("γ must be finite and ≥ 0, got {g}")));
    }

    let gamma_max = samples.iter().map(|(g, _)| *g).fold(0.0, f64::max).max(1.0);
    const N_STARTS: usize = 24;
    const MAX_ITERS: usize = 200;
    // η = ln ξ kept in a wide but overflow-safe box.
    let eta_lo = (gamma_max * 1e-4).ln();
    let eta_hi = (gamma_max * 10.0).ln();

    let mut best: Option<(f64, Vec<f64>)> = None; // (rmse, packed params ζ‖η)

    for start in 0..N_STARTS {
        let mut rng = stream.substream(start as u64).rng();
        // Random positive ξ spread over the γ range (log-uniform).
        let mut params = vec![0.0; 2 * k];
        for eta in params[k..].iter_mut() {
            *eta = rng.gen_range(eta_lo..eta_hi);
        }
        solve_zeta_lls(samples, &mut params, k);
        let mut rmse = fit_rmse(samples, &params, k);

        let mut lambda = 1e-3;
        for _ in 0..MAX_ITERS {
            let Some(step) = gn_step(samples, &params, k, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = params.clone();
            for (p, s) in trial.iter_mut().zip(step.iter()) {
                *p += s;
            }
            for eta in trial[k..].iter_mut() {
                *eta = eta.clamp(-30.0, 30.0);
            }
            let trial_rmse = fit_rmse(samples, &trial, k);
            if trial_rmse < rmse {
                let rel_gain = (rmse - trial_rmse) / rmse.max(1e-300);
                params = trial;
                rmse = trial_rmse;
                lambda = (lambda / 3.0).max(1e-12);
                if rel_gain < 1e-12 || rmse < 1e-15 {
                    break;
                }
            } else {
                lambda *= 4.0;
                if lambda > 1e12 {
                    break;
                }
            }
        }

        if best.as_ref().is_none_or(|(b, _)| rmse < *b) {
            best = Some((rmse, params));
        }
    }

    let (rmse, params) = best.expect("at least one start ran");
    let terms: Vec<(f64, f64)> = (0..k)
        .map(|i| (params[i], params[k + i].exp()))
        .collect();
    let mut fit = FitCoefficients::new(terms, rmse, 0, 0)?;
    fit.converged = rmse < 0.05;
    Ok(fit)
}

/// Model value at γ for packed parameters ζ‖η.
fn fit_model(gamma: f64, params: &[f64], k: usize) -> f64 {
    (0..k)
        .map(|i| params[i] * gamma / (params[k + i].exp() + gamma))
        .sum()
}

fn fit_rmse(samples: &[(f64, f64)], params: &[f64], k: usize) -> f64 {
    let ss: f64 = samples
        .iter()
        .map(|&(g, y)| {
            let r = fit_model(g, params, k) - y;
            r * r
        })
        .sum();
    (ss / samples.len() as f64).sqrt()
}

/// With ξ fixed, the model is linear in ζ; solve the least-squares ζ exactly.
fn solve_zeta_lls(samples: &[(f64, f64)], params: &mut [f64], k: usize) {
    let n = samples.len();
    let mut a = DMatrix::<f64>::zeros(n, k);
    let mut y = DVector::<f64>::zeros(n);
    for (s, &(g, yy)) in samples.iter().enumerate() {
        for i in 0..k {
            a[(s, i)] = g / (params[k + i].exp() + g);
        }
        y[s] = yy;
    }
    let ata = a.transpose() * &a + DMatrix::identity(k, k) * 1e-12;
    let aty = a.transpose() * y;
    if let Some(chol) = ata.cholesky() {
        let z = chol.solve(&aty);
        params[..k].copy_from_slice(z.as_slice());
    }
}

/// One damped Gauss-Newton step: solve `(JᵀJ + λ·diag(JᵀJ) + λεI)·δ = −Jᵀr`.
fn gn_step(samples: &[(f64, f64)], params: &[f64], k: usize, lambda: f64) -> Option<Vec<f64>> {
    let n = samples.len();
    let p = 2 * k;
    let mut jac = DMatrix::<f64>::zeros(n, p);
    let mut res = DVector::<f64>::zeros(n);
    for (s, &(g, y)) in samples.iter().enumerate() {
        for i in 0..k {
            let xi = params[k + i].exp();
            let denom = xi + g;
            jac[(s, i)] = g / denom;
            // ∂/∂η of ζγ/(e^η+γ) = −ζγ·ξ/(ξ+γ)²
            jac[(s, k + i)] = -params[i] * g * xi / (denom * denom);
        }
        res[s] = fit_model(g, params, k) - y;
    }
    let jtj = jac.transpose() * &jac;
    let mut lhs = jtj.clone();
    for i in 0..p {
        lhs[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
    }
    let rhs = -(jac.transpose() * res);
    lhs.cholesky().map(|c| c.solve(&rhs).as_slice().to_vec())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
