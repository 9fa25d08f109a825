//! IRS phase-shift optimizers behind a common [`Beamformer`] trait.
//!
//! Three optimizers and two baselines, all selected by string tag:
//!
//! | tag        | strategy                                                |
//! |------------|---------------------------------------------------------|
//! | `da`       | NASR ascent via quadratic transform + dual ascent       |
//! | `sca`      | NASR ascent via successive convex approximation         |
//! | `sdr`      | TASR lower bound via semidefinite relaxation            |
//! | `identity` | no beamforming (all-ones phases)                        |
//! | `random`   | iid uniform phases                                      |
//!
//! Every objective here reduces to quadratic forms through one identity:
//! for `Φ = diag(φ)`, `tr(D·Φ^H A Φ) = φ^H (conj(D) ∘ A) φ`. Precomputing
//! `W = conj(D_agg) ∘ (H'^H H')` per receiver turns each γ statistic — and
//! therefore NASR, and the SDR objective — into an `O(N²)` evaluation, which
//! is what the inner loops iterate on.

mod da;
mod sca;
mod sdr;

pub use da::MaxNasrDa;
pub use sca::MaxNasrSca;
pub use sdr::{build_omega, gaussian_randomize, sdp_solve, MaxTasrSdr, SdpSolution};

use num_complex::Complex64;

use crate::metrics::{coeff_lookup, nasr_component, FitCoefficients};
use crate::model::{
    CMat, CVec, EffectiveChannels, PhaseProfile, PowerFactor, RandomStream, ScenarioConfig,
    SymbolSet,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Results and options
// ---------------------------------------------------------------------------

/// Outcome of one beamformer run.
#[derive(Debug, Clone)]
pub struct BeamformResult {
    /// Final unit-modulus phase profile.
    pub theta: PhaseProfile,
    /// `(iteration, objective bits)` per outer iteration; never empty.
    pub objective_trace: Vec<(usize, f64)>,
    /// Outer iterations executed.
    pub iterations: usize,
    /// True when the stopping tolerance was reached before the cap.
    pub converged: bool,
    /// True when the instance gave the optimizer nothing to optimize
    /// (e.g. identical Bob/Eve channels under SDR).
    pub degenerate: bool,
    /// Wall-clock seconds spent.
    pub wall_time: f64,
}

/// Initial phase profile for the iterative optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitProfile {
    /// Uniform random phases (default; any feasible point works).
    #[default]
    Random,
    /// All-ones phases.
    Identity,
}

impl std::str::FromStr for InitProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "identity" => Ok(Self::Identity),
            other => Err(Error::UnknownTag(format!("init `{other}`"))),
        }
    }
}

/// Tunables shared by the beamformers; every field has a working default.
#[derive(Debug, Clone)]
pub struct BeamformOpts {
    /// Dual-ascent penalty ρ (escalated ×2 on inner solve failure).
    pub rho: f64,
    /// Gaussian randomization candidate count for SDR.
    pub l_randomize: usize,
    /// Outer iteration cap (0 = per-algorithm default).
    pub max_outer: usize,
    /// Inner-loop phase-change tolerance ‖ΔΦ‖.
    pub inner_tol: f64,
    /// Starting profile.
    pub init: InitProfile,
    /// Convergence threshold on objective improvement, bits.
    pub objective_tol: f64,
    /// SDP solver residual tolerance.
    pub sdp_tol: f64,
    /// SDP solver iteration cap.
    pub sdp_max_iter: usize,
    /// Subgradient step scale for the SCA feasibility subproblem.
    pub sca_step: f64,
    /// Fit coefficients override; when `None`, looked up from the embedded
    /// table for the scenario's `(M, G)`.
    pub coeffs: Option<FitCoefficients>,
}

impl Default for BeamformOpts {
    fn default() -> Self {
        Self {
            rho: 0.5,
            l_randomize: 100,
            max_outer: 0,
            inner_tol: 0.01,
            init: InitProfile::Random,
            objective_tol: 1e-4,
            sdp_tol: 1e-7,
            sdp_max_iter: 2000,
            sca_step: 0.25,
            coeffs: None,
        }
    }
}

impl BeamformOpts {
    /// Resolve the coefficient set: explicit override first, then the
    /// embedded table row for `(M, G)`.
    pub fn resolve_coeffs(&self, config: &ScenarioConfig) -> Result<FitCoefficients> {
        match &self.coeffs {
            Some(c) => Ok(c.clone()),
            None => coeff_lookup(config.m, config.g),
        }
    }
}

// ---------------------------------------------------------------------------
// Strategy trait and tag registry
// ---------------------------------------------------------------------------

/// A phase-shift optimization strategy.
pub trait Beamformer: Send + Sync {
    /// Stable tag used in CLI flags and result CSVs.
    fn tag(&self) -> &'static str;

    /// Optimize the IRS phases for fixed power factor `beta`.
    fn optimize(
        &self,
        chans: &EffectiveChannels,
        syms: &SymbolSet,
        beta: PowerFactor,
        config: &ScenarioConfig,
        opts: &BeamformOpts,
        stream: RandomStream,
    ) -> Result<BeamformResult>;
}

/// Construct a beamformer from its tag.
pub fn beamformer_from_tag(tag: &str) -> Result<Box<dyn Beamformer>> {
    match tag {
        "da" => Ok(Box::new(MaxNasrDa)),
        "sca" => Ok(Box::new(MaxNasrSca)),
        "sdr" => Ok(Box::new(MaxTasrSdr)),
        "identity" => Ok(Box::new(IdentityBaseline)),
        "random" => Ok(Box::new(RandomBaseline)),
        other => Err(Error::UnknownTag(other.into())),
    }
}

/// All registered beamformer tags.
pub const BEAMFORMER_TAGS: [&str; 5] = ["da", "sca", "sdr", "identity", "random"];

// ---------------------------------------------------------------------------
// Ratio terms and the quadratic-form objective
// ---------------------------------------------------------------------------

/// Which receiver a ratio term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bob,
    Eve,
}

/// Sign convention for the 2k ratio terms: the NASR ascent methods use the
/// maximization form (`U = +ζ` on Bob), the SCA reformulation descends the
/// minimization form (`U = −ζ` on Bob).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignForm {
    Maximize,
    Minimize,
}

/// One term of the sum-of-ratios objective, `U·t/(4Qσ² + t)` with
/// `t = P_t·φ^H W φ` on the tagged side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioTerm {
    /// Signed numerator coefficient (±ζ_i by side and sign form).
    pub u: f64,
    /// Denominator offset coefficient (ξ_i, always positive).
    pub q: f64,
    /// Channel side the quadratic form is evaluated on.
    pub side: Side,
}

/// Expand fit coefficients into the 2k signed ratio terms.
///
/// Bob terms carry `U = +ζ_i` (maximization form) or `−ζ_i` (minimization
/// form); Eve terms take the opposite sign. `Q_i = ξ_i` on both sides.
pub fn ratio_terms(coeffs: &FitCoefficients, form: SignForm) -> Vec<RatioTerm> {
    let bob_sign = match form {
        SignForm::Maximize => 1.0,
        SignForm::Minimize => -1.0,
    };
    let mut terms = Vec::with_capacity(2 * coeffs.terms.len());
    for &(zeta, xi) in &coeffs.terms {
        terms.push(RatioTerm {
            u: bob_sign * zeta,
            q: xi,
            side: Side::Bob,
        });
    }
    for &(zeta, xi) in &coeffs.terms {
        terms.push(RatioTerm {
            u: -bob_sign * zeta,
            q: xi,
            side: Side::Eve,
        });
    }
    terms
}

/// `conj(D) ∘ (Hp^H Hp)` — the Hermitian PSD matrix turning
/// `tr(D·Φ^H Hp^H Hp Φ)` into the quadratic form `φ^H W φ`.
pub fn quadratic_kernel(hp: &CMat, d_agg: &CMat) -> CMat {
    let a = hp.adjoint() * hp;
    let n = d_agg.nrows();
    CMat::from_fn(n, n, |r, c| d_agg[(r, c)].conj() * a[(r, c)])
}

/// Real quadratic form `φ^H W φ` (W Hermitian, so the value is real).
pub fn qform(w: &CMat, phi: &CVec) -> f64 {
    let n = w.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for c in 0..n {
            row += w[(r, c)] * phi[c];
        }
        acc += phi[r].conj() * row;
    }
    acc.re
}

/// The NASR objective reduced to its two quadratic kernels. Evaluating at a
/// phase vector costs `O(N²)`; this is the workhorse of every inner loop.
#[derive(Debug, Clone)]
pub struct NasrObjective {
    /// Bob's kernel `conj(D) ∘ (H_B'^H H_B')`.
    pub w_b: CMat,
    /// Eve's kernel.
    pub w_e: CMat,
    /// Transmit power `β²·P_s`.
    pub p_t: f64,
    /// Bob's noise power.
    pub sigma_b2: f64,
    /// Eve's noise power.
    pub sigma_e2: f64,
    /// Fit coefficients for the scenario's `(M, G)`.
    pub coeffs: FitCoefficients,
}

impl NasrObjective {
    /// Assemble kernels and coefficients for a scenario.
    ///
    /// The stored coefficients are re-expressed in the raw aggregate γ via
    /// [`FitCoefficients::with_gamma_scale`] so that [`Self::value`] equals
    /// `metrics::nasr` exactly: the fit is calibrated against the
    /// pair-averaged γ̄ = `calibrated_gamma_scale(M, G)`·γ_raw, and folding
    /// the scale into ξ keeps every downstream ratio-term expansion
    /// (`U·t/(4Qσ² + t)`) valid without touching its algebra.
    pub fn build(
        chans: &EffectiveChannels,
        syms: &SymbolSet,
        beta: PowerFactor,
        config: &ScenarioConfig,
        coeffs: FitCoefficients,
    ) -> Self {
        let scale = crate::metrics::calibrated_gamma_scale(config.m, config.g);
        Self {
            w_b: quadratic_kernel(&chans.h_bp, &syms.d_agg),
            w_e: quadratic_kernel(&chans.h_ep, &syms.d_agg),
            p_t: beta.p_t(config.p_s),
            sigma_b2: config.sigma_b2,
            sigma_e2: config.sigma_e2,
            coeffs: coeffs.with_gamma_scale(scale),
        }
    }

    /// γ on Bob's side at phases `phi`.
    pub fn gamma_b(&self, phi: &CVec) -> f64 {
        self.p_t * qform(&self.w_b, phi) / (4.0 * self.sigma_b2)
    }

    /// γ on Eve's side at phases `phi`.
    pub fn gamma_e(&self, phi: &CVec) -> f64 {
        self.p_t * qform(&self.w_e, phi) / (4.0 * self.sigma_e2)
    }

    /// NASR value at phases `phi`, in bits.
    pub fn value(&self, phi: &CVec) -> f64 {
        nasr_component(self.gamma_b(phi).max(0.0), &self.coeffs)
            - nasr_component(self.gamma_e(phi).max(0.0), &self.coeffs)
    }

    /// Kernel and noise power for a side.
    pub fn side(&self, side: Side) -> (&CMat, f64) {
        match side {
            Side::Bob => (&self.w_b, self.sigma_b2),
            Side::Eve => (&self.w_e, self.sigma_e2),
        }
    }
}

/// Entrywise unit-modulus projection: keep only the phase of every entry.
pub(crate) fn project_unit_modulus(z: &CVec) -> CVec {
    PhaseProfile::from_phases_of(z).theta
}

/// Random uniform phase vector (the default feasible starting point).
pub(crate) fn random_phases(n: usize, stream: RandomStream) -> CVec {
    use rand::Rng;
    let mut rng = stream.rng();
    let angles: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    PhaseProfile::from_angles(&angles).theta
}

pub(crate) fn initial_phases(opts: &BeamformOpts, n: usize, stream: RandomStream) -> CVec {
    match opts.init {
        InitProfile::Random => random_phases(n, stream),
        InitProfile::Identity => PhaseProfile::identity(n).theta,
    }
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// All-ones phases: the surface reflects without beamforming.
pub struct IdentityBaseline;

/// Iid uniform random phases.
pub struct RandomBaseline;

/// All-ones phase profile.
pub fn baseline_identity(n: usize) -> PhaseProfile {
    PhaseProfile::identity(n)
}

/// Phase profile with iid angles uniform on [0, 2π).
pub fn baseline_random(n: usize, stream: RandomStream) -> PhaseProfile {
    PhaseProfile {
        theta: random_phases(n, stream),
        relaxed: false,
    }
}

/// Shared result assembly for the two baselines: the trace carries the NASR
/// at the fixed profile when coefficients exist, else the profile is reported
/// with a zero-objective trace entry.
fn baseline_result(
    theta: PhaseProfile,
    chans: &EffectiveChannels,
    syms: &SymbolSet,
    beta: PowerFactor,
    config: &ScenarioConfig,
    opts: &BeamformOpts,
    started: std::time::Instant,
) -> BeamformResult {
    let objective = opts
        .resolve_coeffs(config)
        .map(|coeffs| {
            NasrObjective::build(chans, syms, beta, config, coeffs).value(&theta.theta)
        })
        .unwrap_or(0.0);
    BeamformResult {
        theta,
        objective_trace: vec![(0, objective)],
        iterations: 0,
        converged: true,
        degenerate: false,
        wall_time: started.elapsed().as_secs_f64(),
    }
}

impl Beamformer for IdentityBaseline {
    fn tag(&self) -> &'static str {
        "identity"
    }

    fn optimize(
        &self,
        chans: &EffectiveChannels,
        syms: &SymbolSet,
        beta: PowerFactor,
        config: &ScenarioConfig,
        opts: &BeamformOpts,
        _stream: RandomStream,
    ) -> Result<BeamformResult> {
        let started = std::time::Instant::now();
        Ok(baseline_result(
            baseline_identity(config.n),
            chans,
            syms,
            beta,
            config,
            opts,
            started,
        ))
    }
}

impl Beamformer for RandomBaseline {
    fn tag(&self) -> &'static str {
        "random"
    }

    fn optimize(
        &self,
        chans: &EffectiveChannels,
        syms: &SymbolSet,
        beta: PowerFactor,
        config: &ScenarioConfig,
        opts: &BeamformOpts,
        stream: RandomStream,
    ) -> Result<BeamformResult> {
        let started = std::time::Instant::now();
        Ok(baseline_result(
            baseline_random(config.n, stream),
            chans,
            syms,
            beta,
            config,
            opts,
            started,
        ))
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------


#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::gamma_stat;
    use crate::model::{build_symbol_set, effective_channels, gen_channels};

    fn setup(seed: u64) -> (ScenarioConfig, EffectiveChannels, SymbolSet) {
        let config = ScenarioConfig {
            m: 4,
            g: 4,
            n: 8,
            n_b: 2,
            n_e: 2,
            sigma_b2: 0.1,
            sigma_e2: 0.2,
            p_s: 1.0,
            seed,
        };
        let ch = gen_channels(&config, RandomStream::new(seed));
        let eff = effective_channels(&ch).unwrap();
        let syms = build_symbol_set(&config);
        (config, eff, syms)
    }

    #[test]
    fn ratio_terms_mirror_table_row() {
        let coeffs = coeff_lookup(4, 4).unwrap();
        let terms = ratio_terms(&coeffs, SignForm::Maximize);
        assert_eq!(terms.len(), 6, "2k terms for k = 3");
        let q_bob: Vec<f64> = terms
            .iter()
            .filter(|t| t.side == Side::Bob)
            .map(|t| t.q)
            .collect();
        let q_eve: Vec<f64> = terms
            .iter()
            .filter(|t| t.side == Side::Eve)
            .map(|t| t.q)
            .collect();
        assert_eq!(q_bob, vec![3.74558, 3.30759, 0.84914]);
        assert_eq!(q_eve, q_bob, "ξ values duplicate across sides");
        for (term, &(zeta, _)) in terms.iter().take(3).zip(&coeffs.terms) {
            assert_eq!(term.u, zeta, "Bob carries +ζ in the max form");
        }
        for (term, &(zeta, _)) in terms.iter().skip(3).zip(&coeffs.terms) {
            assert_eq!(term.u, -zeta, "Eve carries −ζ in the max form");
        }

        let min_terms = ratio_terms(&coeffs, SignForm::Minimize);
        for (a, b) in terms.iter().zip(&min_terms) {
            assert_eq!(a.u, -b.u, "min form flips every sign");
            assert_eq!(a.q, b.q);
        }
    }

    #[test]
    fn ratio_terms_zero_coefficients_zero_numerators() {
        let coeffs = FitCoefficients::new(vec![(0.0, 1.0), (0.0, 2.0)], 0.0, 2, 2).unwrap();
        let terms = ratio_terms(&coeffs, SignForm::Maximize);
        assert_eq!(terms.len(), 4);
        assert!(terms.iter().all(|t| t.u == 0.0));
    }

    #[test]
    fn quadratic_kernel_reproduces_trace_form() {
        // φ^H W φ must equal tr(D·Φ^H A Φ) — checked through gamma_stat,
        // which computes the trace directly.
        for seed in 0..8u64 {
            let (config, eff, syms) = setup(300 + seed);
            let w_b = quadratic_kernel(&eff.h_bp, &syms.d_agg);
            let phi = random_phases(config.n, RandomStream::new(seed));
            let profile = PhaseProfile {
                theta: phi.clone(),
                relaxed: false,
            };
            let p_t = 0.81;
            let via_kernel = p_t * qform(&w_b, &phi) / (4.0 * config.sigma_b2);
            let via_trace = gamma_stat(&eff.h_bp, &profile, p_t, config.sigma_b2, &syms.d_agg);
            assert!(
                (via_kernel - via_trace).abs() <= 1e-10 * via_trace.abs().max(1.0),
                "seed {seed}: Hadamard form {via_kernel} vs trace {via_trace}"
            );
        }
    }

    #[test]
    fn quadratic_kernel_is_hermitian_psd() {
        let (_, eff, syms) = setup(17);
        let w = quadratic_kernel(&eff.h_bp, &syms.d_agg);
        let herm = (&w - w.adjoint()).norm();
        assert!(herm <= 1e-12 * w.norm(), "kernel Hermitian deviation {herm}");
        let eig = nalgebra::SymmetricEigen::new(w.clone());
        let min = eig.eigenvalues.min();
        assert!(
            min >= -1e-10 * w.norm().max(1.0),
            "kernel must be PSD (Schur product of PSD factors), min eig {min}"
        );
    }

    #[test]
    fn nasr_objective_matches_metrics_nasr() {
        let (config, eff, syms) = setup(23);
        let coeffs = coeff_lookup(config.m, config.g).unwrap();
        let beta = PowerFactor::new(0.7).unwrap();
        let obj = NasrObjective::build(&eff, &syms, beta, &config, coeffs.clone());
        let phi = random_phases(config.n, RandomStream::new(99));
        let profile = PhaseProfile {
            theta: phi.clone(),
            relaxed: false,
        };
        let via_obj = obj.value(&phi);
        let via_metrics = crate::metrics::nasr(&eff, &profile, beta, &config, &syms, &coeffs);
        assert!(
            (via_obj - via_metrics).abs() <= 1e-10 * via_metrics.abs().max(1.0),
            "objective {via_obj} vs metrics {via_metrics}"
        );
    }

    #[test]
    fn baseline_identity_is_all_ones() {
        let p = baseline_identity(5);
        assert!(p.theta.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
        assert!(!p.relaxed);
    }

    #[test]
    fn baseline_random_angles_are_uniform() {
        // Kolmogorov–Smirnov statistic of pooled angles vs U[0, 2π) at
        // N·trials = 10⁴ must stay ≤ 0.05.
        let n = 100;
        let trials = 100;
        let mut angles = Vec::with_capacity(n * trials);
        let root = RandomStream::new(404);
        for t in 0..trials {
            let p = baseline_random(n, root.substream(t as u64));
            assert!(p.theta.iter().all(|z| z.norm() == 1.0));
            angles.extend(p.theta.iter().map(|z| {
                let a = z.arg();
                if a < 0.0 {
                    a + std::f64::consts::TAU
                } else {
                    a
                }
            }));
        }
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = angles.len() as f64;
        let mut ks: f64 = 0.0;
        for (i, a) in angles.iter().enumerate() {
            let cdf = a / std::f64::consts::TAU;
            let emp_hi = (i + 1) as f64 / m;
            let emp_lo = i as f64 / m;
            ks = ks.max((cdf - emp_lo).abs()).max((emp_hi - cdf).abs());
        }
        assert!(ks <= 0.05, "KS statistic {ks} exceeds 0.05");
    }

    #[test]
    fn baseline_beamformers_run_through_trait() {
        let (config, eff, syms) = setup(31);
        let opts = BeamformOpts::default();
        for tag in ["identity", "random"] {
            let bf = beamformer_from_tag(tag).unwrap();
            assert_eq!(bf.tag(), tag);
            let res = bf
                .optimize(
                    &eff,
                    &syms,
                    PowerFactor::full(),
                    &config,
                    &opts,
                    RandomStream::new(7),
                )
                .unwrap();
            assert!(res.theta.theta.iter().all(|z| z.norm() == 1.0));
            assert!(!res.objective_trace.is_empty());
            assert!(res.converged);
        }
        assert!(beamformer_from_tag("nope").is_err());
    }

    #[test]
    fn tag_registry_produces_matching_tags() {
        for tag in BEAMFORMER_TAGS {
            let bf = beamformer_from_tag(tag).unwrap();
            assert_eq!(bf.tag(), tag, "registry tag must round-trip");
        }
    }

    #[test]
    fn objectives_are_global_phase_invariant() {
        let (config, eff, syms) = setup(41);
        let coeffs = coeff_lookup(config.m, config.g).unwrap();
        let obj = NasrObjective::build(&eff, &syms, PowerFactor::full(), &config, coeffs);
        let phi = random_phases(config.n, RandomStream::new(5));
        let rot = phi.map(|z| z * Complex64::from_polar(1.0, 0.777));
        let a = obj.value(&phi);
        let b = obj.value(&rot);
        assert!(
            (a - b).abs() <= 1e-10 * a.abs().max(1.0),
            "global phase changed NASR: {a} vs {b}"
        );
    }

    #[test]
    fn missing_coefficients_error_names_refit_path() {
        let config = ScenarioConfig {
            m: 2,
            g: 3,
            n: 6,
            n_b: 2,
            n_e: 2,
            sigma_b2: 0.1,
            sigma_e2: 0.1,
            p_s: 1.0,
            seed: 1,
        };
        let err = BeamformOpts::default().resolve_coeffs(&config).unwrap_err();
        assert!(
            err.to_string().contains("refit"),
            "error should direct the caller to refitting: {err}"
        );
    }
}
