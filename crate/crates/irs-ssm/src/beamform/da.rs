//! NASR ascent by quadratic transform + dual ascent ("da").
//!
//! The sum-of-ratios objective is first shifted so every numerator is
//! positive, then each ratio `u_i/g_i` is replaced by the quadratic-transform
//! surrogate `2y_i√u_i − y_i²g_i`. At the current phases the surrogate
//! touches the true objective from below (with `y_i = √u_i/g_i`), so raising
//! the surrogate raises NASR — a textbook minorize-maximize ascent.
//!
//! The surrogate is still constrained to unit-modulus phases; that constraint
//! is split off onto an auxiliary copy Φ of the free vector φ and handled by
//! dual ascent:
//!
//! ```text
//! loop (outer):  y_i ← √u_i(Φ)/g_i(Φ)
//!   loop (inner):  Φ ← unit-phases(φ − λ/ρ)
//!                  φ ← (Σ y_i²·P_t·W_i + ρ/2·I)⁻¹·rhs(φ_prev, λ, Φ)
//!                  λ ← λ + ρ(φ − Φ)
//! ```
//!
//! The linear system is Hermitian positive definite by construction, so the
//! φ-step is a Cholesky solve. Each outer round then polishes the dual-ascent
//! candidate with projected gradient ascent on the same surrogate (weights
//! refreshed per step, so every accepted step provably raises NASR); a round
//! that finds no strict improvement means the phases are stationary for the
//! refreshed weights, which is this ascent's fixed point.

use num_complex::Complex64;

use super::{
    initial_phases, project_unit_modulus, qform, ratio_terms, BeamformOpts, BeamformResult,
    Beamformer, NasrObjective, SignForm,
};
use crate::model::{
    CVec, EffectiveChannels, PhaseProfile, PowerFactor, RandomStream, ScenarioConfig, SymbolSet,
};
use crate::Result;

/// Max-NASR beamformer via quadratic transform + dual ascent.
pub struct MaxNasrDa;

const DEFAULT_OUTER_CAP: usize = 200;
const INNER_CAP: usize = 500;
const MAX_RHO_ESCALATIONS: usize = 5;

/// One positively-shifted ratio term: `u_i(φ) = (U_i+M)·t_i + 4MQσ²` over
/// `g_i(φ) = 4Qσ² + t_i`, with `t_i = P_t·φ^H W φ` on the term's side.
struct ShiftedTerm {
    u_plus_m: f64,
    /// Numerator constant `4·M·Q_i·σ²` (keeps u_i strictly positive).
    c0: f64,
    /// Denominator constant `4·Q_i·σ²`.
    g0: f64,
    bob: bool,
}

struct ShiftedObjective<'a> {
    terms: Vec<ShiftedTerm>,
    obj: &'a NasrObjective,
    /// Σ_i M over all terms; `Σ u_i/g_i = NASR + total_shift`. Read by the
    /// shift-consistency oracles in the test module.
    #[cfg_attr(not(test), allow(dead_code))]
    total_shift: f64,
}

impl<'a> ShiftedObjective<'a> {
    fn new(obj: &'a NasrObjective) -> Self {
        let raw = ratio_terms(&obj.coeffs, SignForm::Maximize);
        let max_abs_u = raw.iter().map(|t| t.u.abs()).fold(0.0, f64::max);
        let m_shift = 1.1 * max_abs_u + 1e-6;
        let terms = raw
            .iter()
            .map(|t| {
                let (_, sigma2) = obj.side(t.side);
                ShiftedTerm {
                    u_plus_m: t.u + m_shift,
                    c0: 4.0 * m_shift * t.q * sigma2,
                    g0: 4.0 * t.q * sigma2,
                    bob: t.side == super::Side::Bob,
                }
            })
            .collect::<Vec<_>>();
        let total_shift = m_shift * raw.len() as f64;
        Self {
            terms,
            obj,
            total_shift,
        }
    }

    /// Per-term quadratic form values `t_i = P_t·φ^H W_side φ` (shared per
    /// side) as (Bob value, Eve value).
    fn t_values(&self, phi: &CVec) -> (f64, f64) {
        (
            self.obj.p_t * qform(&self.obj.w_b, phi).max(0.0),
            self.obj.p_t * qform(&self.obj.w_e, phi).max(0.0),
        )
    }

    fn u_g(&self, term: &ShiftedTerm, t_b: f64, t_e: f64) -> (f64, f64) {
        let t = if term.bob { t_b } else { t_e };
        (term.u_plus_m * t + term.c0, term.g0 + t)
    }

    /// Quadratic-transform weights `y_i = √u_i/g_i` at the given phases.
    fn weights(&self, phi: &CVec) -> Vec<f64> {
        let (t_b, t_e) = self.t_values(phi);
        self.terms
            .iter()
            .map(|term| {
                let (u, g) = self.u_g(term, t_b, t_e);
                u.sqrt() / g
            })
            .collect()
    }

    /// Surrogate value `F_y(φ) = Σ 2y_i√u_i(φ) − y_i²g_i(φ)`; touches
    /// `NASR + total_shift` at the point where `y` was computed and minorizes
    /// it everywhere else.
    fn surrogate(&self, phi: &CVec, y: &[f64]) -> f64 {
        let (t_b, t_e) = self.t_values(phi);
        self.terms
            .iter()
            .zip(y)
            .map(|(term, &yi)| {
                let (u, g) = self.u_g(term, t_b, t_e);
                2.0 * yi * u.sqrt() - yi * yi * g
            })
            .sum()
    }

    /// Wirtinger gradient (w.r.t. φ*) of the surrogate.
    fn surrogate_gradient(&self, phi: &CVec, y: &[f64]) -> CVec {
        let (t_b, t_e) = self.t_values(phi);
        let wb_phi = &self.obj.w_b * phi;
        let we_phi = &self.obj.w_e * phi;
        let mut coeff_b = 0.0;
        let mut coeff_e = 0.0;
        for (term, &yi) in self.terms.iter().zip(y) {
            let (u, _) = self.u_g(term, t_b, t_e);
            let c = yi * term.u_plus_m / u.sqrt() - yi * yi;
            if term.bob {
                coeff_b += c;
            } else {
                coeff_e += c;
            }
        }
        wb_phi * Complex64::new(self.obj.p_t * coeff_b, 0.0)
            + we_phi * Complex64::new(self.obj.p_t * coeff_e, 0.0)
    }
}

/// Inner dual-ascent loop for fixed weights `y`: split the unit-modulus
/// constraint onto Φ and alternate the three updates until both consensus
/// residuals settle. Returns the feasible iterate with the best surrogate
/// value seen (the first iterate is the projected start, so the result never
/// scores below it).
///
/// Convergence needs *both* residuals small: the Φ movement alone is
/// misleading, because right after the first φ-step the dual variable holds
/// exactly `ρ(φ − Φ)`, which makes the next projection reproduce the
/// starting Φ while the primal gap `φ − Φ` is still wide open.
fn inner_dual_ascent(
    shifted: &ShiftedObjective,
    y: &[f64],
    phi_start: &CVec,
    rho: f64,
    inner_tol: f64,
) -> Option<CVec> {
    let n = phi_start.len();
    let obj = shifted.obj;

    // A = Σ y_i²·P_t·W_i + (ρ/2)·I — Hermitian positive definite.
    let mut s_b = 0.0;
    let mut s_e = 0.0;
    for (term, &yi) in shifted.terms.iter().zip(y) {
        if term.bob {
            s_b += yi * yi;
        } else {
            s_e += yi * yi;
        }
    }
    let mut a = &obj.w_b * Complex64::new(obj.p_t * s_b, 0.0)
        + &obj.w_e * Complex64::new(obj.p_t * s_e, 0.0);
    for i in 0..n {
        a[(i, i)] += Complex64::new(rho / 2.0, 0.0);
    }
    let chol = a.cholesky()?;

    let mut phi = phi_start.clone();
    let mut cap = project_unit_modulus(&phi);
    let mut lambda = CVec::zeros(n);
    let mut best_cap = cap.clone();
    let mut best_sur = shifted.surrogate(&cap, y);
    // Residual tolerances scale with the iterate norm (‖Φ‖ = √n exactly).
    let tol = inner_tol * (n as f64).sqrt();

    for it in 0..INNER_CAP {
        // Φ-step: entrywise unit-modulus projection of φ − λ/ρ.
        let new_cap = project_unit_modulus(&(&phi - &lambda / Complex64::new(rho, 0.0)));
        let cap_delta = (&new_cap - &cap).norm();
        cap = new_cap;
        let sur = shifted.surrogate(&cap, y);
        if sur > best_sur {
            best_sur = sur;
            best_cap = cap.clone();
        }

        // φ-step: one Jacobi pass — the concave √u part is linearized at the
        // previous φ, leaving an HPD system in the new φ.
        let (t_b, t_e) = shifted.t_values(&phi);
        let wb_phi = &obj.w_b * &phi;
        let we_phi = &obj.w_e * &phi;
        let mut coeff_b = 0.0;
        let mut coeff_e = 0.0;
        for (term, &yi) in shifted.terms.iter().zip(y) {
            let (u, _) = shifted.u_g(term, t_b, t_e);
            let c = yi * term.u_plus_m / u.sqrt();
            if term.bob {
                coeff_b += c;
            } else {
                coeff_e += c;
            }
        }
        let rhs = wb_phi * Complex64::new(obj.p_t * coeff_b, 0.0)
            + we_phi * Complex64::new(obj.p_t * coeff_e, 0.0)
            + &lambda / Complex64::new(2.0, 0.0)
            + &cap * Complex64::new(rho / 2.0, 0.0);
        phi = chol.solve(&rhs);

        // λ-step: dual update on the consensus gap. With the projection
        // argument written as φ − λ/ρ, coherence of the three updates
        // (standard scaled consensus form under the relabeling λ ↦ −λ)
        // requires the dual to *subtract* the residual; accumulating it with
        // the opposite sign drives φ and Φ apart and parks the loop at its
        // starting point.
        lambda -= (&phi - &cap) * Complex64::new(rho, 0.0);

        let primal = (&phi - &cap).norm();
        if it > 0 && cap_delta <= tol && primal <= tol {
            break;
        }
    }
    Some(best_cap)
}

/// Gradient phase on the quadratic-transform surrogate, with the weights
/// refreshed at every step so each Armijo test is taken at the surrogate's
/// touch point. There the surrogate's value and gradient coincide with the
/// shifted objective's, and — since the surrogate minorizes it everywhere —
/// any surrogate increase lower-bounds the true increase: every accepted
/// step provably raises NASR itself. Refreshing per step (rather than per
/// outer round) matters because for fixed weights the surrogate goes flat
/// far before the objective does, which reduces progress to a crawl.
///
/// Steps live on the unit-modulus manifold: the Wirtinger gradient is first
/// projected onto the per-entry tangent directions (its radial component
/// only rescales |φ_i| and vanishes under the retraction), and the step size
/// warm-starts from the previously accepted one.
fn mm_gradient_phase(shifted: &ShiftedObjective, start: &CVec, max_steps: usize) -> CVec {
    let n = start.len();
    let mut phi = start.clone();
    let mut step_guess = 0.0f64;
    for _ in 0..max_steps {
        let y = shifted.weights(&phi);
        let mut tan = shifted.surrogate_gradient(&phi, &y);
        for i in 0..n {
            let radial = (tan[i] * phi[i].conj()).re;
            tan[i] -= phi[i] * Complex64::new(radial, 0.0);
        }
        let tnorm = tan.norm();
        if tnorm <= 1e-12 * (n as f64).sqrt() {
            break;
        }
        let base = shifted.surrogate(&phi, &y);
        // d/ds sur(φ + s·tan) at s = 0 equals 2‖tan‖².
        let slope = 2.0 * tnorm * tnorm;
        if step_guess <= 0.0 {
            step_guess = 1.0 / tnorm;
        }
        let mut step = 2.0 * step_guess;
        let mut accepted = None;
        for _ in 0..80 {
            let cand = project_unit_modulus(&(&phi + &tan * Complex64::new(step, 0.0)));
            if shifted.surrogate(&cand, &y) >= base + 1e-4 * step * slope {
                accepted = Some((cand, step));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, s)) => {
                phi = cand;
                step_guess = s;
            }
            None => break,
        }
    }
    phi
}

impl Beamformer for MaxNasrDa {
    fn tag(&self) -> &'static str {
        "da"
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
        let coeffs = opts.resolve_coeffs(config)?;
        let obj = NasrObjective::build(chans, syms, beta, config, coeffs);
        let shifted = ShiftedObjective::new(&obj);

        let outer_cap = if opts.max_outer == 0 {
            DEFAULT_OUTER_CAP
        } else {
            opts.max_outer
        };

        let mut phi = initial_phases(opts, config.n, stream);
        let mut value = obj.value(&phi);
        let mut trace = vec![(0usize, value)];
        let mut rho = opts.rho;
        let mut converged = false;
        let mut iterations = 0usize;
        const POLISH_CAP: usize = 500;

        for t in 1..=outer_cap {
            iterations = t;
            let y = shifted.weights(&phi);

            // Dual-ascent candidate for this round's weights. Singular solves
            // escalate ρ ×2 (bounded) per the errors contract; the HPD
            // construction makes failures rare.
            let mut candidate = None;
            for _ in 0..=MAX_RHO_ESCALATIONS {
                match inner_dual_ascent(&shifted, &y, &phi, rho, opts.inner_tol) {
                    Some(c) => {
                        candidate = Some(c);
                        break;
                    }
                    None => rho *= 2.0,
                }
            }

            // Complete the round: polish the candidate (or the incumbent,
            // when every solve failed) with the weight-refreshing gradient
            // phase, which drives the iterate toward true stationarity.
            let start = match candidate {
                Some(c) if shifted.surrogate(&c, &y) > shifted.surrogate(&phi, &y) => c,
                _ => phi.clone(),
            };
            let polished = mm_gradient_phase(&shifted, &start, POLISH_CAP);

            let cand_value = obj.value(&polished);
            if cand_value > value + 1e-12 {
                let gain = cand_value - value;
                phi = polished;
                value = cand_value;
                trace.push((t, value));
                if gain <= opts.objective_tol {
                    converged = true;
                    break;
                }
            } else {
                // The full round (dual ascent + gradient polish) found no
                // strict improvement: the phases are stationary for the
                // refreshed weights, which is this ascent's fixed point.
                converged = true;
                trace.push((t, value));
                break;
            }
        }

        Ok(BeamformResult {
            theta: PhaseProfile {
                theta: project_unit_modulus(&phi),
                relaxed: false,
            },
            objective_trace: trace,
            iterations,
            converged,
            degenerate: false,
            wall_time: started.elapsed().as_secs_f64(),
        })
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::super::testutil::{grid_search_max, tiny_opts, tiny_scenario};
    use super::*;
    use crate::model::{build_symbol_set, effective_channels, gen_channels};

    fn setup(seed: u64) -> (ScenarioConfig, EffectiveChannels, SymbolSet) {
        let config = ScenarioConfig {
            m: 4,
            g: 4,
            n: 8,
            n_b: 2,
            n_e: 2,
            sigma_b2: 0.1,
            sigma_e2: 0.1,
            p_s: 1.0,
            seed,
        };
        let ch = gen_channels(&config, RandomStream::new(seed));
        let eff = effective_channels(&ch).unwrap();
        let syms = build_symbol_set(&config);
        (config, eff, syms)
    }

    #[test]
    fn unit_projection_of_real_positive_is_all_ones() {
        // The Φ-step with real positive φ and λ = 0 reduces to projecting a
        // real positive vector: every phase is 0, so Φ = 1.
        let phi = CVec::from_iterator(4, [1.0, 0.5, 2.0, 0.1].iter().map(|&r| Complex64::new(r, 0.0)));
        let cap = project_unit_modulus(&phi);
        for z in cap.iter() {
            assert_eq!(*z, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn shifted_sum_reproduces_nasr_plus_constant() {
        let (config, eff, syms) = setup(61);
        let coeffs = crate::metrics::coeff_lookup(4, 4).unwrap();
        let obj = NasrObjective::build(&eff, &syms, PowerFactor::full(), &config, coeffs);
        let shifted = ShiftedObjective::new(&obj);
        let phi = super::super::random_phases(config.n, RandomStream::new(3));
        let (t_b, t_e) = shifted.t_values(&phi);
        let ratio_sum: f64 = shifted
            .terms
            .iter()
            .map(|term| {
                let (u, g) = shifted.u_g(term, t_b, t_e);
                u / g
            })
            .sum();
        let want = obj.value(&phi) + shifted.total_shift;
        assert!(
            (ratio_sum - want).abs() <= 1e-9 * want.abs().max(1.0),
            "Σu/g = {ratio_sum} vs NASR + shift = {want}"
        );
    }

    #[test]
    fn surrogate_touches_and_minorizes() {
        let (config, eff, syms) = setup(67);
        let coeffs = crate::metrics::coeff_lookup(4, 4).unwrap();
        let obj = NasrObjective::build(&eff, &syms, PowerFactor::full(), &config, coeffs);
        let shifted = ShiftedObjective::new(&obj);
        let phi0 = super::super::random_phases(config.n, RandomStream::new(5));
        let y = shifted.weights(&phi0);

        let at_touch = shifted.surrogate(&phi0, &y);
        let want = obj.value(&phi0) + shifted.total_shift;
        assert!(
            (at_touch - want).abs() <= 1e-9 * want.abs().max(1.0),
            "surrogate at its anchor {at_touch} vs objective {want}"
        );

        for s in 0..20u64 {
            let other = super::super::random_phases(config.n, RandomStream::new(100 + s));
            let sur = shifted.surrogate(&other, &y);
            let cap = obj.value(&other) + shifted.total_shift;
            assert!(
                sur <= cap + 1e-9 * cap.abs().max(1.0),
                "surrogate {sur} exceeds objective {cap} away from anchor"
            );
        }
    }

    #[test]
    fn da_output_is_unit_modulus_and_trace_monotone() {
        for seed in 0..20u64 {
            let (config, eff, syms) = setup(700 + seed);
            let res = MaxNasrDa
                .optimize(
                    &eff,
                    &syms,
                    PowerFactor::full(),
                    &config,
                    &BeamformOpts::default(),
                    RandomStream::new(seed),
                )
                .unwrap();
            for z in res.theta.theta.iter() {
                assert!(z.norm() == 1.0, "seed {seed}: |θ| = {} ≠ 1", z.norm());
            }
            assert!(!res.objective_trace.is_empty());
            let mut last = f64::NEG_INFINITY;
            for &(it, v) in &res.objective_trace {
                assert!(
                    v >= last - 1e-3,
                    "seed {seed}: NASR trace decreased at iter {it}: {v} after {last}"
                );
                last = last.max(v);
            }
        }
    }

    #[test]
    fn da_improves_on_its_starting_point() {
        let (config, eff, syms) = setup(71);
        let coeffs = crate::metrics::coeff_lookup(4, 4).unwrap();
        let obj = NasrObjective::build(&eff, &syms, PowerFactor::full(), &config, coeffs);
        let res = MaxNasrDa
            .optimize(
                &eff,
                &syms,
                PowerFactor::full(),
                &config,
                &BeamformOpts::default(),
                RandomStream::new(9),
            )
            .unwrap();
        let first = res.objective_trace.first().unwrap().1;
        let last = obj.value(&res.theta.theta);
        assert!(
            last >= first - 1e-9,
            "final NASR {last} fell below start {first}"
        );
    }

    #[test]
    fn da_reaches_phase_grid_optimum_on_tiny_instances() {
        // 12-point-per-element exhaustive grid at N = 3 as ground truth; the
        // optimizer must reach ≥ 0.9 × the grid NASR on ≥ 80% of draws.
        let mut hits = 0;
        let total = 50;
        for seed in 0..total {
            let config = tiny_scenario(seed);
            let ch = gen_channels(&config, RandomStream::new(1000 + seed));
            let eff = effective_channels(&ch).unwrap();
            let syms = build_symbol_set(&config);
            let opts = tiny_opts();
            let coeffs = opts.coeffs.clone().unwrap();
            let obj = NasrObjective::build(&eff, &syms, PowerFactor::full(), &config, coeffs);
            let (grid_best, _) = grid_search_max(3, 12, |phi| obj.value(phi));
            let res = MaxNasrDa
                .optimize(
                    &eff,
                    &syms,
                    PowerFactor::full(),
                    &config,
                    &opts,
                    RandomStream::new(seed),
                )
                .unwrap();
            let achieved = obj.value(&res.theta.theta);
            if achieved >= 0.9 * grid_best {
                hits += 1;
            }
        }
        assert!(
            hits * 10 >= total * 8,
            "grid-oracle success rate too low: {hits}/{total}"
        );
    }
}
