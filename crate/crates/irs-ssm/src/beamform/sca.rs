//! NASR ascent by successive convex approximation ("sca").
//!
//! The minimization form of the objective is a sum of ratios
//! `Σ h_i(φ)/g_i(φ)` (Bob terms carry −ζ, Eve terms +ζ), each with
//! `h_i = U_i·t_i`, `g_i = 4Q_iσ² + t_i`, `t_i = P_t·φ^H W φ` on the term's
//! side. One outer round fixes the current ratio values `α_i = h_i/g_i` and
//! then looks for phases that push every recentred term
//!
//! ```text
//! f_i(φ) = (U_i − α_i)·t_i(φ) − 4·α_i·Q_i·σ²      (f_i = 0 at the anchor)
//! ```
//!
//! strictly negative — which is exactly "every ratio drops below its current
//! value", hence the minimization objective decreases and NASR increases.
//!
//! With α fixed the natural subproblem is min-slack: minimize `max_i f̃_i(φ)`
//! over the relaxed unit disk `|φ_n| ≤ 1`, where `f̃_i` keeps the quadratic
//! form whenever its coefficient `(U_i − α_i)` is positive (convex, since the
//! kernels are PSD) and otherwise replaces the concave term by its tangent at
//! the anchor. The tangent of a concave function lies *above* it, so a
//! negative tangent slack certifies a negative true slack — the substitution
//! is conservative in the direction that matters. The subproblem is solved by
//! projected subgradient descent with a diminishing step.

use num_complex::Complex64;

use super::{
    initial_phases, qform, ratio_terms, BeamformOpts, BeamformResult, Beamformer, NasrObjective,
    Side, SignForm,
};
use crate::model::{
    CVec, EffectiveChannels, PhaseProfile, PowerFactor, RandomStream, ScenarioConfig, SymbolSet,
};
use crate::Result;

/// Max-NASR beamformer via successive convex approximation.
pub struct MaxNasrSca;

const DEFAULT_OUTER_CAP: usize = 100;
const SUBPROBLEM_STEPS: usize = 500;
/// A subproblem that cannot push the worst term below this slack is treated
/// as infeasible at the current α.
const FEASIBLE_SLACK: f64 = -1e-12;

/// One minimization-form ratio term `h_i/g_i = U_i·t_i / (g0_i + t_i)`.
struct MinTerm {
    u: f64,
    /// Denominator constant `4·Q_i·σ²` on the term's side.
    g0: f64,
    bob: bool,
}

fn min_form_terms(obj: &NasrObjective) -> Vec<MinTerm> {
    ratio_terms(&obj.coeffs, SignForm::Minimize)
        .iter()
        .map(|t| {
            let (_, sigma2) = obj.side(t.side);
            MinTerm {
                u: t.u,
                g0: 4.0 * t.q * sigma2,
                bob: t.side == Side::Bob,
            }
        })
        .collect()
}

fn side_t(obj: &NasrObjective, phi: &CVec) -> (f64, f64) {
    (
        obj.p_t * qform(&obj.w_b, phi).max(0.0),
        obj.p_t * qform(&obj.w_e, phi).max(0.0),
    )
}

/// Current per-term ratio values `α_i = h_i/g_i`; `h_i = 0 → α_i = 0` falls
/// out of the formula (the denominator is bounded away from zero by `g0`).
fn ratio_values(terms: &[MinTerm], t_b: f64, t_e: f64) -> Vec<f64> {
    terms
        .iter()
        .map(|term| {
            let t = if term.bob { t_b } else { t_e };
            term.u * t / (term.g0 + t)
        })
        .collect()
}

/// Projected subgradient descent on `max_i f̃_i` over the unit disk.
/// Returns the best iterate and its slack `max_i f̃_i`.
fn min_slack_subproblem(
    obj: &NasrObjective,
    terms: &[MinTerm],
    alpha: &[f64],
    phi0: &CVec,
    step_scale: f64,
) -> (CVec, f64) {
    let (t_b0, t_e0) = side_t(obj, phi0);
    // Anchor matvecs W·φ₀, shared by every tangent term on a side.
    let wb_phi0 = &obj.w_b * phi0;
    let we_phi0 = &obj.w_e * phi0;

    // Per-term data: coefficient c_i = U_i − α_i, constant offset
    // −4·α_i·Q_i·σ² (written via g0), anchor value f_i(φ₀), and whether the
    // term keeps its quadratic form (c_i > 0) or is linearized.
    struct Sub {
        c: f64,
        offset: f64,
        anchor: f64,
        bob: bool,
        quadratic: bool,
    }
    let subs: Vec<Sub> = terms
        .iter()
        .zip(alpha)
        .map(|(term, &a)| {
            let c = term.u - a;
            let offset = a * term.g0;
            let t0 = if term.bob { t_b0 } else { t_e0 };
            Sub {
                c,
                offset,
                anchor: c * t0 - offset,
                bob: term.bob,
                quadratic: c > 0.0,
            }
        })
        .collect();

    let eval = |phi: &CVec, t_b: f64, t_e: f64| -> (f64, usize) {
        let diff_b = 2.0 * (phi - phi0).dotc(&wb_phi0).re;
        let diff_e = 2.0 * (phi - phi0).dotc(&we_phi0).re;
        let mut worst = f64::NEG_INFINITY;
        let mut worst_idx = 0;
        for (i, s) in subs.iter().enumerate() {
            let v = if s.quadratic {
                let t = if s.bob { t_b } else { t_e };
                s.c * t - s.offset
            } else {
                let d = if s.bob { diff_b } else { diff_e };
                s.anchor + s.c * obj.p_t * d
            };
            if v > worst {
                worst = v;
                worst_idx = i;
            }
        }
        (worst, worst_idx)
    };

    let mut phi = phi0.clone();
    let mut best_phi = phi.clone();
    let (mut best_slack, _) = eval(&phi, t_b0, t_e0);

    for t in 1..=SUBPROBLEM_STEPS {
        let (t_b, t_e) = side_t(obj, &phi);
        let (slack, idx) = eval(&phi, t_b, t_e);
        if slack < best_slack {
            best_slack = slack;
            best_phi = phi.clone();
        }
        let s = &subs[idx];
        let grad: CVec = if s.quadratic {
            let w = if s.bob { &obj.w_b } else { &obj.w_e };
            (w * &phi) * Complex64::new(s.c * obj.p_t, 0.0)
        } else {
            let anchor_vec = if s.bob { &wb_phi0 } else { &we_phi0 };
            anchor_vec * Complex64::new(s.c * obj.p_t, 0.0)
        };
        let gnorm = grad.norm();
        if gnorm <= 1e-15 {
            break;
        }
        let step = step_scale / (t as f64).sqrt();
        phi -= grad * Complex64::new(step / gnorm, 0.0);
        // Entrywise projection back into the unit disk.
        for z in phi.iter_mut() {
            let r = z.norm();
            if r > 1.0 {
                *z /= r;
            }
        }
    }

    let (t_b, t_e) = side_t(obj, &phi);
    let (final_slack, _) = eval(&phi, t_b, t_e);
    if final_slack < best_slack {
        best_slack = final_slack;
        best_phi = phi;
    }
    (best_phi, best_slack)
}

impl Beamformer for MaxNasrSca {
    fn tag(&self) -> &'static str {
        "sca"
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
        let terms = min_form_terms(&obj);

        let outer_cap = if opts.max_outer == 0 {
            DEFAULT_OUTER_CAP
        } else {
            opts.max_outer
        };

        let mut phi = initial_phases(opts, config.n, stream);
        let (t_b, t_e) = side_t(&obj, &phi);
        let mut alpha = ratio_values(&terms, t_b, t_e);
        let mut alpha_prev = alpha.clone();
        let mut trace = vec![(0usize, obj.value(&phi))];
        let mut converged = false;
        let mut iterations = 0usize;

        for t in 1..=outer_cap {
            iterations = t;
            let (cand, slack) = min_slack_subproblem(&obj, &terms, &alpha, &phi, opts.sca_step);

            if slack > FEASIBLE_SLACK {
                // No phases push every ratio strictly down at this α: keep
                // the iterate and pull α back toward its previous value.
                for (a, p) in alpha.iter_mut().zip(&alpha_prev) {
                    *a = 0.5 * (*a + *p);
                }
                trace.push((t, obj.value(&phi)));
                continue;
            }

            let delta = (&cand - &phi).norm();
            phi = cand;
            alpha_prev = std::mem::take(&mut alpha);
            let (t_b, t_e) = side_t(&obj, &phi);
            alpha = ratio_values(&terms, t_b, t_e);
            trace.push((t, obj.value(&phi)));
            if delta <= opts.inner_tol {
                converged = true;
                break;
            }
        }

        Ok(BeamformResult {
            theta: PhaseProfile::from_phases_of(&phi),
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
