//! System model: scenario configuration, Rayleigh channel generation, the
//! spatial-modulation supersymbol alphabet, and IRS phase profiles.
//!
//! The physical picture: Alice's single antenna reaches the IRS over `h_t`
//! (1×N); the surface reflects toward Bob over `H_B` (N_b×N) and toward Eve
//! over `H_E` (N_e×N). Because the surface is the only path, each receiver
//! sees the cascaded channel `H' = H · diag(h_t)` — the per-element product
//! of the two hops. Spatial modulation switches ON one of `G` contiguous
//! element groups per symbol and transmits an M-PSK point through it, so a
//! supersymbol is `x = s_i · b_j` with `s_i` the group-i selector and `b_j`
//! a unit-modulus constellation point.
//!
//! Everything here is immutable after construction and safe to share across
//! threads. All randomness flows through [`RandomStream`], which derives
//! independent substreams from `(seed, label…)` so parallel trials stay
//! reproducible.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Dense complex matrix used throughout.
pub type CMat = DMatrix<Complex64>;
/// Dense complex column vector used throughout.
pub type CVec = DVector<Complex64>;

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Deterministic random stream with cheap substream derivation.
///
/// A 64-bit state seeds a ChaCha12 generator; [`RandomStream::substream`]
/// mixes a label into the state (splitmix-style finalizer) so that work items
/// such as `(sweep point, trial)` get independent, reproducible generators
/// regardless of scheduling order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStream {
    state: u64,
}

/// splitmix64 finalizer: a fast, well-dispersing 64-bit mix.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    /// Root stream for a scenario seed.
    pub fn new(seed: u64) -> Self {
        Self {
            state: splitmix64(seed),
        }
    }

    /// Derive an independent child stream for `label`.
    pub fn substream(&self, label: u64) -> Self {
        Self {
            state: splitmix64(self.state ^ splitmix64(label.wrapping_add(0x517C_C1B7_2722_0A95))),
        }
    }

    /// Derive a child stream for a `(a, b)` label pair, e.g. (point, trial).
    pub fn substream2(&self, a: u64, b: u64) -> Self {
        self.substream(a).substream(b)
    }

    /// Materialize the stream as a concrete RNG.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.state)
    }
}

/// One draw of a circularly-symmetric complex Gaussian CN(0, 1):
/// real and imaginary parts independent N(0, 1/2).
pub fn draw_cn01(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

/// All system parameters for one experiment scenario.
///
/// Serialized as JSON with exactly the keys
/// `{"M","G","N","N_b","N_e","sigma_b2","sigma_e2","P_s","seed"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Constellation order (PSK), one of {2, 4, 8}.
    #[serde(rename = "M")]
    pub m: usize,
    /// Number of IRS element groups (the spatial alphabet size).
    #[serde(rename = "G")]
    pub g: usize,
    /// Number of IRS elements; must be a multiple of `G`.
    #[serde(rename = "N")]
    pub n: usize,
    /// Receive antennas at Bob.
    #[serde(rename = "N_b")]
    pub n_b: usize,
    /// Receive antennas at Eve.
    #[serde(rename = "N_e")]
    pub n_e: usize,
    /// Bob's noise variance (linear watts).
    pub sigma_b2: f64,
    /// Eve's noise variance (linear watts).
    pub sigma_e2: f64,
    /// Total transmit power budget (watts); actual power is `beta²·P_s`.
    #[serde(rename = "P_s")]
    pub p_s: f64,
    /// 64-bit RNG seed for everything derived from this scenario.
    pub seed: u64,
}

impl ScenarioConfig {
    /// Check all scenario invariants, returning a description of the first
    /// violation.
    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 8].contains(&self.m) {
            return Err(Error::InvalidScenario(format!(
                "M must be one of {{2, 4, 8}}, got {}",
                self.m
            )));
        }
        if self.g < 2 {
            return Err(Error::InvalidScenario(format!("G must be ≥ 2, got {}", self.g)));
        }
        if self.n < self.g {
            return Err(Error::InvalidScenario(format!(
                "N must be ≥ G, got N = {}, G = {}",
                self.n, self.g
            )));
        }
        if self.n % self.g != 0 {
            return Err(Error::InvalidScenario(format!(
                "N must be a multiple of G, got N = {}, G = {}",
                self.n, self.g
            )));
        }
        if self.n_b == 0 || self.n_e == 0 {
            return Err(Error::InvalidScenario(
                "antenna counts N_b, N_e must be ≥ 1".into(),
            ));
        }
        for (name, v) in [
            ("sigma_b2", self.sigma_b2),
            ("sigma_e2", self.sigma_e2),
            ("P_s", self.p_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Elements per group, `N/G`.
    pub fn group_size(&self) -> usize {
        self.n / self.g
    }

    /// Parse and validate a scenario from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialize to the canonical JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Load and validate a scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }
}

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

/// Raw Rayleigh channels: Alice→IRS row `h_t`, IRS→Bob `H_B`, IRS→Eve `H_E`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Alice→IRS channel, length `N` (stored as a column vector).
    pub h_t: CVec,
    /// IRS→Bob channel, `N_b × N`.
    pub h_b: CMat,
    /// IRS→Eve channel, `N_e × N`.
    pub h_e: CMat,
}

/// Cascaded (effective) channels `H' = H · diag(h_t)` for both receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    /// `H_B · diag(h_t)`, `N_b × N`.
    pub h_bp: CMat,
    /// `H_E · diag(h_t)`, `N_e × N`.
    pub h_ep: CMat,
}

/// Draw a fresh channel set with iid CN(0, 1) entries.
///
/// Draw order is fixed (h_t, then H_B row-major, then H_E row-major) so a
/// given stream always yields the same channels.
pub fn gen_channels(config: &ScenarioConfig, stream: RandomStream) -> ChannelSet {
    let mut rng = stream.rng();
    let n = config.n;
    let h_t = CVec::from_fn(n, |_, _| draw_cn01(&mut rng));
    let mut h_b = CMat::zeros(config.n_b, n);
    for r in 0..config.n_b {
        for c in 0..n {
            h_b[(r, c)] = draw_cn01(&mut rng);
        }
    }
    let mut h_e = CMat::zeros(config.n_e, n);
    for r in 0..config.n_e {
        for c in 0..n {
            h_e[(r, c)] = draw_cn01(&mut rng);
        }
    }
    ChannelSet { h_t, h_b, h_e }
}

/// Compose the cascaded channels `H_B' = H_B·diag(h_t)` and
/// `H_E' = H_E·diag(h_t)` (column `n` of each hop matrix scaled by `h_t[n]`).
pub fn effective_channels(ch: &ChannelSet) -> Result<EffectiveChannels> {
    let n = ch.h_t.len();
    if ch.h_b.ncols() != n || ch.h_e.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "h_t has {} elements but H_B has {} and H_E has {} columns",
            n,
            ch.h_b.ncols(),
            ch.h_e.ncols()
        )));
    }
    Ok(EffectiveChannels {
        h_bp: scale_columns(&ch.h_b, &ch.h_t),
        h_ep: scale_columns(&ch.h_e, &ch.h_t),
    })
}

/// `M · diag(v)`: column `n` of `m` scaled by `v[n]`.
pub fn scale_columns(m: &CMat, v: &CVec) -> CMat {
    debug_assert_eq!(m.ncols(), v.len());
    let mut out = m.clone();
    for c in 0..out.ncols() {
        let s = v[c];
        for r in 0..out.nrows() {
            out[(r, c)] *= s;
        }
    }
    out
}

impl ChannelSet {
    /// Write the channel dump CSV (`matrix,row,col,re,im`).
    pub fn dump_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["matrix", "row", "col", "re", "im"])?;
        for (c, z) in self.h_t.iter().enumerate() {
            wtr.write_record(["ht", "0", &c.to_string(), &fmt_f64(z.re), &fmt_f64(z.im)])?;
        }
        for (name, m) in [("HB", &self.h_b), ("HE", &self.h_e)] {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let z = m[(r, c)];
                    wtr.write_record([
                        name,
                        &r.to_string(),
                        &c.to_string(),
                        &fmt_f64(z.re),
                        &fmt_f64(z.im),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read a channel dump produced by [`ChannelSet::dump_csv`].
    pub fn load_csv<R: Read>(r: R, config: &ScenarioConfig) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut h_t = CVec::zeros(config.n);
        let mut h_b = CMat::zeros(config.n_b, config.n);
        let mut h_e = CMat::zeros(config.n_e, config.n);
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::InvalidInput("short channel CSV record".into()))?
                    .parse()
                    .map_err(|e| Error::InvalidInput(format!("bad float in channel CSV: {e}")))
            };
            let parse_idx = |i: usize| -> Result<usize> {
                rec.get(i)
                    .ok_or_else(|| Error::InvalidInput("short channel CSV record".into()))?
                    .parse()
                    .map_err(|e| Error::InvalidInput(format!("bad index in channel CSV: {e}")))
            };
            let row = parse_idx(1)?;
            let col = parse_idx(2)?;
            let z = Complex64::new(parse(3)?, parse(4)?);
            match rec.get(0) {
                Some("ht") => h_t[col] = z,
                Some("HB") => h_b[(row, col)] = z,
                Some("HE") => h_e[(row, col)] = z,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown matrix tag {other:?} in channel CSV"
                    )))
                }
            }
        }
        Ok(Self { h_t, h_b, h_e })
    }

    /// Short content hash (first 16 hex chars of SHA-256 over the entry bytes
    /// in dump order) for verifying paired-channel experiment designs.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        let mut feed = |z: &Complex64| {
            hasher.update(z.re.to_le_bytes());
            hasher.update(z.im.to_le_bytes());
        };
        self.h_t.iter().for_each(&mut feed);
        for m in [&self.h_b, &self.h_e] {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    feed(&m[(r, c)]);
                }
            }
        }
        let digest = hasher.finalize();
        let mut s = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }
}

/// Round-trippable float formatting for CSV output.
fn fmt_f64(v: f64) -> String {
    // `{:?}` on f64 prints the shortest representation that parses back
    // to the same bits.
    format!("{v:?}")
}

// ---------------------------------------------------------------------------
// Supersymbol alphabet
// ---------------------------------------------------------------------------

/// The spatial-modulation alphabet: constellation, group selectors, the GM
/// supersymbols `x_k = s_i·b_j`, and the aggregate pairwise-difference matrix
/// `D_agg = Σ_{k≠l} (x_k−x_l)(x_k−x_l)^H` (both orders of each pair).
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSet {
    /// M unit-energy PSK points.
    pub constellation: Vec<Complex64>,
    /// G binary selectors; `selectors[i][e] = 1` iff element `e` is in group `i`.
    pub selectors: Vec<DVector<f64>>,
    /// GM supersymbols in fixed (group-major, constellation-minor) order.
    pub supersymbols: Vec<CVec>,
    /// `Σ_{k≠l} d_{kl} d_{kl}^H`, N×N Hermitian PSD.
    pub d_agg: CMat,
}

/// `k`-th M-PSK point `e^{j·2πk/M}`.
///
/// For M ∈ {2, 4, 8} the angles are multiples of π/4, for which exact
/// coordinate values exist in f64; using them makes zero-mean and
/// unit-modulus checks exact.
pub fn psk_point(k: usize, m: usize) -> Complex64 {
    const H: f64 = FRAC_1_SQRT_2;
    const EIGHTHS: [(f64, f64); 8] = [
        (1.0, 0.0),
        (H, H),
        (0.0, 1.0),
        (-H, H),
        (-1.0, 0.0),
        (-H, -H),
        (0.0, -1.0),
        (H, -H),
    ];
    if m > 0 && 8 % m == 0 {
        let (re, im) = EIGHTHS[(k % m) * (8 / m)];
        Complex64::new(re, im)
    } else {
        let ang = 2.0 * std::f64::consts::PI * (k as f64) / (m as f64);
        Complex64::new(ang.cos(), ang.sin())
    }
}

/// Construct the supersymbol alphabet for a scenario.
///
/// Selectors use contiguous element blocks (group `i` covers elements
/// `i·N/G .. (i+1)·N/G`). Supersymbols are enumerated group-major /
/// constellation-minor: `x_{i·M+j} = s_i·b_j`.
///
/// `D_agg` is computed via the expansion of the ordered pair sum,
/// `Σ_{k,l} (x_k−x_l)(x_k−x_l)^H = 2K·Σ_k x_k x_k^H − 2(Σ_k x_k)(Σ_k x_k)^H`
/// with `K = GM` (diagonal `k = l` terms vanish). Tests check it against the
/// brute-force double loop.
pub fn build_symbol_set(config: &ScenarioConfig) -> SymbolSet {
    let (m, g, n) = (config.m, config.g, config.n);
    let nbar = n / g;
    let constellation: Vec<Complex64> = (0..m).map(|k| psk_point(k, m)).collect();
    let selectors: Vec<DVector<f64>> = (0..g)
        .map(|i| DVector::from_fn(n, |e, _| if e / nbar == i { 1.0 } else { 0.0 }))
        .collect();
    let mut supersymbols = Vec::with_capacity(g * m);
    for sel in &selectors {
        for &b in &constellation {
            supersymbols.push(CVec::from_fn(n, |e, _| b * sel[e]));
        }
    }

    let k_total = supersymbols.len();
    let mut sum_outer = CMat::zeros(n, n);
    let mut sum_x = CVec::zeros(n);
    for x in &supersymbols {
        sum_outer += x * x.adjoint();
        sum_x += x;
    }
    let two_k = Complex64::new(2.0 * k_total as f64, 0.0);
    let d_agg = sum_outer * two_k - (&sum_x * sum_x.adjoint()) * Complex64::new(2.0, 0.0);

    SymbolSet {
        constellation,
        selectors,
        supersymbols,
        d_agg,
    }
}

impl SymbolSet {
    /// Difference vector `x_k − x_l`.
    pub fn diff(&self, k: usize, l: usize) -> CVec {
        &self.supersymbols[k] - &self.supersymbols[l]
    }

    /// Number of supersymbols, `G·M`.
    pub fn len(&self) -> usize {
        self.supersymbols.len()
    }

    /// True iff the alphabet is empty (never for a valid scenario).
    pub fn is_empty(&self) -> bool {
        self.supersymbols.is_empty()
    }
}

/// Spectral rate of the modulation: `log2(M) + log2(G)` bits per symbol.
///
/// Errors if either argument is not a power of two (the bit mapping needs
/// whole bits per index).
pub fn spectral_rate(m: usize, g: usize) -> Result<f64> {
    for (name, v) in [("M", m), ("G", g)] {
        if v < 2 || !v.is_power_of_two() {
            return Err(Error::NotPowerOfTwo { name, value: v });
        }
    }
    Ok((m as f64).log2() + (g as f64).log2())
}

// ---------------------------------------------------------------------------
// Phase profile and power factor
// ---------------------------------------------------------------------------

/// IRS reflection coefficients θ (the diagonal of Φ).
///
/// A finalized profile has `|θ_n| = 1` exactly; a relaxed profile (interior
/// iterate of an optimizer) satisfies `|θ_n| ≤ 1 + 1e−9` and is flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    /// Reflection coefficients, length N.
    pub theta: CVec,
    /// True while the unit-modulus constraint is only relaxed (|θ_n| ≤ 1).
    pub relaxed: bool,
}

/// Unit complex number `e^{j·angle}` with `|z| = 1` exact: one
/// renormalization pass pulls `hypot` onto 1.0 in every observed case, and
/// the loop guarantees it.
fn unit_from_angle(angle: f64) -> Complex64 {
    let (s, c) = angle.sin_cos();
    let mut z = Complex64::new(c, s);
    for _ in 0..3 {
        let h = z.norm();
        if h == 1.0 {
            return z;
        }
        z /= h;
    }
    z
}

impl PhaseProfile {
    /// Finalized profile from phase angles (radians).
    pub fn from_angles(angles: &[f64]) -> Self {
        Self {
            theta: CVec::from_iterator(angles.len(), angles.iter().map(|&a| unit_from_angle(a))),
            relaxed: false,
        }
    }

    /// Finalized profile keeping only the angles of `z` (entrywise `e^{j·arg}`).
    pub fn from_phases_of(z: &CVec) -> Self {
        Self {
            theta: z.map(|v| unit_from_angle(v.arg())),
            relaxed: false,
        }
    }

    /// All-ones profile (IRS acting as a plain mirror).
    pub fn identity(n: usize) -> Self {
        Self {
            theta: CVec::from_element(n, Complex64::new(1.0, 0.0)),
            relaxed: false,
        }
    }

    /// Relaxed (not yet unit-modulus) profile; callers assert |θ_n| ≤ 1 + 1e−9.
    pub fn relaxed(theta: CVec) -> Self {
        Self {
            theta,
            relaxed: true,
        }
    }

    /// Number of IRS elements.
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    /// True iff the profile has no elements.
    pub fn is_empty(&self) -> bool {
        self.theta.len() == 0
    }

    /// `H · Φ` for this profile (column `n` of `H` scaled by `θ_n`).
    pub fn apply_right(&self, h: &CMat) -> CMat {
        scale_columns(h, &self.theta)
    }
}

/// Transmit power factor β ∈ (0, 1]; the transmitted power is `β²·P_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFactor {
    beta: f64,
}

impl PowerFactor {
    /// Validated constructor; β must lie in (0, 1].
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "power factor must lie in (0, 1], got {beta}"
            )));
        }
        Ok(Self { beta })
    }

    /// Full-power factor β = 1.
    pub fn full() -> Self {
        Self { beta: 1.0 }
    }

    /// The factor itself.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Transmit power `β²·P_s`.
    pub fn p_t(&self, p_s: f64) -> f64 {
        self.beta * self.beta * p_s
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn test_config() -> ScenarioConfig {
        ScenarioConfig {
            m: 4,
            g: 4,
            n: 16,
            n_b: 2,
            n_e: 2,
            sigma_b2: 0.1,
            sigma_e2: 0.1,
            p_s: 1.0,
            seed: 42,
        }
    }

    #[test]
    fn scenario_validation_rules() {
        assert!(test_config().validate().is_ok());
        let mut bad = test_config();
        bad.m = 16;
        assert!(bad.validate().is_err(), "M = 16 must be rejected");
        let mut bad = test_config();
        bad.n = 15;
        assert!(bad.validate().is_err(), "N not divisible by G must be rejected");
        let mut bad = test_config();
        bad.g = 1;
        assert!(bad.validate().is_err(), "G < 2 must be rejected");
        let mut bad = test_config();
        bad.sigma_b2 = 0.0;
        assert!(bad.validate().is_err(), "zero noise power must be rejected");
        // Non-power-of-two G with N divisible stays valid (tiny-oracle cases).
        let odd = ScenarioConfig {
            m: 2,
            g: 3,
            n: 3,
            ..test_config()
        };
        assert!(odd.validate().is_ok(), "G = 3 is allowed at type level");
    }

    #[test]
    fn scenario_json_round_trip_exact_keys() {
        let cfg = test_config();
        let text = cfg.to_json();
        for key in ["\"M\"", "\"G\"", "\"N\"", "\"N_b\"", "\"N_e\"", "\"sigma_b2\"", "\"sigma_e2\"", "\"P_s\"", "\"seed\""] {
            assert!(text.contains(key), "serialized scenario missing key {key}: {text}");
        }
        let back = ScenarioConfig::from_json(&text).expect("round trip");
        assert_eq!(back, cfg);
        // Unknown keys are rejected so typos cannot silently change runs.
        let with_extra = text.replace("\"seed\"", "\"extra\": 1, \"seed\"");
        assert!(ScenarioConfig::from_json(&with_extra).is_err());
    }

    #[test]
    fn channel_generation_is_deterministic() {
        let cfg = test_config();
        let a = gen_channels(&cfg, RandomStream::new(cfg.seed));
        let b = gen_channels(&cfg, RandomStream::new(cfg.seed));
        assert_eq!(a, b, "same seed must reproduce the exact channel set");
        let c = gen_channels(&cfg, RandomStream::new(cfg.seed + 1));
        assert_ne!(a, c, "different seeds must differ");
    }

    #[test]
    fn substreams_are_independent_of_each_other() {
        let root = RandomStream::new(7);
        let s1 = root.substream(0);
        let s2 = root.substream(1);
        assert_ne!(s1, s2);
        assert_eq!(s1, root.substream(0), "substream derivation is pure");
        let mut r1 = s1.rng();
        let mut r2 = s2.rng();
        let a: u64 = r1.gen();
        let b: u64 = r2.gen();
        assert_ne!(a, b, "distinct labels must yield distinct draw sequences");
    }

    #[test]
    fn channel_entries_have_unit_variance_and_split_moments() {
        // 10⁴ entries: E|h|² within [0.97, 1.03], per-part variance 0.5 ± 0.02.
        let cfg = ScenarioConfig {
            n: 100,
            n_b: 50,
            n_e: 50,
            ..test_config()
        };
        let ch = gen_channels(&cfg, RandomStream::new(3));
        let mut pow = 0.0;
        let mut re_var = 0.0;
        let mut im_var = 0.0;
        let mut count = 0usize;
        for m in [&ch.h_b, &ch.h_e] {
            for z in m.iter() {
                pow += z.norm_sqr();
                re_var += z.re * z.re;
                im_var += z.im * z.im;
                count += 1;
            }
        }
        let n = count as f64;
        assert!(count == 10_000, "expected 10⁴ samples, got {count}");
        let mean_pow = pow / n;
        assert!(
            (0.97..=1.03).contains(&mean_pow),
            "mean |h|² = {mean_pow}, outside [0.97, 1.03]"
        );
        for (name, v) in [("re", re_var / n), ("im", im_var / n)] {
            assert!(
                (v - 0.5).abs() <= 0.02,
                "{name} variance = {v}, expected 0.5 ± 0.02"
            );
        }
    }

    #[test]
    fn effective_channels_identity_zero_and_oracle() {
        let cfg = test_config();
        let mut ch = gen_channels(&cfg, RandomStream::new(1));

        // h_t ≡ 1 leaves both hop matrices untouched.
        ch.h_t = CVec::from_element(cfg.n, Complex64::new(1.0, 0.0));
        let eff = effective_channels(&ch).unwrap();
        assert_eq!(eff.h_bp, ch.h_b);
        assert_eq!(eff.h_ep, ch.h_e);

        // h_t ≡ 0 zeroes them.
        ch.h_t = CVec::zeros(cfg.n);
        let eff = effective_channels(&ch).unwrap();
        assert!(eff.h_bp.iter().all(|z| z.norm() == 0.0));

        // Random 2×3 case against an explicit per-entry loop.
        let small = ScenarioConfig {
            g: 3,
            n: 3,
            m: 2,
            ..test_config()
        };
        let ch = gen_channels(&small, RandomStream::new(9));
        let eff = effective_channels(&ch).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                let want = ch.h_b[(r, c)] * ch.h_t[c];
                let got = eff.h_bp[(r, c)];
                assert!(
                    (want - got).norm() == 0.0,
                    "H_B' entry ({r},{c}) = {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn effective_channels_scale_linearly_in_ht() {
        let cfg = test_config();
        let ch = gen_channels(&cfg, RandomStream::new(5));
        let eff = effective_channels(&ch).unwrap();
        let c = Complex64::new(-1.25, 0.5);
        let scaled = ChannelSet {
            h_t: ch.h_t.map(|z| z * c),
            ..ch.clone()
        };
        let eff_scaled = effective_channels(&scaled).unwrap();
        let err = (&eff_scaled.h_bp - eff.h_bp.map(|z| z * c)).norm();
        assert!(err <= 1e-12 * eff.h_bp.norm(), "linearity violation: {err}");
    }

    #[test]
    fn effective_channels_rejects_mismatched_dims() {
        let cfg = test_config();
        let mut ch = gen_channels(&cfg, RandomStream::new(1));
        ch.h_t = CVec::zeros(cfg.n + 1);
        assert!(effective_channels(&ch).is_err());
    }

    #[test]
    fn psk_constellations_are_unit_modulus_and_zero_mean() {
        for m in [2usize, 4, 8] {
            let pts: Vec<Complex64> = (0..m).map(|k| psk_point(k, m)).collect();
            for (k, p) in pts.iter().enumerate() {
                assert!(
                    p.norm() == 1.0,
                    "M = {m}, point {k}: |b| = {} ≠ 1",
                    p.norm()
                );
            }
            // Sum antipodal pairs first: f64 addition is order-dependent, and
            // pairing each point with its exact negation cancels exactly.
            let sum: Complex64 = (0..m / 2).map(|k| pts[k] + pts[k + m / 2]).sum();
            assert!(
                sum.norm() == 0.0,
                "M = {m}: constellation sum {sum} not exactly zero"
            );
        }
    }

    /// Brute-force ordered-pair sum Σ_{k≠l} d_{kl} d_{kl}^H — the definition,
    /// evaluated the slow way.
    fn d_agg_brute(symbols: &[CVec], n: usize) -> CMat {
        let mut d = CMat::zeros(n, n);
        for (k, xk) in symbols.iter().enumerate() {
            for (l, xl) in symbols.iter().enumerate() {
                if k == l {
                    continue;
                }
                let diff = xk - xl;
                d += &diff * diff.adjoint();
            }
        }
        d
    }

    #[test]
    fn symbol_set_tiny_case_matches_pair_sum() {
        // M = 2, G = 2, N = 2: supersymbols {(±1,0),(0,±1)}. The ordered pair
        // sum evaluates to 16·I₂ (each of the 12 nonzero pairs contributes
        // ‖d‖² ∈ {2,4} mass; the off-diagonal contributions cancel), which the
        // brute-force oracle below confirms.
        let cfg = ScenarioConfig {
            m: 2,
            g: 2,
            n: 2,
            ..test_config()
        };
        let syms = build_symbol_set(&cfg);
        assert_eq!(syms.len(), 4);
        let expect: Vec<(f64, f64)> = vec![(1.0, 0.0), (-1.0, 0.0)];
        for (j, &(re, im)) in expect.iter().enumerate() {
            assert_eq!(syms.constellation[j], Complex64::new(re, im));
        }
        assert_eq!(syms.supersymbols[0][0], Complex64::new(1.0, 0.0));
        assert_eq!(syms.supersymbols[1][0], Complex64::new(-1.0, 0.0));
        assert_eq!(syms.supersymbols[2][1], Complex64::new(1.0, 0.0));
        assert_eq!(syms.supersymbols[3][1], Complex64::new(-1.0, 0.0));

        let brute = d_agg_brute(&syms.supersymbols, 2);
        let err = (&syms.d_agg - &brute).norm();
        assert!(err <= 1e-12, "D_agg deviates from pair sum by {err}");

        let sixteen_eye = CMat::identity(2, 2) * Complex64::new(16.0, 0.0);
        let err = (&syms.d_agg - &sixteen_eye).norm();
        assert!(err <= 1e-12, "D_agg for the tiny case must equal 16·I₂, off by {err}");
    }

    #[test]
    fn symbol_set_matches_pair_sum_on_larger_cases() {
        for (m, g, n) in [(2, 2, 4), (4, 2, 4), (4, 4, 8), (8, 2, 6)] {
            let cfg = ScenarioConfig {
                m,
                g,
                n,
                ..test_config()
            };
            let syms = build_symbol_set(&cfg);
            let brute = d_agg_brute(&syms.supersymbols, n);
            let err = (&syms.d_agg - &brute).norm();
            assert!(
                err <= 1e-10 * brute.norm().max(1.0),
                "(M,G,N)=({m},{g},{n}): D_agg off pair sum by {err}"
            );
        }
    }

    #[test]
    fn d_agg_trace_counts_all_pair_distances() {
        let cfg = test_config();
        let syms = build_symbol_set(&cfg);
        let mut want = 0.0;
        for k in 0..syms.len() {
            for l in 0..syms.len() {
                want += syms.diff(k, l).norm_squared();
            }
        }
        let got: f64 = syms.d_agg.diagonal().iter().map(|z| z.re).sum();
        assert!(
            (got - want).abs() <= 1e-9 * want.max(1.0),
            "trace(D_agg) = {got}, pairwise ‖d‖² sum = {want}"
        );
    }

    #[test]
    fn d_agg_is_hermitian_and_psd() {
        let cfg = test_config();
        let syms = build_symbol_set(&cfg);
        let herm_err = (&syms.d_agg - syms.d_agg.adjoint()).norm();
        assert!(herm_err <= 1e-12, "D_agg Hermitian deviation {herm_err}");
        let eig = nalgebra::SymmetricEigen::new(syms.d_agg.clone());
        let min = eig.eigenvalues.min();
        assert!(min >= -1e-10, "D_agg min eigenvalue {min} < −1e−10");
    }

    #[test]
    fn d_agg_ignores_supersymbol_labeling_order() {
        // Reversing the enumeration must leave the set-level pair sum intact.
        let cfg = ScenarioConfig {
            m: 4,
            g: 2,
            n: 4,
            ..test_config()
        };
        let syms = build_symbol_set(&cfg);
        let mut reversed = syms.supersymbols.clone();
        reversed.reverse();
        let err = (d_agg_brute(&reversed, cfg.n) - &syms.d_agg).norm();
        assert!(err <= 1e-10, "relabeling changed D_agg by {err}");
    }

    #[test]
    fn selectors_cover_contiguous_blocks() {
        let cfg = test_config();
        let syms = build_symbol_set(&cfg);
        assert_eq!(syms.selectors.len(), cfg.g);
        for (i, sel) in syms.selectors.iter().enumerate() {
            let ones: usize = sel.iter().filter(|&&v| v == 1.0).count();
            assert_eq!(ones, cfg.group_size(), "group {i} has {ones} active elements");
            for e in 0..cfg.n {
                let want = if e / cfg.group_size() == i { 1.0 } else { 0.0 };
                assert_eq!(sel[e], want, "selector {i} at element {e}");
            }
        }
    }

    #[test]
    fn diff_of_equal_indices_is_zero() {
        let syms = build_symbol_set(&test_config());
        for k in 0..syms.len() {
            assert!(syms.diff(k, k).norm() == 0.0, "d_kk must be exactly 0");
        }
    }

    #[test]
    fn spectral_rate_values_and_errors() {
        assert_eq!(spectral_rate(8, 16).unwrap(), 7.0);
        assert_eq!(spectral_rate(4, 4).unwrap(), 4.0);
        assert_eq!(spectral_rate(2, 2).unwrap(), 2.0);
        assert!(spectral_rate(3, 4).is_err(), "M = 3 is not a power of two");
        assert!(spectral_rate(4, 6).is_err(), "G = 6 is not a power of two");
        assert!(spectral_rate(4, 1).is_err(), "G = 1 carries no index bits");
    }

    #[test]
    fn channel_csv_round_trip() {
        let cfg = test_config();
        let ch = gen_channels(&cfg, RandomStream::new(cfg.seed));
        let mut buf = Vec::new();
        ch.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("matrix,row,col,re,im\n"), "header contract");
        assert!(text.contains("\nht,0,0,"), "h_t rows present");
        let back = ChannelSet::load_csv(buf.as_slice(), &cfg).unwrap();
        assert_eq!(back, ch, "channel dump must round-trip bit-exactly");
    }

    #[test]
    fn content_hash_tracks_channel_identity() {
        let cfg = test_config();
        let a = gen_channels(&cfg, RandomStream::new(1));
        let b = gen_channels(&cfg, RandomStream::new(1));
        let c = gen_channels(&cfg, RandomStream::new(2));
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.content_hash().len(), 16);
    }

    #[test]
    fn phase_profiles_are_unit_modulus_exactly() {
        let angles: Vec<f64> = (0..257).map(|i| -3.2 + 0.025 * i as f64).collect();
        let p = PhaseProfile::from_angles(&angles);
        assert!(!p.relaxed);
        for (i, z) in p.theta.iter().enumerate() {
            assert!(z.norm() == 1.0, "|θ_{i}| = {} ≠ 1", z.norm());
        }

        // Projection from arbitrary complex values keeps only the angle.
        let mut rng = RandomStream::new(11).rng();
        let raw = CVec::from_fn(64, |_, _| draw_cn01(&mut rng) * 3.0);
        let proj = PhaseProfile::from_phases_of(&raw);
        for (i, (z, r)) in proj.theta.iter().zip(raw.iter()).enumerate() {
            assert!(z.norm() == 1.0, "|θ_{i}| = {} ≠ 1", z.norm());
            let cross = (z.conj() * r).im.abs();
            assert!(
                cross <= 1e-12 * r.norm(),
                "θ_{i} not aligned with input phase (cross {cross})"
            );
        }

        let id = PhaseProfile::identity(4);
        assert!(id.theta.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn apply_right_scales_columns() {
        let cfg = test_config();
        let ch = gen_channels(&cfg, RandomStream::new(2));
        let p = PhaseProfile::from_angles(&vec![0.7; cfg.n]);
        let hp = p.apply_right(&ch.h_b);
        for c in 0..cfg.n {
            let got = hp.column(c);
            let want = ch.h_b.column(c) * p.theta[c];
            assert!((got - want).norm() <= 1e-14);
        }
    }

    #[test]
    fn power_factor_bounds() {
        assert!(PowerFactor::new(0.0).is_err());
        assert!(PowerFactor::new(1.0 + 1e-9).is_err());
        assert!(PowerFactor::new(-0.5).is_err());
        let p = PowerFactor::new(0.5).unwrap();
        assert_eq!(p.beta(), 0.5);
        assert!((p.p_t(4.0) - 1.0).abs() <= 1e-15, "P_t = β²·P_s");
        assert_eq!(PowerFactor::full().beta(), 1.0);
    }
}
