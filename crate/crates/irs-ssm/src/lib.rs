//! Simulation and optimization laboratory for IRS-aided secure spatial
//! modulation.
//!
//! A single transmit antenna illuminates an intelligent reflecting surface
//! (IRS) whose `N` elements are split into `G` groups; spatial modulation
//! activates one group per symbol while an M-PSK point rides on the
//! reflected carrier. Bob and Eve both receive the reflection, and the
//! surface phases plus the transmit power factor are tuned to widen the
//! mutual-information gap between them.
//!
//! ```text
//!             h_t (1×N)          H_B (N_b×N)
//!   Alice ───────────────▶ IRS ───────────────▶ Bob
//!                           │
//!                           └─────────────────▶ Eve
//!                              H_E (N_e×N)
//! ```
//!
//! Module map:
//! - [`model`] — scenario config, channels, supersymbol alphabet, phases
//! - [`metrics`] — Monte Carlo MI / secrecy rate, cut-off rates (TASR),
//!   fitted sum-of-ratios surrogate (NASR) and its coefficient table
//! - [`beamform`] — IRS phase optimizers (dual-ascent, SCA, SDR) and
//!   baselines behind a common [`beamform::Beamformer`] trait
//! - [`power`] — transmit power factor designers behind
//!   [`power::PowerDesigner`]
//! - [`harness`] — alternating joint optimizer, experiment sweeps, CSV
//!   persistence, and the CLI entry points

pub mod beamform;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod power;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Scenario parameters violate an invariant (e.g. `N mod G != 0`).
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    /// Matrix/vector dimensions are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A quantity that must be a power of two is not.
    #[error("{name} must be a power of two, got {value}")]
    NotPowerOfTwo { name: &'static str, value: usize },
    /// No embedded fit coefficients for this configuration.
    #[error("no embedded coefficients for (M, G) = ({m}, {g}); refit from samples instead")]
    NoCoefficients { m: usize, g: usize },
    /// An operation received an argument outside its domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A method tag does not name a known strategy.
    #[error("unknown method tag `{0}`")]
    UnknownTag(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
