//! Eavesdropper strategies.
//!
//! Eve can stay passive, intercept-and-resend some fraction of the photons,
//! or impersonate both parties by running one complete protocol instance
//! with Alice (posing as Bob) and another with Bob (posing as Alice).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bit;
use crate::photonics::{self, Basis, PhotonState};
use crate::pipeline::{self, KeyLedger, SessionConfig, SessionError, SessionReport};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    None,
    InterceptResend,
    Impersonate,
}

/// Serialized in its textual form: `none`, `intercept:F` or `impersonate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct AdversaryStrategy {
    pub kind: AdversaryKind,
    /// Fraction of photons intercepted; only meaningful for
    /// [`AdversaryKind::InterceptResend`].
    pub intercept_fraction: f64,
}

impl AdversaryStrategy {
    pub fn none() -> Self {
        Self {
            kind: AdversaryKind::None,
            intercept_fraction: 0.0,
        }
    }

    pub fn intercept(fraction: f64) -> Self {
        Self {
            kind: AdversaryKind::InterceptResend,
            intercept_fraction: fraction,
        }
    }

    pub fn impersonate() -> Self {
        Self {
            kind: AdversaryKind::Impersonate,
            intercept_fraction: 0.0,
        }
    }
}

impl Default for AdversaryStrategy {
    fn default() -> Self {
        Self::none()
    }
}

impl fmt::Display for AdversaryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AdversaryKind::None => f.write_str("none"),
            AdversaryKind::InterceptResend => write!(f, "intercept:{}", self.intercept_fraction),
            AdversaryKind::Impersonate => f.write_str("impersonate"),
        }
    }
}

impl From<AdversaryStrategy> for String {
    fn from(a: AdversaryStrategy) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for AdversaryStrategy {
    type Error = ParseAdversaryError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("adversary must be none, intercept:F with F in [0,1], or impersonate (got {0:?})")]
pub struct ParseAdversaryError(pub String);

impl FromStr for AdversaryStrategy {
    type Err = ParseAdversaryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseAdversaryError(s.to_string());
        match s {
            "none" => Ok(Self::none()),
            "impersonate" => Ok(Self::impersonate()),
            _ => {
                let f: f64 = s
                    .strip_prefix("intercept:")
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(err)?;
                if (0.0..=1.0).contains(&f) {
                    Ok(Self::intercept(f))
                } else {
                    Err(err())
                }
            }
        }
    }
}

/// One photon Eve measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interception {
    pub index: usize,
    pub basis: Basis,
    pub bit: Bit,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EveState {
    pub observed: Vec<Interception>,
    /// Eve posing as Bob toward Alice.
    pub session_ab: Option<KeyLedger>,
    /// Eve posing as Alice toward Bob.
    pub session_eb: Option<KeyLedger>,
}

/// Measures in a uniformly random basis and re-prepares the outcome in that
/// basis.
pub fn intercept_resend<R: Rng + ?Sized>(photon: PhotonState, rng: &mut R) -> (PhotonState, Basis, Bit) {
    let basis = Basis::random(rng);
    let bit = photonics::measure(photon, basis, rng);
    (photonics::prepare(bit, basis), basis, bit)
}

/// Hook on the quantum channel, applied to each photon as it leaves Alice.
pub trait QuantumTap {
    fn on_photon(&mut self, index: usize, photon: PhotonState) -> PhotonState;
}

/// Intercept-resend on a random `fraction` of photons.
pub struct InterceptResendTap {
    fraction: f64,
    rng: SimRng,
    pub observed: Vec<Interception>,
}

impl InterceptResendTap {
    pub fn new(fraction: f64, rng: SimRng) -> Self {
        Self {
            fraction,
            rng,
            observed: Vec::new(),
        }
    }
}

impl QuantumTap for InterceptResendTap {
    fn on_photon(&mut self, index: usize, photon: PhotonState) -> PhotonState {
        if self.fraction <= 0.0 || !self.rng.random_bool(self.fraction) {
            return photon;
        }
        let (resent, basis, bit) = intercept_resend(photon, &mut self.rng);
        self.observed.push(Interception { index, basis, bit });
        resent
    }
}

/// Runs the two MITM sub-sessions: Alice against Eve-as-Bob and Eve-as-Alice
/// against Bob. Returns Eve's state and the Alice-side and Bob-side reports.
pub fn impersonate(
    cfg: &SessionConfig,
) -> Result<(EveState, SessionReport, SessionReport), SessionError> {
    if cfg.adversary.kind != AdversaryKind::Impersonate {
        return Err(SessionError::InvalidConfig(pipeline::ConfigError::new(
            "adversary",
            "impersonate() needs adversary = impersonate",
        )));
    }
    let out = pipeline::run_session_detailed(cfg)?;
    let eve = out.eve.expect("impersonation keeps Eve state");
    let bob_side = out.bob_side.expect("impersonation runs a Bob-side link");
    Ok((eve, out.report, bob_side))
}
