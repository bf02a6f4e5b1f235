//! Simulation of the BB84 quantum key distribution pipeline.
//!
//! The pipeline runs quantum transmission, basis sifting, QBER estimation,
//! interactive bisection error correction and Toeplitz privacy amplification.
//! Two improved variants add a mutual identity-verification step keyed by an
//! authentication key split off the shared key, either right before privacy
//! amplification or as the very last step. An adversary can listen passively,
//! intercept and resend photons, or impersonate both parties.

pub mod adversary;
pub mod auth;
pub mod bits;
pub mod channel;
pub mod photonics;
pub mod pipeline;
pub mod privacy;
pub mod reconciliation;
pub mod rng;

pub use adversary::{AdversaryKind, AdversaryStrategy, EveState};
pub use auth::{AuthParams, AuthVerdict, KeyRule};
pub use bits::BitString;
pub use channel::{Interposition, MessageKind, PartyId, PublicChannel, PublicMessage, Transcript};
pub use photonics::{Basis, ChannelParams, Detection, PhotonState};
pub use pipeline::{
    run_session, SessionConfig, SessionError, SessionOutcome, SessionReport, Variant, Verdict,
};
pub use privacy::{CompressionSpec, ToeplitzSeed};
pub use reconciliation::{BlockSize, ReconOutcome, ReconParams};
