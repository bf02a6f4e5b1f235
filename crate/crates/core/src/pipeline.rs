//! Session orchestration.
//!
//! A session runs one or two *links*. A link is a complete protocol instance
//! between a transmitter (Alice's role) and a receiver (Bob's role):
//!
//! quantum transmission, sifting, QBER estimation, reconciliation, then
//! depending on [`Variant`]:
//!
//! * `Baseline`: privacy amplification.
//! * `AuthLast`: privacy amplification, then identity verification on the
//!   split of the amplified key.
//! * `AuthBeforePa`: identity verification on the split of the reconciled
//!   key, then privacy amplification of `K_m`.
//!
//! Honest and intercept-resend sessions run a single Alice-Bob link. Under
//! impersonation Eve runs one link with Alice (as Bob) and one with Bob (as
//! Alice), each honest except that Eve has to guess authentication tags.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AdversaryKind, AdversaryStrategy, EveState, InterceptResendTap, QuantumTap};
use crate::auth::{self, AuthError, AuthKey, AuthParams, AuthVerdict, Authenticator, Credential};
use crate::bits::BitString;
use crate::channel::{payload, ChannelError, Interposition, MessageKind, PartyId, PublicChannel, Transcript};
use crate::photonics::{self, Basis, ChannelParams, Detection, PhotonicsError};
use crate::privacy::{self, CompressionSpec, PrivacyError, ToeplitzSeed};
use crate::reconciliation::{self, ReconError, ReconParams};
use crate::rng::{self, stream, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    AuthLast,
    AuthBeforePa,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::AuthLast => "auth-last",
            Variant::AuthBeforePa => "auth-before-pa",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "auth-last" => Ok(Variant::AuthLast),
            "auth-before-pa" => Ok(Variant::AuthBeforePa),
            _ => Err(ConfigError::new(
                "variant",
                format!("expected baseline, auth-last or auth-before-pa, got {s:?}"),
            )),
        }
    }
}

/// Identity-verification outcome of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Accept,
    Abort,
    NotRun,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "ACCEPT",
            Verdict::Abort => "ABORT",
            Verdict::NotRun => "NOT_RUN",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<AuthVerdict> for Verdict {
    fn from(v: AuthVerdict) -> Self {
        match v {
            AuthVerdict::Accept => Verdict::Accept,
            AuthVerdict::Abort => Verdict::Abort,
        }
    }
}

/// A rejected configuration field.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{field}: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub n_photons: usize,
    pub channel: ChannelParams,
    pub adversary: AdversaryStrategy,
    pub variant: Variant,
    /// Privacy amplification safety margin `s`.
    pub safety_s: usize,
    /// Fraction of the sifted key sacrificed for QBER estimation.
    pub sample_fraction: f64,
    pub auth: AuthParams,
    pub recon: ReconParams,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_photons: 4096,
            channel: ChannelParams {
                flip_prob: 0.02,
                loss_prob: 0.0,
            },
            adversary: AdversaryStrategy::none(),
            variant: Variant::AuthBeforePa,
            safety_s: 32,
            sample_fraction: 0.1,
            auth: AuthParams::default(),
            recon: ReconParams::default(),
            seed: 0,
        }
    }
}

impl SessionConfig {
    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), Vec<ConfigError>> {
        let mut errs = Vec::new();
        if self.n_photons < 64 {
            errs.push(ConfigError::new("n_photons", "must be >= 64"));
        }
        if u32::try_from(self.n_photons).is_err() {
            errs.push(ConfigError::new("n_photons", "must fit in 32 bits"));
        }
        if let Err(PhotonicsError::InvalidProbability { name, .. }) = self.channel.validate() {
            errs.push(ConfigError::new(name, "must lie in [0, 1]"));
        }
        let f = self.adversary.intercept_fraction;
        if !(0.0..=1.0).contains(&f) {
            errs.push(ConfigError::new("intercept_fraction", "must lie in [0, 1]"));
        }
        if self.safety_s < 1 {
            errs.push(ConfigError::new("safety_s", "must be >= 1"));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction < 1.0) {
            errs.push(ConfigError::new("sample_fraction", "must lie in (0, 1)"));
        }
        if let Err(e) = self.auth.validate() {
            let field = if e.to_string().contains("ka_len") {
                "ka_len"
            } else if e.to_string().contains("nonce_len") {
                "nonce_len"
            } else {
                "tag_len"
            };
            errs.push(ConfigError::new(field, e.to_string()));
        }
        if let Err(ReconError::InvalidParams(msg)) = self.recon.validate() {
            let field = msg.split_whitespace().next().unwrap_or("recon");
            errs.push(ConfigError::new(field, msg));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// One party's evolving key material.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyLedger {
    /// Transmitter: prepared bits. Receiver: measurement outcomes (lost
    /// photons read as 0).
    pub raw_bits: BitString,
    /// Preparation or measurement bases.
    pub raw_bases: Vec<Basis>,
    /// Receiver only.
    pub detections: Vec<Detection>,
    pub sifted: BitString,
    pub qber_est: f64,
    /// The reconciled key `W`.
    pub corrected: BitString,
    /// Leaked bits `t` charged against `W`.
    pub leak_t: usize,
    pub k_a: BitString,
    pub k_m: BitString,
    pub final_key: BitString,
}

/// Outcome of one link as seen from that link's endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub variant: Variant,
    pub adversary: AdversaryStrategy,
    pub n_photons: usize,
    pub seed: u64,
    pub sifted_fraction: f64,
    pub qber_true: f64,
    pub qber_est: f64,
    pub sample_len: usize,
    pub corrected_len: usize,
    pub block_size: usize,
    pub recon_rounds: usize,
    pub leak_t: usize,
    pub r_final: usize,
    pub keys_match: bool,
    pub auth_verdict: Verdict,
    pub eve_key_match: bool,
    /// Always false: an authentication key is moved into the exchange.
    pub ka_reused: bool,
    pub eve_info_bound: f64,
    /// Set when the session stopped before producing a key.
    pub halted: Option<String>,
    /// Under impersonation: the Eve-Bob link's view.
    pub bob_side: Option<Box<SessionReport>>,
    pub transcript_path: Option<String>,
}

impl SessionReport {
    fn empty(cfg: &SessionConfig) -> Self {
        Self {
            variant: cfg.variant,
            adversary: cfg.adversary,
            n_photons: cfg.n_photons,
            seed: cfg.seed,
            sifted_fraction: 0.0,
            qber_true: 0.0,
            qber_est: 0.0,
            sample_len: 0,
            corrected_len: 0,
            block_size: 0,
            recon_rounds: 0,
            leak_t: 0,
            r_final: 0,
            keys_match: false,
            auth_verdict: Verdict::NotRun,
            eve_key_match: false,
            ka_reused: false,
            eve_info_bound: privacy::eve_info_bound(cfg.safety_s),
            halted: None,
            bob_side: None,
            transcript_path: None,
        }
    }
}

/// Why a step could not continue.
#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty key at {0}")]
    EmptyKey(&'static str),
    #[error("insufficient key for {step}: {detail}")]
    InsufficientKey { step: &'static str, detail: String },
    #[error("reconciliation: {0}")]
    Recon(#[from] ReconError),
    #[error("privacy amplification: {0}")]
    Privacy(#[from] PrivacyError),
    #[error("authentication: {0}")]
    Auth(AuthError),
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Malformed(#[from] payload::Malformed),
}

impl From<AuthError> for StepError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::KeyTooShort { .. } => StepError::InsufficientKey {
                step: "authentication",
                detail: e.to_string(),
            },
            AuthError::Channel(c) => StepError::Channel(c),
            other => StepError::Auth(other),
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid config: {0}")]
    InvalidConfig(ConfigError),
    #[error("session halted without a key: {cause}")]
    Halted {
        cause: StepError,
        report: Box<SessionReport>,
    },
}

impl SessionError {
    /// Partial report of a halted session.
    pub fn report(&self) -> Option<&SessionReport> {
        match self {
            SessionError::Halted { report, .. } => Some(report),
            SessionError::InvalidConfig(_) => None,
        }
    }
}

/// Everything a session produced, for inspection beyond the report.
#[derive(Debug)]
pub struct SessionOutcome {
    pub report: SessionReport,
    pub transcript: Transcript,
    pub alice: KeyLedger,
    pub bob: KeyLedger,
    pub eve: Option<EveState>,
    pub bob_side: Option<SessionReport>,
    pub eve_bob_transcript: Option<Transcript>,
}

// ---------------------------------------------------------------------------
// Step operations
// ---------------------------------------------------------------------------

/// What both labs recorded during quantum transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumRecord {
    pub alice_bits: BitString,
    pub alice_bases: Vec<Basis>,
    pub bob_bases: Vec<Basis>,
    pub detections: Vec<Detection>,
}

/// Alice draws bits then bases from `tx`; Bob draws bases from `rx`; loss,
/// noise and conjugate-basis outcomes come from `quantum`.
pub fn quantum_phase(
    n: usize,
    channel: &ChannelParams,
    tx: &mut SimRng,
    rx: &mut SimRng,
    quantum: &mut SimRng,
    mut tap: Option<&mut dyn QuantumTap>,
) -> QuantumRecord {
    let alice_bits = BitString::random(n, tx);
    let alice_bases: Vec<Basis> = (0..n).map(|_| Basis::random(tx)).collect();
    let bob_bases: Vec<Basis> = (0..n).map(|_| Basis::random(rx)).collect();
    let detections = (0..n)
        .map(|i| {
            let mut photon = photonics::prepare(alice_bits.get(i).unwrap(), alice_bases[i]);
            if let Some(tap) = tap.as_deref_mut() {
                photon = tap.on_photon(i, photon);
            }
            let outcome = photonics::transmit(photon, channel, quantum)
                .map(|p| photonics::measure(p, bob_bases[i], quantum));
            Detection {
                outcome,
                basis_used: bob_bases[i],
            }
        })
        .collect();
    QuantumRecord {
        alice_bits,
        alice_bases,
        bob_bases,
        detections,
    }
}

/// Positions where the photon arrived and both bases agree.
pub fn sift(
    alice_bases: &[Basis],
    bob_bases: &[Basis],
    detections: &[Detection],
) -> Result<Vec<usize>, StepError> {
    if alice_bases.len() != bob_bases.len() {
        return Err(StepError::LengthMismatch(alice_bases.len(), bob_bases.len()));
    }
    if detections.len() != alice_bases.len() {
        return Err(StepError::LengthMismatch(alice_bases.len(), detections.len()));
    }
    Ok((0..alice_bases.len())
        .filter(|&i| detections[i].detected() && alice_bases[i] == bob_bases[i])
        .collect())
}

/// Uniformly chosen `ceil(fraction * len)` positions, ascending.
pub fn choose_sample<R: Rng + ?Sized>(len: usize, fraction: f64, rng: &mut R) -> Vec<usize> {
    let k = ((fraction * len as f64).ceil() as usize).min(len);
    let mut idx = index::sample(rng, len, k).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct QberEstimate {
    pub qber_est: f64,
    pub alice_rest: BitString,
    pub bob_rest: BitString,
    pub disclosed: usize,
    pub sample: Vec<usize>,
}

/// Publicly compares a random sample and drops it from both keys.
pub fn estimate_qber<R: Rng + ?Sized>(
    alice: &BitString,
    bob: &BitString,
    sample_fraction: f64,
    rng: &mut R,
) -> Result<QberEstimate, StepError> {
    if alice.len() != bob.len() {
        return Err(StepError::LengthMismatch(alice.len(), bob.len()));
    }
    if alice.is_empty() {
        return Err(StepError::EmptyKey("qber estimation"));
    }
    let sample = choose_sample(alice.len(), sample_fraction, rng);
    let mismatches = alice.select(&sample).hamming(&bob.select(&sample));
    Ok(QberEstimate {
        qber_est: mismatches as f64 / sample.len() as f64,
        alice_rest: alice.without(&sample),
        bob_rest: bob.without(&sample),
        disclosed: sample.len(),
        sample,
    })
}

// ---------------------------------------------------------------------------
// Links
// ---------------------------------------------------------------------------

/// Roles and random streams of one protocol instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkSetup {
    pub transmitter: PartyId,
    pub receiver: PartyId,
    pub transmitter_stream: u64,
    pub receiver_stream: u64,
    pub quantum_stream: u64,
    /// The transmitter holds no usable auth key and guesses tags.
    pub transmitter_forges: bool,
    pub receiver_forges: bool,
}

impl LinkSetup {
    pub const HONEST: LinkSetup = LinkSetup {
        transmitter: PartyId::Alice,
        receiver: PartyId::Bob,
        transmitter_stream: stream::ALICE,
        receiver_stream: stream::BOB,
        quantum_stream: stream::QUANTUM,
        transmitter_forges: false,
        receiver_forges: false,
    };

    /// Alice talking to Eve, who poses as Bob.
    pub const ALICE_EVE: LinkSetup = LinkSetup {
        receiver: PartyId::Eve,
        receiver_stream: stream::EVE_AS_BOB,
        receiver_forges: true,
        ..LinkSetup::HONEST
    };

    /// Eve, posing as Alice, talking to Bob.
    pub const EVE_BOB: LinkSetup = LinkSetup {
        transmitter: PartyId::Eve,
        transmitter_stream: stream::EVE_AS_ALICE,
        quantum_stream: stream::QUANTUM_EVE_BOB,
        transmitter_forges: true,
        ..LinkSetup::HONEST
    };
}

/// Result of one link, complete or halted.
#[derive(Debug)]
pub struct LinkRun {
    pub transmitter: KeyLedger,
    pub receiver: KeyLedger,
    pub report: SessionReport,
    pub transcript: Transcript,
    pub error: Option<StepError>,
}

struct Link<'c> {
    cfg: &'c SessionConfig,
    setup: LinkSetup,
    tx_rng: SimRng,
    rx_rng: SimRng,
    ch: PublicChannel,
    tx: KeyLedger,
    rx: KeyLedger,
    report: SessionReport,
}

/// Runs one complete protocol instance. Never fails outright: a halted link
/// carries its error alongside the metrics gathered so far.
pub fn run_link(
    cfg: &SessionConfig,
    setup: LinkSetup,
    tap: Option<&mut dyn QuantumTap>,
    mode: Interposition,
) -> LinkRun {
    let mut link = Link {
        cfg,
        setup,
        tx_rng: rng::derive(cfg.seed, setup.transmitter_stream),
        rx_rng: rng::derive(cfg.seed, setup.receiver_stream),
        ch: PublicChannel::with_mode(setup.transmitter, setup.receiver, mode),
        tx: KeyLedger::default(),
        rx: KeyLedger::default(),
        report: SessionReport::empty(cfg),
    };
    let error = link.execute(tap).err();
    if let Some(e) = &error {
        log::debug!("link {}-{} halted: {e}", setup.transmitter, setup.receiver);
        link.report.halted = Some(e.to_string());
        link.report.r_final = 0;
        link.report.keys_match = false;
    }
    LinkRun {
        transmitter: link.tx,
        receiver: link.rx,
        report: link.report,
        transcript: link.ch.into_transcript(),
        error,
    }
}

impl Link<'_> {
    fn execute(&mut self, tap: Option<&mut dyn QuantumTap>) -> Result<(), StepError> {
        let (tx_id, rx_id) = (self.setup.transmitter, self.setup.receiver);
        let cfg = self.cfg;

        // quantum transmission
        let mut quantum = rng::derive(cfg.seed, self.setup.quantum_stream);
        let q = quantum_phase(
            cfg.n_photons,
            &cfg.channel,
            &mut self.tx_rng,
            &mut self.rx_rng,
            &mut quantum,
            tap,
        );
        self.tx.raw_bits = q.alice_bits.clone();
        self.tx.raw_bases = q.alice_bases.clone();
        self.rx.raw_bits = q.detections.iter().map(|d| d.outcome.unwrap_or(false)).collect();
        self.rx.raw_bases = q.bob_bases.clone();
        self.rx.detections = q.detections.clone();

        // sifting: Bob announces detections and bases, Alice the kept set
        let detected: BitString = q.detections.iter().map(Detection::detected).collect();
        let bases: BitString = q.bob_bases.iter().map(|b| b.as_bit()).collect();
        let got = self
            .ch
            .send(rx_id, MessageKind::Bases, payload::encode_bases(&detected, &bases))?;
        let (seen_det, seen_bases) = payload::decode_bases(&got.payload)?;
        let seen_dets: Vec<Detection> = seen_det
            .iter()
            .zip(seen_bases.iter())
            .map(|(d, b)| Detection {
                outcome: d.then_some(false),
                basis_used: Basis::from_bit(b),
            })
            .collect();
        let seen_bob_bases: Vec<Basis> = seen_dets.iter().map(|d| d.basis_used).collect();
        let keep = sift(&q.alice_bases, &seen_bob_bases, &seen_dets)?;
        let mut mask = BitString::zeros(cfg.n_photons);
        for &i in &keep {
            mask.flip(i);
        }
        let got = self
            .ch
            .send(tx_id, MessageKind::SiftIndices, payload::encode_bits(&mask))?;
        let seen_mask = payload::decode_bits(&got.payload)?;
        let bob_keep: Vec<usize> = (0..seen_mask.len().min(cfg.n_photons))
            .filter(|&i| seen_mask.get(i) == Some(true))
            .collect();
        self.tx.sifted = q.alice_bits.select(&keep);
        self.rx.sifted = self.rx.raw_bits.select(&bob_keep);
        let sifted_len = self.tx.sifted.len();
        self.report.sifted_fraction = sifted_len as f64 / cfg.n_photons as f64;
        if self.rx.sifted.len() != sifted_len {
            return Err(StepError::LengthMismatch(sifted_len, self.rx.sifted.len()));
        }
        if sifted_len == 0 {
            return Err(StepError::EmptyKey("sifting"));
        }
        self.report.qber_true = self.tx.sifted.hamming(&self.rx.sifted) as f64 / sifted_len as f64;

        // QBER estimation
        let sample = choose_sample(sifted_len, cfg.sample_fraction, &mut self.tx_rng);
        let disclose = payload::QberSample::Disclose {
            indices: sample.iter().map(|&i| i as u32).collect(),
            bits: self.tx.sifted.select(&sample),
        };
        let got = self.ch.send(
            tx_id,
            MessageKind::QberSample,
            payload::encode_qber_sample(&disclose),
        )?;
        let (seen_idx, seen_bits) = match payload::decode_qber_sample(&got.payload)? {
            payload::QberSample::Disclose { indices, bits } => (indices, bits),
            _ => return Err(payload::Malformed("QBER_SAMPLE").into()),
        };
        let seen_idx: Vec<usize> = seen_idx
            .into_iter()
            .map(|i| i as usize)
            .filter(|&i| i < sifted_len)
            .collect();
        let mismatches = self.rx.sifted.select(&seen_idx).hamming(&seen_bits);
        let estimate = payload::QberSample::Estimate {
            sampled: seen_idx.len() as u32,
            mismatches: mismatches as u32,
        };
        let got = self.ch.send(
            rx_id,
            MessageKind::QberSample,
            payload::encode_qber_sample(&estimate),
        )?;
        let rx_qber = mismatches as f64 / seen_idx.len().max(1) as f64;
        self.tx.qber_est = match payload::decode_qber_sample(&got.payload)? {
            payload::QberSample::Estimate {
                sampled,
                mismatches,
            } => mismatches as f64 / sampled.max(1) as f64,
            _ => return Err(payload::Malformed("QBER_SAMPLE").into()),
        };
        self.rx.qber_est = rx_qber;
        self.report.qber_est = self.tx.qber_est;
        self.report.sample_len = sample.len();
        let tx_rest = self.tx.sifted.without(&sample);
        let rx_rest = self.rx.sifted.without(&seen_idx);
        if tx_rest.is_empty() {
            return Err(StepError::InsufficientKey {
                step: "qber estimation",
                detail: "sample consumed the whole sifted key".into(),
            });
        }

        // reconciliation; a zero estimate only says the rate is below what
        // the sample can resolve, so block sizing never goes under 1/sample
        let sizing_qber = self.tx.qber_est.max(1.0 / sample.len().max(1) as f64);
        let block = cfg.recon.resolve_block_size(sizing_qber, tx_rest.len());
        self.report.block_size = block;
        if tx_rest.len() < 2 * block {
            return Err(StepError::InsufficientKey {
                step: "reconciliation",
                detail: format!("{} bits left for blocks of {block}", tx_rest.len()),
            });
        }
        let recon = match reconciliation::reconcile(
            &tx_rest,
            &rx_rest,
            sizing_qber,
            &cfg.recon,
            &mut self.ch,
            &mut self.tx_rng,
        ) {
            Ok(o) => o,
            Err(ReconError::NotConverged(o)) => {
                self.report.recon_rounds = o.rounds_run;
                self.report.leak_t = o.parity_comparisons;
                return Err(ReconError::NotConverged(o).into());
            }
            Err(e) => return Err(e.into()),
        };
        self.report.recon_rounds = recon.rounds_run;
        self.tx.corrected = recon.corrected_alice;
        self.rx.corrected = recon.corrected_bob;
        self.tx.leak_t = recon.parity_comparisons;
        self.rx.leak_t = recon.parity_comparisons;
        self.report.leak_t = recon.parity_comparisons;
        self.report.corrected_len = self.tx.corrected.len();

        match cfg.variant {
            Variant::Baseline => {
                let (a, b) = self.amplify(self.tx.corrected.clone(), self.rx.corrected.clone())?;
                self.tx.final_key = a;
                self.rx.final_key = b;
            }
            Variant::AuthBeforePa => {
                let (tx_km, rx_km) = self.split(self.tx.corrected.clone(), self.rx.corrected.clone())?;
                if self.authenticate()? == AuthVerdict::Accept {
                    let (a, b) = self.amplify(tx_km, rx_km)?;
                    self.tx.final_key = a;
                    self.rx.final_key = b;
                }
            }
            Variant::AuthLast => {
                let (a, b) = self.amplify(self.tx.corrected.clone(), self.rx.corrected.clone())?;
                let (tx_km, rx_km) = self.split(a, b)?;
                if self.authenticate()? == AuthVerdict::Accept {
                    self.tx.final_key = tx_km;
                    self.rx.final_key = rx_km;
                }
            }
        }
        self.report.r_final = self.tx.final_key.len();
        self.report.keys_match =
            !self.tx.final_key.is_empty() && self.tx.final_key == self.rx.final_key;
        Ok(())
    }

    /// Toeplitz compression to `n - t - s` bits with a seed Alice discloses.
    fn amplify(&mut self, tx_w: BitString, rx_w: BitString) -> Result<(BitString, BitString), StepError> {
        let spec = CompressionSpec::new(tx_w.len(), self.report.leak_t, self.cfg.safety_s)?;
        let seed = ToeplitzSeed::random(spec.n, spec.r, &mut self.tx_rng)?;
        let got = self.ch.send(
            self.setup.transmitter,
            MessageKind::PaSeed,
            payload::encode_bits(seed.bits()),
        )?;
        let seen = ToeplitzSeed::new(payload::decode_bits(&got.payload)?, rx_w.len(), spec.r)?;
        Ok((
            privacy::compress(&tx_w, &seed, spec.r)?,
            privacy::compress(&rx_w, &seen, spec.r)?,
        ))
    }

    /// Splits both keys into `K_a` (kept in the ledgers) and `K_m`
    /// (returned).
    fn split(&mut self, tx_k: BitString, rx_k: BitString) -> Result<(BitString, BitString), StepError> {
        let tx_split = auth::split_key(&tx_k, &self.cfg.auth, &mut self.tx_rng)?;
        let (rx_ka, rx_km) = match &tx_split.ka_seed {
            None => auth::split_odd(&rx_k)?,
            Some(seed) => {
                let got = self.ch.send(
                    self.setup.transmitter,
                    MessageKind::KaSeed,
                    payload::encode_bits(seed.bits()),
                )?;
                let seen = ToeplitzSeed::new(
                    payload::decode_bits(&got.payload)?,
                    rx_k.len(),
                    self.cfg.auth.ka_len,
                )?;
                auth::split_hashed(&rx_k, self.cfg.auth.ka_len, &seen)?
            }
        };
        self.tx.k_a = tx_split.k_a;
        self.tx.k_m = tx_split.k_m.clone();
        self.rx.k_a = rx_ka;
        self.rx.k_m = rx_km.clone();
        Ok((tx_split.k_m, rx_km))
    }

    fn authenticate(&mut self) -> Result<AuthVerdict, StepError> {
        let credential = |ka: &BitString, forges: bool| {
            if forges {
                Credential::Forger
            } else {
                Credential::Key(AuthKey::new(ka.clone()))
            }
        };
        let outcome = auth::mutual_auth(
            Authenticator {
                credential: credential(&self.tx.k_a, self.setup.transmitter_forges),
                rng: &mut self.tx_rng,
            },
            Authenticator {
                credential: credential(&self.rx.k_a, self.setup.receiver_forges),
                rng: &mut self.rx_rng,
            },
            &mut self.ch,
            &self.cfg.auth,
        )?;
        self.report.auth_verdict = outcome.verdict.into();
        Ok(outcome.verdict)
    }
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

pub fn run_session(cfg: &SessionConfig) -> Result<SessionReport, SessionError> {
    run_session_detailed(cfg).map(|o| o.report)
}

pub fn run_session_detailed(cfg: &SessionConfig) -> Result<SessionOutcome, SessionError> {
    if let Err(mut errs) = cfg.validate() {
        return Err(SessionError::InvalidConfig(errs.remove(0)));
    }
    match cfg.adversary.kind {
        AdversaryKind::None | AdversaryKind::InterceptResend => {
            let mut tap = (cfg.adversary.kind == AdversaryKind::InterceptResend).then(|| {
                InterceptResendTap::new(
                    cfg.adversary.intercept_fraction,
                    rng::derive(cfg.seed, stream::EVE),
                )
            });
            let run = run_link(
                cfg,
                LinkSetup::HONEST,
                tap.as_mut().map(|t| t as &mut dyn QuantumTap),
                Interposition::Passive,
            );
            if let Some(cause) = run.error {
                return Err(SessionError::Halted {
                    cause,
                    report: Box::new(run.report),
                });
            }
            Ok(SessionOutcome {
                report: run.report,
                transcript: run.transcript,
                alice: run.transmitter,
                bob: run.receiver,
                eve: tap.map(|t| EveState {
                    observed: t.observed,
                    ..EveState::default()
                }),
                bob_side: None,
                eve_bob_transcript: None,
            })
        }
        AdversaryKind::Impersonate => {
            let ae = run_link(cfg, LinkSetup::ALICE_EVE, None, Interposition::Passive);
            let eb = run_link(cfg, LinkSetup::EVE_BOB, None, Interposition::Passive);
            let holds = |a: &BitString, b: &BitString| !a.is_empty() && a == b;
            let eve_key_match = holds(&ae.transmitter.final_key, &ae.receiver.final_key)
                || holds(&eb.transmitter.final_key, &eb.receiver.final_key);

            let mut bob_side = eb.report;
            bob_side.eve_key_match = eve_key_match;
            let mut report = ae.report;
            report.eve_key_match = eve_key_match;
            report.bob_side = Some(Box::new(bob_side.clone()));

            if let Some(cause) = ae.error.or(eb.error) {
                return Err(SessionError::Halted {
                    cause,
                    report: Box::new(report),
                });
            }
            Ok(SessionOutcome {
                report,
                transcript: ae.transcript,
                alice: ae.transmitter,
                bob: eb.receiver,
                eve: Some(EveState {
                    observed: Vec::new(),
                    session_ab: Some(ae.receiver),
                    session_eb: Some(eb.transmitter),
                }),
                bob_side: Some(bob_side),
                eve_bob_transcript: Some(eb.transcript),
            })
        }
    }
}
