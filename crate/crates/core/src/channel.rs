//! The authenticated-by-nobody classical channel.
//!
//! Every public message passes through [`PublicChannel::send`], which stamps a
//! sequence number, appends the message to the session [`Transcript`] and, in
//! [`Interposition::Mitm`] mode, lets an adversary substitute the payload
//! before delivery.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartyId {
    Alice,
    Bob,
    Eve,
}

impl PartyId {
    pub fn as_str(self) -> &'static str {
        match self {
            PartyId::Alice => "alice",
            PartyId::Bob => "bob",
            PartyId::Eve => "eve",
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PartyId {
    type Err = TranscriptParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alice" => Ok(PartyId::Alice),
            "bob" => Ok(PartyId::Bob),
            "eve" => Ok(PartyId::Eve),
            _ => Err(TranscriptParseError::Field("party", s.to_string())),
        }
    }
}

/// Message kinds of the public discussion. The kind fixes the payload schema
/// (see [`payload`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Bases,
    SiftIndices,
    QberSample,
    Parity,
    ParityReply,
    PermutationSeed,
    PaSeed,
    KaSeed,
    AuthChallenge,
    AuthResponse,
    Verdict,
}

impl MessageKind {
    pub const ALL: [MessageKind; 11] = [
        MessageKind::Bases,
        MessageKind::SiftIndices,
        MessageKind::QberSample,
        MessageKind::Parity,
        MessageKind::ParityReply,
        MessageKind::PermutationSeed,
        MessageKind::PaSeed,
        MessageKind::KaSeed,
        MessageKind::AuthChallenge,
        MessageKind::AuthResponse,
        MessageKind::Verdict,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Bases => "BASES",
            MessageKind::SiftIndices => "SIFT_INDICES",
            MessageKind::QberSample => "QBER_SAMPLE",
            MessageKind::Parity => "PARITY",
            MessageKind::ParityReply => "PARITY_REPLY",
            MessageKind::PermutationSeed => "PERMUTATION_SEED",
            MessageKind::PaSeed => "PA_SEED",
            MessageKind::KaSeed => "KA_SEED",
            MessageKind::AuthChallenge => "AUTH_CHALLENGE",
            MessageKind::AuthResponse => "AUTH_RESPONSE",
            MessageKind::Verdict => "VERDICT",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = TranscriptParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TranscriptParseError::Field("kind", s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicMessage {
    pub sender: PartyId,
    pub receiver: PartyId,
    pub seq: u64,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

/// A transcript entry. `replaces` is set on payloads forged by a MITM and
/// points at the seq of the original message they stood in for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub msg: PublicMessage,
    pub replaces: Option<u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptParseError {
    #[error("line {line}: expected 5 or 6 comma-separated fields, got {got}")]
    FieldCount { line: usize, got: usize },
    #[error("bad {0} field {1:?}")]
    Field(&'static str, String),
}

/// Append-only log of every public message in a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    records: Vec<Record>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Messages as sent by their authors, excluding forged substitutes.
    pub fn originals(&self) -> impl Iterator<Item = &PublicMessage> {
        self.records
            .iter()
            .filter(|r| r.replaces.is_none())
            .map(|r| &r.msg)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count_kind(&self, kind: MessageKind) -> usize {
        self.originals().filter(|m| m.kind == kind).count()
    }

    /// Position of the first original message of `kind`.
    pub fn first_of(&self, kind: MessageKind) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.replaces.is_none() && r.msg.kind == kind)
    }

    fn push(&mut self, record: Record) {
        if let Some(last) = self.records.last() {
            assert!(
                record.msg.seq > last.msg.seq,
                "transcript seq must strictly increase"
            );
        }
        self.records.push(record);
    }

    /// Line-delimited form: `seq,sender,receiver,kind,payload_hex` with a
    /// trailing `,replaces=<seq>` on forged substitutes.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let m = &r.msg;
            out.push_str(&format!(
                "{},{},{},{},{}",
                m.seq,
                m.sender,
                m.receiver,
                m.kind,
                hex::encode(&m.payload)
            ));
            if let Some(orig) = r.replaces {
                out.push_str(&format!(",replaces={orig}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_log(text: &str) -> Result<Transcript, TranscriptParseError> {
        let mut t = Transcript::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if !(5..=6).contains(&fields.len()) {
                return Err(TranscriptParseError::FieldCount {
                    line: i + 1,
                    got: fields.len(),
                });
            }
            let seq = fields[0]
                .parse()
                .map_err(|_| TranscriptParseError::Field("seq", fields[0].into()))?;
            let payload = hex::decode(fields[4])
                .map_err(|_| TranscriptParseError::Field("payload", fields[4].into()))?;
            let replaces = match fields.get(5) {
                None => None,
                Some(f) => Some(
                    f.strip_prefix("replaces=")
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| TranscriptParseError::Field("replaces", f.to_string()))?,
                ),
            };
            t.records.push(Record {
                msg: PublicMessage {
                    seq,
                    sender: fields[1].parse()?,
                    receiver: fields[2].parse()?,
                    kind: fields[3].parse()?,
                    payload,
                },
                replaces,
            });
        }
        Ok(t)
    }
}

/// Leaked-bit tally: one bit per compared block parity plus one per
/// disclosed QBER sample bit. Forged substitutes are not counted.
pub fn transcript_leak_bits(t: &Transcript) -> usize {
    t.originals()
        .map(|m| match m.kind {
            MessageKind::Parity => 1,
            MessageKind::QberSample => payload::decode_qber_sample(&m.payload)
                .map(|s| s.disclosed_bits())
                .unwrap_or(0),
            _ => 0,
        })
        .sum()
}

/// Adversary hook for MITM mode: may return a replacement payload for the
/// message, which is then delivered under the same kind.
pub trait Tamper: Send {
    fn tamper(&mut self, msg: &PublicMessage) -> Option<Vec<u8>>;
}

/// Forwards everything untouched.
pub struct Forward;

impl Tamper for Forward {
    fn tamper(&mut self, _msg: &PublicMessage) -> Option<Vec<u8>> {
        None
    }
}

impl<F> Tamper for F
where
    F: FnMut(&PublicMessage) -> Option<Vec<u8>> + Send,
{
    fn tamper(&mut self, msg: &PublicMessage) -> Option<Vec<u8>> {
        self(msg)
    }
}

#[derive(Default)]
pub enum Interposition {
    /// Delivered verbatim; the adversary only reads the transcript.
    #[default]
    Passive,
    Mitm(Box<dyn Tamper>),
}

impl fmt::Debug for Interposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interposition::Passive => f.write_str("Passive"),
            Interposition::Mitm(_) => f.write_str("Mitm(..)"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("session already closed")]
    SessionClosed,
    #[error("{0} is not an endpoint of this channel")]
    NotAnEndpoint(PartyId),
}

/// Lock-step public channel between two endpoints.
#[derive(Debug)]
pub struct PublicChannel {
    endpoints: [PartyId; 2],
    mode: Interposition,
    transcript: Transcript,
    next_seq: u64,
    closed: bool,
}

impl PublicChannel {
    pub fn new(a: PartyId, b: PartyId) -> Self {
        Self::with_mode(a, b, Interposition::Passive)
    }

    pub fn with_mode(a: PartyId, b: PartyId, mode: Interposition) -> Self {
        Self {
            endpoints: [a, b],
            mode,
            transcript: Transcript::new(),
            next_seq: 0,
            closed: false,
        }
    }

    pub fn endpoints(&self) -> [PartyId; 2] {
        self.endpoints
    }

    /// Sends `payload` from `sender` to the other endpoint and returns the
    /// message as delivered.
    pub fn send(
        &mut self,
        sender: PartyId,
        kind: MessageKind,
        payload: Vec<u8>,
    ) -> Result<PublicMessage, ChannelError> {
        if self.closed {
            return Err(ChannelError::SessionClosed);
        }
        let receiver = match self.endpoints {
            [a, b] if a == sender => b,
            [a, b] if b == sender => a,
            _ => return Err(ChannelError::NotAnEndpoint(sender)),
        };
        let msg = PublicMessage {
            sender,
            receiver,
            seq: self.bump(),
            kind,
            payload,
        };
        let forged = match &mut self.mode {
            Interposition::Passive => None,
            Interposition::Mitm(eve) => eve.tamper(&msg),
        };
        self.transcript.push(Record {
            msg: msg.clone(),
            replaces: None,
        });
        match forged {
            Some(payload) if payload != msg.payload => {
                let sub = PublicMessage {
                    seq: self.bump(),
                    payload,
                    ..msg.clone()
                };
                self.transcript.push(Record {
                    msg: sub.clone(),
                    replaces: Some(msg.seq),
                });
                Ok(sub)
            }
            _ => Ok(msg),
        }
    }

    fn bump(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    /// Marks the session aborted; later sends fail.
    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}

/// Payload schemas, one per [`MessageKind`]. Integers are big-endian; bit
/// strings are packed most significant bit first.
pub mod payload {
    use super::*;

    #[derive(Debug, Error, PartialEq, Eq)]
    #[error("malformed {0} payload")]
    pub struct Malformed(pub &'static str);

    fn u32_at(b: &[u8], at: usize, what: &'static str) -> Result<u32, Malformed> {
        b.get(at..at + 4)
            .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
            .ok_or(Malformed(what))
    }

    /// Length-prefixed bit string.
    pub fn encode_bits(bits: &BitString) -> Vec<u8> {
        let mut out = (bits.len() as u32).to_be_bytes().to_vec();
        out.extend(bits.to_bytes());
        out
    }

    pub fn decode_bits(b: &[u8]) -> Result<BitString, Malformed> {
        let len = u32_at(b, 0, "bits")? as usize;
        BitString::from_bytes(&b[4..], len).map_err(|_| Malformed("bits"))
    }

    /// BASES: detection mask followed by the measurement bases.
    pub fn encode_bases(detected: &BitString, bases: &BitString) -> Vec<u8> {
        let mut out = encode_bits(detected);
        out.extend(encode_bits(bases));
        out
    }

    pub fn decode_bases(b: &[u8]) -> Result<(BitString, BitString), Malformed> {
        let detected = decode_bits(b)?;
        let off = 4 + detected.len().div_ceil(8);
        let bases = decode_bits(b.get(off..).ok_or(Malformed("bases"))?)?;
        Ok((detected, bases))
    }

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub enum QberSample {
        /// Sender discloses its key bits at the sampled positions.
        Disclose { indices: Vec<u32>, bits: BitString },
        /// Receiver answers with its mismatch count only.
        Estimate { sampled: u32, mismatches: u32 },
    }

    impl QberSample {
        pub fn disclosed_bits(&self) -> usize {
            match self {
                QberSample::Disclose { bits, .. } => bits.len(),
                QberSample::Estimate { .. } => 0,
            }
        }
    }

    pub fn encode_qber_sample(s: &QberSample) -> Vec<u8> {
        match s {
            QberSample::Disclose { indices, bits } => {
                let mut out = vec![1u8];
                out.extend((indices.len() as u32).to_be_bytes());
                for i in indices {
                    out.extend(i.to_be_bytes());
                }
                out.extend(bits.to_bytes());
                out
            }
            QberSample::Estimate {
                sampled,
                mismatches,
            } => {
                let mut out = vec![2u8];
                out.extend(sampled.to_be_bytes());
                out.extend(mismatches.to_be_bytes());
                out
            }
        }
    }

    pub fn decode_qber_sample(b: &[u8]) -> Result<QberSample, Malformed> {
        const W: &str = "QBER_SAMPLE";
        match b.first() {
            Some(1) => {
                let n = u32_at(b, 1, W)? as usize;
                let indices = (0..n)
                    .map(|i| u32_at(b, 5 + 4 * i, W))
                    .collect::<Result<Vec<_>, _>>()?;
                let bits = BitString::from_bytes(&b[5 + 4 * n..], n).map_err(|_| Malformed(W))?;
                Ok(QberSample::Disclose { indices, bits })
            }
            Some(2) => Ok(QberSample::Estimate {
                sampled: u32_at(b, 1, W)?,
                mismatches: u32_at(b, 5, W)?,
            }),
            _ => Err(Malformed(W)),
        }
    }

    /// PARITY: half-open index range (in the round's permuted order) and
    /// the sender's parity over it.
    pub fn encode_parity(start: usize, end: usize, parity: bool) -> Vec<u8> {
        let mut out = (start as u32).to_be_bytes().to_vec();
        out.extend((end as u32).to_be_bytes());
        out.push(parity as u8);
        out
    }

    pub fn decode_parity(b: &[u8]) -> Result<(usize, usize, bool), Malformed> {
        let start = u32_at(b, 0, "PARITY")? as usize;
        let end = u32_at(b, 4, "PARITY")? as usize;
        let p = *b.get(8).ok_or(Malformed("PARITY"))?;
        Ok((start, end, p & 1 == 1))
    }

    pub fn encode_parity_reply(parity: bool) -> Vec<u8> {
        vec![parity as u8]
    }

    pub fn decode_parity_reply(b: &[u8]) -> Result<bool, Malformed> {
        b.first().map(|p| p & 1 == 1).ok_or(Malformed("PARITY_REPLY"))
    }

    pub fn encode_seed(seed: u64) -> Vec<u8> {
        seed.to_be_bytes().to_vec()
    }

    pub fn decode_seed(b: &[u8]) -> Result<u64, Malformed> {
        b.try_into()
            .map(u64::from_be_bytes)
            .map_err(|_| Malformed("PERMUTATION_SEED"))
    }

    pub const ACCEPT: &[u8] = b"ACCEPT";
    pub const ABORT: &[u8] = b"ABORT";
}
