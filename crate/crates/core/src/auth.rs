//! Identity verification keyed by a split-off authentication key.
//!
//! The shared key `K` is divided into an authentication part `K_a` and a
//! message part `K_m`. The parties then run a mutual challenge-response where
//! each proves possession of `K_a` by returning a one-time Toeplitz-hash tag
//! over the peer's nonce and its own role byte. `K_m` becomes the final key
//! only if both checks pass.

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::channel::{payload, ChannelError, MessageKind, PublicChannel};
use crate::privacy::{self, ToeplitzSeed};
use crate::rng::SimRng;

pub const ROLE_INITIATOR: u8 = b'A';
pub const ROLE_RESPONDER: u8 = b'B';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyRule {
    /// `K_a` = bits at odd (1-indexed) positions, `K_m` = the rest.
    OddPosition,
    /// `K_a` = Toeplitz hash of `K` to `ka_len` bits, `K_m` = `K`.
    HashDerived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthParams {
    pub rule: KeyRule,
    /// Only used by [`KeyRule::HashDerived`].
    pub ka_len: usize,
    pub tag_len: usize,
    pub nonce_len: usize,
}

impl Default for AuthParams {
    fn default() -> Self {
        Self {
            rule: KeyRule::OddPosition,
            ka_len: 64,
            tag_len: 16,
            nonce_len: 16,
        }
    }
}

impl AuthParams {
    /// Bits of `K_a` one tag consumes: message (nonce + role byte) plus
    /// tag length, minus one.
    pub fn mac_key_len(&self) -> usize {
        self.nonce_len + 8 + self.tag_len - 1
    }

    pub fn validate(&self) -> Result<(), AuthError> {
        if self.tag_len == 0 {
            return Err(AuthError::InvalidParams("tag_len must be >= 1".into()));
        }
        if self.tag_len < 8 {
            log::warn!("tag_len={} gives forging probability 2^-{}", self.tag_len, self.tag_len);
        }
        if self.nonce_len < 16 {
            return Err(AuthError::InvalidParams("nonce_len must be >= 16".into()));
        }
        if self.rule == KeyRule::HashDerived && self.ka_len < self.mac_key_len() {
            return Err(AuthError::InvalidParams(format!(
                "ka_len must be >= nonce_len + 8 + tag_len - 1 = {}",
                self.mac_key_len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuthVerdict {
    Accept,
    Abort,
}

#[derive(Debug, Error, PartialEq)]
pub enum AuthError {
    #[error("key too short: need {needed} bits, have {got}")]
    KeyTooShort { needed: usize, got: usize },
    #[error("invalid auth parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Malformed(#[from] payload::Malformed),
    #[error(transparent)]
    Privacy(#[from] privacy::PrivacyError),
}

/// Result of splitting a shared key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySplit {
    pub k_a: BitString,
    pub k_m: BitString,
    /// Public hash seed for [`KeyRule::HashDerived`]; the peer must use the
    /// same one.
    pub ka_seed: Option<ToeplitzSeed>,
}

/// Odd (1-indexed) positions go to `K_a`, even positions to `K_m`.
pub fn split_odd(k: &BitString) -> Result<(BitString, BitString), AuthError> {
    if k.len() < 2 {
        return Err(AuthError::KeyTooShort {
            needed: 2,
            got: k.len(),
        });
    }
    let k_a = k.iter().step_by(2).collect();
    let k_m = k.iter().skip(1).step_by(2).collect();
    Ok((k_a, k_m))
}

/// Inverse of [`split_odd`].
pub fn interleave(k_a: &BitString, k_m: &BitString) -> BitString {
    let mut k = BitString::with_capacity(k_a.len() + k_m.len());
    for i in 0..k_a.len().max(k_m.len()) {
        if let Some(b) = k_a.get(i) {
            k.push(b);
        }
        if let Some(b) = k_m.get(i) {
            k.push(b);
        }
    }
    k
}

/// `K_a` = Toeplitz hash of `k` under `seed`; `K_m` = `k` unchanged.
pub fn split_hashed(
    k: &BitString,
    ka_len: usize,
    seed: &ToeplitzSeed,
) -> Result<(BitString, BitString), AuthError> {
    if k.len() < ka_len + 1 {
        return Err(AuthError::KeyTooShort {
            needed: ka_len + 1,
            got: k.len(),
        });
    }
    Ok((privacy::compress(k, seed, ka_len)?, k.clone()))
}

/// Splits `k` per `params.rule`, drawing the public hash seed from `rng`
/// when one is needed.
pub fn split_key<R: Rng + ?Sized>(
    k: &BitString,
    params: &AuthParams,
    rng: &mut R,
) -> Result<KeySplit, AuthError> {
    match params.rule {
        KeyRule::OddPosition => {
            let (k_a, k_m) = split_odd(k)?;
            Ok(KeySplit {
                k_a,
                k_m,
                ka_seed: None,
            })
        }
        KeyRule::HashDerived => {
            if k.len() < params.ka_len + 1 {
                return Err(AuthError::KeyTooShort {
                    needed: params.ka_len + 1,
                    got: k.len(),
                });
            }
            let seed = ToeplitzSeed::random(k.len(), params.ka_len, rng)?;
            let (k_a, k_m) = split_hashed(k, params.ka_len, &seed)?;
            Ok(KeySplit {
                k_a,
                k_m,
                ka_seed: Some(seed),
            })
        }
    }
}

/// One-time Toeplitz tag: the first `len(message) + tag_len - 1` bits of
/// `k_a` form the matrix diagonal.
pub fn mac(k_a: &BitString, message: &BitString, tag_len: usize) -> Result<BitString, AuthError> {
    let needed = message.len() + tag_len - 1;
    if tag_len == 0 || message.is_empty() || k_a.len() < needed {
        return Err(AuthError::KeyTooShort {
            needed,
            got: k_a.len(),
        });
    }
    Ok(privacy::toeplitz_product(&k_a.prefix(needed), message, tag_len))
}

fn tagged_message(nonce: &BitString, role: u8) -> BitString {
    nonce.concat(&BitString::from_byte(role))
}

/// An authentication key. Moved into [`mutual_auth`], so it cannot be used
/// for a second exchange.
#[derive(Debug, PartialEq, Eq)]
pub struct AuthKey(BitString);

impl AuthKey {
    pub fn new(bits: BitString) -> Self {
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How a party proves and checks identity.
#[derive(Debug)]
pub enum Credential {
    Key(AuthKey),
    /// Holds no key: answers challenges with uniformly guessed tags and
    /// accepts whatever the peer sends.
    Forger,
}

pub struct Authenticator<'a> {
    pub credential: Credential,
    pub rng: &'a mut dyn RngCore,
}

impl Authenticator<'_> {
    fn prove(&mut self, nonce: &BitString, role: u8, tag_len: usize) -> Result<BitString, AuthError> {
        match &self.credential {
            Credential::Key(k) => mac(&k.0, &tagged_message(nonce, role), tag_len),
            Credential::Forger => Ok(BitString::random(tag_len, self.rng)),
        }
    }

    fn check(&self, nonce: &BitString, role: u8, tag: &BitString, tag_len: usize) -> Result<bool, AuthError> {
        match &self.credential {
            Credential::Key(k) => Ok(mac(&k.0, &tagged_message(nonce, role), tag_len)? == *tag),
            Credential::Forger => Ok(true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthOutcome {
    pub verdict: AuthVerdict,
    /// Did the initiator accept the responder's tag?
    pub initiator_accepted: bool,
    /// Did the responder accept the initiator's tag? `false` if never reached.
    pub responder_accepted: bool,
}

/// Mutual challenge-response. The channel's first endpoint is the
/// initiator. On ABORT the channel is closed.
pub fn mutual_auth(
    mut initiator: Authenticator<'_>,
    mut responder: Authenticator<'_>,
    channel: &mut PublicChannel,
    params: &AuthParams,
) -> Result<AuthOutcome, AuthError> {
    params.validate()?;
    for cred in [&initiator.credential, &responder.credential] {
        if let Credential::Key(k) = cred {
            if k.len() < params.mac_key_len() {
                return Err(AuthError::KeyTooShort {
                    needed: params.mac_key_len(),
                    got: k.len(),
                });
            }
        }
    }
    let [a_id, b_id] = channel.endpoints();
    let (nl, tl) = (params.nonce_len, params.tag_len);

    let nonce_a = BitString::random(nl, initiator.rng);
    let got = channel.send(a_id, MessageKind::AuthChallenge, nonce_a.to_bytes())?;
    let seen_nonce_a = read_bits(&got.payload, nl)?;

    let tag_b = responder.prove(&seen_nonce_a, ROLE_RESPONDER, tl)?;
    let nonce_b = BitString::random(nl, responder.rng);
    let got = channel.send(
        b_id,
        MessageKind::AuthResponse,
        tag_b.concat(&nonce_b).to_bytes(),
    )?;
    let resp = read_bits(&got.payload, tl + nl)?;
    let seen_tag_b = resp.prefix(tl);
    let seen_nonce_b: BitString = resp.iter().skip(tl).collect();

    if !initiator.check(&nonce_a, ROLE_RESPONDER, &seen_tag_b, tl)? {
        channel.send(a_id, MessageKind::Verdict, payload::ABORT.to_vec())?;
        channel.close();
        return Ok(AuthOutcome {
            verdict: AuthVerdict::Abort,
            initiator_accepted: false,
            responder_accepted: false,
        });
    }

    let tag_a = initiator.prove(&seen_nonce_b, ROLE_INITIATOR, tl)?;
    let got = channel.send(a_id, MessageKind::AuthResponse, tag_a.to_bytes())?;
    let seen_tag_a = read_bits(&got.payload, tl)?;
    let ok = responder.check(&nonce_b, ROLE_INITIATOR, &seen_tag_a, tl)?;
    let verdict = if ok {
        AuthVerdict::Accept
    } else {
        AuthVerdict::Abort
    };
    let word = if ok { payload::ACCEPT } else { payload::ABORT };
    channel.send(b_id, MessageKind::Verdict, word.to_vec())?;
    if !ok {
        channel.close();
    }
    Ok(AuthOutcome {
        verdict,
        initiator_accepted: true,
        responder_accepted: ok,
    })
}

fn read_bits(bytes: &[u8], len: usize) -> Result<BitString, AuthError> {
    BitString::from_bytes(bytes, len).map_err(|_| AuthError::Malformed(payload::Malformed("AUTH")))
}

/// Both parties keyed, honest endpoints. The responder's nonce stream is
/// forked from `rng`.
pub fn verify_identity<R: Rng + ?Sized>(
    k_a_alice: BitString,
    k_a_bob: BitString,
    channel: &mut PublicChannel,
    rng: &mut R,
    params: &AuthParams,
) -> Result<AuthVerdict, AuthError> {
    let mut bob_rng = SimRng::seed_from_u64(rng.random());
    let mut alice_rng = SimRng::seed_from_u64(rng.random());
    let outcome = mutual_auth(
        Authenticator {
            credential: Credential::Key(AuthKey::new(k_a_alice)),
            rng: &mut alice_rng,
        },
        Authenticator {
            credential: Credential::Key(AuthKey::new(k_a_bob)),
            rng: &mut bob_rng,
        },
        channel,
        params,
    )?;
    Ok(outcome.verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::PartyId;
    use crate::rng::derive;
    use proptest::prelude::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn ch() -> PublicChannel {
        PublicChannel::new(PartyId::Alice, PartyId::Bob)
    }

    #[test]
    fn odd_split_examples() {
        assert_eq!(split_odd(&bs("10110100")).unwrap(), (bs("1100"), bs("0110")));
        assert_eq!(split_odd(&bs("01")).unwrap(), (bs("0"), bs("1")));
        assert!(matches!(split_odd(&bs("1")), Err(AuthError::KeyTooShort { .. })));
    }

    #[test]
    fn hashed_split_of_zero_key() {
        let mut rng = derive(20, 0);
        let params = AuthParams {
            rule: KeyRule::HashDerived,
            ..AuthParams::default()
        };
        let k = BitString::zeros(200);
        let split = split_key(&k, &params, &mut rng).unwrap();
        assert_eq!(split.k_a, BitString::zeros(params.ka_len));
        assert_eq!(split.k_m, k);
        let seed = split.ka_seed.unwrap();
        assert_eq!(seed.bits().len(), 200 + params.ka_len - 1);
        assert!(split_key(&BitString::zeros(64), &params, &mut rng).is_err());
    }

    #[test]
    fn mac_examples() {
        assert_eq!(mac(&bs("10110"), &bs("1010"), 2).unwrap(), bs("01"));
        assert_eq!(mac(&bs("1011011111"), &bs("1010"), 2).unwrap(), bs("01"));
        let mut rng = derive(21, 0);
        let k = BitString::random(64, &mut rng);
        assert_eq!(mac(&k, &BitString::zeros(24), 16).unwrap(), BitString::zeros(16));
        let m = BitString::random(24, &mut rng);
        assert_eq!(mac(&k, &m, 16).unwrap(), mac(&k, &m, 16).unwrap());
        assert!(matches!(mac(&bs("1011"), &bs("1010"), 2), Err(AuthError::KeyTooShort { .. })));
    }

    #[test]
    fn honest_exchange_accepts() {
        let mut rng = derive(22, 0);
        let params = AuthParams::default();
        for _ in 0..50 {
            let k = BitString::random(params.mac_key_len(), &mut rng);
            let mut c = ch();
            let v = verify_identity(k.clone(), k, &mut c, &mut rng, &params).unwrap();
            assert_eq!(v, AuthVerdict::Accept);
            let kinds: Vec<_> = c.transcript().records().iter().map(|r| r.msg.kind).collect();
            assert_eq!(
                kinds,
                [
                    MessageKind::AuthChallenge,
                    MessageKind::AuthResponse,
                    MessageKind::AuthResponse,
                    MessageKind::Verdict
                ]
            );
            assert!(!c.is_closed());
        }
    }

    #[test]
    fn one_bit_perturbations_match_tag_oracle() {
        // k_a of 32 bits, tag_len 8, nonce 16: the window is 16 + 8 + 8 - 1 = 31 bits
        let params = AuthParams {
            tag_len: 8,
            ..AuthParams::default()
        };
        let mut keys = derive(23, 0);
        let k = BitString::random(32, &mut keys);
        let mut aborts = 0;
        for pos in 0..32 {
            let mut k2 = k.clone();
            k2.flip(pos);
            let mut c = ch();
            let mut rng = derive(24, pos as u64);
            let v = verify_identity(k.clone(), k2.clone(), &mut c, &mut rng, &params).unwrap();

            // oracle: recompute both tags directly from the transcript nonces
            let recs = c.transcript().records();
            let na = BitString::from_bytes(&recs[0].msg.payload, 16).unwrap();
            let resp = BitString::from_bytes(&recs[1].msg.payload, 24).unwrap();
            let nb: BitString = resp.iter().skip(8).collect();
            let m_b = tagged_message(&na, ROLE_RESPONDER);
            let m_a = tagged_message(&nb, ROLE_INITIATOR);
            let differs = mac(&k, &m_b, 8).unwrap() != mac(&k2, &m_b, 8).unwrap()
                || mac(&k, &m_a, 8).unwrap() != mac(&k2, &m_a, 8).unwrap();
            let expected = if differs { AuthVerdict::Abort } else { AuthVerdict::Accept };
            assert_eq!(v, expected, "pos {pos}");
            if pos == 31 {
                assert_eq!(v, AuthVerdict::Accept, "bit outside the window");
            }
            if v == AuthVerdict::Abort {
                aborts += 1;
                assert!(c.is_closed());
            }
        }
        assert!(aborts >= 28, "only {aborts} perturbations detected");
    }

    fn forged_accepts(tag_len: usize, trials: usize, seed: u64) -> usize {
        let params = AuthParams {
            tag_len,
            ..AuthParams::default()
        };
        let mut rng = derive(seed, 0);
        (0..trials)
            .filter(|_| {
                let k = BitString::random(params.mac_key_len(), &mut rng);
                let mut eve_rng = SimRng::seed_from_u64(rand::Rng::random(&mut rng));
                let mut alice_rng = SimRng::seed_from_u64(rand::Rng::random(&mut rng));
                let out = mutual_auth(
                    Authenticator {
                        credential: Credential::Key(AuthKey::new(k)),
                        rng: &mut alice_rng,
                    },
                    Authenticator {
                        credential: Credential::Forger,
                        rng: &mut eve_rng,
                    },
                    &mut ch(),
                    &params,
                )
                .unwrap();
                out.verdict == AuthVerdict::Accept
            })
            .count()
    }

    #[test]
    fn forger_is_bounded_by_tag_guessing() {
        // Poisson(10^4 * 2^-16 = 0.15): more than 3 accepts has probability < 1e-3
        assert!(forged_accepts(16, 10_000, 25) <= 3);
        let p = (-8f64).exp2();
        let frac = forged_accepts(8, 10_000, 26) as f64 / 10_000.0;
        let sigma = (p * (1.0 - p) / 10_000.0).sqrt();
        assert!((frac - p).abs() <= 4.0 * sigma, "tag_len 8 accept fraction {frac}");
    }

    #[test]
    fn param_validation() {
        assert!(AuthParams::default().validate().is_ok());
        assert!(AuthParams { tag_len: 0, ..AuthParams::default() }.validate().is_err());
        assert!(AuthParams { nonce_len: 8, ..AuthParams::default() }.validate().is_err());
        let p = AuthParams {
            rule: KeyRule::HashDerived,
            ka_len: 30,
            ..AuthParams::default()
        };
        assert!(p.validate().is_err());
        assert!(AuthParams { ka_len: 39, ..p }.validate().is_ok());
    }

    #[test]
    fn short_key_is_rejected_before_any_message() {
        let params = AuthParams::default();
        let mut c = ch();
        let mut rng = derive(26, 0);
        let r = verify_identity(BitString::zeros(10), BitString::zeros(10), &mut c, &mut rng, &params);
        assert!(matches!(r, Err(AuthError::KeyTooShort { .. })));
        assert!(c.transcript().is_empty());
    }

    proptest! {
        #[test]
        fn odd_split_reinterleaves(bits in proptest::collection::vec(any::<bool>(), 2..300)) {
            let k = BitString::from(bits);
            let (k_a, k_m) = split_odd(&k).unwrap();
            prop_assert_eq!(k_a.len(), k.len().div_ceil(2));
            prop_assert_eq!(k_m.len(), k.len() / 2);
            prop_assert_eq!(interleave(&k_a, &k_m), k);
        }
    }
}
