//! Interactive error correction by block parities and bisection.
//!
//! Each round both parties apply a shared random permutation (Alice discloses
//! the seed), split the permuted key into equal blocks, and compare block
//! parities over the public channel. A mismatching block is halved repeatedly
//! until the offending bit is isolated, and Bob flips it. Blocks of earlier
//! rounds that contain a flipped bit are then compared again, as in Cascade.
//! Reconciliation stops after `agree_rounds_needed` consecutive rounds
//! without a mismatch.
//!
//! Every parity sent by Alice is one comparison, and one leaked bit.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{Bit, BitString};
use crate::channel::{payload, ChannelError, MessageKind, PublicChannel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockSize {
    /// Chosen from the estimated error rate.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconParams {
    pub block_size: BlockSize,
    pub agree_rounds_needed: usize,
    pub max_rounds: usize,
}

impl Default for ReconParams {
    fn default() -> Self {
        Self {
            block_size: BlockSize::Auto,
            agree_rounds_needed: 3,
            max_rounds: 32,
        }
    }
}

impl ReconParams {
    pub fn validate(&self) -> Result<(), ReconError> {
        if let BlockSize::Fixed(b) = self.block_size {
            if b < 2 {
                return Err(ReconError::InvalidParams("block_size must be >= 2"));
            }
        }
        if self.agree_rounds_needed == 0 {
            return Err(ReconError::InvalidParams("agree_rounds_needed must be >= 1"));
        }
        if self.max_rounds < self.agree_rounds_needed {
            return Err(ReconError::InvalidParams(
                "max_rounds must be >= agree_rounds_needed",
            ));
        }
        Ok(())
    }

    /// Block size actually used for a key of `len` bits.
    pub fn resolve_block_size(&self, qber_est: f64, len: usize) -> usize {
        match self.block_size {
            BlockSize::Fixed(b) => b,
            BlockSize::Auto => auto_block_size(qber_est, len),
        }
    }
}

/// `ceil(0.73 / max(qber, 1/len))`, clamped to `[2, len/2]`.
pub fn auto_block_size(qber_est: f64, len: usize) -> usize {
    let floor = 1.0 / len.max(1) as f64;
    let raw = (0.73 / qber_est.max(floor)).ceil() as usize;
    raw.min(len / 2).max(2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconOutcome {
    pub corrected_alice: BitString,
    pub corrected_bob: BitString,
    pub parity_comparisons: usize,
    pub rounds_run: usize,
    pub converged: bool,
    pub block_size: usize,
    /// Simulator-side diagnostic: Hamming distance before the first round
    /// and after each round.
    pub distance_trace: Vec<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReconError {
    #[error("keys differ in length ({alice} vs {bob})")]
    LengthMismatch { alice: usize, bob: usize },
    #[error("key of {len} bits is too short for blocks of {block}")]
    KeyTooShort { len: usize, block: usize },
    #[error("range {start}..{end} out of bounds for {len} bits")]
    OutOfRange { start: usize, end: usize, len: usize },
    #[error("block parities already agree")]
    ParityAgrees,
    #[error("invalid reconciliation parameters: {0}")]
    InvalidParams(&'static str),
    #[error("not converged after {} rounds", .0.rounds_run)]
    NotConverged(Box<ReconOutcome>),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Malformed(#[from] payload::Malformed),
}

pub fn block_parity(key: &BitString, range: Range<usize>) -> Result<Bit, ReconError> {
    let (start, end) = (range.start, range.end);
    key.parity_of(range).ok_or(ReconError::OutOfRange {
        start,
        end,
        len: key.len(),
    })
}

/// Locates and fixes one error in a block whose parities differ. Returns the
/// corrected position. The channel's first endpoint plays Alice.
pub fn bisect_fix(
    alice: &BitString,
    bob: &mut BitString,
    block: Range<usize>,
    channel: &mut PublicChannel,
) -> Result<usize, ReconError> {
    if block_parity(alice, block.clone())? == block_parity(bob, block.clone())? {
        return Err(ReconError::ParityAgrees);
    }
    let idx: Vec<usize> = block.clone().collect();
    let mut comparisons = 0;
    bisect(alice, bob, &idx, &idx, block.start, channel, &mut comparisons)
}

fn parity_at(key: &BitString, idx: &[usize]) -> Bit {
    idx.iter().fold(false, |acc, &i| acc ^ key.get(i).unwrap())
}

/// Halving search over a block given as positions in each party's key
/// (`a_idx[k]` and `b_idx[k]` name the same slot). `offset` is the block's
/// start in the round's permuted order, used only to label messages. Driven
/// by Bob's view of the delivered parities; returns the position Bob flipped.
fn bisect(
    alice: &BitString,
    bob: &mut BitString,
    a_idx: &[usize],
    b_idx: &[usize],
    offset: usize,
    channel: &mut PublicChannel,
    comparisons: &mut usize,
) -> Result<usize, ReconError> {
    let [a_id, b_id] = channel.endpoints();
    let (mut lo, mut hi) = (0, a_idx.len());
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let pa = parity_at(alice, &a_idx[lo..mid]);
        let got = channel.send(
            a_id,
            MessageKind::Parity,
            payload::encode_parity(offset + lo, offset + mid, pa),
        )?;
        let (_, _, seen) = payload::decode_parity(&got.payload)?;
        let pb = parity_at(bob, &b_idx[lo..mid]);
        channel.send(b_id, MessageKind::ParityReply, payload::encode_parity_reply(pb))?;
        *comparisons += 1;
        if seen != pb {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    bob.flip(b_idx[lo]);
    Ok(b_idx[lo])
}

fn permutation(seed: u64, len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// One round's shuffles as each party applied them.
struct Round {
    perm_a: Vec<usize>,
    perm_b: Vec<usize>,
    /// Inverse of `perm_b`: where each of Bob's positions landed.
    slot_b: Vec<usize>,
}

impl Round {
    fn new(perm_a: Vec<usize>, perm_b: Vec<usize>) -> Self {
        let mut slot_b = vec![0; perm_b.len()];
        for (slot, &i) in perm_b.iter().enumerate() {
            slot_b[i] = slot;
        }
        Self {
            perm_a,
            perm_b,
            slot_b,
        }
    }
}

struct Session<'a, 'c> {
    alice: &'a BitString,
    bob: BitString,
    block: usize,
    channel: &'c mut PublicChannel,
    rounds: Vec<Round>,
    comparisons: usize,
    fixes: usize,
}

impl Session<'_, '_> {
    /// Honest fixes each remove one difference, so they cannot outnumber
    /// the bits.
    fn desynchronized(&self) -> bool {
        self.fixes > self.alice.len()
    }

    fn span(&self, b: usize) -> Range<usize> {
        b * self.block..((b + 1) * self.block).min(self.alice.len())
    }

    /// Compares one block of round `r`; bisects it on a mismatch and returns
    /// the position Bob flipped.
    fn check(&mut self, r: usize, b: usize) -> Result<Option<usize>, ReconError> {
        let [a_id, b_id] = self.channel.endpoints();
        let span = self.span(b);
        let round = &self.rounds[r];
        let pa = parity_at(self.alice, &round.perm_a[span.clone()]);
        let got = self.channel.send(
            a_id,
            MessageKind::Parity,
            payload::encode_parity(span.start, span.end, pa),
        )?;
        let (_, _, seen) = payload::decode_parity(&got.payload)?;
        let pb = parity_at(&self.bob, &round.perm_b[span.clone()]);
        self.channel.send(b_id, MessageKind::ParityReply, payload::encode_parity_reply(pb))?;
        self.comparisons += 1;
        if seen == pb {
            return Ok(None);
        }
        let round = &self.rounds[r];
        let fixed = bisect(
            self.alice,
            &mut self.bob,
            &round.perm_a[span.clone()],
            &round.perm_b[span.clone()],
            span.start,
            self.channel,
            &mut self.comparisons,
        )?;
        self.fixes += 1;
        Ok(Some(fixed))
    }

    /// After Bob flips `pos`, every already-compared block holding it has
    /// changed parity. Revisit them, and whatever they turn up in turn.
    /// `done` is how many blocks of the newest round have been compared.
    /// Stops early once the parties have been shown to disagree about the
    /// permutations (more fixes than bits).
    fn cascade(&mut self, pos: usize, from: (usize, usize), done: usize) -> Result<(), ReconError> {
        let newest = self.rounds.len() - 1;
        let mut queue = vec![(pos, from)];
        while let Some((p, (fr, fb))) = queue.pop() {
            if self.desynchronized() {
                break;
            }
            for r in 0..self.rounds.len() {
                let b = self.rounds[r].slot_b[p] / self.block;
                if (r, b) == (fr, fb) || (r == newest && b >= done) {
                    continue;
                }
                if let Some(q) = self.check(r, b)? {
                    queue.push((q, (r, b)));
                }
            }
        }
        Ok(())
    }
}

/// Runs rounds until the parties agree or `max_rounds` is hit. `rng` is
/// Alice's stream (it draws the permutation seeds). Alice's key is never
/// modified.
///
/// Each fix also re-examines the blocks of earlier rounds that contain the
/// fixed bit, since their parity has just flipped; this flushes out error
/// pairs that a single round's blocks would mask.
pub fn reconcile<R: Rng + ?Sized>(
    alice: &BitString,
    bob: &BitString,
    qber_est: f64,
    params: &ReconParams,
    channel: &mut PublicChannel,
    rng: &mut R,
) -> Result<ReconOutcome, ReconError> {
    params.validate()?;
    if alice.len() != bob.len() {
        return Err(ReconError::LengthMismatch {
            alice: alice.len(),
            bob: bob.len(),
        });
    }
    let len = alice.len();
    let block = params.resolve_block_size(qber_est, len);
    if len < 2 * block {
        return Err(ReconError::KeyTooShort { len, block });
    }
    let a_id = channel.endpoints()[0];
    let blocks = len.div_ceil(block);

    let mut s = Session {
        alice,
        bob: bob.clone(),
        block,
        channel,
        rounds: Vec::new(),
        comparisons: 0,
        fixes: 0,
    };
    let mut streak = 0;
    let mut trace = vec![alice.hamming(bob)];

    while s.rounds.len() < params.max_rounds && streak < params.agree_rounds_needed {
        let seed: u64 = rng.random();
        let got = s.channel.send(a_id, MessageKind::PermutationSeed, payload::encode_seed(seed))?;
        let seen = payload::decode_seed(&got.payload)?;
        s.rounds.push(Round::new(permutation(seed, len), permutation(seen, len)));
        let r = s.rounds.len() - 1;

        let mut mismatched = 0;
        for b in 0..blocks {
            if let Some(pos) = s.check(r, b)? {
                mismatched += 1;
                s.cascade(pos, (r, b), b + 1)?;
            }
        }
        trace.push(alice.hamming(&s.bob));
        log::trace!("round {}: {mismatched} mismatched blocks, distance {}", r + 1, trace[r + 1]);

        streak = if mismatched == 0 { streak + 1 } else { 0 };
        if s.desynchronized() {
            streak = 0;
            break;
        }
    }

    let outcome = ReconOutcome {
        corrected_alice: alice.clone(),
        corrected_bob: s.bob,
        parity_comparisons: s.comparisons,
        rounds_run: s.rounds.len(),
        converged: streak >= params.agree_rounds_needed,
        block_size: block,
        distance_trace: trace,
    };
    if outcome.converged {
        Ok(outcome)
    } else {
        Err(ReconError::NotConverged(Box::new(outcome)))
    }
}
