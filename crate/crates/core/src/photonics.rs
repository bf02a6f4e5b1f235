//! Single-photon preparation, transmission and measurement.
//!
//! Photons are modelled classically: a state is a (basis, bit) pair. Measuring
//! in the preparation basis returns the bit; measuring in the conjugate basis
//! returns a fair coin flip.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bit;

/// Polarization basis of a preparation or measurement apparatus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Horizontal / vertical.
    Linear,
    /// Right / left circular.
    Circular,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Linear, Basis::Circular];

    pub fn conjugate(self) -> Basis {
        match self {
            Basis::Linear => Basis::Circular,
            Basis::Circular => Basis::Linear,
        }
    }

    /// Uniformly random basis.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Basis {
        if rng.random::<bool>() {
            Basis::Circular
        } else {
            Basis::Linear
        }
    }

    pub(crate) fn as_bit(self) -> Bit {
        self == Basis::Circular
    }

    pub(crate) fn from_bit(b: Bit) -> Basis {
        if b {
            Basis::Circular
        } else {
            Basis::Linear
        }
    }
}

/// One of the four signal states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhotonState {
    pub basis: Basis,
    pub bit: Bit,
}

#[derive(Debug, Error, PartialEq)]
pub enum PhotonicsError {
    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidProbability { name: &'static str, value: f64 },
}

/// Intrinsic channel imperfections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Probability that a delivered photon has its bit flipped.
    pub flip_prob: f64,
    /// Probability that a photon never arrives.
    pub loss_prob: f64,
}

impl ChannelParams {
    pub const NOISELESS: ChannelParams = ChannelParams {
        flip_prob: 0.0,
        loss_prob: 0.0,
    };

    pub fn new(flip_prob: f64, loss_prob: f64) -> Result<Self, PhotonicsError> {
        let params = Self {
            flip_prob,
            loss_prob,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PhotonicsError> {
        check_prob("flip_prob", self.flip_prob)?;
        check_prob("loss_prob", self.loss_prob)
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self::NOISELESS
    }
}

pub(crate) fn check_prob(name: &'static str, value: f64) -> Result<(), PhotonicsError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(PhotonicsError::InvalidProbability { name, value })
    }
}

/// What the receiver's detector reported for one time slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    /// `None` when the photon was lost.
    pub outcome: Option<Bit>,
    pub basis_used: Basis,
}

impl Detection {
    pub fn detected(&self) -> bool {
        self.outcome.is_some()
    }
}

pub fn prepare(bit: Bit, basis: Basis) -> PhotonState {
    PhotonState { basis, bit }
}

/// Sends a photon through the lossy, noisy channel. Loss is drawn first,
/// then a bit flip within the preparation basis.
pub fn transmit<R: Rng + ?Sized>(
    state: PhotonState,
    ch: &ChannelParams,
    rng: &mut R,
) -> Option<PhotonState> {
    if ch.loss_prob > 0.0 && rng.random_bool(ch.loss_prob) {
        return None;
    }
    if ch.flip_prob > 0.0 && rng.random_bool(ch.flip_prob) {
        return Some(PhotonState {
            bit: !state.bit,
            ..state
        });
    }
    Some(state)
}

pub fn measure<R: Rng + ?Sized>(state: PhotonState, basis: Basis, rng: &mut R) -> Bit {
    if basis == state.basis {
        state.bit
    } else {
        rng.random::<bool>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;
    use std::collections::HashSet;

    #[test]
    fn prepare_is_identity() {
        assert_eq!(
            prepare(false, Basis::Linear),
            PhotonState {
                basis: Basis::Linear,
                bit: false
            }
        );
        assert_eq!(
            prepare(true, Basis::Circular),
            PhotonState {
                basis: Basis::Circular,
                bit: true
            }
        );
        let states: HashSet<_> = Basis::ALL
            .iter()
            .flat_map(|&b| [prepare(false, b), prepare(true, b)])
            .collect();
        assert_eq!(states.len(), 4);
    }

    #[test]
    fn forced_loss_and_noiseless_identity() {
        let mut rng = derive(1, 0);
        let lossy = ChannelParams::new(0.0, 1.0).unwrap();
        let p = prepare(true, Basis::Circular);
        for _ in 0..100 {
            assert_eq!(transmit(p, &lossy, &mut rng), None);
            assert_eq!(transmit(p, &ChannelParams::NOISELESS, &mut rng), Some(p));
        }
    }

    #[test]
    fn flip_fraction_matches_bernoulli() {
        let mut rng = derive(2, 0);
        let ch = ChannelParams::new(0.1, 0.0).unwrap();
        let p = prepare(false, Basis::Linear);
        let n = 100_000;
        let flips = (0..n)
            .filter(|_| {
                let out = transmit(p, &ch, &mut rng).unwrap();
                assert_eq!(out.basis, Basis::Linear);
                out.bit
            })
            .count();
        let frac = flips as f64 / n as f64;
        assert!((frac - 0.1).abs() <= 0.005, "flip fraction {frac}");
    }

    #[test]
    fn matched_basis_is_deterministic() {
        let mut rng = derive(3, 0);
        for basis in Basis::ALL {
            for bit in [false, true] {
                for _ in 0..50 {
                    assert_eq!(measure(prepare(bit, basis), basis, &mut rng), bit);
                }
            }
        }
    }

    #[test]
    fn conjugate_basis_is_uniform() {
        let mut rng = derive(4, 0);
        let n = 100_000;
        for basis in Basis::ALL {
            for bit in [false, true] {
                let ones = (0..n)
                    .filter(|_| measure(prepare(bit, basis), basis.conjugate(), &mut rng))
                    .count();
                let mean = ones as f64 / n as f64;
                let tol = 4.0 * (0.25 / n as f64).sqrt();
                assert!((mean - 0.5).abs() <= tol.min(0.005), "mean {mean}");
            }
        }
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(ChannelParams::new(1.5, 0.0).is_err());
        assert!(ChannelParams::new(0.0, -0.1).is_err());
        assert!(ChannelParams::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn same_seed_same_outcomes() {
        let ch = ChannelParams::new(0.3, 0.2).unwrap();
        let run = |seed| {
            let mut rng = derive(seed, 0);
            (0..1000)
                .map(|i| {
                    let s = prepare(i % 3 == 0, Basis::Linear);
                    transmit(s, &ch, &mut rng).map(|s| measure(s, Basis::Circular, &mut rng))
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }
}
