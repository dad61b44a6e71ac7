//! Polarization states of the four-state protocol and Born-rule routing
//! through an active-basis PBS receiver.
//!
//! Bit convention: H and D carry bit 0, V and A carry bit 1. Detector index
//! equals the bit value it registers.
//!
//! Only the four protocol eigenstates are modelled, so every projection
//! probability is one of the exact constants 0, 1/2 or 1.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basis {
    /// Rectilinear, {H, V}.
    Z,
    /// Diagonal, {D, A}.
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn other(self) -> Basis {
        match self {
            Basis::Z => Basis::X,
            Basis::X => Basis::Z,
        }
    }

    /// Samples Z with probability `prior_z`, X otherwise.
    pub fn sample<R: Rng + ?Sized>(prior_z: f64, rng: &mut R) -> Basis {
        if rng.random_bool(prior_z) {
            Basis::Z
        } else {
            Basis::X
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::X => "X",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Bit {
    Zero,
    One,
}

impl Bit {
    pub const ALL: [Bit; 2] = [Bit::Zero, Bit::One];

    pub fn complement(self) -> Bit {
        match self {
            Bit::Zero => Bit::One,
            Bit::One => Bit::Zero,
        }
    }

    /// Detector index registering this bit.
    pub fn index(self) -> usize {
        match self {
            Bit::Zero => 0,
            Bit::One => 1,
        }
    }

    pub fn from_index(index: usize) -> Bit {
        if index == 0 {
            Bit::Zero
        } else {
            Bit::One
        }
    }

    pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Bit {
        if rng.random_bool(0.5) {
            Bit::One
        } else {
            Bit::Zero
        }
    }
}

impl From<Bit> for u8 {
    fn from(bit: Bit) -> u8 {
        bit.index() as u8
    }
}

impl TryFrom<u8> for Bit {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(Bit::Zero),
            1 => Ok(Bit::One),
            other => Err(format!("bit must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Bit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// One of the four protocol eigenstates, written `Z0`, `Z1`, `X0`, `X1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct PolarizationState {
    pub basis: Basis,
    pub bit: Bit,
}

impl PolarizationState {
    pub const fn new(basis: Basis, bit: Bit) -> Self {
        Self { basis, bit }
    }

    pub fn complement(self) -> Self {
        Self::new(self.basis, self.bit.complement())
    }

    pub fn all() -> impl Iterator<Item = PolarizationState> {
        Basis::ALL
            .into_iter()
            .flat_map(|b| Bit::ALL.into_iter().map(move |v| PolarizationState::new(b, v)))
    }
}

impl fmt::Display for PolarizationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.basis, self.bit)
    }
}

impl FromStr for PolarizationState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let basis = match s.get(..1) {
            Some("Z") | Some("z") => Basis::Z,
            Some("X") | Some("x") => Basis::X,
            _ => return Err(Error::Config(format!("invalid polarization state {s:?}"))),
        };
        let bit = match s.get(1..) {
            Some("0") => Bit::Zero,
            Some("1") => Bit::One,
            _ => return Err(Error::Config(format!("invalid polarization state {s:?}"))),
        };
        Ok(Self::new(basis, bit))
    }
}

impl From<PolarizationState> for String {
    fn from(state: PolarizationState) -> String {
        state.to_string()
    }
}

impl TryFrom<String> for PolarizationState {
    type Error = Error;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

/// |<outcome|state>|^2 for a measurement in `meas_basis`.
pub fn projection_prob(state: PolarizationState, meas_basis: Basis, outcome: Bit) -> f64 {
    if state.basis != meas_basis {
        0.5
    } else if state.bit == outcome {
        1.0
    } else {
        0.0
    }
}

/// Detector index the photon exits on after Bob's basis rotation and the PBS.
pub fn route_through_pbs<R: Rng + ?Sized>(state: PolarizationState, bob_basis: Basis, rng: &mut R) -> usize {
    if state.basis == bob_basis {
        state.bit.index()
    } else {
        Bit::uniform(rng).index()
    }
}
