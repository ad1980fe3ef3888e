//! Relay-committee aggregate signatures.
//!
//! Each relay signs the common message on G2; any observer multiplies the
//! component signatures and public keys together and records who contributed
//! in a bit mask. Verification recomputes the partial public key from the
//! full registry and checks one pairing equation, the same-message
//! specialization of the pairing-product identity.

use rand::Rng;
use thiserror::Error;

use super::BilinearEngine;
use crate::wire::{Reader, Writer, WireError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("duplicate signer index {0}")]
    DuplicateIndex(usize),
    #[error("signer index {index} out of range for committee of {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("empty signer set")]
    Empty,
    #[error("mask length {mask} does not match registry size {n}")]
    MaskLength { mask: usize, n: usize },
    #[error("malformed encoding: {0}")]
    Wire(#[from] WireError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelayKeyPair<E: BilinearEngine> {
    pub bsk: E::Scalar,
    pub bpk: E::G1,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelaySignature<E: BilinearEngine> {
    pub bsig: E::G2,
}

/// Bit vector identifying which committee members contributed to a proof.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut mask = Self::empty(n);
        for &i in indices {
            mask.bits[i] = true;
        }
        mask
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }

    pub fn encode(&self, w: &mut Writer) {
        w.put_u32(self.bits.len() as u32);
        let mut packed = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                packed[i / 8] |= 1 << (7 - (i % 8));
            }
        }
        w.put_bytes(&packed);
    }

    pub fn decode(r: &mut Reader) -> Result<Self, WireError> {
        let n = r.get_u32()? as usize;
        let packed = r.get_bytes()?;
        if packed.len() != n.div_ceil(8) {
            return Err(WireError::Invalid("mask length"));
        }
        let mut bits = vec![false; n];
        for (i, bit) in bits.iter_mut().enumerate() {
            *bit = packed[i / 8] & (1 << (7 - (i % 8))) != 0;
        }
        Ok(Self { bits })
    }
}

/// Aggregated signature, aggregated public key, and contributor mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregateProof<E: BilinearEngine> {
    pub subsig_th: E::G2,
    pub subpub_th: E::G1,
    pub mask: Mask,
}

impl<E: BilinearEngine> AggregateProof<E> {
    /// Canonical encoding: subsig_th, subpub_th, mask, in that order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_bytes(&E::g2_to_bytes(&self.subsig_th));
        w.put_bytes(&E::g1_to_bytes(&self.subpub_th));
        self.mask.encode(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AggregateError> {
        let mut r = Reader::new(bytes);
        let sig_bytes = r.get_bytes()?;
        let pub_bytes = r.get_bytes()?;
        let subsig_th =
            E::g2_from_bytes(&sig_bytes).ok_or(WireError::Invalid("subsig_th"))?;
        let subpub_th =
            E::g1_from_bytes(&pub_bytes).ok_or(WireError::Invalid("subpub_th"))?;
        let mask = Mask::decode(&mut r)?;
        r.finish()?;
        Ok(Self {
            subsig_th,
            subpub_th,
            mask,
        })
    }
}

/// Fixed committee key registry; index i in a mask refers to `apub[i]`.
#[derive(Clone, Debug)]
pub struct AggregateRegistry<E: BilinearEngine> {
    pub apub: Vec<E::G1>,
}

impl<E: BilinearEngine> AggregateRegistry<E> {
    pub fn new(apub: Vec<E::G1>) -> Self {
        Self { apub }
    }

    pub fn n(&self) -> usize {
        self.apub.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u32(self.apub.len() as u32);
        for pk in &self.apub {
            w.put_bytes(&E::g1_to_bytes(pk));
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AggregateError> {
        let mut r = Reader::new(bytes);
        let n = r.get_u32()? as usize;
        let mut apub = Vec::with_capacity(n);
        for _ in 0..n {
            let b = r.get_bytes()?;
            apub.push(E::g1_from_bytes(&b).ok_or(WireError::Invalid("apub entry"))?);
        }
        r.finish()?;
        Ok(Self { apub })
    }
}

/// A full relay committee's keys plus the derived registry; setup-time
/// fixture shared by the protocol layers and the harness.
#[derive(Clone)]
pub struct Committee<E: BilinearEngine> {
    pub keypairs: Vec<RelayKeyPair<E>>,
    pub f: usize,
}

impl<E: BilinearEngine> Committee<E> {
    /// n = 3f+1 keypairs from the given rng.
    pub fn generate(f: usize, rng: &mut impl Rng) -> Self {
        let n = 3 * f + 1;
        let keypairs = (0..n).map(|_| relay_keygen::<E>(rng)).collect();
        Self { keypairs, f }
    }

    pub fn n(&self) -> usize {
        self.keypairs.len()
    }

    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    pub fn registry(&self) -> AggregateRegistry<E> {
        AggregateRegistry::new(self.keypairs.iter().map(|kp| kp.bpk.clone()).collect())
    }

    /// Sign with the given members and aggregate into a proof.
    pub fn attest(&self, message: &[u8], signers: &[usize]) -> AggregateProof<E> {
        let sigs: Vec<_> = signers
            .iter()
            .map(|&i| {
                let kp = &self.keypairs[i];
                (i, relay_sign(kp, message), kp.bpk.clone())
            })
            .collect();
        aggregate(&sigs, self.n()).expect("valid signer set")
    }

    /// Attest with the first `quorum` members.
    pub fn attest_quorum(&self, message: &[u8]) -> AggregateProof<E> {
        let signers: Vec<usize> = (0..self.quorum()).collect();
        self.attest(message, &signers)
    }
}

/// Sample a keypair; a zero secret scalar is resampled.
pub fn relay_keygen<E: BilinearEngine>(rng: &mut impl Rng) -> RelayKeyPair<E> {
    loop {
        let mut wide = [0u8; 64];
        rng.fill_bytes(&mut wide);
        let bsk = E::scalar_from_wide(&wide);
        if E::scalar_is_zero(&bsk) {
            continue;
        }
        let bpk = E::g1_mul(&E::g1_generator(), &bsk);
        return RelayKeyPair { bsk, bpk };
    }
}

pub fn relay_sign<E: BilinearEngine>(kp: &RelayKeyPair<E>, message: &[u8]) -> RelaySignature<E> {
    RelaySignature {
        bsig: E::g2_mul(&E::hash_to_g2(message), &kp.bsk),
    }
}

/// `e(g1, bsig) == e(bpk, H(m))`
pub fn relay_verify<E: BilinearEngine>(
    sig: &RelaySignature<E>,
    bpk: &E::G1,
    message: &[u8],
) -> bool {
    let lhs = E::pairing(&E::g1_generator(), &sig.bsig);
    let rhs = E::pairing(bpk, &E::hash_to_g2(message));
    lhs == rhs
}

/// Multiply component signatures and public keys into a proof.
///
/// The caller is responsible for having verified each component signature
/// against its public key and the common message.
pub fn aggregate<E: BilinearEngine>(
    sigs: &[(usize, RelaySignature<E>, E::G1)],
    n: usize,
) -> Result<AggregateProof<E>, AggregateError> {
    if sigs.is_empty() {
        return Err(AggregateError::Empty);
    }
    let mut mask = Mask::empty(n);
    let mut subsig_th = E::g2_identity();
    let mut subpub_th = E::g1_identity();
    for (index, sig, bpk) in sigs {
        if *index >= n {
            return Err(AggregateError::IndexOutOfRange { index: *index, n });
        }
        if mask.bit(*index) {
            return Err(AggregateError::DuplicateIndex(*index));
        }
        mask.set(*index, true);
        subsig_th = E::g2_add(&subsig_th, &sig.bsig);
        subpub_th = E::g1_add(&subpub_th, bpk);
    }
    Ok(AggregateProof {
        subsig_th,
        subpub_th,
        mask,
    })
}

/// Same-message multisignature verification.
///
/// Returns true iff the mask meets the quorum, the claimed partial public
/// key matches the registry over the mask bits, and the pairing equation
/// `e(g1, subsig_th) == e(subpub_th, H(m))` holds.
pub fn verify_aggregate_same_message<E: BilinearEngine>(
    proof: &AggregateProof<E>,
    registry: &AggregateRegistry<E>,
    message: &[u8],
    quorum: usize,
) -> Result<bool, AggregateError> {
    if proof.mask.len() != registry.n() {
        return Err(AggregateError::MaskLength {
            mask: proof.mask.len(),
            n: registry.n(),
        });
    }
    if proof.mask.popcount() < quorum {
        return Ok(false);
    }
    let mut expected_pub = E::g1_identity();
    for i in proof.mask.indices() {
        expected_pub = E::g1_add(&expected_pub, &registry.apub[i]);
    }
    if expected_pub != proof.subpub_th {
        return Ok(false);
    }
    let lhs = E::pairing(&E::g1_generator(), &proof.subsig_th);
    let rhs = E::pairing(&proof.subpub_th, &E::hash_to_g2(message));
    Ok(lhs == rhs)
}
