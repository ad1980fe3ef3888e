//! Signature schemes used by the middleware: bilinear aggregate signatures
//! for relay committees and ed25519 for offline clients.
//!
//! The bilinear scheme is written against the [`BilinearEngine`] abstraction
//! so the same protocol code runs on the production BLS12-381 instantiation
//! and on a fast insecure engine reserved for protocol-logic tests.

mod bls;
mod client;
mod relay;
mod toy;

pub use bls::Bls12381Engine;
pub use client::{address_from_pk, client_verify, Address, ClientKeyPair, ClientSignature};
pub use relay::{
    aggregate, relay_keygen, relay_sign, relay_verify, verify_aggregate_same_message,
    AggregateError, AggregateProof, AggregateRegistry, Committee, Mask, RelayKeyPair,
    RelaySignature,
};
pub use toy::ToyEngine;

/// A prime-order bilinear group setting `e: G1 x G2 -> Gt`.
///
/// Groups are written additively here (scalar multiplication instead of the
/// paper-style exponentiation); the algebra is identical.
pub trait BilinearEngine: Clone + Send + Sync + 'static {
    type Scalar: Clone + PartialEq + Eq + Send + Sync + std::fmt::Debug;
    type G1: Clone + PartialEq + Eq + Send + Sync + std::fmt::Debug;
    type G2: Clone + PartialEq + Eq + Send + Sync + std::fmt::Debug;
    type Gt: PartialEq + Eq;

    const NAME: &'static str;

    fn g1_generator() -> Self::G1;
    fn g2_generator() -> Self::G2;
    fn g1_identity() -> Self::G1;
    fn g2_identity() -> Self::G2;

    /// Uniform scalar from 64 bytes of seed material (wide reduction).
    fn scalar_from_wide(bytes: &[u8; 64]) -> Self::Scalar;
    fn scalar_from_u64(v: u64) -> Self::Scalar;
    fn scalar_is_zero(s: &Self::Scalar) -> bool;
    fn scalar_mul(a: &Self::Scalar, b: &Self::Scalar) -> Self::Scalar;

    fn g1_mul(p: &Self::G1, s: &Self::Scalar) -> Self::G1;
    fn g2_mul(p: &Self::G2, s: &Self::Scalar) -> Self::G2;
    fn g1_add(a: &Self::G1, b: &Self::G1) -> Self::G1;
    fn g2_add(a: &Self::G2, b: &Self::G2) -> Self::G2;

    fn pairing(p: &Self::G1, q: &Self::G2) -> Self::Gt;

    /// Deterministic hash of arbitrary bytes onto G2.
    fn hash_to_g2(message: &[u8]) -> Self::G2;

    // Canonical fixed-width encodings; these bytes end up inside signed
    // payloads, so they must be bit-exact across runs.
    fn g1_to_bytes(p: &Self::G1) -> Vec<u8>;
    fn g1_from_bytes(bytes: &[u8]) -> Option<Self::G1>;
    fn g2_to_bytes(p: &Self::G2) -> Vec<u8>;
    fn g2_from_bytes(bytes: &[u8]) -> Option<Self::G2>;
}
