//! Insecure constant-size engine for protocol-logic tests.
//!
//! Group elements are represented by their discrete logarithms modulo the
//! Mersenne prime 2^61 - 1, which makes every operation a couple of integer
//! multiplications and the "pairing" a plain product of exponents. The
//! algebra (bilinearity, aggregation homomorphism) is exact; the scheme has
//! zero security and must never leave test configurations.

use sha2::{Digest, Sha256};

use super::BilinearEngine;

const Q: u128 = (1 << 61) - 1;

fn reduce(v: u128) -> u64 {
    (v % Q) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyEngine;

impl BilinearEngine for ToyEngine {
    type Scalar = u64;
    // Elements carry their exponent; the generator is exponent 1.
    type G1 = u64;
    type G2 = u64;
    type Gt = u64;

    const NAME: &'static str = "toy-mod-2^61-1";

    fn g1_generator() -> u64 {
        1
    }

    fn g2_generator() -> u64 {
        1
    }

    fn g1_identity() -> u64 {
        0
    }

    fn g2_identity() -> u64 {
        0
    }

    fn scalar_from_wide(bytes: &[u8; 64]) -> u64 {
        reduce(u128::from_be_bytes(bytes[..16].try_into().unwrap()))
    }

    fn scalar_from_u64(v: u64) -> u64 {
        reduce(v as u128)
    }

    fn scalar_is_zero(s: &u64) -> bool {
        *s == 0
    }

    fn scalar_mul(a: &u64, b: &u64) -> u64 {
        reduce(*a as u128 * *b as u128)
    }

    fn g1_mul(p: &u64, s: &u64) -> u64 {
        reduce(*p as u128 * *s as u128)
    }

    fn g2_mul(p: &u64, s: &u64) -> u64 {
        reduce(*p as u128 * *s as u128)
    }

    fn g1_add(a: &u64, b: &u64) -> u64 {
        reduce(*a as u128 + *b as u128)
    }

    fn g2_add(a: &u64, b: &u64) -> u64 {
        reduce(*a as u128 + *b as u128)
    }

    fn pairing(p: &u64, q: &u64) -> u64 {
        reduce(*p as u128 * *q as u128)
    }

    fn hash_to_g2(message: &[u8]) -> u64 {
        let digest = Sha256::digest(message);
        reduce(u128::from_be_bytes(digest[..16].try_into().unwrap()))
    }

    fn g1_to_bytes(p: &u64) -> Vec<u8> {
        p.to_be_bytes().to_vec()
    }

    fn g1_from_bytes(bytes: &[u8]) -> Option<u64> {
        let arr: [u8; 8] = bytes.try_into().ok()?;
        let v = u64::from_be_bytes(arr);
        (v < Q as u64).then_some(v)
    }

    fn g2_to_bytes(p: &u64) -> Vec<u8> {
        p.to_be_bytes().to_vec()
    }

    fn g2_from_bytes(bytes: &[u8]) -> Option<u64> {
        Self::g1_from_bytes(bytes)
    }
}
