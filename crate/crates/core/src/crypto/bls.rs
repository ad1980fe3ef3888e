//! Production engine on BLS12-381.
//!
//! Public keys live in G1 (48-byte compressed), signatures in G2 (96-byte
//! compressed). Hash-to-curve follows the IRTF SSWU construction with a
//! project-specific domain separation tag.

use bls12_381::hash_to_curve::{ExpandMsgXmd, HashToCurve};
use bls12_381::{pairing, G1Affine, G1Projective, G2Affine, G2Projective, Gt, Scalar};
use sha2::Sha256;

use super::BilinearEngine;

const DST: &[u8] = b"BCMON_RELAY_SIG_BLS12381G2_XMD:SHA-256_SSWU_RO_";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bls12381Engine;

impl BilinearEngine for Bls12381Engine {
    type Scalar = Scalar;
    type G1 = G1Projective;
    type G2 = G2Projective;
    type Gt = Gt;

    const NAME: &'static str = "bls12-381";

    fn g1_generator() -> G1Projective {
        G1Projective::generator()
    }

    fn g2_generator() -> G2Projective {
        G2Projective::generator()
    }

    fn g1_identity() -> G1Projective {
        G1Projective::identity()
    }

    fn g2_identity() -> G2Projective {
        G2Projective::identity()
    }

    fn scalar_from_wide(bytes: &[u8; 64]) -> Scalar {
        Scalar::from_bytes_wide(bytes)
    }

    fn scalar_from_u64(v: u64) -> Scalar {
        Scalar::from(v)
    }

    fn scalar_is_zero(s: &Scalar) -> bool {
        *s == Scalar::from(0u64)
    }

    fn scalar_mul(a: &Scalar, b: &Scalar) -> Scalar {
        a * b
    }

    fn g1_mul(p: &G1Projective, s: &Scalar) -> G1Projective {
        p * s
    }

    fn g2_mul(p: &G2Projective, s: &Scalar) -> G2Projective {
        p * s
    }

    fn g1_add(a: &G1Projective, b: &G1Projective) -> G1Projective {
        a + b
    }

    fn g2_add(a: &G2Projective, b: &G2Projective) -> G2Projective {
        a + b
    }

    fn pairing(p: &G1Projective, q: &G2Projective) -> Gt {
        pairing(&G1Affine::from(p), &G2Affine::from(q))
    }

    fn hash_to_g2(message: &[u8]) -> G2Projective {
        <G2Projective as HashToCurve<ExpandMsgXmd<Sha256>>>::hash_to_curve(message, DST)
    }

    fn g1_to_bytes(p: &G1Projective) -> Vec<u8> {
        G1Affine::from(p).to_compressed().to_vec()
    }

    fn g1_from_bytes(bytes: &[u8]) -> Option<G1Projective> {
        let arr: [u8; 48] = bytes.try_into().ok()?;
        Option::<G1Affine>::from(G1Affine::from_compressed(&arr)).map(G1Projective::from)
    }

    fn g2_to_bytes(p: &G2Projective) -> Vec<u8> {
        G2Affine::from(p).to_compressed().to_vec()
    }

    fn g2_from_bytes(bytes: &[u8]) -> Option<G2Projective> {
        let arr: [u8; 96] = bytes.try_into().ok()?;
        Option::<G2Affine>::from(G2Affine::from_compressed(&arr)).map(G2Projective::from)
    }
}
