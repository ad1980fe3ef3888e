//! Offline-client signatures (ed25519) and account addresses.

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use sha2::{Digest, Sha256};

/// Account identifier: hex of the first 20 bytes of sha256(pk).
pub type Address = String;

pub fn address_from_pk(pk_bytes: &[u8; 32]) -> Address {
    let digest = Sha256::digest(pk_bytes);
    hex::encode(&digest[..20])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientSignature(pub Vec<u8>);

#[derive(Clone)]
pub struct ClientKeyPair {
    signing: SigningKey,
    pub address: Address,
}

impl ClientKeyPair {
    /// Deterministic keypair from 32 bytes of seed material.
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(seed);
        let address = address_from_pk(&signing.verifying_key().to_bytes());
        Self { signing, address }
    }

    pub fn public_key_bytes(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> ClientSignature {
        ClientSignature(self.signing.sign(message).to_bytes().to_vec())
    }
}

/// Verify a client signature; malformed key or signature bytes verify false.
pub fn client_verify(pk_bytes: &[u8; 32], message: &[u8], sig: &ClientSignature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(pk_bytes) else {
        return false;
    };
    let Ok(sig_bytes): Result<[u8; 64], _> = sig.0.as_slice().try_into() else {
        return false;
    };
    let signature = Signature::from_bytes(&sig_bytes);
    vk.verify_strict(message, &signature).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(seed: u8) -> ClientKeyPair {
        ClientKeyPair::from_seed(&[seed; 32])
    }

    #[test]
    fn round_trip() {
        let kp = kp(1);
        let sig = kp.sign(b"pay 10");
        assert!(client_verify(&kp.public_key_bytes(), b"pay 10", &sig));
    }

    #[test]
    fn tampered_byte_rejected() {
        let kp = kp(2);
        let mut sig = kp.sign(b"pay 10");
        sig.0[5] ^= 0x01;
        assert!(!client_verify(&kp.public_key_bytes(), b"pay 10", &sig));
    }

    #[test]
    fn wrong_key_rejected() {
        let kp1 = kp(3);
        let kp2 = kp(4);
        let sig = kp1.sign(b"m");
        assert!(!client_verify(&kp2.public_key_bytes(), b"m", &sig));
    }

    #[test]
    fn malformed_signature_bytes_reject() {
        let kp = kp(5);
        assert!(!client_verify(
            &kp.public_key_bytes(),
            b"m",
            &ClientSignature(vec![1, 2, 3])
        ));
    }

    #[test]
    fn address_is_deterministic() {
        assert_eq!(kp(6).address, kp(6).address);
        assert_ne!(kp(6).address, kp(7).address);
        assert_eq!(kp(6).address.len(), 40);
    }
}
