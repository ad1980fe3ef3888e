//! Deterministic, seedable simulator of the BcMON middleware stack:
//! offline clients reach simulated blockchains over an SMS-like transport
//! and a relay committee (OFBS), cross-chain requests are attested by a
//! two-phase aggregate-signature pipeline (CCBS), and on-chain-data
//! computations run off-chain with threshold attestations (CPBS).

pub mod ccbs;
pub mod contracts;
pub mod cpbs;
pub mod crypto;
pub mod harness;
pub mod ofbs;
pub mod sim;
pub mod simchain;
pub mod sms;
pub mod wire;

pub use crypto::{Bls12381Engine, ToyEngine};
