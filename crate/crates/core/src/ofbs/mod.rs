//! Relay-node network bridging offline clients to chains: SMS intake,
//! off-chain BFT consensus, buffered channel updates, and the committee
//! fault-probability calculator.

mod bft;
mod fault;

pub use bft::{
    proposal_digest, BftAction, BftInstance, BftMessage, BftStatus, ProposalDigest,
};
pub use fault::{
    binomial, fault_probability, fault_probability_exact, FaultModel, FaultModelError,
};

/// Worker-loop flush predicate: fire only when the time since the last
/// flush strictly exceeds the timeout AND the queue strictly exceeds the
/// buffer size.
pub fn should_flush(elapsed_ms: u64, timeout_ms: u64, queue_len: usize, buffer: usize) -> bool {
    elapsed_ms > timeout_ms && queue_len > buffer
}
