//! CCBS: per-request two-phase cross-chain state machine. Relay actors own
//! one [`RequestState`] per request; the epoch leader drives broadcasts and
//! contract submissions, and any node can take over after an epoch bump.

use std::collections::{BTreeMap, BTreeSet};

use crate::contracts::{AcceptRecord, CrossChainRequest, CrossResult};
use crate::crypto::{client_verify, BilinearEngine, ClientKeyPair, ClientSignature, RelaySignature};
use crate::wire::Writer;

/// Round-robin, deterministic across all correct nodes.
pub fn elect_leader(n: usize, epoch: u64) -> usize {
    (epoch % n as u64) as usize
}

/// Bytes the epoch leader signs over a broadcast payload (phase 1 carries
/// request_k, phase 2 carries result_k).
pub fn prepare_message(phase: u8, payload: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str("ccbs-prepare");
    w.put_u8(phase);
    w.put_bytes(payload);
    w.into_bytes()
}

pub fn sign_prepare(leader_key: &ClientKeyPair, phase: u8, payload: &[u8]) -> ClientSignature {
    leader_key.sign(&prepare_message(phase, payload))
}

pub fn verify_prepare(
    leader_pk: &[u8; 32],
    phase: u8,
    payload: &[u8],
    sig: &ClientSignature,
) -> bool {
    client_verify(leader_pk, &prepare_message(phase, payload), sig)
}

pub const PHASE_ACCEPT: u8 = 1;
pub const PHASE_CALLBACK: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RequestPhase {
    Listening,
    Prepared,
    Aggregated,
    AcceptSubmitted,
    CallbackSubmitted,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestOutcome {
    Completed,
    Rejected,
    StuckPending,
}

impl RequestOutcome {
    pub fn name(self) -> &'static str {
        match self {
            RequestOutcome::Completed => "Completed",
            RequestOutcome::Rejected => "Rejected",
            RequestOutcome::StuckPending => "StuckPending",
        }
    }
}

/// One relay's view of one cross-chain request.
#[derive(Debug, Clone)]
pub struct RequestState<E: BilinearEngine> {
    pub request: CrossChainRequest,
    pub request_bytes: Vec<u8>,
    phase: RequestPhase,
    pub epoch: u64,
    pub started_epoch_at: u64,
    /// Phase-1 component signatures over the accept attestation message.
    pub accept_sigs: BTreeMap<usize, RelaySignature<E>>,
    /// Phase-2 component signatures over the callback attestation message.
    pub callback_sigs: BTreeMap<usize, RelaySignature<E>>,
    /// Accept events observed, keyed by destination chain.
    pub accepts_seen: BTreeMap<String, AcceptRecord>,
    /// Destination chains this node has already submitted cross_accept to
    /// in the current epoch.
    pub accept_submitted: BTreeSet<String>,
    pub callback_submitted: bool,
    pub outcome: Option<RequestOutcome>,
}

impl<E: BilinearEngine> RequestState<E> {
    pub fn new(request: CrossChainRequest, now: u64) -> Self {
        let request_bytes = request.to_bytes();
        Self {
            request,
            request_bytes,
            phase: RequestPhase::Listening,
            epoch: 0,
            started_epoch_at: now,
            accept_sigs: BTreeMap::new(),
            callback_sigs: BTreeMap::new(),
            accepts_seen: BTreeMap::new(),
            accept_submitted: BTreeSet::new(),
            callback_submitted: false,
            outcome: None,
        }
    }

    pub fn phase(&self) -> RequestPhase {
        self.phase
    }

    /// Phases only move forward at a correct node.
    pub fn advance_phase(&mut self, next: RequestPhase) {
        if next > self.phase {
            self.phase = next;
        }
    }

    /// A leader re-drive resets in-flight submission markers but never the
    /// phase or collected evidence.
    pub fn bump_epoch(&mut self, now: u64) {
        self.epoch += 1;
        self.started_epoch_at = now;
        self.accept_submitted.clear();
        self.callback_submitted = false;
    }

    pub fn all_destinations_accepted(&self) -> bool {
        self.request
            .to
            .iter()
            .all(|(chain, _)| self.accepts_seen.contains_key(chain))
    }

    /// result_k: per-destination tuples in declared destination order.
    pub fn assemble_result(&self) -> Option<CrossResult> {
        let mut legs = Vec::with_capacity(self.request.to.len());
        for (chain, _) in &self.request.to {
            legs.push(self.accepts_seen.get(chain)?.clone());
        }
        Some(CrossResult {
            req_id: self.request.req_id,
            legs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::ToyEngine;

    fn request() -> CrossChainRequest {
        CrossChainRequest {
            req_id: 11,
            from_chain: "src".into(),
            from_account: "alice".into(),
            to: vec![
                ("dst-b".into(), "bob".into()),
                ("dst-a".into(), "carol".into()),
            ],
            amount: 5,
            data: vec![],
            origin_uuid: 1,
        }
    }

    fn accept(chain: &str, height: u64) -> AcceptRecord {
        AcceptRecord {
            req_id: 11,
            chain_id: chain.into(),
            accept_height: height,
            outcome: 0,
        }
    }

    #[test]
    fn leader_election_is_round_robin() {
        assert_eq!(elect_leader(4, 0), 0);
        assert_eq!(elect_leader(4, 5), 1);
        assert_eq!(elect_leader(7, 13), 6);
    }

    #[test]
    fn prepare_signature_round_trip_and_tamper() {
        let leader = ClientKeyPair::from_seed(&[9u8; 32]);
        let sig = sign_prepare(&leader, PHASE_ACCEPT, b"request bytes");
        assert!(verify_prepare(
            &leader.public_key_bytes(),
            PHASE_ACCEPT,
            b"request bytes",
            &sig
        ));
        assert!(!verify_prepare(
            &leader.public_key_bytes(),
            PHASE_CALLBACK,
            b"request bytes",
            &sig
        ));
        assert!(!verify_prepare(
            &leader.public_key_bytes(),
            PHASE_ACCEPT,
            b"other bytes",
            &sig
        ));
    }

    #[test]
    fn result_assembled_in_declared_destination_order() {
        let mut state = RequestState::<ToyEngine>::new(request(), 0);
        assert!(state.assemble_result().is_none());
        state.accepts_seen.insert("dst-a".into(), accept("dst-a", 7));
        assert!(!state.all_destinations_accepted());
        state.accepts_seen.insert("dst-b".into(), accept("dst-b", 3));
        assert!(state.all_destinations_accepted());
        let result = state.assemble_result().unwrap();
        let order: Vec<&str> = result.legs.iter().map(|l| l.chain_id.as_str()).collect();
        assert_eq!(order, vec!["dst-b", "dst-a"]);
    }

    #[test]
    fn phase_never_regresses() {
        let mut state = RequestState::<ToyEngine>::new(request(), 0);
        state.advance_phase(RequestPhase::Aggregated);
        state.advance_phase(RequestPhase::Prepared);
        assert_eq!(state.phase(), RequestPhase::Aggregated);
        state.advance_phase(RequestPhase::Done);
        assert_eq!(state.phase(), RequestPhase::Done);
    }

    #[test]
    fn epoch_bump_resets_submissions_only() {
        let mut state = RequestState::<ToyEngine>::new(request(), 0);
        state.accepts_seen.insert("dst-a".into(), accept("dst-a", 7));
        state.accept_submitted.insert("dst-a".into());
        state.callback_submitted = true;
        state.bump_epoch(100);
        assert_eq!(state.epoch, 1);
        assert!(state.accept_submitted.is_empty());
        assert!(!state.callback_submitted);
        assert_eq!(state.accepts_seen.len(), 1);
    }
}
