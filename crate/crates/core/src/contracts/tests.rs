use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::crypto::{ClientKeyPair, Committee, ToyEngine};
use crate::simchain::{Chain, ChainTransaction, EventKind};
use crate::wire::Writer;

type E = ToyEngine;

struct Fixture {
    chain: Chain<E>,
    committee: Committee<E>,
    alice: ClientKeyPair,
    bob: ClientKeyPair,
    salt: u64,
}

const RELAY: &str = "committee-0";

impl Fixture {
    fn new(threshold: u32) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let committee = Committee::<E>::generate(1, &mut rng);
        let alice = ClientKeyPair::from_seed(&[1u8; 32]);
        let bob = ClientKeyPair::from_seed(&[2u8; 32]);
        let mut chain = Chain::new("src");
        chain
            .deploy_contract(
                "channel",
                Box::new(ChannelContract::new(
                    committee.registry(),
                    committee.quorum(),
                    threshold,
                )),
            )
            .unwrap();
        chain
            .deploy_contract(
                "proxy",
                Box::new(ProxyContract::new(
                    "src",
                    committee.registry(),
                    committee.quorum(),
                )),
            )
            .unwrap();
        chain
            .deploy_contract(
                "compute",
                Box::new(ComputeContract::new(committee.registry(), committee.quorum())),
            )
            .unwrap();
        chain.register_account(&alice.address.clone(), alice.public_key_bytes());
        chain.register_account(&bob.address.clone(), bob.public_key_bytes());
        chain.set_balance(&alice.address.clone(), 100);
        chain.set_balance(&bob.address.clone(), 100);
        Self {
            chain,
            committee,
            alice,
            bob,
            salt: 0,
        }
    }

    fn call(&mut self, submitter: &str, contract: &str, method: &str, args: Vec<u8>) -> bool {
        self.salt += 1;
        let id = self.chain.submit_tx(ChainTransaction {
            submitter: submitter.to_string(),
            contract_id: contract.to_string(),
            method: method.to_string(),
            args,
            salt: self.salt,
        });
        self.chain.produce_block(0);
        self.chain.receipt(id).unwrap().ok
    }

    fn open(&mut self, client: &ClientKeyPair, balance: u64) -> bool {
        let address = client.address.clone();
        self.call(&address, "channel", "open_channel", open_channel_args(RELAY, balance))
    }

    fn update(&mut self, txs: &[OffChainTx]) -> bool {
        let digest = batch_digest(RELAY, txs);
        let proof = self
            .committee
            .attest_quorum(&update_attest_message(RELAY, &digest));
        let args = update_channel_args(RELAY, txs, &proof);
        self.call("relay-0", "channel", "update_channel", args)
    }

    fn close(&mut self, residual: &[OffChainTx], final_state: &[(String, u64)]) -> bool {
        let digest = final_state_digest(final_state);
        let proof = self
            .committee
            .attest_quorum(&close_attest_message(RELAY, &digest));
        let args = close_channel_args(RELAY, residual, final_state, &proof);
        self.call("relay-0", "channel", "close_channel", args)
    }

    fn escrow(&self, account: &str) -> u64 {
        let bytes = self
            .chain
            .query_state("channel", &format!("escrow:{RELAY}:{account}"))
            .unwrap()
            .unwrap();
        u64::from_be_bytes(bytes.try_into().unwrap())
    }

    fn events_of(&self, kind: EventKind) -> usize {
        self.chain.events().iter().filter(|e| e.kind == kind).count()
    }
}

#[test]
fn open_channel_escrows_native_balance() {
    let mut fx = Fixture::new(1);
    let alice = fx.alice.address.clone();
    assert!(fx.open(&fx.alice.clone(), 100));
    assert_eq!(fx.chain.balance(&alice), 0);
    assert_eq!(fx.escrow(&alice), 100);
    assert_eq!(fx.events_of(EventKind::OpenChannel), 1);
}

#[test]
fn open_beyond_native_balance_fails_clean() {
    let mut fx = Fixture::new(1);
    let alice = fx.alice.address.clone();
    assert!(!fx.open(&fx.alice.clone(), 101));
    assert_eq!(fx.chain.balance(&alice), 100);
    assert!(fx.chain.events().is_empty());
}

#[test]
fn duplicate_open_fails_two_clients_coexist() {
    let mut fx = Fixture::new(1);
    assert!(fx.open(&fx.alice.clone(), 60));
    assert!(fx.open(&fx.bob.clone(), 40));
    assert!(!fx.open(&fx.alice.clone(), 10));
    assert_eq!(fx.escrow(&fx.alice.address.clone()), 60);
    assert_eq!(fx.escrow(&fx.bob.address.clone()), 40);
}

#[test]
fn threshold_one_batch_applies_and_emits() {
    let mut fx = Fixture::new(1);
    fx.open(&fx.alice.clone(), 100);
    fx.open(&fx.bob.clone(), 0);
    let tx = OffChainTx::signed(RELAY, &fx.alice, &fx.bob.address.clone(), 10, 1);
    assert!(fx.update(&[tx]));
    assert_eq!(fx.escrow(&fx.alice.address.clone()), 90);
    assert_eq!(fx.escrow(&fx.bob.address.clone()), 10);
    assert_eq!(fx.events_of(EventKind::UpdateChannel), 1);
}

#[test]
fn replayed_nonce_rejects_whole_batch() {
    let mut fx = Fixture::new(1);
    fx.open(&fx.alice.clone(), 100);
    fx.open(&fx.bob.clone(), 0);
    let tx = OffChainTx::signed(RELAY, &fx.alice, &fx.bob.address.clone(), 10, 1);
    assert!(fx.update(&[tx.clone()]));
    assert!(!fx.update(&[tx]));
    assert_eq!(fx.escrow(&fx.alice.address.clone()), 90);
}

#[test]
fn nonce_gap_rejected() {
    let mut fx = Fixture::new(1);
    fx.open(&fx.alice.clone(), 100);
    let tx = OffChainTx::signed(RELAY, &fx.alice, &fx.bob.address.clone(), 10, 3);
    assert!(!fx.update(&[tx]));
}

#[test]
fn bad_signature_rejected() {
    let mut fx = Fixture::new(1);
    fx.open(&fx.alice.clone(), 100);
    let mut tx = OffChainTx::signed(RELAY, &fx.alice, &fx.bob.address.clone(), 10, 1);
    tx.amount = 20;
    assert!(!fx.update(&[tx]));
    assert_eq!(fx.escrow(&fx.alice.address.clone()), 100);
}

#[test]
fn insufficient_escrow_rejected_boundary_ok() {
    let mut fx = Fixture::new(1);
    fx.open(&fx.alice.clone(), 100);
    let over = OffChainTx::signed(RELAY, &fx.alice, &fx.bob.address.clone(), 101, 1);
    assert!(!fx.update(&[over]));
    let exact = OffChainTx::signed(RELAY, &fx.alice, &fx.bob.address.clone(), 100, 1);
    assert!(fx.update(&[exact]));
    assert_eq!(fx.escrow(&fx.alice.address.clone()), 0);
}

#[test]
fn below_quorum_attestation_rejected() {
    let mut fx = Fixture::new(1);
    fx.open(&fx.alice.clone(), 100);
    let tx = OffChainTx::signed(RELAY, &fx.alice, &fx.bob.address.clone(), 10, 1);
    let digest = batch_digest(RELAY, std::slice::from_ref(&tx));
    let proof = fx
        .committee
        .attest(&update_attest_message(RELAY, &digest), &[0, 1]);
    let args = update_channel_args(RELAY, &[tx], &proof);
    assert!(!fx.call("relay-0", "channel", "update_channel", args));
    assert_eq!(fx.escrow(&fx.alice.address.clone()), 100);
}

#[test]
fn attestation_over_wrong_digest_rejected() {
    let mut fx = Fixture::new(1);
    fx.open(&fx.alice.clone(), 100);
    let tx = OffChainTx::signed(RELAY, &fx.alice, &fx.bob.address.clone(), 10, 1);
    let mut digest = batch_digest(RELAY, std::slice::from_ref(&tx));
    digest[0] ^= 1;
    let proof = fx
        .committee
        .attest_quorum(&update_attest_message(RELAY, &digest));
    let args = update_channel_args(RELAY, &[tx], &proof);
    assert!(!fx.call("relay-0", "channel", "update_channel", args));
}

#[test]
fn threshold_three_aggregates_once_matching_replay_oracle() {
    let mut fx = Fixture::new(3);
    fx.open(&fx.alice.clone(), 100);
    fx.open(&fx.bob.clone(), 50);
    let alice = fx.alice.address.clone();
    let bob = fx.bob.address.clone();
    let batches = [
        vec![OffChainTx::signed(RELAY, &fx.alice, &bob, 10, 1)],
        vec![
            OffChainTx::signed(RELAY, &fx.bob, &alice, 5, 1),
            OffChainTx::signed(RELAY, &fx.alice, &bob, 7, 2),
        ],
        vec![OffChainTx::signed(RELAY, &fx.alice, &bob, 3, 3)],
    ];
    assert!(fx.update(&batches[0]));
    assert!(fx.update(&batches[1]));
    assert_eq!(fx.events_of(EventKind::UpdateChannel), 0);
    assert!(fx.update(&batches[2]));
    assert_eq!(fx.events_of(EventKind::UpdateChannel), 1);
    // Sequential replay oracle over every off-chain tx.
    let mut oracle = std::collections::BTreeMap::from([(alice.clone(), 100u64), (bob.clone(), 50u64)]);
    for tx in batches.iter().flatten() {
        *oracle.get_mut(&tx.payer).unwrap() -= tx.amount;
        *oracle.get_mut(&tx.payee).unwrap() += tx.amount;
    }
    assert_eq!(fx.escrow(&alice), oracle[&alice]);
    assert_eq!(fx.escrow(&bob), oracle[&bob]);
}

#[test]
fn close_refunds_and_conserves_native_total() {
    let mut fx = Fixture::new(1);
    let alice = fx.alice.address.clone();
    let bob = fx.bob.address.clone();
    let total_before = fx.chain.native_total();
    fx.open(&fx.alice.clone(), 100);
    fx.open(&fx.bob.clone(), 0);
    let tx = OffChainTx::signed(RELAY, &fx.alice, &bob, 10, 1);
    assert!(fx.update(std::slice::from_ref(&tx)));
    let final_state = vec![(alice.clone(), 90u64), (bob.clone(), 10u64)];
    assert!(fx.close(&[], &final_state));
    assert_eq!(fx.chain.balance(&alice), 90);
    assert_eq!(fx.chain.balance(&bob), 110);
    assert_eq!(fx.chain.native_total(), total_before);
    assert_eq!(fx.events_of(EventKind::CloseChannel), 1);
    // Second close: channel is gone.
    assert!(!fx.close(&[], &final_state));
}

#[test]
fn close_with_forged_final_state_fails() {
    let mut fx = Fixture::new(1);
    let alice = fx.alice.address.clone();
    fx.open(&fx.alice.clone(), 100);
    let forged = vec![(alice.clone(), 200u64)];
    assert!(!fx.close(&[], &forged));
    assert_eq!(fx.escrow(&alice), 100);
}

#[test]
fn close_applies_residual_txs_first() {
    let mut fx = Fixture::new(5);
    let alice = fx.alice.address.clone();
    let bob = fx.bob.address.clone();
    fx.open(&fx.alice.clone(), 100);
    fx.open(&fx.bob.clone(), 0);
    let residual = vec![OffChainTx::signed(RELAY, &fx.alice, &bob, 25, 1)];
    let final_state = vec![(alice.clone(), 75u64), (bob.clone(), 25u64)];
    assert!(fx.close(&residual, &final_state));
    assert_eq!(fx.chain.balance(&alice), 75);
    assert_eq!(fx.chain.balance(&bob), 125);
}

fn request(req_id: u64, dests: &[(&str, &str)], amount: u64) -> CrossChainRequest {
    CrossChainRequest {
        req_id,
        from_chain: "src".into(),
        from_account: "alice-src".into(),
        to: dests
            .iter()
            .map(|(c, a)| (c.to_string(), a.to_string()))
            .collect(),
        amount,
        data: vec![],
        origin_uuid: 9000 + req_id,
    }
}

#[test]
fn cross_query_pends_and_emits() {
    let mut fx = Fixture::new(1);
    let req = request(1, &[("dst", "carol")], 10);
    assert!(fx.call("alice-src", "proxy", "cross_query", req.to_bytes()));
    assert_eq!(
        fx.chain.query_state("proxy", "pending_count").unwrap(),
        Some(1u64.to_be_bytes().to_vec())
    );
    assert_eq!(fx.events_of(EventKind::Request), 1);
    // Duplicate req_id rejected.
    assert!(!fx.call("alice-src", "proxy", "cross_query", req.to_bytes()));
}

#[test]
fn cross_query_fifty_gapless_events() {
    let mut fx = Fixture::new(1);
    for i in 0..50u64 {
        let req = request(i, &[("dst", "carol")], 1);
        assert!(fx.call("alice-src", "proxy", "cross_query", req.to_bytes()));
    }
    let seqs: Vec<u64> = fx
        .chain
        .events()
        .iter()
        .filter(|e| e.kind == EventKind::Request)
        .map(|e| e.event_seq)
        .collect();
    assert_eq!(seqs.len(), 50);
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1));
}

#[test]
fn cross_query_without_destination_fails() {
    let mut fx = Fixture::new(1);
    let req = request(1, &[], 10);
    assert!(!fx.call("alice-src", "proxy", "cross_query", req.to_bytes()));
}

fn accept_args(fx: &Fixture, req: &CrossChainRequest, signers: &[usize]) -> Vec<u8> {
    let bytes = req.to_bytes();
    let proof = fx.committee.attest(&accept_attest_message(&bytes), signers);
    let mut w = Writer::new();
    w.put_bytes(&bytes);
    w.put_bytes(&proof.to_bytes());
    w.into_bytes()
}

#[test]
fn cross_accept_credits_destination_once() {
    let mut fx = Fixture::new(1);
    let req = request(7, &[("src", "carol")], 25);
    let args = accept_args(&fx, &req, &[0, 1, 2]);
    assert!(fx.call("relay-0", "proxy", "cross_accept", args.clone()));
    assert_eq!(fx.chain.balance("carol"), 25);
    assert_eq!(fx.events_of(EventKind::Accept), 1);
    // Replay guard: resubmission fails harmlessly.
    assert!(!fx.call("relay-1", "proxy", "cross_accept", args));
    assert_eq!(fx.chain.balance("carol"), 25);
}

#[test]
fn cross_accept_below_quorum_or_wrong_chain_fails() {
    let mut fx = Fixture::new(1);
    let req = request(8, &[("src", "carol")], 25);
    let args = accept_args(&fx, &req, &[0, 1]);
    assert!(!fx.call("relay-0", "proxy", "cross_accept", args));
    assert_eq!(fx.chain.balance("carol"), 0);
    let elsewhere = request(9, &[("other", "carol")], 25);
    let args = accept_args(&fx, &elsewhere, &[0, 1, 2]);
    assert!(!fx.call("relay-0", "proxy", "cross_accept", args));
}

#[test]
fn cross_callback_completes_pending() {
    let mut fx = Fixture::new(1);
    let req = request(3, &[("dst", "carol")], 10);
    assert!(fx.call("alice-src", "proxy", "cross_query", req.to_bytes()));
    let result = CrossResult {
        req_id: 3,
        legs: vec![AcceptRecord {
            req_id: 3,
            chain_id: "dst".into(),
            accept_height: 4,
            outcome: 0,
        }],
    };
    let result_bytes = result.to_bytes();
    let proof = fx.committee.attest_quorum(&callback_attest_message(&result_bytes));
    let mut w = Writer::new();
    w.put_bytes(&result_bytes);
    w.put_bytes(&proof.to_bytes());
    assert!(fx.call("relay-0", "proxy", "cross_callback", w.into_bytes()));
    assert_eq!(
        fx.chain.query_state("proxy", "pending_count").unwrap(),
        Some(0u64.to_be_bytes().to_vec())
    );
    assert_eq!(
        fx.chain.query_state("proxy", "completed:3").unwrap(),
        Some(result_bytes)
    );
    assert_eq!(fx.events_of(EventKind::Callback), 1);
}

#[test]
fn cross_callback_before_query_or_with_bad_proof_fails() {
    let mut fx = Fixture::new(1);
    let result = CrossResult { req_id: 4, legs: vec![] };
    let result_bytes = result.to_bytes();
    let proof = fx.committee.attest_quorum(&callback_attest_message(&result_bytes));
    let mut w = Writer::new();
    w.put_bytes(&result_bytes);
    w.put_bytes(&proof.to_bytes());
    assert!(!fx.call("relay-0", "proxy", "cross_callback", w.into_bytes()));
    // Pending retained when the proof does not verify.
    let req = request(5, &[("dst", "carol")], 10);
    assert!(fx.call("alice-src", "proxy", "cross_query", req.to_bytes()));
    let result = CrossResult { req_id: 5, legs: vec![] };
    let result_bytes = result.to_bytes();
    let proof = fx
        .committee
        .attest_quorum(&callback_attest_message(b"something else"));
    let mut w = Writer::new();
    w.put_bytes(&result_bytes);
    w.put_bytes(&proof.to_bytes());
    assert!(!fx.call("relay-0", "proxy", "cross_callback", w.into_bytes()));
    assert_eq!(
        fx.chain.query_state("proxy", "pending_count").unwrap(),
        Some(1u64.to_be_bytes().to_vec())
    );
}

fn task(task_id: u64, kind: u8) -> ComputeTask {
    ComputeTask {
        task_id,
        kind,
        target_account: "alice-src".into(),
        from_height: 1,
        to_height: 10,
        sources: vec!["src".into()],
    }
}

#[test]
fn submit_task_pends_unknown_kind_rejected() {
    let mut fx = Fixture::new(1);
    assert!(fx.call("alice-src", "compute", "submit_task", task(1, 1).to_bytes()));
    assert!(fx
        .chain
        .query_state("compute", "task:1")
        .unwrap()
        .is_some());
    assert!(fx.chain.query_state("compute", "result:1").unwrap().is_none());
    assert!(!fx.call("alice-src", "compute", "submit_task", task(2, 99).to_bytes()));
    assert!(!fx.call("alice-src", "compute", "submit_task", task(1, 1).to_bytes()));
}

#[test]
fn task_callback_requires_attestation() {
    let mut fx = Fixture::new(1);
    assert!(fx.call("alice-src", "compute", "submit_task", task(1, 1).to_bytes()));
    let result = TaskResult {
        task_id: 1,
        payload: vec![0, 0, 0, 4],
    };
    let result_bytes = result.to_bytes();
    // Unattested (wrong message) rejected.
    let bad_proof = fx.committee.attest_quorum(b"unrelated");
    let mut w = Writer::new();
    w.put_bytes(&result_bytes);
    w.put_bytes(&bad_proof.to_bytes());
    assert!(!fx.call("relay-0", "compute", "task_callback", w.into_bytes()));
    // Quorum attestation over the exact bytes completes the task.
    let proof = fx.committee.attest_quorum(&task_attest_message(&result_bytes));
    let mut w = Writer::new();
    w.put_bytes(&result_bytes);
    w.put_bytes(&proof.to_bytes());
    assert!(fx.call("relay-0", "compute", "task_callback", w.into_bytes()));
    assert_eq!(
        fx.chain.query_state("compute", "result:1").unwrap(),
        Some(result_bytes)
    );
    assert_eq!(fx.events_of(EventKind::Callback), 1);
}

#[test]
fn request_and_result_wire_round_trip() {
    let req = request(42, &[("a", "x"), ("b", "y")], 5);
    assert_eq!(CrossChainRequest::from_bytes(&req.to_bytes()).unwrap(), req);
    let result = CrossResult {
        req_id: 42,
        legs: vec![
            AcceptRecord { req_id: 42, chain_id: "a".into(), accept_height: 3, outcome: 0 },
            AcceptRecord { req_id: 42, chain_id: "b".into(), accept_height: 5, outcome: 0 },
        ],
    };
    assert_eq!(CrossResult::from_bytes(&result.to_bytes()).unwrap(), result);
    let t = task(1, 2);
    assert_eq!(ComputeTask::from_bytes(&t.to_bytes()).unwrap(), t);
}
