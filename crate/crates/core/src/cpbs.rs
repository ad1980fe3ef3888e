//! CPBS: deterministic off-chain computation over committed chain state,
//! aggregated into a threshold-attested result.

use std::collections::{BTreeMap, BTreeSet};

use crate::contracts::{ComputeTask, TASK_ACCOUNT_ACTIVITY, TASK_BALANCE_AT};
use crate::crypto::{relay_verify, BilinearEngine, RelaySignature};
use crate::simchain::Chain;
use crate::wire::Writer;
use sha2::{Digest, Sha256};

/// Result payload status codes.
pub const RESULT_OK: u8 = 0;
pub const RESULT_WINDOW_BEYOND_HEIGHT: u8 = 1;
pub const RESULT_UNKNOWN_SOURCE: u8 = 2;
pub const RESULT_UNKNOWN_KIND: u8 = 3;

/// Per-source account activity over a height window.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActivityTuple {
    pub tx_count: u64,
    pub total_in: u64,
    pub total_out: u64,
    pub distinct_counterparties: u64,
}

/// Scan one chain's transfer log for the task account over the window.
pub fn account_activity<E: BilinearEngine>(
    chain: &Chain<E>,
    account: &str,
    from_height: u64,
    to_height: u64,
) -> ActivityTuple {
    let mut out = ActivityTuple::default();
    let mut counterparties: BTreeSet<&str> = BTreeSet::new();
    for t in chain.transfers() {
        if t.height < from_height || t.height > to_height {
            continue;
        }
        if t.from == account {
            out.tx_count += 1;
            out.total_out += t.amount;
            counterparties.insert(&t.to);
        } else if t.to == account {
            out.tx_count += 1;
            out.total_in += t.amount;
            counterparties.insert(&t.from);
        }
    }
    out.distinct_counterparties = counterparties.len() as u64;
    out
}

/// Deterministic task output: a status byte followed by fixed-width
/// per-source tuples in declared source order. Identical at every honest
/// node, so the bytes are directly signable.
pub fn execute_task<E: BilinearEngine>(
    chains: &BTreeMap<String, Chain<E>>,
    task: &ComputeTask,
) -> Vec<u8> {
    let mut w = Writer::new();
    for source in &task.sources {
        let Some(chain) = chains.get(source) else {
            return vec![RESULT_UNKNOWN_SOURCE];
        };
        if task.to_height > chain.height() {
            return vec![RESULT_WINDOW_BEYOND_HEIGHT];
        }
        match task.kind {
            TASK_ACCOUNT_ACTIVITY => {
                let t = account_activity(chain, &task.target_account, task.from_height, task.to_height);
                w.put_u64(t.tx_count);
                w.put_u64(t.total_in);
                w.put_u64(t.total_out);
                w.put_u64(t.distinct_counterparties);
            }
            TASK_BALANCE_AT => {
                let initial = chain.genesis_balance(&task.target_account);
                w.put_u64(chain.balance_at(&task.target_account, task.to_height, initial));
            }
            _ => return vec![RESULT_UNKNOWN_KIND],
        }
    }
    let mut out = vec![RESULT_OK];
    out.extend(w.into_bytes());
    out
}

/// Render a result payload as the decimal SMS reply body.
pub fn render_result(kind: u8, payload: &[u8]) -> String {
    if payload.is_empty() {
        return "error:empty".to_string();
    }
    match payload[0] {
        RESULT_OK => {
            let width = match kind {
                TASK_ACCOUNT_ACTIVITY => 32,
                TASK_BALANCE_AT => 8,
                _ => return "error:kind".to_string(),
            };
            let fields: Vec<String> = payload[1..]
                .chunks(8)
                .map(|c| u64::from_be_bytes(c.try_into().unwrap_or_default()).to_string())
                .collect();
            if (payload.len() - 1) % width != 0 {
                return "error:malformed".to_string();
            }
            fields.join(",")
        }
        code => format!("error:{code}"),
    }
}

/// Collects per-node result signatures, grouped by payload digest; a task
/// aggregates only once one candidate set reaches the quorum.
pub struct CandidateSets<E: BilinearEngine> {
    by_digest: BTreeMap<[u8; 32], BTreeMap<usize, (Vec<u8>, RelaySignature<E>)>>,
}

impl<E: BilinearEngine> Default for CandidateSets<E> {
    fn default() -> Self {
        Self {
            by_digest: BTreeMap::new(),
        }
    }
}

impl<E: BilinearEngine> CandidateSets<E> {
    /// Record one node's (payload, signature); the signature must already
    /// verify over the task attestation message for that payload.
    pub fn insert(&mut self, node: usize, payload: Vec<u8>, sig: RelaySignature<E>) {
        let digest: [u8; 32] = Sha256::digest(&payload).into();
        self.by_digest.entry(digest).or_default().insert(node, (payload, sig));
    }

    /// The first candidate set meeting the quorum, as (payload, members).
    pub fn quorum_set(&self, quorum: usize) -> Option<(Vec<u8>, Vec<usize>)> {
        for set in self.by_digest.values() {
            if set.len() >= quorum {
                let payload = set.values().next().unwrap().0.clone();
                return Some((payload, set.keys().copied().collect()));
            }
        }
        None
    }

    pub fn signatures_for(&self, payload: &[u8]) -> Vec<(usize, RelaySignature<E>)> {
        let digest: [u8; 32] = Sha256::digest(payload).into();
        self.by_digest
            .get(&digest)
            .map(|set| set.iter().map(|(i, (_, s))| (*i, s.clone())).collect())
            .unwrap_or_default()
    }
}

/// Drop signatures that do not verify before they enter a candidate set.
pub fn verified_insert<E: BilinearEngine>(
    sets: &mut CandidateSets<E>,
    node: usize,
    bpk: &E::G1,
    message_for: impl Fn(&[u8]) -> Vec<u8>,
    payload: Vec<u8>,
    sig: RelaySignature<E>,
) -> bool {
    let message = message_for(&payload);
    if !relay_verify::<E>(&sig, bpk, &message) {
        return false;
    }
    sets.insert(node, payload, sig);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::task_attest_message;
    use crate::crypto::{relay_sign, Committee, ToyEngine};
    use crate::simchain::{native_transfer_args, ChainTransaction, NATIVE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    type E = ToyEngine;

    fn transfer(chain: &mut Chain<E>, from: &str, to: &str, amount: u64, salt: u64) {
        chain.submit_tx(ChainTransaction {
            submitter: from.to_string(),
            contract_id: NATIVE.into(),
            method: "transfer".into(),
            args: native_transfer_args(to, amount),
            salt,
        });
    }

    fn scripted_chain() -> Chain<E> {
        let mut chain = Chain::new("c1");
        chain.set_balance("acct", 100);
        chain.set_balance("p1", 100);
        chain.set_balance("p2", 100);
        // Height 1: three incoming transfers of 10 from two counterparties.
        transfer(&mut chain, "p1", "acct", 10, 1);
        transfer(&mut chain, "p1", "acct", 10, 2);
        transfer(&mut chain, "p2", "acct", 10, 3);
        chain.produce_block(0);
        // Height 2: one outgoing transfer of 5.
        transfer(&mut chain, "acct", "p1", 5, 4);
        chain.produce_block(0);
        chain
    }

    fn task(kind: u8, sources: &[&str], from: u64, to: u64) -> ComputeTask {
        ComputeTask {
            task_id: 1,
            kind,
            target_account: "acct".into(),
            from_height: from,
            to_height: to,
            sources: sources.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn account_activity_matches_brute_force_example() {
        let chain = scripted_chain();
        let t = account_activity(&chain, "acct", 1, 2);
        assert_eq!(
            t,
            ActivityTuple {
                tx_count: 4,
                total_in: 30,
                total_out: 5,
                distinct_counterparties: 2
            }
        );
    }

    #[test]
    fn empty_window_yields_zero_tuple() {
        let mut chain = Chain::<E>::new("c1");
        chain.produce_block(0);
        let chains = BTreeMap::from([("c1".to_string(), chain)]);
        let payload = execute_task(&chains, &task(TASK_ACCOUNT_ACTIVITY, &["c1"], 1, 1));
        assert_eq!(payload, {
            let mut v = vec![RESULT_OK];
            v.extend([0u8; 32]);
            v
        });
        assert_eq!(render_result(TASK_ACCOUNT_ACTIVITY, &payload), "0,0,0,0");
    }

    #[test]
    fn two_source_task_concatenates_in_source_order() {
        let mut chains = BTreeMap::new();
        chains.insert("a".to_string(), scripted_chain());
        let mut other = Chain::<E>::new("b");
        other.set_balance("acct", 50);
        other.set_balance("q", 50);
        transfer(&mut other, "acct", "q", 7, 1);
        other.produce_block(0);
        chains.insert("b".to_string(), other);
        let payload = execute_task(&chains, &task(TASK_ACCOUNT_ACTIVITY, &["a", "b"], 1, 1));
        // Per-chain oracle, then concatenate.
        let left = account_activity(&chains["a"], "acct", 1, 1);
        let right = account_activity(&chains["b"], "acct", 1, 1);
        let mut expected = vec![RESULT_OK];
        for t in [left, right] {
            expected.extend(t.tx_count.to_be_bytes());
            expected.extend(t.total_in.to_be_bytes());
            expected.extend(t.total_out.to_be_bytes());
            expected.extend(t.distinct_counterparties.to_be_bytes());
        }
        assert_eq!(payload, expected);
    }

    #[test]
    fn balance_at_height_replays_transfer_log() {
        let chain = scripted_chain();
        let chains = BTreeMap::from([("c1".to_string(), chain)]);
        let after_block_1 = execute_task(&chains, &task(TASK_BALANCE_AT, &["c1"], 1, 1));
        assert_eq!(after_block_1, {
            let mut v = vec![RESULT_OK];
            v.extend(130u64.to_be_bytes());
            v
        });
        let after_block_2 = execute_task(&chains, &task(TASK_BALANCE_AT, &["c1"], 1, 2));
        assert_eq!(render_result(TASK_BALANCE_AT, &after_block_2), "125");
    }

    #[test]
    fn window_beyond_height_and_unknown_source_error_deterministically() {
        let chains = BTreeMap::from([("c1".to_string(), scripted_chain())]);
        assert_eq!(
            execute_task(&chains, &task(TASK_ACCOUNT_ACTIVITY, &["c1"], 1, 99)),
            vec![RESULT_WINDOW_BEYOND_HEIGHT]
        );
        assert_eq!(
            execute_task(&chains, &task(TASK_ACCOUNT_ACTIVITY, &["ghost"], 1, 1)),
            vec![RESULT_UNKNOWN_SOURCE]
        );
    }

    #[test]
    fn candidate_sets_quorum_excludes_corrupted_payloads() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let committee = Committee::<E>::generate(1, &mut rng);
        let honest = vec![RESULT_OK, 1, 2, 3];
        let corrupted = vec![RESULT_OK, 9, 9, 9];
        let mut sets = CandidateSets::<E>::default();
        for i in 0..committee.n() {
            let payload = if i == 0 { corrupted.clone() } else { honest.clone() };
            let sig = relay_sign(&committee.keypairs[i], &task_attest_message(&payload));
            let ok = verified_insert(
                &mut sets,
                i,
                &committee.keypairs[i].bpk,
                |p| task_attest_message(p),
                payload,
                sig,
            );
            assert!(ok);
        }
        let (payload, members) = sets.quorum_set(committee.quorum()).unwrap();
        assert_eq!(payload, honest);
        assert_eq!(members, vec![1, 2, 3]);
        // A forged signature never enters a set.
        let bad_sig = relay_sign(&committee.keypairs[0], b"other message");
        let ok = verified_insert(
            &mut sets,
            0,
            &committee.keypairs[0].bpk,
            |p| task_attest_message(p),
            honest.clone(),
            bad_sig,
        );
        assert!(!ok);
    }

    #[test]
    fn split_committee_has_no_quorum() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let committee = Committee::<E>::generate(1, &mut rng);
        let mut sets = CandidateSets::<E>::default();
        for i in 0..4 {
            let payload = vec![RESULT_OK, (i % 2) as u8];
            let sig = relay_sign(&committee.keypairs[i], &task_attest_message(&payload));
            sets.insert(i, payload, sig);
        }
        assert!(sets.quorum_set(committee.quorum()).is_none());
    }
}
