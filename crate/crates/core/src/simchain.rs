//! In-process blockchain: single-sequencer block production, deterministic
//! native-handler contracts, and event subscriptions. Stands in for the
//! consortium chains the middleware talks to.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{Address, BilinearEngine};
use crate::sim::SimTime;
use crate::wire::{Reader, Writer, WireError};

pub type ContractId = String;
pub type TxId = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("contract {0} already deployed")]
    DuplicateContract(ContractId),
    #[error("unknown contract {0}")]
    UnknownContract(ContractId),
}

/// Error raised by a contract method; aborts that transaction's writes only.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContractError {
    #[error("unknown method {0}")]
    UnknownMethod(String),
    #[error("malformed arguments: {0}")]
    BadArgs(#[from] WireError),
    #[error("{0}")]
    Rejected(String),
}

impl ContractError {
    pub fn rejected(msg: impl Into<String>) -> Self {
        ContractError::Rejected(msg.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    OpenChannel,
    UpdateChannel,
    CloseChannel,
    Request,
    Accept,
    Callback,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::OpenChannel => "OpenChannel",
            EventKind::UpdateChannel => "UpdateChannel",
            EventKind::CloseChannel => "CloseChannel",
            EventKind::Request => "Request",
            EventKind::Accept => "Accept",
            EventKind::Callback => "Callback",
        }
    }
}

/// Contract-emitted event, gapless `event_seq` per chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub chain_id: String,
    pub block_height: u64,
    pub contract_id: ContractId,
    pub kind: EventKind,
    pub payload: Vec<u8>,
    pub event_seq: u64,
    /// Virtual time at which the emitting transaction finished executing;
    /// subscribers only see the event from this point on.
    pub visible_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainTransaction {
    pub submitter: Address,
    pub contract_id: ContractId,
    pub method: String,
    pub args: Vec<u8>,
    /// Submitter-chosen salt keeping tx_ids collision-free across
    /// resubmissions of identical calls.
    pub salt: u64,
}

impl ChainTransaction {
    pub fn tx_id(&self) -> TxId {
        let mut w = Writer::new();
        w.put_str(&self.submitter);
        w.put_str(&self.contract_id);
        w.put_str(&self.method);
        w.put_bytes(&self.args);
        w.put_u64(self.salt);
        let digest = Sha256::digest(&w.into_bytes());
        u64::from_be_bytes(digest[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxReceipt {
    pub tx_id: TxId,
    pub height: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub completed_at: SimTime,
}

/// Native token movement, kept for off-chain analytics tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferRecord {
    pub height: u64,
    pub from: Address,
    pub to: Address,
    pub amount: u64,
}

/// Execution context handed to contract methods.
pub struct CallCtx<'a> {
    pub submitter: Address,
    pub height: u64,
    native: &'a mut BTreeMap<Address, u64>,
    transfers: &'a mut Vec<TransferRecord>,
    account_keys: &'a BTreeMap<Address, [u8; 32]>,
}

impl CallCtx<'_> {
    pub fn balance(&self, account: &str) -> u64 {
        self.native.get(account).copied().unwrap_or(0)
    }

    pub fn debit(&mut self, account: &str, amount: u64) -> Result<(), ContractError> {
        let balance = self.balance(account);
        if balance < amount {
            return Err(ContractError::rejected(format!(
                "insufficient native balance for {account}"
            )));
        }
        self.native.insert(account.to_string(), balance - amount);
        Ok(())
    }

    pub fn credit(&mut self, account: &str, amount: u64) {
        let balance = self.balance(account);
        self.native.insert(account.to_string(), balance + amount);
    }

    pub fn record_transfer(&mut self, from: &str, to: &str, amount: u64) {
        self.transfers.push(TransferRecord {
            height: self.height,
            from: from.to_string(),
            to: to.to_string(),
            amount,
        });
    }

    pub fn account_key(&self, account: &str) -> Option<&[u8; 32]> {
        self.account_keys.get(account)
    }
}

/// Deterministic native contract handler.
pub trait Contract<E: BilinearEngine>: Send + Sync {
    fn call(
        &mut self,
        ctx: &mut CallCtx<'_>,
        method: &str,
        args: &[u8],
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError>;

    /// Read-only key lookup against committed state.
    fn query(&self, key: &str) -> Option<Vec<u8>>;

    /// Canonical (key, value) dump for state-root hashing.
    fn state_entries(&self) -> Vec<(String, Vec<u8>)>;

    fn clone_box(&self) -> Box<dyn Contract<E>>;
}

/// Pseudo contract id for plain native transfers.
pub const NATIVE: &str = "__native__";

pub fn native_transfer_args(dest: &str, amount: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str(dest);
    w.put_u64(amount);
    w.into_bytes()
}

pub struct Chain<E: BilinearEngine> {
    pub chain_id: String,
    height: u64,
    busy_until: SimTime,
    native: BTreeMap<Address, u64>,
    genesis: BTreeMap<Address, u64>,
    account_keys: BTreeMap<Address, [u8; 32]>,
    contracts: BTreeMap<ContractId, Box<dyn Contract<E>>>,
    mempool: Vec<ChainTransaction>,
    events: Vec<EventRecord>,
    receipts: BTreeMap<TxId, TxReceipt>,
    transfers: Vec<TransferRecord>,
    exec_cost_ms: BTreeMap<String, u64>,
    tx_ids_seen: BTreeSet<TxId>,
    /// Every executed transaction in commit order, for replay oracles.
    committed: Vec<ChainTransaction>,
}

impl<E: BilinearEngine> Chain<E> {
    pub fn new(chain_id: &str) -> Self {
        Self {
            chain_id: chain_id.to_string(),
            height: 0,
            busy_until: 0,
            native: BTreeMap::new(),
            genesis: BTreeMap::new(),
            account_keys: BTreeMap::new(),
            contracts: BTreeMap::new(),
            mempool: Vec::new(),
            events: Vec::new(),
            receipts: BTreeMap::new(),
            transfers: Vec::new(),
            exec_cost_ms: BTreeMap::new(),
            tx_ids_seen: BTreeSet::new(),
            committed: Vec::new(),
        }
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    /// Seed an account balance; before the first block this also records
    /// the genesis balance used by historical balance queries.
    pub fn set_balance(&mut self, account: &str, amount: u64) {
        if self.height == 0 {
            self.genesis.insert(account.to_string(), amount);
        }
        self.native.insert(account.to_string(), amount);
    }

    pub fn genesis_balance(&self, account: &str) -> u64 {
        self.genesis.get(account).copied().unwrap_or(0)
    }

    pub fn balance(&self, account: &str) -> u64 {
        self.native.get(account).copied().unwrap_or(0)
    }

    pub fn native_total(&self) -> u64 {
        self.native.values().sum()
    }

    pub fn register_account(&mut self, account: &str, pk: [u8; 32]) {
        self.account_keys.insert(account.to_string(), pk);
    }

    /// Per-method execution cost charged against the virtual clock.
    pub fn set_exec_cost(&mut self, method: &str, cost_ms: u64) {
        self.exec_cost_ms.insert(method.to_string(), cost_ms);
    }

    pub fn deploy_contract(
        &mut self,
        contract_id: &str,
        contract: Box<dyn Contract<E>>,
    ) -> Result<(), ChainError> {
        if self.contracts.contains_key(contract_id) {
            return Err(ChainError::DuplicateContract(contract_id.to_string()));
        }
        self.contracts.insert(contract_id.to_string(), contract);
        Ok(())
    }

    pub fn has_contract(&self, contract_id: &str) -> bool {
        self.contracts.contains_key(contract_id)
    }

    pub fn submit_tx(&mut self, tx: ChainTransaction) -> TxId {
        let tx_id = tx.tx_id();
        debug_assert!(
            !self.tx_ids_seen.contains(&tx_id),
            "tx_id collision within scenario"
        );
        self.tx_ids_seen.insert(tx_id);
        self.mempool.push(tx);
        tx_id
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn receipt(&self, tx_id: TxId) -> Option<&TxReceipt> {
        self.receipts.get(&tx_id)
    }

    /// Drain the mempool in submission order and execute deterministically.
    /// A failing method aborts only its own writes.
    pub fn produce_block(&mut self, now: SimTime) -> u64 {
        self.height += 1;
        let height = self.height;
        let start = now.max(self.busy_until);
        let mut cumulative = 0u64;
        let txs = std::mem::take(&mut self.mempool);
        for tx in txs {
            let tx_id = tx.tx_id();
            let result = self.execute_tx(&tx, height);
            let (ok, error, emitted) = match result {
                Ok(emitted) => {
                    cumulative += self.exec_cost_ms.get(&tx.method).copied().unwrap_or(0);
                    (true, None, emitted)
                }
                Err(e) => (false, Some(e.to_string()), Vec::new()),
            };
            let completed_at = start + cumulative;
            for (kind, payload) in emitted {
                let event_seq = self.events.len() as u64;
                self.events.push(EventRecord {
                    chain_id: self.chain_id.clone(),
                    block_height: height,
                    contract_id: tx.contract_id.clone(),
                    kind,
                    payload,
                    event_seq,
                    visible_at: completed_at,
                });
            }
            self.receipts.insert(
                tx_id,
                TxReceipt {
                    tx_id,
                    height,
                    ok,
                    error,
                    completed_at,
                },
            );
            self.committed.push(tx);
        }
        self.busy_until = start + cumulative;
        height
    }

    fn execute_tx(
        &mut self,
        tx: &ChainTransaction,
        height: u64,
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        if tx.contract_id == NATIVE {
            return self.execute_native(tx, height);
        }
        let contract = self
            .contracts
            .get_mut(&tx.contract_id)
            .ok_or_else(|| ContractError::rejected(format!("unknown contract {}", tx.contract_id)))?;
        // Snapshot for rollback on failure.
        let contract_snapshot = contract.clone_box();
        let native_snapshot = self.native.clone();
        let transfers_len = self.transfers.len();
        let mut ctx = CallCtx {
            submitter: tx.submitter.clone(),
            height,
            native: &mut self.native,
            transfers: &mut self.transfers,
            account_keys: &self.account_keys,
        };
        match contract.call(&mut ctx, &tx.method, &tx.args) {
            Ok(emitted) => Ok(emitted),
            Err(e) => {
                *self.contracts.get_mut(&tx.contract_id).unwrap() = contract_snapshot;
                self.native = native_snapshot;
                self.transfers.truncate(transfers_len);
                Err(e)
            }
        }
    }

    fn execute_native(
        &mut self,
        tx: &ChainTransaction,
        height: u64,
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        if tx.method != "transfer" {
            return Err(ContractError::UnknownMethod(tx.method.clone()));
        }
        let mut r = Reader::new(&tx.args);
        let dest = r.get_str()?;
        let amount = r.get_u64()?;
        r.finish()?;
        let from_balance = self.balance(&tx.submitter);
        if from_balance < amount {
            return Err(ContractError::rejected("insufficient native balance"));
        }
        self.native.insert(tx.submitter.clone(), from_balance - amount);
        let to_balance = self.balance(&dest);
        self.native.insert(dest.clone(), to_balance + amount);
        self.transfers.push(TransferRecord {
            height,
            from: tx.submitter.clone(),
            to: dest,
            amount,
        });
        Ok(Vec::new())
    }

    pub fn query_state(&self, contract_id: &str, key: &str) -> Result<Option<Vec<u8>>, ChainError> {
        let contract = self
            .contracts
            .get(contract_id)
            .ok_or_else(|| ChainError::UnknownContract(contract_id.to_string()))?;
        Ok(contract.query(key))
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    /// Executed transactions in commit order; receipts carry success.
    pub fn committed_txs(&self) -> &[ChainTransaction] {
        &self.committed
    }

    pub fn transfers(&self) -> &[TransferRecord] {
        &self.transfers
    }

    /// Balance an account held at `height`, replayed from the transfer log.
    pub fn balance_at(&self, account: &str, height: u64, initial: u64) -> u64 {
        let mut balance = initial as i128;
        for t in &self.transfers {
            if t.height > height {
                break;
            }
            if t.from == account {
                balance -= t.amount as i128;
            }
            if t.to == account {
                balance += t.amount as i128;
            }
        }
        balance.max(0) as u64
    }

    /// Canonical hash over sorted state: native ledger plus every
    /// contract's state entries.
    pub fn state_root(&self) -> String {
        let mut w = Writer::new();
        w.put_str(&self.chain_id);
        w.put_u64(self.height);
        w.put_u32(self.native.len() as u32);
        for (account, balance) in &self.native {
            w.put_str(account);
            w.put_u64(*balance);
        }
        w.put_u32(self.contracts.len() as u32);
        for (id, contract) in &self.contracts {
            w.put_str(id);
            let mut entries = contract.state_entries();
            entries.sort();
            w.put_u32(entries.len() as u32);
            for (key, value) in entries {
                w.put_str(&key);
                w.put_bytes(&value);
            }
        }
        hex::encode(Sha256::digest(&w.into_bytes()))
    }

    /// Line-delimited dump of the event log for golden-trace tests.
    pub fn dump_event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&format!(
                "event chain={} seq={} height={} contract={} kind={} visible_at={} payload={}\n",
                e.chain_id,
                e.event_seq,
                e.block_height,
                e.contract_id,
                e.kind.name(),
                e.visible_at,
                hex::encode(&e.payload),
            ));
        }
        out
    }
}

/// Cursor into one chain's event log, filtered by contract and kind.
#[derive(Debug, Clone)]
pub struct Subscription {
    pub chain_id: String,
    pub contract_id: ContractId,
    pub kind: Option<EventKind>,
    cursor: usize,
}

impl Subscription {
    pub fn new(chain_id: &str, contract_id: &str, kind: Option<EventKind>) -> Self {
        Self {
            chain_id: chain_id.to_string(),
            contract_id: contract_id.to_string(),
            kind,
            cursor: 0,
        }
    }

    /// Matching events visible by `now`, each delivered exactly once per
    /// subscription, in event_seq order.
    pub fn poll<E: BilinearEngine>(&mut self, chain: &Chain<E>, now: SimTime) -> Vec<EventRecord> {
        let mut out = Vec::new();
        let events = chain.events();
        while self.cursor < events.len() {
            let e = &events[self.cursor];
            if e.visible_at > now {
                break; // visible_at is monotone in seq
            }
            self.cursor += 1;
            if e.contract_id == self.contract_id && self.kind.is_none_or(|k| k == e.kind) {
                out.push(e.clone());
            }
        }
        out
    }
}
