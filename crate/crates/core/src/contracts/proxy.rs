//! Proxy contract: source-side pending queue (cross_query / cross_callback)
//! and destination-side attested execution (cross_accept). One instance per
//! chain serves both roles.

use std::collections::BTreeMap;

use crate::crypto::{
    verify_aggregate_same_message, Address, AggregateProof, AggregateRegistry, BilinearEngine,
};
use crate::simchain::{CallCtx, Contract, ContractError, EventKind};
use crate::wire::{Reader, Writer, WireError};

/// request_k: a cross-chain action with one or more destinations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossChainRequest {
    pub req_id: u64,
    pub from_chain: String,
    pub from_account: Address,
    pub to: Vec<(String, Address)>,
    pub amount: u64,
    pub data: Vec<u8>,
    pub origin_uuid: u64,
}

impl CrossChainRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u64(self.req_id);
        w.put_str(&self.from_chain);
        w.put_str(&self.from_account);
        w.put_u32(self.to.len() as u32);
        for (chain, account) in &self.to {
            w.put_str(chain);
            w.put_str(account);
        }
        w.put_u64(self.amount);
        w.put_bytes(&self.data);
        w.put_u64(self.origin_uuid);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let req_id = r.get_u64()?;
        let from_chain = r.get_str()?;
        let from_account = r.get_str()?;
        let dest_count = r.get_u32()? as usize;
        let mut to = Vec::with_capacity(dest_count);
        for _ in 0..dest_count {
            let chain = r.get_str()?;
            let account = r.get_str()?;
            to.push((chain, account));
        }
        let amount = r.get_u64()?;
        let data = r.get_bytes()?;
        let origin_uuid = r.get_u64()?;
        r.finish()?;
        Ok(Self {
            req_id,
            from_chain,
            from_account,
            to,
            amount,
            data,
            origin_uuid,
        })
    }
}

/// One destination's acceptance outcome, embedded in Accept events and
/// concatenated (in destination order) into result_k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptRecord {
    pub req_id: u64,
    pub chain_id: String,
    pub accept_height: u64,
    pub outcome: u8,
}

impl AcceptRecord {
    pub fn encode(&self, w: &mut Writer) {
        w.put_u64(self.req_id);
        w.put_str(&self.chain_id);
        w.put_u64(self.accept_height);
        w.put_u8(self.outcome);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Self {
            req_id: r.get_u64()?,
            chain_id: r.get_str()?,
            accept_height: r.get_u64()?,
            outcome: r.get_u8()?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let record = Self::decode(&mut r)?;
        r.finish()?;
        Ok(record)
    }
}

/// result_k: per-destination acceptance tuples, in destination order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossResult {
    pub req_id: u64,
    pub legs: Vec<AcceptRecord>,
}

impl CrossResult {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u64(self.req_id);
        w.put_u32(self.legs.len() as u32);
        for leg in &self.legs {
            leg.encode(&mut w);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let req_id = r.get_u64()?;
        let leg_count = r.get_u32()? as usize;
        let mut legs = Vec::with_capacity(leg_count);
        for _ in 0..leg_count {
            legs.push(AcceptRecord::decode(&mut r)?);
        }
        r.finish()?;
        Ok(Self { req_id, legs })
    }
}

pub fn accept_attest_message(request_bytes: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str("cross-accept");
    w.put_bytes(request_bytes);
    w.into_bytes()
}

pub fn callback_attest_message(result_bytes: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str("cross-callback");
    w.put_bytes(result_bytes);
    w.into_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PendingStatus {
    Pending,
    Completed,
}

#[derive(Clone)]
pub struct ProxyContract<E: BilinearEngine> {
    chain_id: String,
    registry: AggregateRegistry<E>,
    quorum: usize,
    /// Source-side queue: req_id → request bytes, held until callback.
    pending: BTreeMap<u64, Vec<u8>>,
    /// Source-side terminal results: req_id → result_k bytes.
    completed: BTreeMap<u64, Vec<u8>>,
    /// Destination-side replay guard.
    accepted: BTreeMap<u64, u64>,
}

impl<E: BilinearEngine> ProxyContract<E> {
    pub fn new(chain_id: &str, registry: AggregateRegistry<E>, quorum: usize) -> Self {
        Self {
            chain_id: chain_id.to_string(),
            registry,
            quorum,
            pending: BTreeMap::new(),
            completed: BTreeMap::new(),
            accepted: BTreeMap::new(),
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_pending(&self, req_id: u64) -> bool {
        self.pending.contains_key(&req_id)
    }

    pub fn is_accepted(&self, req_id: u64) -> bool {
        self.accepted.contains_key(&req_id)
    }

    pub fn result(&self, req_id: u64) -> Option<&Vec<u8>> {
        self.completed.get(&req_id)
    }

    fn check_attestation(&self, proof_bytes: &[u8], message: &[u8]) -> Result<(), ContractError> {
        let proof = AggregateProof::<E>::from_bytes(proof_bytes)
            .map_err(|_| ContractError::rejected("malformed attestation proof"))?;
        let ok = verify_aggregate_same_message(&proof, &self.registry, message, self.quorum)
            .map_err(|_| ContractError::rejected("attestation mask length"))?;
        if !ok {
            return Err(ContractError::rejected("attestation verification failed"));
        }
        Ok(())
    }

    fn cross_query(&mut self, args: &[u8]) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        let request = CrossChainRequest::from_bytes(args)?;
        if request.to.is_empty() {
            return Err(ContractError::rejected("request has no destination"));
        }
        if self.pending.contains_key(&request.req_id)
            || self.completed.contains_key(&request.req_id)
        {
            return Err(ContractError::rejected("duplicate req_id"));
        }
        self.pending.insert(request.req_id, args.to_vec());
        Ok(vec![(EventKind::Request, args.to_vec())])
    }

    fn cross_accept(
        &mut self,
        ctx: &mut CallCtx<'_>,
        args: &[u8],
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        let mut r = Reader::new(args);
        let request_bytes = r.get_bytes()?;
        let proof_bytes = r.get_bytes()?;
        r.finish()?;
        let request = CrossChainRequest::from_bytes(&request_bytes)?;
        if self.accepted.contains_key(&request.req_id) {
            return Err(ContractError::rejected("req_id already accepted"));
        }
        self.check_attestation(&proof_bytes, &accept_attest_message(&request_bytes))?;
        let dest_account = request
            .to
            .iter()
            .find(|(chain, _)| *chain == self.chain_id)
            .map(|(_, account)| account.clone())
            .ok_or_else(|| ContractError::rejected("chain is not a destination"))?;
        ctx.credit(&dest_account, request.amount);
        ctx.record_transfer(&request.from_account, &dest_account, request.amount);
        self.accepted.insert(request.req_id, ctx.height);
        let record = AcceptRecord {
            req_id: request.req_id,
            chain_id: self.chain_id.clone(),
            accept_height: ctx.height,
            outcome: 0,
        };
        Ok(vec![(EventKind::Accept, record.to_bytes())])
    }

    fn cross_callback(&mut self, args: &[u8]) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        let mut r = Reader::new(args);
        let result_bytes = r.get_bytes()?;
        let proof_bytes = r.get_bytes()?;
        r.finish()?;
        let result = CrossResult::from_bytes(&result_bytes)?;
        if !self.pending.contains_key(&result.req_id) {
            return Err(ContractError::rejected("req_id not pending"));
        }
        self.check_attestation(&proof_bytes, &callback_attest_message(&result_bytes))?;
        self.pending.remove(&result.req_id);
        self.completed.insert(result.req_id, result_bytes.clone());
        Ok(vec![(EventKind::Callback, result_bytes)])
    }
}

impl<E: BilinearEngine> Contract<E> for ProxyContract<E> {
    fn call(
        &mut self,
        ctx: &mut CallCtx<'_>,
        method: &str,
        args: &[u8],
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        match method {
            "cross_query" => self.cross_query(args),
            "cross_accept" => self.cross_accept(ctx, args),
            "cross_callback" => self.cross_callback(args),
            other => Err(ContractError::UnknownMethod(other.to_string())),
        }
    }

    fn query(&self, key: &str) -> Option<Vec<u8>> {
        if key == "pending_count" {
            return Some((self.pending.len() as u64).to_be_bytes().to_vec());
        }
        if let Some(id) = key.strip_prefix("pending:") {
            let id: u64 = id.parse().ok()?;
            return self.pending.get(&id).cloned();
        }
        if let Some(id) = key.strip_prefix("completed:") {
            let id: u64 = id.parse().ok()?;
            return self.completed.get(&id).cloned();
        }
        if let Some(id) = key.strip_prefix("accepted:") {
            let id: u64 = id.parse().ok()?;
            return self.accepted.get(&id).map(|h| h.to_be_bytes().to_vec());
        }
        None
    }

    fn state_entries(&self) -> Vec<(String, Vec<u8>)> {
        let mut entries = Vec::new();
        for (id, bytes) in &self.pending {
            entries.push((format!("pending:{id}"), bytes.clone()));
        }
        for (id, bytes) in &self.completed {
            entries.push((format!("completed:{id}"), bytes.clone()));
        }
        for (id, height) in &self.accepted {
            entries.push((format!("accepted:{id}"), height.to_be_bytes().to_vec()));
        }
        entries
    }

    fn clone_box(&self) -> Box<dyn Contract<E>> {
        Box::new(self.clone())
    }
}
