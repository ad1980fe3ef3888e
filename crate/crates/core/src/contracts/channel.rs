//! Channel contract: escrows offline-client balances per relay committee
//! and settles batches of committee-attested off-chain transfers.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::crypto::{
    client_verify, verify_aggregate_same_message, Address, AggregateProof, AggregateRegistry,
    BilinearEngine, ClientKeyPair, ClientSignature,
};
use crate::simchain::{CallCtx, Contract, ContractError, EventKind};
use crate::wire::{Reader, Writer, WireError};

/// One off-chain transfer, signed by the payer's client key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffChainTx {
    pub payer: Address,
    pub payee: Address,
    pub amount: u64,
    pub nonce: u64,
    pub signature: ClientSignature,
}

impl OffChainTx {
    /// The bytes the payer signs; bound to the relay committee's channel so
    /// a transfer cannot be replayed into another channel.
    pub fn signing_bytes(relay: &str, payer: &str, payee: &str, amount: u64, nonce: u64) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_str("bcmon-offchain-tx");
        w.put_str(relay);
        w.put_str(payer);
        w.put_str(payee);
        w.put_u64(amount);
        w.put_u64(nonce);
        w.into_bytes()
    }

    pub fn signed(
        relay: &str,
        kp: &ClientKeyPair,
        payee: &str,
        amount: u64,
        nonce: u64,
    ) -> Self {
        let payer = kp.address.clone();
        let signature = kp.sign(&Self::signing_bytes(relay, &payer, payee, amount, nonce));
        Self {
            payer,
            payee: payee.to_string(),
            amount,
            nonce,
            signature,
        }
    }

    pub fn encode(&self, w: &mut Writer) {
        w.put_str(&self.payer);
        w.put_str(&self.payee);
        w.put_u64(self.amount);
        w.put_u64(self.nonce);
        w.put_bytes(&self.signature.0);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Self {
            payer: r.get_str()?,
            payee: r.get_str()?,
            amount: r.get_u64()?,
            nonce: r.get_u64()?,
            signature: ClientSignature(r.get_bytes()?),
        })
    }
}

pub fn encode_batch(txs: &[OffChainTx]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_u32(txs.len() as u32);
    for tx in txs {
        tx.encode(&mut w);
    }
    w.into_bytes()
}

pub fn decode_batch(r: &mut Reader<'_>) -> Result<Vec<OffChainTx>, WireError> {
    let count = r.get_u32()? as usize;
    let mut txs = Vec::with_capacity(count);
    for _ in 0..count {
        txs.push(OffChainTx::decode(r)?);
    }
    Ok(txs)
}

pub fn batch_digest(relay: &str, txs: &[OffChainTx]) -> [u8; 32] {
    let mut w = Writer::new();
    w.put_str(relay);
    w.put_bytes(&encode_batch(txs));
    Sha256::digest(&w.into_bytes()).into()
}

/// The message the relay committee signs to attest an update batch.
pub fn update_attest_message(relay: &str, digest: &[u8; 32]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str("channel-update");
    w.put_str(relay);
    w.put_bytes(digest);
    w.into_bytes()
}

pub fn final_state_digest(entries: &[(Address, u64)]) -> [u8; 32] {
    let mut w = Writer::new();
    w.put_u32(entries.len() as u32);
    for (account, balance) in entries {
        w.put_str(account);
        w.put_u64(*balance);
    }
    Sha256::digest(&w.into_bytes()).into()
}

/// The message the relay committee signs to attest a channel closure.
pub fn close_attest_message(relay: &str, final_digest: &[u8; 32]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str("channel-close");
    w.put_str(relay);
    w.put_bytes(final_digest);
    w.into_bytes()
}

/// Canonical argument encoding for `update_channel`.
pub fn update_channel_args<E: BilinearEngine>(
    relay: &str,
    txs: &[OffChainTx],
    proof: &AggregateProof<E>,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str(relay);
    w.put_u32(txs.len() as u32);
    for tx in txs {
        tx.encode(&mut w);
    }
    w.put_bytes(&proof.to_bytes());
    w.into_bytes()
}

/// Canonical argument encoding for `close_channel`.
pub fn close_channel_args<E: BilinearEngine>(
    relay: &str,
    residual: &[OffChainTx],
    final_state: &[(Address, u64)],
    proof: &AggregateProof<E>,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str(relay);
    w.put_u32(residual.len() as u32);
    for tx in residual {
        tx.encode(&mut w);
    }
    w.put_u32(final_state.len() as u32);
    for (account, balance) in final_state {
        w.put_str(account);
        w.put_u64(*balance);
    }
    w.put_bytes(&proof.to_bytes());
    w.into_bytes()
}

/// Canonical argument encoding for `open_channel`.
pub fn open_channel_args(relay: &str, balance: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str(relay);
    w.put_u64(balance);
    w.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChannelRecord {
    /// Per-account escrowed balance inside this channel.
    pub escrow: BTreeMap<Address, u64>,
    /// Last applied off-chain nonce per payer; first valid nonce is 1.
    pub nonces: BTreeMap<Address, u64>,
    /// Applied transfers not yet folded by Aggregate.
    pub txs: Vec<OffChainTx>,
    pub update_count: u32,
}

impl ChannelRecord {
    pub fn escrow_total(&self) -> u64 {
        self.escrow.values().sum()
    }
}

/// Alg. 1 channel contract, one [`ChannelRecord`] per relay committee.
#[derive(Clone)]
pub struct ChannelContract<E: BilinearEngine> {
    registry: AggregateRegistry<E>,
    quorum: usize,
    threshold: u32,
    channels: BTreeMap<String, ChannelRecord>,
}

impl<E: BilinearEngine> ChannelContract<E> {
    pub fn new(registry: AggregateRegistry<E>, quorum: usize, threshold: u32) -> Self {
        assert!(threshold >= 1);
        Self {
            registry,
            quorum,
            threshold,
            channels: BTreeMap::new(),
        }
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

    /// Validates and applies a batch in order against the channel's
    /// escrow/nonce frontier. Any failure rejects the whole batch; the
    /// chain rolls the contract back to its snapshot.
    fn apply_batch(
        ctx: &CallCtx<'_>,
        relay: &str,
        channel: &mut ChannelRecord,
        txs: &[OffChainTx],
        transfers: &mut Vec<(Address, Address, u64)>,
    ) -> Result<(), ContractError> {
        for tx in txs {
            let pk = ctx
                .account_key(&tx.payer)
                .ok_or_else(|| ContractError::rejected("unknown payer account"))?;
            let msg =
                OffChainTx::signing_bytes(relay, &tx.payer, &tx.payee, tx.amount, tx.nonce);
            if !client_verify(pk, &msg, &tx.signature) {
                return Err(ContractError::rejected("bad signature"));
            }
            let last = channel.nonces.get(&tx.payer).copied().unwrap_or(0);
            if tx.nonce != last + 1 {
                return Err(ContractError::rejected("bad nonce"));
            }
            let payer_escrow = channel.escrow.get(&tx.payer).copied().unwrap_or(0);
            if payer_escrow < tx.amount {
                return Err(ContractError::rejected("insufficient escrow"));
            }
            channel.escrow.insert(tx.payer.clone(), payer_escrow - tx.amount);
            *channel.escrow.entry(tx.payee.clone()).or_insert(0) += tx.amount;
            channel.nonces.insert(tx.payer.clone(), tx.nonce);
            channel.txs.push(tx.clone());
            transfers.push((tx.payer.clone(), tx.payee.clone(), tx.amount));
        }
        Ok(())
    }

    fn open_channel(
        &mut self,
        ctx: &mut CallCtx<'_>,
        args: &[u8],
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        let mut r = Reader::new(args);
        let relay = r.get_str()?;
        let balance = r.get_u64()?;
        r.finish()?;
        let client = ctx.submitter.clone();
        let channel = self.channels.entry(relay.clone()).or_default();
        if channel.escrow.contains_key(&client) {
            return Err(ContractError::rejected("channel already open for client"));
        }
        ctx.debit(&client, balance)?;
        channel.escrow.insert(client.clone(), balance);
        let mut payload = Writer::new();
        payload.put_str(&relay);
        payload.put_str(&client);
        payload.put_u64(balance);
        Ok(vec![(EventKind::OpenChannel, payload.into_bytes())])
    }

    fn update_channel(
        &mut self,
        ctx: &mut CallCtx<'_>,
        args: &[u8],
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        let mut r = Reader::new(args);
        let relay = r.get_str()?;
        let txs = decode_batch(&mut r)?;
        let proof_bytes = r.get_bytes()?;
        r.finish()?;
        if txs.is_empty() {
            return Err(ContractError::rejected("empty batch"));
        }
        let digest = batch_digest(&relay, &txs);
        self.check_attestation(&proof_bytes, &update_attest_message(&relay, &digest))?;
        let channel = self
            .channels
            .get_mut(&relay)
            .ok_or_else(|| ContractError::rejected("unknown channel"))?;
        let mut transfers = Vec::new();
        Self::apply_batch(ctx, &relay, channel, &txs, &mut transfers)?;
        for (from, to, amount) in transfers {
            ctx.record_transfer(&from, &to, amount);
        }
        channel.update_count += 1;
        if channel.update_count == self.threshold {
            let settled = channel.txs.len() as u32;
            channel.txs.clear();
            channel.update_count = 0;
            let mut payload = Writer::new();
            payload.put_str(&relay);
            payload.put_bytes(&digest);
            payload.put_u32(settled);
            return Ok(vec![(EventKind::UpdateChannel, payload.into_bytes())]);
        }
        Ok(Vec::new())
    }

    fn close_channel(
        &mut self,
        ctx: &mut CallCtx<'_>,
        args: &[u8],
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        let mut r = Reader::new(args);
        let relay = r.get_str()?;
        let residual = decode_batch(&mut r)?;
        let entry_count = r.get_u32()? as usize;
        let mut final_state = Vec::with_capacity(entry_count);
        for _ in 0..entry_count {
            let account = r.get_str()?;
            let balance = r.get_u64()?;
            final_state.push((account, balance));
        }
        let proof_bytes = r.get_bytes()?;
        r.finish()?;
        let digest = final_state_digest(&final_state);
        self.check_attestation(&proof_bytes, &close_attest_message(&relay, &digest))?;
        let mut channel = self
            .channels
            .remove(&relay)
            .ok_or_else(|| ContractError::rejected("unknown channel"))?;
        let mut transfers = Vec::new();
        let applied = Self::apply_batch(ctx, &relay, &mut channel, &residual, &mut transfers);
        if let Err(e) = applied {
            self.channels.insert(relay, channel);
            return Err(e);
        }
        let submitted: BTreeMap<Address, u64> = final_state.iter().cloned().collect();
        if submitted != channel.escrow {
            self.channels.insert(relay, channel);
            return Err(ContractError::rejected("final state mismatch"));
        }
        for (from, to, amount) in transfers {
            ctx.record_transfer(&from, &to, amount);
        }
        for (account, balance) in &channel.escrow {
            ctx.credit(account, *balance);
        }
        let mut payload = Writer::new();
        payload.put_str(&relay);
        payload.put_u32(final_state.len() as u32);
        for (account, balance) in &final_state {
            payload.put_str(account);
            payload.put_u64(*balance);
        }
        Ok(vec![(EventKind::CloseChannel, payload.into_bytes())])
    }

    pub fn channel(&self, relay: &str) -> Option<&ChannelRecord> {
        self.channels.get(relay)
    }
}

impl<E: BilinearEngine> Contract<E> for ChannelContract<E> {
    fn call(
        &mut self,
        ctx: &mut CallCtx<'_>,
        method: &str,
        args: &[u8],
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        match method {
            "open_channel" => self.open_channel(ctx, args),
            "update_channel" => self.update_channel(ctx, args),
            "close_channel" => self.close_channel(ctx, args),
            other => Err(ContractError::UnknownMethod(other.to_string())),
        }
    }

    fn query(&self, key: &str) -> Option<Vec<u8>> {
        let mut parts = key.splitn(3, ':');
        let what = parts.next()?;
        let relay = parts.next()?;
        let channel = self.channels.get(relay)?;
        match (what, parts.next()) {
            ("escrow", Some(account)) => {
                Some(channel.escrow.get(account).copied().unwrap_or(0).to_be_bytes().to_vec())
            }
            ("nonce", Some(account)) => {
                Some(channel.nonces.get(account).copied().unwrap_or(0).to_be_bytes().to_vec())
            }
            ("escrow_total", None) => Some(channel.escrow_total().to_be_bytes().to_vec()),
            ("update_count", None) => Some(u64::from(channel.update_count).to_be_bytes().to_vec()),
            ("journal_len", None) => Some((channel.txs.len() as u64).to_be_bytes().to_vec()),
            _ => None,
        }
    }

    fn state_entries(&self) -> Vec<(String, Vec<u8>)> {
        let mut entries = Vec::new();
        for (relay, channel) in &self.channels {
            for (account, balance) in &channel.escrow {
                entries.push((format!("escrow:{relay}:{account}"), balance.to_be_bytes().to_vec()));
            }
            for (account, nonce) in &channel.nonces {
                entries.push((format!("nonce:{relay}:{account}"), nonce.to_be_bytes().to_vec()));
            }
            entries.push((
                format!("update_count:{relay}"),
                u64::from(channel.update_count).to_be_bytes().to_vec(),
            ));
            entries.push((
                format!("journal:{relay}"),
                encode_batch(&channel.txs),
            ));
        }
        entries
    }

    fn clone_box(&self) -> Box<dyn Contract<E>> {
        Box::new(self.clone())
    }
}
